#include "cdmp/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cdmp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KvConfig KvConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str());
}

KvConfig KvConfig::from_string(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
    cfg.kv_[key] = value;
  }
  return cfg;
}

bool KvConfig::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string KvConfig::str(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

int KvConfig::geti(const std::string& key, int fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stoi(it->second);
}

long KvConfig::getl(const std::string& key, long fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stol(it->second);
}

double KvConfig::getd(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stod(it->second);
}

bool KvConfig::getb(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::runtime_error("config key " + key + ": not a boolean: " + it->second);
}

std::vector<int> KvConfig::int_list(const std::string& key, std::vector<int> fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  return parse_int_list(it->second);
}

void KvConfig::set(const std::string& key, const std::string& value) { kv_[key] = value; }

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::vector<std::pair<int, std::vector<int>>> parse_ratio_schedule(const std::string& text) {
  std::vector<std::pair<int, std::vector<int>>> schedule;
  std::string segment;
  std::istringstream in(text);
  while (std::getline(in, segment, ';')) {
    segment = trim(segment);
    if (segment.empty()) continue;
    const auto colon = segment.find(':');
    if (colon == std::string::npos)
      throw std::runtime_error("ratio_schedule segment needs frame:nodes, got: " + segment);
    const int frame = std::stoi(trim(segment.substr(0, colon)));
    auto nodes = parse_int_list(segment.substr(colon + 1));
    std::sort(nodes.begin(), nodes.end());
    schedule.emplace_back(frame, std::move(nodes));
  }
  return schedule;
}

SimConfig sim_config_from(const KvConfig& kv) {
  SimConfig base = SimConfig::desk();
  const std::string scale = kv.str("scale", "desk");
  if (scale == "paper") base = SimConfig::paper();
  else if (scale != "desk")
    throw std::runtime_error("config: scale must be desk or paper");
  base.n_nodes = kv.geti("n_nodes", base.n_nodes);
  base.n_slots = kv.geti("n_slots", base.n_slots);
  base.n_channels = kv.geti("n_channels", base.n_channels);
  base.rb_capacity = kv.geti("rb_capacity", base.rb_capacity);
  base.queue_capacity = kv.geti("queue_capacity", base.queue_capacity);
  base.packet_size = kv.geti("packet_size", base.packet_size);
  base.rate_high = kv.getd("rate_high", base.rate_high);
  base.rate_low = kv.getd("rate_low", base.rate_low);
  base.loss_age_penalty = kv.getd("loss_age_penalty", base.loss_age_penalty);
  base.validate();
  return base;
}

ScenarioSpec scenario_from(const KvConfig& kv, const SimConfig& cfg) {
  ScenarioSpec scen;
  if (kv.has("ratio_schedule")) {
    scen.ratio_schedule = parse_ratio_schedule(kv.str("ratio_schedule", ""));
  } else {
    // Static default: the first quarter of nodes is high-rate (paper 4:12).
    std::vector<int> high = kv.int_list("high_nodes", {});
    if (high.empty() && !kv.has("high_nodes")) {
      for (int i = 0; i < cfg.n_nodes / 4 + (cfg.n_nodes % 4 ? 1 : 0); ++i)
        high.push_back(i);
    }
    std::sort(high.begin(), high.end());
    scen.ratio_schedule.emplace_back(0, std::move(high));
  }
  scen.interference_channels = kv.int_list("interference_channels", {});
  std::sort(scen.interference_channels.begin(), scen.interference_channels.end());
  scen.interference_duty = kv.getd("interference_duty", 0.0);
  scen.validate(cfg);
  return scen;
}

}  // namespace cdmp
