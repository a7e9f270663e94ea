#pragma once

#include <map>
#include <string>
#include <vector>

#include "cdmp/netsim.hpp"

namespace cdmp {

/// Flat key = value configuration file. Lines are `key = value`; `#` starts
/// a comment; unknown keys are kept so callers can validate or pass through.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig load(const std::string& path);
  static KvConfig from_string(const std::string& text);

  bool has(const std::string& key) const;
  std::string str(const std::string& key, const std::string& fallback) const;
  int geti(const std::string& key, int fallback) const;
  long getl(const std::string& key, long fallback) const;
  double getd(const std::string& key, double fallback) const;
  bool getb(const std::string& key, bool fallback) const;
  std::vector<int> int_list(const std::string& key, std::vector<int> fallback) const;

  void set(const std::string& key, const std::string& value);
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

SimConfig sim_config_from(const KvConfig& kv);

/// Scenario keys: `ratio_schedule = 0:0,1,2;150:0,1` (frame:high nodes,
/// segments separated by `;`), `high_nodes = 0,1,2` as a static shorthand,
/// `interference_channels = 0,1`, `interference_duty = 0.1`.
ScenarioSpec scenario_from(const KvConfig& kv, const SimConfig& cfg);

std::vector<int> parse_int_list(const std::string& text);
std::vector<std::pair<int, std::vector<int>>> parse_ratio_schedule(const std::string& text);

}  // namespace cdmp
