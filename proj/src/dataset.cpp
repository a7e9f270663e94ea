#include "cdmp/dataset.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace cdmp {

namespace fs = std::filesystem;
using nlohmann::json;

void Trajectory::validate() const {
  if (states.size() != actions.size() + 1)
    throw std::runtime_error("Trajectory: need length+1 states");
  if (actions.size() != rewards.size())
    throw std::runtime_error("Trajectory: actions/rewards length mismatch");
}

void OfflineDataset::validate() const {
  if (trajectories.empty()) throw std::runtime_error("OfflineDataset: empty");
  for (const auto& t : trajectories) {
    t.validate();
    for (const auto& s : t.states)
      if (s.size() != state_dim)
        throw std::runtime_error("OfflineDataset: state dimension mismatch");
    for (const auto& a : t.actions)
      if (a.channels() != n_channels || a.slots() != n_slots)
        throw std::runtime_error("OfflineDataset: action shape mismatch");
  }
}

long OfflineDataset::total_states() const {
  long n = 0;
  for (const auto& t : trajectories) n += static_cast<long>(t.states.size());
  return n;
}

Eigen::MatrixXd OfflineDataset::stacked_normalized_states() const {
  Eigen::MatrixXd out(state_dim, total_states());
  long c = 0;
  for (const auto& t : trajectories)
    for (const auto& s : t.states) out.col(c++) = normalize_state(s, norm);
  return out;
}

double discounted_return(const double* rewards, int count, double gamma) {
  if (count <= 0) throw std::invalid_argument("discounted_return: empty sequence");
  if (gamma < 0.0 || gamma >= 1.0)
    throw std::invalid_argument("discounted_return: gamma must be in [0,1)");
  double acc = 0.0;
  double g = 1.0;
  for (int t = 0; t < count; ++t) {
    acc += g * rewards[t];
    g *= gamma;
  }
  return acc;
}

double discounted_return(const std::vector<double>& rewards, double gamma) {
  return discounted_return(rewards.data(), static_cast<int>(rewards.size()), gamma);
}

Eigen::VectorXd normalize_state(const Eigen::VectorXd& s, const NormStats& norm) {
  if (s.size() != norm.state_min.size())
    throw std::invalid_argument("normalize_state: dimension mismatch");
  Eigen::VectorXd out(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double span = norm.state_max(i) - norm.state_min(i);
    out(i) = span > 0.0 ? 2.0 * (s(i) - norm.state_min(i)) / span - 1.0 : 0.0;
  }
  return out;
}

Eigen::VectorXd denormalize_state(const Eigen::VectorXd& v, const NormStats& norm) {
  if (v.size() != norm.state_min.size())
    throw std::invalid_argument("denormalize_state: dimension mismatch");
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double span = norm.state_max(i) - norm.state_min(i);
    out(i) = span > 0.0 ? norm.state_min(i) + 0.5 * (v(i) + 1.0) * span : norm.state_min(i);
  }
  return out;
}

double normalize_return(double raw, const NormStats& norm) {
  const double span = norm.return_max - norm.return_min;
  if (span <= 0.0) return 0.5;
  return (raw - norm.return_min) / span;
}

NormStats norm_stats_for(const OfflineDataset& data, int horizon, double gamma) {
  NormStats norm;
  norm.horizon = horizon;
  norm.gamma = gamma;
  norm.state_min = Eigen::VectorXd::Constant(data.state_dim,
                                             std::numeric_limits<double>::infinity());
  norm.state_max = Eigen::VectorXd::Constant(data.state_dim,
                                             -std::numeric_limits<double>::infinity());
  norm.return_min = std::numeric_limits<double>::infinity();
  norm.return_max = -std::numeric_limits<double>::infinity();
  for (const auto& t : data.trajectories) {
    for (const auto& s : t.states) {
      norm.state_min = norm.state_min.cwiseMin(s);
      norm.state_max = norm.state_max.cwiseMax(s);
    }
    for (int off = 0; off + horizon <= t.length(); ++off) {
      const double r = discounted_return(t.rewards.data() + off, horizon, gamma);
      norm.return_min = std::min(norm.return_min, r);
      norm.return_max = std::max(norm.return_max, r);
    }
  }
  if (!std::isfinite(norm.return_min)) {
    norm.return_min = 0.0;
    norm.return_max = 0.0;
  }
  return norm;
}

std::vector<TrajectoryWindow> sample_windows(const OfflineDataset& data,
                                             const NormStats& norm, int horizon,
                                             int batch_size, Rng& rng) {
  if (horizon < 2) throw std::invalid_argument("sample_windows: horizon must be >= 2");
  const int n_traj = static_cast<int>(data.trajectories.size());
  for (const auto& t : data.trajectories)
    if (t.length() < horizon)
      throw std::invalid_argument("sample_windows: horizon exceeds trajectory length");

  std::vector<TrajectoryWindow> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    const int ti = rng.uniform_int(n_traj);
    const Trajectory& t = data.trajectories[static_cast<std::size_t>(ti)];
    const int off = rng.uniform_int(t.length() - horizon + 1);
    TrajectoryWindow w;
    w.trajectory = ti;
    w.offset = off;
    w.x0.resize(horizon, data.state_dim);
    for (int h = 0; h < horizon; ++h)
      w.x0.row(h) = normalize_state(t.states[static_cast<std::size_t>(off + h)], norm)
                        .cast<float>()
                        .transpose();
    const double raw = discounted_return(t.rewards.data() + off, horizon, norm.gamma);
    w.y = static_cast<float>(normalize_return(raw, norm));
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<TrajectoryWindow> sample_windows(const OfflineDataset& data, int horizon,
                                             int batch_size, Rng& rng) {
  if (horizon == data.norm.horizon)
    return sample_windows(data, data.norm, horizon, batch_size, rng);
  return sample_windows(data, norm_stats_for(data, horizon, data.norm.gamma), horizon,
                        batch_size, rng);
}

OfflineDataset collect_dataset(const SimFactory& factory, Policy& policy,
                               int n_episodes, int episode_len, std::uint64_t seed,
                               int horizon, double gamma) {
  if (n_episodes < 1) throw std::invalid_argument("collect_dataset: n_episodes >= 1");
  if (episode_len < 2) throw std::invalid_argument("collect_dataset: episode_len >= 2");

  OfflineDataset data;
  data.seed = seed;
  for (int ep = 0; ep < n_episodes; ++ep) {
    Simulator sim = factory(mix_seed(seed, 2 * static_cast<std::uint64_t>(ep)));
    Rng policy_rng(mix_seed(seed, 2 * static_cast<std::uint64_t>(ep) + 1));
    if (ep == 0) {
      data.state_dim = sim.config().state_dim();
      data.n_channels = sim.config().n_channels;
      data.n_slots = sim.config().n_slots;
      data.n_nodes = sim.config().n_nodes;
    }
    Trajectory traj;
    Eigen::VectorXd state = Eigen::VectorXd::Zero(sim.config().state_dim());
    traj.states.push_back(state);
    for (int f = 0; f < episode_len; ++f) {
      RbGrid action = policy.act(state, sim.frame(), policy_rng);
      auto [next_state, metrics] = sim.step_frame(action);
      traj.actions.push_back(std::move(action));
      traj.rewards.push_back(reward(metrics));
      traj.states.push_back(next_state);
      state = next_state;
    }
    data.trajectories.push_back(std::move(traj));
  }
  data.norm = norm_stats_for(data, horizon, gamma);
  data.validate();
  return data;
}

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Eigen::VectorXd vec_from_json(const json& arr) {
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i];
  return v;
}

}  // namespace

void OfflineDataset::save(const std::string& dir) const {
  fs::create_directories(dir);
  json meta;
  meta["state_dim"] = state_dim;
  meta["n_channels"] = n_channels;
  meta["n_slots"] = n_slots;
  meta["n_nodes"] = n_nodes;
  meta["seed"] = seed;
  meta["n_trajectories"] = trajectories.size();
  meta["meta_config"] = meta_config;
  meta["norm"] = {
      {"state_min", vec_to_json(norm.state_min)},
      {"state_max", vec_to_json(norm.state_max)},
      {"return_min", norm.return_min},
      {"return_max", norm.return_max},
      {"horizon", norm.horizon},
      {"gamma", norm.gamma},
  };
  std::ofstream meta_out(fs::path(dir) / "meta.json");
  meta_out << meta.dump(2) << "\n";

  std::ofstream traj_out(fs::path(dir) / "trajectories.jsonl");
  for (const auto& t : trajectories) {
    json line;
    json states = json::array();
    for (const auto& s : t.states) states.push_back(vec_to_json(s));
    json actions = json::array();
    for (const auto& a : t.actions) actions.push_back(a.flatten());
    line["states"] = std::move(states);
    line["actions"] = std::move(actions);
    line["rewards"] = t.rewards;
    traj_out << line.dump() << "\n";
  }
}

OfflineDataset OfflineDataset::load(const std::string& dir) {
  std::ifstream meta_in(fs::path(dir) / "meta.json");
  if (!meta_in) throw std::runtime_error("dataset: cannot open " + dir + "/meta.json");
  json meta = json::parse(meta_in);

  OfflineDataset data;
  data.state_dim = meta.at("state_dim");
  data.n_channels = meta.at("n_channels");
  data.n_slots = meta.at("n_slots");
  data.n_nodes = meta.at("n_nodes");
  data.seed = meta.at("seed");
  data.meta_config = meta.value("meta_config", "");
  const json& n = meta.at("norm");
  data.norm.state_min = vec_from_json(n.at("state_min"));
  data.norm.state_max = vec_from_json(n.at("state_max"));
  data.norm.return_min = n.at("return_min");
  data.norm.return_max = n.at("return_max");
  data.norm.horizon = n.at("horizon");
  data.norm.gamma = n.at("gamma");

  std::ifstream traj_in(fs::path(dir) / "trajectories.jsonl");
  if (!traj_in) throw std::runtime_error("dataset: cannot open " + dir + "/trajectories.jsonl");
  std::string line;
  while (std::getline(traj_in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Trajectory t;
    for (const auto& s : j.at("states")) t.states.push_back(vec_from_json(s));
    for (const auto& a : j.at("actions"))
      t.actions.push_back(RbGrid::from_flat(a.get<std::vector<int>>(), data.n_channels,
                                            data.n_slots));
    t.rewards = j.at("rewards").get<std::vector<double>>();
    data.trajectories.push_back(std::move(t));
  }
  data.validate();
  return data;
}

}  // namespace cdmp
