#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cdmp/netsim.hpp"
#include "cdmp/rng.hpp"

namespace cdmp {

/// A decision policy driving the simulator; used for dataset collection,
/// baselines, and the trained planner alike. Implementations draw any
/// randomness from the rng passed per call so episode streams stay
/// reproducible.
struct Policy {
  virtual ~Policy() = default;
  virtual RbGrid act(const Eigen::VectorXd& state, int frame, Rng& rng) = 0;
};

struct OraclePolicy final : Policy {
  SimConfig cfg;
  ScenarioSpec scen;
  OraclePolicy(SimConfig c, ScenarioSpec s) : cfg(std::move(c)), scen(std::move(s)) {}
  RbGrid act(const Eigen::VectorXd&, int frame, Rng&) override {
    return oracle_policy(cfg, scen.high_set_at(frame));
  }
};

struct BehaviorPolicy final : Policy {
  SimConfig cfg;
  ScenarioSpec scen;
  double swap_prob;
  BehaviorPolicy(SimConfig c, ScenarioSpec s, double p)
      : cfg(std::move(c)), scen(std::move(s)), swap_prob(p) {}
  RbGrid act(const Eigen::VectorXd&, int frame, Rng& rng) override {
    return behavior_policy(cfg, scen.high_set_at(frame), swap_prob, rng);
  }
};

struct UniformStaticPolicy final : Policy {
  SimConfig cfg;
  explicit UniformStaticPolicy(SimConfig c) : cfg(std::move(c)) {}
  RbGrid act(const Eigen::VectorXd&, int, Rng&) override { return uniform_policy(cfg); }
};

struct RandomPolicy final : Policy {
  SimConfig cfg;
  explicit RandomPolicy(SimConfig c) : cfg(std::move(c)) {}
  RbGrid act(const Eigen::VectorXd&, int, Rng& rng) override {
    return random_policy(cfg, rng);
  }
};

/// One episode: length transitions, length+1 states (the initial observation
/// is the all-zero state before the first frame).
struct Trajectory {
  std::vector<Eigen::VectorXd> states;
  std::vector<RbGrid> actions;
  std::vector<double> rewards;

  int length() const { return static_cast<int>(actions.size()); }
  void validate() const;
};

/// Per-dimension state range and the window-return range used to map data
/// into the diffusion model's [-1, 1] / [0, 1] boxes.
struct NormStats {
  Eigen::VectorXd state_min;
  Eigen::VectorXd state_max;
  double return_min = 0.0;
  double return_max = 0.0;
  int horizon = 0;   // window length the return range was computed over
  double gamma = 0.99;
};

struct OfflineDataset {
  std::vector<Trajectory> trajectories;
  NormStats norm;
  int state_dim = 0;
  int n_channels = 0;
  int n_slots = 0;
  int n_nodes = 0;
  std::uint64_t seed = 0;
  std::string meta_config;  // generation config, verbatim key=value lines

  void validate() const;
  long total_states() const;

  /// All normalized states as columns (the state dataset used by the
  /// distance-to-data machinery).
  Eigen::MatrixXd stacked_normalized_states() const;

  void save(const std::string& dir) const;
  static OfflineDataset load(const std::string& dir);
};

/// Sum of gamma^t * rewards[t].
double discounted_return(const std::vector<double>& rewards, double gamma);
double discounted_return(const double* rewards, int count, double gamma);

/// Affine map to [-1, 1] per dimension; constant dimensions map to 0.
Eigen::VectorXd normalize_state(const Eigen::VectorXd& s, const NormStats& norm);
Eigen::VectorXd denormalize_state(const Eigen::VectorXd& v, const NormStats& norm);

/// Monotone map of a raw window return into [0, 1].
double normalize_return(double raw, const NormStats& norm);

/// Recomputes the window-return range for a horizon/gamma other than the one
/// stored at collection time. State ranges are unchanged.
NormStats norm_stats_for(const OfflineDataset& data, int horizon, double gamma);

/// An H x state_dim block of consecutive normalized states plus its
/// normalized discounted return condition.
struct TrajectoryWindow {
  Eigen::MatrixXf x0;  // H x state_dim, rows are time steps
  float y = 0.0f;
  int trajectory = 0;
  int offset = 0;
};

/// Uniformly samples windows whose H states and H rewards all lie within one
/// episode. Throws if any trajectory is shorter than H transitions.
std::vector<TrajectoryWindow> sample_windows(const OfflineDataset& data,
                                             const NormStats& norm, int horizon,
                                             int batch_size, Rng& rng);
std::vector<TrajectoryWindow> sample_windows(const OfflineDataset& data, int horizon,
                                             int batch_size, Rng& rng);

using SimFactory = std::function<Simulator(std::uint64_t episode_seed)>;

/// Rolls the policy over n_episodes fresh simulator instances (episode seeds
/// derived from seed) and records raw trajectories; normalization statistics
/// are computed over the completed dataset with the given horizon/gamma.
OfflineDataset collect_dataset(const SimFactory& factory, Policy& policy,
                               int n_episodes, int episode_len, std::uint64_t seed,
                               int horizon, double gamma);

}  // namespace cdmp
