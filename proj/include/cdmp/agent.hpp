#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cdmp/dataset.hpp"
#include "cdmp/diffusion.hpp"
#include "cdmp/invdyn.hpp"
#include "cdmp/netsim.hpp"

namespace cdmp {

enum class Variant { cdmp, cdmp_pen };

struct TrainConfig {
  Variant variant = Variant::cdmp;
  int diffusion_steps = 64;  // K
  int horizon = 8;           // H
  double gamma = 0.99;
  double beta_drop = 0.25;
  double zeta = 1.0;
  int epochs = 20;
  int steps_per_epoch = 200;
  int batch_size = 64;
  double learning_rate = 1e-4;
  double ema_decay = 0.995;
  std::uint64_t seed = 0;
  // The adaptive linear profile keeps the penalized variant's reconstruction
  // weight bounded; the cosine kind remains available via config.
  ScheduleKind schedule = ScheduleKind::linear;
  // architecture widths
  int base_channels = 32;
  int time_embed_dim = 64;
  int cond_embed_dim = 64;
  int invdyn_hidden = 128;
  int invdyn_head = 64;
  int invdyn_embed = 32;

  void validate() const;

  /// Paper-scale settings: K=200, H=12, 100 epochs x 1000 steps, batch 128,
  /// 256-wide embeddings.
  static TrainConfig paper();
  /// CPU-budget settings: K=64, H=8, 20 epochs x 200 steps, batch 64.
  static TrainConfig desk();
};

enum class PolicyKind { planner, oracle, random, uniform, bc };

struct PlannerConfig {
  double omega = 1.6;
  // Low sampling temperature: measured at desk scale, xi above ~0.2 only adds
  // action noise (both variants lose reward, identically configured); the
  // plateau below 0.2 makes evaluations reproducible.
  double xi = 0.2;
  double y_target = 1.0;
  SamplerKind sampler = SamplerKind::ddpm;
  int ddim_stride = 4;

  void validate() const;
};

struct EpochLoss {
  double diffusion = 0.0;
  double invdyn = 0.0;
  double ood = 0.0;
  double total = 0.0;
};

struct TrainedModels {
  Denoiser<float> denoiser;      // averaged weights installed
  InverseDynamics<float> invdyn; // averaged weights installed
  NoiseSchedule schedule;
  NormStats norm;
  TrainConfig cfg;
  std::vector<EpochLoss> history;

  void save(const std::string& dir) const;
  static TrainedModels load(const std::string& dir);
};

/// Per-epoch observer plus optional resume state directory; used by the CLI
/// to persist restartable training state.
struct TrainHooks {
  std::function<void(int epoch, const EpochLoss&)> on_epoch;
  std::string state_dir;    // when set, full state is written every checkpoint_every epochs
  int checkpoint_every = 0; // 0: only at the end
  std::string resume_from;  // state dir to continue from
};

/// Joint offline training of the denoiser and inverse dynamics. One
/// optimizer step per training step covers both models; the averaged
/// (EMA) weights are returned for evaluation.
TrainedModels train(const OfflineDataset& data, const TrainConfig& cfg,
                    const TrainHooks& hooks = {});

/// One receding-horizon decision: condition on the normalized observation,
/// sample a window, decode the action from its first transition.
RbGrid plan_step(const TrainedModels& models, const PlannerConfig& planner,
                 const Eigen::VectorXd& s_raw, Rng& rng);

struct EpisodeResult {
  std::vector<double> rewards;
  std::vector<FrameMetrics> metrics;
  std::vector<RbGrid> actions;

  double mean_reward() const;
};

/// Receding-horizon rollout of the trained planner.
EpisodeResult rollout(Simulator& sim, const TrainedModels& models,
                      const PlannerConfig& planner, int n_frames, Rng& rng);

/// Rollout of an arbitrary policy through the same harness.
EpisodeResult rollout_policy(Simulator& sim, Policy& policy, int n_frames, Rng& rng);

/// Planner wrapped as a Policy for the shared evaluation harness.
struct PlannerPolicy final : Policy {
  const TrainedModels& models;
  PlannerConfig planner;
  PlannerPolicy(const TrainedModels& m, PlannerConfig p) : models(m), planner(std::move(p)) {}
  RbGrid act(const Eigen::VectorXd& state, int, Rng& rng) override {
    return plan_step(models, planner, state, rng);
  }
};

/// Behavior-cloning baseline: the same sequential decoder conditioned on the
/// current state only, trained by cross-entropy on dataset transitions.
struct BcModel {
  InverseDynamics<float> head;
  NormStats norm;

  void save(const std::string& dir) const;
  static BcModel load(const std::string& dir);
};

BcModel train_bc(const OfflineDataset& data, int epochs, int steps_per_epoch,
                 int batch_size, double learning_rate, std::uint64_t seed,
                 std::function<void(int, double)> on_epoch = {});

struct BcPolicy final : Policy {
  const BcModel& model;
  explicit BcPolicy(const BcModel& m) : model(m) {}
  RbGrid act(const Eigen::VectorXd& state, int, Rng&) override {
    const Eigen::VectorXf s = normalize_state(state, model.norm).cast<float>();
    return model.head.predict(s, s);
  }
};

/// Packs sampled windows into the denoiser layout plus the teacher-forced
/// transition batch for the inverse dynamics head.
struct AssembledBatch {
  WindowBatch<float> windows;
  Mat<float> pair_inputs;     // 8N x (B*(H-1))
  Eigen::MatrixXi pair_targets;  // positions x (B*(H-1))
};

AssembledBatch assemble_batch(const OfflineDataset& data,
                              const std::vector<TrajectoryWindow>& windows);

}  // namespace cdmp
