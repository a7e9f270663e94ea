#include "cdmp/agent.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "cdmp/checkpoint.hpp"
#include "cdmp/json_util.hpp"
#include "cdmp/ood.hpp"

namespace cdmp {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (diffusion_steps < 1) throw std::invalid_argument("TrainConfig: diffusion_steps >= 1");
  if (horizon < 4 || horizon % 4 != 0)
    throw std::invalid_argument("TrainConfig: horizon must be a positive multiple of 4");
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("TrainConfig: gamma in [0,1)");
  if (beta_drop < 0.0 || beta_drop > 1.0)
    throw std::invalid_argument("TrainConfig: beta_drop in [0,1]");
  if (zeta < 0.0) throw std::invalid_argument("TrainConfig: zeta >= 0");
  if (epochs < 0 || steps_per_epoch < 1 || batch_size < 1)
    throw std::invalid_argument("TrainConfig: bad loop sizes");
  if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate > 0");
  if (ema_decay < 0.0 || ema_decay > 1.0)
    throw std::invalid_argument("TrainConfig: ema_decay in [0,1]");
}

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.diffusion_steps = 200;
  c.horizon = 12;
  c.epochs = 100;
  c.steps_per_epoch = 1000;
  c.batch_size = 128;
  c.base_channels = 64;
  c.time_embed_dim = 256;
  c.cond_embed_dim = 256;
  c.invdyn_hidden = 256;
  c.invdyn_head = 128;
  c.invdyn_embed = 128;
  return c;
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

void PlannerConfig::validate() const {
  if (omega < 0.0) throw std::invalid_argument("PlannerConfig: omega >= 0");
  if (xi < 0.0 || xi >= 1.0) throw std::invalid_argument("PlannerConfig: xi in [0,1)");
  if (y_target < 0.0 || y_target > 1.0)
    throw std::invalid_argument("PlannerConfig: y_target in [0,1]");
  if (sampler == SamplerKind::ddim && ddim_stride < 1)
    throw std::invalid_argument("PlannerConfig: ddim_stride >= 1");
}

double EpisodeResult::mean_reward() const {
  if (rewards.empty()) return 0.0;
  double acc = 0.0;
  for (double r : rewards) acc += r;
  return acc / static_cast<double>(rewards.size());
}

AssembledBatch assemble_batch(const OfflineDataset& data,
                              const std::vector<TrajectoryWindow>& windows) {
  if (windows.empty()) throw std::invalid_argument("assemble_batch: empty");
  const int B = static_cast<int>(windows.size());
  const int H = static_cast<int>(windows.front().x0.rows());
  const int D = static_cast<int>(windows.front().x0.cols());
  const int positions = data.n_channels * data.n_slots;

  AssembledBatch ab;
  ab.windows.batch = B;
  ab.windows.horizon = H;
  ab.windows.x0.resize(D, static_cast<Eigen::Index>(B) * H);
  ab.windows.y.resize(static_cast<std::size_t>(B));
  ab.pair_inputs.resize(2 * D, static_cast<Eigen::Index>(B) * (H - 1));
  ab.pair_targets.resize(positions, static_cast<Eigen::Index>(B) * (H - 1));

  for (int b = 0; b < B; ++b) {
    const TrajectoryWindow& w = windows[static_cast<std::size_t>(b)];
    ab.windows.y[static_cast<std::size_t>(b)] = w.y;
    for (int h = 0; h < H; ++h)
      ab.windows.x0.col(static_cast<Eigen::Index>(b) * H + h) = w.x0.row(h).transpose();
    const Trajectory& traj = data.trajectories[static_cast<std::size_t>(w.trajectory)];
    for (int h = 0; h + 1 < H; ++h) {
      const Eigen::Index c = static_cast<Eigen::Index>(b) * (H - 1) + h;
      ab.pair_inputs.col(c).head(D) = w.x0.row(h).transpose();
      ab.pair_inputs.col(c).tail(D) = w.x0.row(h + 1).transpose();
      const auto flat = traj.actions[static_cast<std::size_t>(w.offset + h)].flatten();
      for (int j = 0; j < positions; ++j) ab.pair_targets(j, c) = flat[static_cast<std::size_t>(j)];
    }
  }
  return ab;
}

namespace {

DenoiserConfig denoiser_config_of(const TrainConfig& cfg, int state_dim) {
  DenoiserConfig dc;
  dc.horizon = cfg.horizon;
  dc.state_dim = state_dim;
  dc.base_channels = cfg.base_channels;
  dc.time_embed_dim = cfg.time_embed_dim;
  dc.cond_embed_dim = cfg.cond_embed_dim;
  return dc;
}

InvDynConfig invdyn_config_of(const TrainConfig& cfg, const OfflineDataset& data) {
  InvDynConfig ic;
  ic.state_dim = data.state_dim;
  ic.n_nodes = data.n_nodes;
  ic.n_channels = data.n_channels;
  ic.n_slots = data.n_slots;
  ic.hidden = cfg.invdyn_hidden;
  ic.head = cfg.invdyn_head;
  ic.embed = cfg.invdyn_embed;
  ic.pair_input = true;
  return ic;
}

struct TrainState {
  Denoiser<float>& den;
  InverseDynamics<float>& inv;
  Adam<float>& opt;
  EmaStore<float>& ema_den;
  EmaStore<float>& ema_inv;
  Rng& rng;
};

void save_train_state(const std::string& dir, const TrainState& st, int epochs_done,
                      const std::vector<EpochLoss>& history) {
  fs::create_directories(dir);
  save_store(dir + "/raw_denoiser.bin", st.den.params());
  save_store(dir + "/raw_invdyn.bin", st.inv.params());
  {
    std::ofstream os(dir + "/ema.bin", std::ios::binary);
    save_matrices(os, st.ema_den.shadow());
    save_matrices(os, st.ema_inv.shadow());
  }
  {
    st.opt.ensure_moments();
    std::ofstream os(dir + "/opt.bin", std::ios::binary);
    save_matrices(os, st.opt.first_moments());
    save_matrices(os, st.opt.second_moments());
    const std::int64_t step = st.opt.step_count();
    os.write(reinterpret_cast<const char*>(&step), sizeof(step));
  }
  json j;
  j["epochs_done"] = epochs_done;
  j["rng"] = st.rng.serialize();
  json hist = json::array();
  for (const auto& h : history) hist.push_back({h.diffusion, h.invdyn, h.ood, h.total});
  j["history"] = std::move(hist);
  std::ofstream os(dir + "/state.json");
  os << j.dump(2) << "\n";
}

int load_train_state(const std::string& dir, TrainState st,
                     std::vector<EpochLoss>& history) {
  load_store(dir + "/raw_denoiser.bin", st.den.params());
  load_store(dir + "/raw_invdyn.bin", st.inv.params());
  {
    std::ifstream is(dir + "/ema.bin", std::ios::binary);
    if (!is) throw std::runtime_error("resume: cannot open " + dir + "/ema.bin");
    st.ema_den.shadow() = load_matrices<float>(is);
    st.ema_inv.shadow() = load_matrices<float>(is);
  }
  {
    std::ifstream is(dir + "/opt.bin", std::ios::binary);
    if (!is) throw std::runtime_error("resume: cannot open " + dir + "/opt.bin");
    st.opt.ensure_moments();
    st.opt.first_moments() = load_matrices<float>(is);
    st.opt.second_moments() = load_matrices<float>(is);
    std::int64_t step = 0;
    is.read(reinterpret_cast<char*>(&step), sizeof(step));
    st.opt.set_step_count(step);
  }
  std::ifstream is(dir + "/state.json");
  if (!is) throw std::runtime_error("resume: cannot open " + dir + "/state.json");
  json j = json::parse(is);
  st.rng.deserialize(j.at("rng").get<std::string>());
  history.clear();
  for (const auto& h : j.at("history"))
    history.push_back(EpochLoss{h[0], h[1], h[2], h[3]});
  return j.at("epochs_done");
}

}  // namespace

TrainedModels train(const OfflineDataset& data, const TrainConfig& cfg,
                    const TrainHooks& hooks) {
  cfg.validate();
  data.validate();
  const NormStats norm =
      (data.norm.horizon == cfg.horizon && data.norm.gamma == cfg.gamma)
          ? data.norm
          : norm_stats_for(data, cfg.horizon, cfg.gamma);
  NoiseSchedule sched = make_schedule(cfg.diffusion_steps, cfg.schedule);

  Denoiser<float> den(denoiser_config_of(cfg, data.state_dim), mix_seed(cfg.seed, 101));
  InverseDynamics<float> inv(invdyn_config_of(cfg, data), mix_seed(cfg.seed, 202));
  Adam<float> opt(static_cast<float>(cfg.learning_rate));
  opt.attach(den.params());
  opt.attach(inv.params());
  EmaStore<float> ema_den(den.params(), static_cast<float>(cfg.ema_decay));
  EmaStore<float> ema_inv(inv.params(), static_cast<float>(cfg.ema_decay));
  Rng rng(mix_seed(cfg.seed, 303));

  std::vector<EpochLoss> history;
  int epoch_start = 0;
  TrainState st{den, inv, opt, ema_den, ema_inv, rng};
  if (!hooks.resume_from.empty())
    epoch_start = load_train_state(hooks.resume_from, st, history);

  for (int epoch = epoch_start; epoch < cfg.epochs; ++epoch) {
    EpochLoss acc;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      const auto windows = sample_windows(data, norm, cfg.horizon, cfg.batch_size, rng);
      const AssembledBatch ab = assemble_batch(data, windows);

      Tape<float> tape;
      Ref inv_loss = inv.loss(tape, ab.pair_inputs, ab.pair_targets);
      auto dl = diffusion_loss(tape, den, ab.windows, sched, cfg.beta_drop, rng);
      Ref total = add(tape, inv_loss, dl.loss);
      double ood_value = 0.0;
      if (cfg.variant == Variant::cdmp_pen) {
        Ref pen = ood_penalty(tape, dl, ab.windows.x0, sched);
        ood_value = tape.val(pen)(0, 0);
        if (cfg.zeta > 0.0)
          total = add(tape, total, scale(tape, pen, static_cast<float>(cfg.zeta)));
      }

      const double total_value = tape.val(total)(0, 0);
      if (!std::isfinite(total_value))
        throw std::runtime_error(
            "train: non-finite loss at epoch " + std::to_string(epoch) + " step " +
            std::to_string(step) + " (diffusion=" +
            std::to_string(tape.val(dl.loss)(0, 0)) +
            ", invdyn=" + std::to_string(tape.val(inv_loss)(0, 0)) +
            ", ood=" + std::to_string(ood_value) + ")");

      den.params().zero_grad();
      inv.params().zero_grad();
      tape.backward(total);
      if (!opt.step())
        std::fprintf(stderr,
                     "train: non-finite gradient at epoch %d step %d; step skipped\n",
                     epoch, step);
      ema_den.update(den.params());
      ema_inv.update(inv.params());

      acc.diffusion += tape.val(dl.loss)(0, 0);
      acc.invdyn += tape.val(inv_loss)(0, 0);
      acc.ood += ood_value;
      acc.total += total_value;
    }
    const double n = static_cast<double>(cfg.steps_per_epoch);
    EpochLoss mean{acc.diffusion / n, acc.invdyn / n, acc.ood / n, acc.total / n};
    history.push_back(mean);
    if (hooks.on_epoch) hooks.on_epoch(epoch, mean);
    if (!hooks.state_dir.empty() && hooks.checkpoint_every > 0 &&
        (epoch + 1) % hooks.checkpoint_every == 0)
      save_train_state(hooks.state_dir, st, epoch + 1, history);
  }
  if (!hooks.state_dir.empty()) save_train_state(hooks.state_dir, st, cfg.epochs, history);

  TrainedModels out{den, inv, std::move(sched), norm, cfg, std::move(history)};
  ema_den.copy_to(out.denoiser.params());
  ema_inv.copy_to(out.invdyn.params());
  return out;
}

RbGrid plan_step(const TrainedModels& models, const PlannerConfig& planner,
                 const Eigen::VectorXd& s_raw, Rng& rng) {
  planner.validate();
  const Vec<float> s_now = normalize_state(s_raw, models.norm).cast<float>();
  const Mat<float> window = sample_trajectory(
      models.denoiser, models.schedule, static_cast<float>(planner.y_target),
      static_cast<float>(planner.omega), static_cast<float>(planner.xi), s_now,
      planner.sampler, planner.ddim_stride, rng);
  const Vec<float> s0 = window.row(0).transpose();
  const Vec<float> s1 = window.row(1).transpose();
  return models.invdyn.predict(s0, s1);
}

EpisodeResult rollout_policy(Simulator& sim, Policy& policy, int n_frames, Rng& rng) {
  if (n_frames < 1) throw std::invalid_argument("rollout: n_frames >= 1");
  EpisodeResult res;
  res.rewards.reserve(static_cast<std::size_t>(n_frames));
  Eigen::VectorXd state = Eigen::VectorXd::Zero(sim.config().state_dim());
  for (int f = 0; f < n_frames; ++f) {
    RbGrid action = policy.act(state, sim.frame(), rng);
    auto [next_state, metrics] = sim.step_frame(action);
    res.rewards.push_back(reward(metrics));
    res.metrics.push_back(std::move(metrics));
    res.actions.push_back(std::move(action));
    state = next_state;
  }
  return res;
}

EpisodeResult rollout(Simulator& sim, const TrainedModels& models,
                      const PlannerConfig& planner, int n_frames, Rng& rng) {
  PlannerPolicy policy(models, planner);
  return rollout_policy(sim, policy, n_frames, rng);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json train_config_to_json(const TrainConfig& c) {
  return {
      {"variant", c.variant == Variant::cdmp ? "cdmp" : "cdmp_pen"},
      {"diffusion_steps", c.diffusion_steps},
      {"horizon", c.horizon},
      {"gamma", c.gamma},
      {"beta_drop", c.beta_drop},
      {"zeta", c.zeta},
      {"epochs", c.epochs},
      {"steps_per_epoch", c.steps_per_epoch},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"ema_decay", c.ema_decay},
      {"seed", c.seed},
      {"schedule", c.schedule == ScheduleKind::cosine ? "cosine" : "linear"},
      {"base_channels", c.base_channels},
      {"time_embed_dim", c.time_embed_dim},
      {"cond_embed_dim", c.cond_embed_dim},
      {"invdyn_hidden", c.invdyn_hidden},
      {"invdyn_head", c.invdyn_head},
      {"invdyn_embed", c.invdyn_embed},
  };
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.variant = j.at("variant") == "cdmp_pen" ? Variant::cdmp_pen : Variant::cdmp;
  c.diffusion_steps = j.at("diffusion_steps");
  c.horizon = j.at("horizon");
  c.gamma = j.at("gamma");
  c.beta_drop = j.at("beta_drop");
  c.zeta = j.at("zeta");
  c.epochs = j.at("epochs");
  c.steps_per_epoch = j.at("steps_per_epoch");
  c.batch_size = j.at("batch_size");
  c.learning_rate = j.at("learning_rate");
  c.ema_decay = j.at("ema_decay");
  c.seed = j.at("seed");
  c.schedule = j.at("schedule") == "linear" ? ScheduleKind::linear : ScheduleKind::cosine;
  c.base_channels = j.at("base_channels");
  c.time_embed_dim = j.at("time_embed_dim");
  c.cond_embed_dim = j.at("cond_embed_dim");
  c.invdyn_hidden = j.at("invdyn_hidden");
  c.invdyn_head = j.at("invdyn_head");
  c.invdyn_embed = j.at("invdyn_embed");
  return c;
}

}  // namespace

void TrainedModels::save(const std::string& dir) const {
  fs::create_directories(dir);
  json j;
  j["kind"] = "cdmp_models";
  j["train"] = train_config_to_json(cfg);
  j["state_dim"] = denoiser.config().state_dim;
  j["invdyn"] = {
      {"n_nodes", invdyn.config().n_nodes},
      {"n_channels", invdyn.config().n_channels},
      {"n_slots", invdyn.config().n_slots},
  };
  j["norm"] = to_json(norm);
  j["seed"] = cfg.seed;
  j["epochs_trained"] = history.size();
  json shapes = json::object();
  for (std::size_t i = 0; i < denoiser.params().size(); ++i) {
    const auto& e = denoiser.params().entry_at(i);
    shapes["denoiser/" + e.name] = {e.value.rows(), e.value.cols()};
  }
  for (std::size_t i = 0; i < invdyn.params().size(); ++i) {
    const auto& e = invdyn.params().entry_at(i);
    shapes["invdyn/" + e.name] = {e.value.rows(), e.value.cols()};
  }
  j["tensors"] = std::move(shapes);
  json hist = json::array();
  for (const auto& h : history) hist.push_back({h.diffusion, h.invdyn, h.ood, h.total});
  j["history"] = std::move(hist);
  std::ofstream os(fs::path(dir) / "model_manifest.json");
  os << j.dump(2) << "\n";
  save_store((fs::path(dir) / "denoiser.bin").string(), denoiser.params());
  save_store((fs::path(dir) / "invdyn.bin").string(), invdyn.params());
}

TrainedModels TrainedModels::load(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "model_manifest.json");
  if (!is) throw std::runtime_error("models: cannot open " + dir + "/model_manifest.json");
  json j = json::parse(is);
  TrainConfig cfg = train_config_from_json(j.at("train"));
  const int state_dim = j.at("state_dim");

  DenoiserConfig dc = denoiser_config_of(cfg, state_dim);
  Denoiser<float> den(dc, 0);
  InvDynConfig ic;
  ic.state_dim = state_dim;
  ic.n_nodes = j.at("invdyn").at("n_nodes");
  ic.n_channels = j.at("invdyn").at("n_channels");
  ic.n_slots = j.at("invdyn").at("n_slots");
  ic.hidden = cfg.invdyn_hidden;
  ic.head = cfg.invdyn_head;
  ic.embed = cfg.invdyn_embed;
  InverseDynamics<float> inv(ic, 0);
  load_store((fs::path(dir) / "denoiser.bin").string(), den.params());
  load_store((fs::path(dir) / "invdyn.bin").string(), inv.params());

  std::vector<EpochLoss> history;
  for (const auto& h : j.at("history"))
    history.push_back(EpochLoss{h[0], h[1], h[2], h[3]});

  return TrainedModels{std::move(den), std::move(inv),
                       make_schedule(cfg.diffusion_steps, cfg.schedule),
                       norm_stats_from_json(j.at("norm")), cfg, std::move(history)};
}

// ---------------------------------------------------------------------------
// Behavior cloning baseline
// ---------------------------------------------------------------------------

BcModel train_bc(const OfflineDataset& data, int epochs, int steps_per_epoch,
                 int batch_size, double learning_rate, std::uint64_t seed,
                 std::function<void(int, double)> on_epoch) {
  data.validate();
  InvDynConfig ic;
  ic.state_dim = data.state_dim;
  ic.n_nodes = data.n_nodes;
  ic.n_channels = data.n_channels;
  ic.n_slots = data.n_slots;
  ic.pair_input = false;
  InverseDynamics<float> head(ic, mix_seed(seed, 404));
  Adam<float> opt(static_cast<float>(learning_rate));
  opt.attach(head.params());
  Rng rng(mix_seed(seed, 505));

  const int positions = ic.positions();
  const int n_traj = static_cast<int>(data.trajectories.size());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    double acc = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      Mat<float> inputs(data.state_dim, batch_size);
      Eigen::MatrixXi targets(positions, batch_size);
      for (int b = 0; b < batch_size; ++b) {
        const int ti = rng.uniform_int(n_traj);
        const Trajectory& tr = data.trajectories[static_cast<std::size_t>(ti)];
        const int f = rng.uniform_int(tr.length());
        inputs.col(b) =
            normalize_state(tr.states[static_cast<std::size_t>(f)], data.norm).cast<float>();
        const auto flat = tr.actions[static_cast<std::size_t>(f)].flatten();
        for (int j2 = 0; j2 < positions; ++j2)
          targets(j2, b) = flat[static_cast<std::size_t>(j2)];
      }
      Tape<float> tape;
      Ref loss = head.loss(tape, inputs, targets);
      const double v = tape.val(loss)(0, 0);
      if (!std::isfinite(v))
        throw std::runtime_error("train_bc: non-finite loss at epoch " +
                                 std::to_string(epoch));
      head.params().zero_grad();
      tape.backward(loss);
      if (!opt.step())
        std::fprintf(stderr, "train_bc: non-finite gradient; step skipped\n");
      acc += v;
    }
    if (on_epoch) on_epoch(epoch, acc / steps_per_epoch);
  }
  return BcModel{std::move(head), data.norm};
}

void BcModel::save(const std::string& dir) const {
  fs::create_directories(dir);
  json j;
  j["kind"] = "bc_model";
  j["invdyn"] = {
      {"state_dim", head.config().state_dim},   {"n_nodes", head.config().n_nodes},
      {"n_channels", head.config().n_channels}, {"n_slots", head.config().n_slots},
      {"hidden", head.config().hidden},         {"head", head.config().head},
      {"embed", head.config().embed},
  };
  j["norm"] = to_json(norm);
  std::ofstream os(fs::path(dir) / "bc_manifest.json");
  os << j.dump(2) << "\n";
  save_store((fs::path(dir) / "bc.bin").string(), head.params());
}

BcModel BcModel::load(const std::string& dir) {
  std::ifstream is(fs::path(dir) / "bc_manifest.json");
  if (!is) throw std::runtime_error("bc: cannot open " + dir + "/bc_manifest.json");
  json j = json::parse(is);
  InvDynConfig ic;
  ic.state_dim = j.at("invdyn").at("state_dim");
  ic.n_nodes = j.at("invdyn").at("n_nodes");
  ic.n_channels = j.at("invdyn").at("n_channels");
  ic.n_slots = j.at("invdyn").at("n_slots");
  ic.hidden = j.at("invdyn").at("hidden");
  ic.head = j.at("invdyn").at("head");
  ic.embed = j.at("invdyn").at("embed");
  ic.pair_input = false;
  InverseDynamics<float> head(ic, 0);
  load_store((fs::path(dir) / "bc.bin").string(), head.params());
  return BcModel{std::move(head), norm_stats_from_json(j.at("norm"))};
}

}  // namespace cdmp
