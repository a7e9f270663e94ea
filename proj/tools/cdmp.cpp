// Batch command-line surface: dataset generation, training, evaluation,
// theory verification, ablation sweeps, and plot-data export.
#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "cdmp/agent.hpp"
#include "cdmp/config.hpp"
#include "cdmp/json_util.hpp"
#include "cdmp/ood.hpp"

using namespace cdmp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Run manifests
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string slurp_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Content hash over a set of files (relative name + payload, sorted).
std::string hash_files(const fs::path& base, std::vector<std::string> rel_paths) {
  std::sort(rel_paths.begin(), rel_paths.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& rel : rel_paths) {
    h = fnv1a64(rel, h);
    h = fnv1a64(slurp_file(base / rel), h);
  }
  return hash_hex(h);
}

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const json& resolved_config, std::uint64_t seed,
                    const std::vector<std::string>& input_files,
                    const std::vector<std::string>& output_files) {
  json m;
  m["command"] = command;
  m["config"] = resolved_config;
  m["seed"] = seed;
  m["created"] = timestamp_now();
  std::uint64_t ih = 0xcbf29ce484222325ULL;
  for (const auto& f : input_files) ih = fnv1a64(slurp_file(f), ih);
  m["input_hash"] = hash_hex(ih);
  m["outputs"] = output_files;
  m["content_hash"] = hash_files(out_dir, output_files);
  std::ofstream os(out_dir / "manifest.json");
  os << m.dump(2) << "\n";
}

json kv_to_json(const KvConfig& kv) {
  json j = json::object();
  for (const auto& [k, v] : kv.entries()) j[k] = v;
  return j;
}

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

KvConfig load_config_opt(const std::string& path) {
  return path.empty() ? KvConfig() : KvConfig::load(path);
}

TrainConfig train_config_from(const KvConfig& kv) {
  TrainConfig base =
      kv.str("scale", "desk") == "paper" ? TrainConfig::paper() : TrainConfig::desk();
  const std::string variant = kv.str("variant", "cdmp");
  if (variant == "cdmp") base.variant = Variant::cdmp;
  else if (variant == "cdmp_pen") base.variant = Variant::cdmp_pen;
  else throw std::runtime_error("config: variant must be cdmp or cdmp_pen");
  base.diffusion_steps = kv.geti("diffusion_steps", base.diffusion_steps);
  base.horizon = kv.geti("horizon", base.horizon);
  base.gamma = kv.getd("gamma", base.gamma);
  base.beta_drop = kv.getd("beta_drop", base.beta_drop);
  base.zeta = kv.getd("zeta", base.zeta);
  base.epochs = kv.geti("epochs", base.epochs);
  base.steps_per_epoch = kv.geti("steps_per_epoch", base.steps_per_epoch);
  base.batch_size = kv.geti("batch_size", base.batch_size);
  base.learning_rate = kv.getd("learning_rate", base.learning_rate);
  base.ema_decay = kv.getd("ema_decay", base.ema_decay);
  const std::string sched = kv.str("schedule", "cosine");
  if (sched == "cosine") base.schedule = ScheduleKind::cosine;
  else if (sched == "linear") base.schedule = ScheduleKind::linear;
  else throw std::runtime_error("config: schedule must be cosine or linear");
  base.base_channels = kv.geti("base_channels", base.base_channels);
  base.time_embed_dim = kv.geti("time_embed_dim", base.time_embed_dim);
  base.cond_embed_dim = kv.geti("cond_embed_dim", base.cond_embed_dim);
  base.invdyn_hidden = kv.geti("invdyn_hidden", base.invdyn_hidden);
  base.invdyn_head = kv.geti("invdyn_head", base.invdyn_head);
  base.invdyn_embed = kv.geti("invdyn_embed", base.invdyn_embed);
  return base;
}

json train_config_json(const TrainConfig& c) {
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

PlannerConfig planner_config_from(const KvConfig& kv) {
  PlannerConfig pc;
  pc.omega = kv.getd("omega", pc.omega);
  pc.xi = kv.getd("xi", pc.xi);
  pc.y_target = kv.getd("y_target", pc.y_target);
  const std::string sampler = kv.str("sampler", "ddpm");
  if (sampler == "ddpm") {
    pc.sampler = SamplerKind::ddpm;
  } else if (sampler.rfind("ddim", 0) == 0) {
    pc.sampler = SamplerKind::ddim;
    const auto colon = sampler.find(':');
    pc.ddim_stride = colon == std::string::npos ? 4 : std::stoi(sampler.substr(colon + 1));
  } else {
    throw std::runtime_error("config: sampler must be ddpm or ddim[:stride]");
  }
  return pc;
}

std::string scenario_label(const KvConfig& kv, const ScenarioSpec& scen) {
  if (kv.has("scenario_name")) return kv.str("scenario_name", "");
  std::string label = scen.ratio_schedule.size() > 1 ? "dynamic" : "static";
  if (!scen.interference_channels.empty() && scen.interference_duty > 0.0) {
    std::ostringstream os;
    os << label << "+duty" << scen.interference_duty;
    return os.str();
  }
  return label;
}

// ---------------------------------------------------------------------------
// Shared evaluation harness
// ---------------------------------------------------------------------------

struct EpisodeRow {
  int seed = 0;
  std::string scenario;
  int episode = 0;
  int frames = 0;
  double reward = 0.0;
  double throughput = 0.0;
  double delay = 0.0;
  double loss_rate = 0.0;
  double per_action_ms = 0.0;
};

EpisodeRow summarize_episode(const EpisodeResult& res, double wall_seconds) {
  EpisodeRow row;
  row.frames = static_cast<int>(res.rewards.size());
  row.reward = res.mean_reward();
  double tput = 0.0, delay = 0.0;
  for (const auto& m : res.metrics) {
    tput += m.throughput.sum();
    delay += m.delay.sum();
  }
  row.throughput = tput / row.frames;
  row.delay = delay / row.frames;
  const auto& last = res.metrics.back();
  const long attempted = last.cum_dropped + last.cum_delivered;
  row.loss_rate = attempted > 0
                      ? static_cast<double>(last.cum_dropped) / static_cast<double>(attempted)
                      : 0.0;
  row.per_action_ms = 1000.0 * wall_seconds / row.frames;
  return row;
}

struct EvalSpec {
  SimConfig sim;
  ScenarioSpec scen;
  std::string scenario_name;
  int seeds = 3;
  int episodes = 5;
  int frames = 100;
  std::uint64_t base_seed = 0;
};

std::vector<EpisodeRow> run_evaluation(const EvalSpec& spec,
                                       const std::function<std::unique_ptr<Policy>()>& make_policy) {
  std::vector<EpisodeRow> rows;
  for (int s = 0; s < spec.seeds; ++s) {
    for (int e = 0; e < spec.episodes; ++e) {
      Simulator sim(spec.sim, spec.scen,
                    mix_seed(spec.base_seed + static_cast<std::uint64_t>(s), e));
      Rng rng(mix_seed(spec.base_seed + 7919 + static_cast<std::uint64_t>(s), e));
      auto policy = make_policy();
      const auto t0 = std::chrono::steady_clock::now();
      EpisodeResult res = rollout_policy(sim, *policy, spec.frames, rng);
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      EpisodeRow row = summarize_episode(res, wall);
      row.seed = s;
      row.episode = e;
      row.scenario = spec.scenario_name;
      rows.push_back(row);
    }
  }
  return rows;
}

void write_episodes_csv(const fs::path& path, const std::vector<EpisodeRow>& rows) {
  std::ofstream os(path);
  os << "seed,scenario,episode,frames,reward,throughput,delay,loss_rate,per_action_ms\n";
  for (const auto& r : rows)
    os << r.seed << "," << r.scenario << "," << r.episode << "," << r.frames << ","
       << r.reward << "," << r.throughput << "," << r.delay << "," << r.loss_rate << ","
       << r.per_action_ms << "\n";
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd ms;
  if (xs.empty()) return ms;
  for (double x : xs) ms.mean += x;
  ms.mean /= static_cast<double>(xs.size());
  for (double x : xs) ms.std += (x - ms.mean) * (x - ms.mean);
  ms.std = std::sqrt(ms.std / static_cast<double>(xs.size()));  // population
  return ms;
}

json summary_json(const std::vector<EpisodeRow>& rows) {
  auto collect = [&](auto get) {
    std::vector<double> xs;
    for (const auto& r : rows) xs.push_back(get(r));
    return mean_std(xs);
  };
  const MeanStd rew = collect([](const EpisodeRow& r) { return r.reward; });
  const MeanStd tput = collect([](const EpisodeRow& r) { return r.throughput; });
  const MeanStd del = collect([](const EpisodeRow& r) { return r.delay; });
  const MeanStd loss = collect([](const EpisodeRow& r) { return r.loss_rate; });
  const MeanStd ms = collect([](const EpisodeRow& r) { return r.per_action_ms; });
  return {
      {"episodes", rows.size()},
      {"reward", {{"mean", rew.mean}, {"std", rew.std}}},
      {"throughput", {{"mean", tput.mean}, {"std", tput.std}}},
      {"delay", {{"mean", del.mean}, {"std", del.std}}},
      {"loss_rate", {{"mean", loss.mean}, {"std", loss.std}}},
      {"per_action_ms", {{"mean", ms.mean}, {"std", ms.std}}},
  };
}

/// Minimal polyline chart for CSV plot data.
void write_svg_line(const fs::path& path, const std::vector<double>& xs,
                    const std::vector<double>& ys, const std::string& title) {
  const int w = 640, h = 400, pad = 50;
  double xmin = xs.front(), xmax = xs.front(), ymin = ys.front(), ymax = ys.front();
  for (double x : xs) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
  }
  for (double y : ys) {
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  std::ofstream os(path);
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
     << "'>\n<rect width='100%' height='100%' fill='white'/>\n<text x='" << w / 2
     << "' y='20' text-anchor='middle' font-size='14'>" << title
     << "</text>\n<polyline fill='none' stroke='steelblue' stroke-width='2' points='";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double px = pad + (xs[i] - xmin) / (xmax - xmin) * (w - 2 * pad);
    const double py = h - pad - (ys[i] - ymin) / (ymax - ymin) * (h - 2 * pad);
    os << px << "," << py << " ";
  }
  os << "'/>\n<text x='10' y='" << h - 10 << "' font-size='11'>[" << ymin << ", " << ymax
     << "]</text>\n</svg>\n";
}

void write_losses_csv(const fs::path& path, const std::vector<EpochLoss>& history) {
  std::ofstream os(path);
  os << "epoch,diffusion_loss,invdyn_loss,ood_penalty,total\n";
  for (std::size_t e = 0; e < history.size(); ++e)
    os << e << "," << history[e].diffusion << "," << history[e].invdyn << ","
       << history[e].ood << "," << history[e].total << "\n";
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen_dataset(const std::string& config_path, const std::string& out,
                    std::uint64_t seed, bool event_log) {
  const KvConfig kv = load_config_opt(config_path);
  const SimConfig cfg = sim_config_from(kv);
  const ScenarioSpec scen = scenario_from(kv, cfg);
  const int episodes = kv.geti("episodes", 200);
  const int episode_len = kv.geti("episode_len", 300);
  const double swap_prob = kv.getd("swap_prob", 0.2);
  const int horizon = kv.geti("horizon", 8);
  const double gamma = kv.getd("gamma", 0.99);

  BehaviorPolicy policy(cfg, scen, swap_prob);
  SimFactory factory = [cfg, scen](std::uint64_t s) { return Simulator(cfg, scen, s); };
  OfflineDataset data =
      collect_dataset(factory, policy, episodes, episode_len, seed, horizon, gamma);
  std::ostringstream meta;
  for (const auto& [k, v] : kv.entries()) meta << k << " = " << v << "\n";
  data.meta_config = meta.str();

  fs::create_directories(out);
  data.save(out);
  std::vector<std::string> outputs = {"meta.json", "trajectories.jsonl"};

  if (event_log) {
    Simulator sim(cfg, scen, mix_seed(seed, 999));
    std::vector<EventRecord> log;
    sim.set_event_log(&log);
    Rng rng(mix_seed(seed, 998));
    Eigen::VectorXd state = Eigen::VectorXd::Zero(cfg.state_dim());
    std::ofstream os(fs::path(out) / "events.log");
    for (int f = 0; f < episode_len; ++f) {
      log.clear();
      auto [s2, m2] = sim.step_frame(policy.act(state, sim.frame(), rng));
      state = s2;
      for (const auto& e : log) os << format_event(e) << "\n";
    }
    outputs.push_back("events.log");
  }

  std::vector<std::string> inputs;
  if (!config_path.empty()) inputs.push_back(config_path);
  write_manifest(out, "gen-dataset", kv_to_json(kv), seed, inputs, outputs);
  std::cout << "dataset: " << episodes << " trajectories x " << episode_len
            << " frames -> " << out << "\n";
  return 0;
}

int cmd_train(const std::string& dataset_dir, const std::string& config_path,
              const std::string& out, std::uint64_t seed, const std::string& resume,
              int checkpoint_every, const std::string& variant_flag) {
  const KvConfig kv = load_config_opt(config_path);
  OfflineDataset data = OfflineDataset::load(dataset_dir);
  TrainConfig cfg = train_config_from(kv);
  if (!variant_flag.empty()) {
    if (variant_flag == "cdmp") cfg.variant = Variant::cdmp;
    else if (variant_flag == "cdmp_pen") cfg.variant = Variant::cdmp_pen;
    else throw std::runtime_error("--variant must be cdmp or cdmp_pen");
  }
  cfg.seed = seed;

  fs::create_directories(out);
  TrainHooks hooks;
  hooks.state_dir = (fs::path(out) / "train_state").string();
  hooks.checkpoint_every = checkpoint_every;
  hooks.resume_from = resume;
  hooks.on_epoch = [&](int epoch, const EpochLoss& l) {
    std::cout << "epoch " << epoch << ": total " << l.total << " (diffusion "
              << l.diffusion << ", invdyn " << l.invdyn << ", ood " << l.ood << ")\n";
  };
  TrainedModels models = train(data, cfg, hooks);
  models.save(out);
  write_losses_csv(fs::path(out) / "losses.csv", models.history);
  if (!models.history.empty()) {
    std::vector<double> xs, ys;
    for (std::size_t e = 0; e < models.history.size(); ++e) {
      xs.push_back(static_cast<double>(e));
      ys.push_back(models.history[e].total);
    }
    write_svg_line(fs::path(out) / "losses.svg", xs, ys, "training loss");
  }

  std::vector<std::string> inputs = {dataset_dir + "/meta.json"};
  if (!config_path.empty()) inputs.push_back(config_path);
  write_manifest(out, "train", train_config_json(cfg), seed, inputs,
                 {"model_manifest.json", "denoiser.bin", "invdyn.bin", "losses.csv"});
  std::cout << "checkpoints -> " << out << "\n";
  return 0;
}

int cmd_bc_baseline(const std::string& dataset_dir, const std::string& config_path,
                    const std::string& out, std::uint64_t seed) {
  const KvConfig kv = load_config_opt(config_path);
  OfflineDataset data = OfflineDataset::load(dataset_dir);
  const int epochs = kv.geti("bc_epochs", 5);
  const int steps = kv.geti("bc_steps_per_epoch", 200);
  const int batch = kv.geti("bc_batch_size", 64);
  const double lr = kv.getd("bc_learning_rate", 1e-3);
  BcModel bc = train_bc(data, epochs, steps, batch, lr, seed, [](int epoch, double loss) {
    std::cout << "bc epoch " << epoch << ": loss " << loss << "\n";
  });
  fs::create_directories(out);
  bc.save(out);
  std::vector<std::string> inputs = {dataset_dir + "/meta.json"};
  if (!config_path.empty()) inputs.push_back(config_path);
  write_manifest(out, "bc-baseline", kv_to_json(kv), seed, inputs,
                 {"bc_manifest.json", "bc.bin"});
  std::cout << "bc checkpoint -> " << out << "\n";
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& config_path,
                 const std::string& out, std::uint64_t seed, const std::string& policy_name,
                 int seeds, int episodes, int frames, const KvConfig& overrides) {
  KvConfig kv = load_config_opt(config_path);
  for (const auto& [k, v] : overrides.entries()) kv.set(k, v);
  const SimConfig cfg = sim_config_from(kv);
  const ScenarioSpec scen = scenario_from(kv, cfg);
  const PlannerConfig pc = planner_config_from(kv);

  EvalSpec spec;
  spec.sim = cfg;
  spec.scen = scen;
  spec.scenario_name = scenario_label(kv, scen);
  spec.seeds = seeds;
  spec.episodes = episodes;
  spec.frames = frames;
  spec.base_seed = seed;

  std::unique_ptr<TrainedModels> models;
  std::unique_ptr<BcModel> bc;
  if (policy_name == "planner") {
    models = std::make_unique<TrainedModels>(TrainedModels::load(checkpoint));
    if (models->denoiser.config().state_dim != cfg.state_dim())
      throw std::runtime_error("evaluate: checkpoint state dim does not match scenario");
  } else if (policy_name == "bc") {
    bc = std::make_unique<BcModel>(BcModel::load(checkpoint));
  }

  auto make_policy = [&]() -> std::unique_ptr<Policy> {
    if (policy_name == "planner") return std::make_unique<PlannerPolicy>(*models, pc);
    if (policy_name == "bc") return std::make_unique<BcPolicy>(*bc);
    if (policy_name == "oracle") return std::make_unique<OraclePolicy>(cfg, scen);
    if (policy_name == "random") return std::make_unique<RandomPolicy>(cfg);
    if (policy_name == "uniform") return std::make_unique<UniformStaticPolicy>(cfg);
    throw std::runtime_error("unknown policy: " + policy_name);
  };

  const auto rows = run_evaluation(spec, make_policy);
  fs::create_directories(out);
  write_episodes_csv(fs::path(out) / "episodes.csv", rows);
  json summary = summary_json(rows);
  summary["policy"] = policy_name;
  summary["scenario"] = spec.scenario_name;
  {
    std::ofstream os(fs::path(out) / "summary.json");
    os << summary.dump(2) << "\n";
  }
  json resolved = kv_to_json(kv);
  resolved["policy"] = policy_name;
  resolved["seeds"] = seeds;
  resolved["episodes"] = episodes;
  resolved["frames"] = frames;
  std::vector<std::string> inputs;
  if (!config_path.empty()) inputs.push_back(config_path);
  write_manifest(out, "evaluate", resolved, seed, inputs, {"episodes.csv", "summary.json"});
  std::cout << "policy " << policy_name << ": mean reward "
            << summary["reward"]["mean"].get<double>() << " (std "
            << summary["reward"]["std"].get<double>() << ") -> " << out << "\n";
  return 0;
}

int cmd_verify_theory(const std::string& out, int queries, double sigma,
                      std::uint64_t seed) {
  Rng rng(seed);
  json report;
  bool ok = true;

  // Mixture log-likelihood identity across randomized instances.
  double lemma_worst = 0.0;
  for (int inst = 0; inst < std::min(queries, 100); ++inst) {
    const int n = 1 + rng.uniform_int(16);
    const int m = 1 + rng.uniform_int(64);
    const double sg = rng.uniform(0.05, 1.0);
    Eigen::MatrixXd data(n, m);
    for (int c = 0; c < m; ++c)
      for (int r = 0; r < n; ++r) data(r, c) = 2.0 * rng.gaussian();
    lemma_worst = std::max(lemma_worst, verify_lemma1(data, sg, 10, rng));
  }
  report["lemma1_max_residual"] = lemma_worst;
  ok = ok && lemma_worst <= 1e-9;

  // Softmin sandwich plus the sigma -> 0 limit.
  Eigen::MatrixXd data(4, 32);
  for (int c = 0; c < 32; ++c)
    for (int r = 0; r < 4; ++r) data(r, c) = 2.0 * rng.gaussian();
  long sandwich_violations = 0;
  double max_gap = 0.0;
  const double log_m = std::log(32.0);
  for (int i = 0; i < queries; ++i) {
    Eigen::VectorXd q(4);
    for (int r = 0; r < 4; ++r) q(r) = 2.0 * rng.gaussian();
    const double c1 = sigma * sigma * log_m;
    const double dsig = smoothed_distance_sq(q, data, sigma, c1);
    const double dmin = min_distance_sq(q, data).first;
    if (dmin > dsig + 1e-12 || dsig > dmin + c1 + 1e-12) ++sandwich_violations;
    max_gap = std::max(max_gap, std::abs(dsig - dmin));
  }
  report["sandwich_violations"] = sandwich_violations;
  report["sandwich_max_gap"] = max_gap;
  report["sandwich_gap_limit"] = sigma * sigma * log_m;
  ok = ok && sandwich_violations == 0;
  if (queries > 0) ok = ok && max_gap <= sigma * sigma * log_m + 1e-12;

  // Certification of the error bound on |sin|.
  Eigen::MatrixXd sine(1, 50);
  Eigen::VectorXd vals(50);
  for (int i = 0; i < 50; ++i) {
    sine(0, i) = 2.0 * M_PI * i / 49.0;
    vals(i) = std::abs(std::sin(sine(0, i)));
  }
  const double lips = estimate_lipschitz(sine, vals);
  UncertaintyConfig ucfg;
  ucfg.sigma = 0.25;
  long bound_violations = 0;
  for (int i = 0; i < queries; ++i) {
    Eigen::VectorXd q(1);
    q << rng.uniform(0.0, 2.0 * M_PI);
    const auto [dmin, idx] = min_distance_sq(q, sine);
    const double bound =
        uncertainty_bound(q, sine, ucfg, lips, std::abs(std::sin(sine(0, idx))));
    if (std::abs(std::sin(q(0))) > bound) ++bound_violations;
  }
  report["lipschitz_estimate"] = lips;
  report["bound_violations"] = bound_violations;
  ok = ok && bound_violations == 0;

  // Penalty identity against the closed form.
  NoiseSchedule sched = make_schedule(64);
  double penalty_worst = 0.0;
  for (int trial = 0; trial < std::min(queries, 100); ++trial) {
    const int B = 1 + rng.uniform_int(4), H = 2 + rng.uniform_int(4),
              D = 1 + rng.uniform_int(4);
    Mat<double> x0(D, B * H), eps(D, B * H), eps_hat(D, B * H);
    for (int c = 0; c < B * H; ++c)
      for (int r = 0; r < D; ++r) {
        x0(r, c) = rng.uniform(-1, 1);
        eps(r, c) = rng.gaussian();
        eps_hat(r, c) = rng.gaussian();
      }
    DiffusionLossResult<double> cache;
    cache.batch = B;
    cache.horizon = H;
    cache.eps = eps;
    cache.x_k.resize(D, B * H);
    double expect = 0.0;
    for (int b = 0; b < B; ++b) {
      cache.k.push_back(1 + rng.uniform_int(64));
      cache.x_k.middleCols(b * H, H) =
          forward_diffuse(Mat<double>(x0.middleCols(b * H, H)), cache.k.back(),
                          Mat<double>(eps.middleCols(b * H, H)), sched);
      const double abar = sched.abar(cache.k.back());
      double err = 0.0;
      for (int h = 1; h < H; ++h)
        err += (eps.col(b * H + h) - eps_hat.col(b * H + h)).squaredNorm();
      expect += (1.0 - abar) / abar * err;
    }
    expect /= B;
    Tape<double> t;
    cache.eps_hat = t.constant(eps_hat);
    const double got = t.val(ood_penalty(t, cache, x0, sched))(0, 0);
    const double rel = std::abs(got - expect) / std::max(1.0, std::abs(expect));
    penalty_worst = std::max(penalty_worst, rel);
  }
  report["penalty_identity_max_rel_err"] = penalty_worst;
  ok = ok && penalty_worst <= 1e-6;

  report["queries"] = queries;
  report["sigma"] = sigma;
  report["pass"] = ok;

  fs::create_directories(out);
  {
    std::ofstream os(fs::path(out) / "theory_report.json");
    os << report.dump(2) << "\n";
  }
  json resolved = {{"queries", queries}, {"sigma", sigma}};
  write_manifest(out, "verify-theory", resolved, seed, {}, {"theory_report.json"});
  std::cout << report.dump(2) << "\n";
  return ok ? 0 : 1;
}

int cmd_sweep(const std::string& axis, const std::string& values_csv,
              const std::string& dataset_dir, const std::string& config_path,
              const std::string& out, std::uint64_t seed, int seeds, int episodes,
              int frames) {
  const KvConfig kv = load_config_opt(config_path);
  OfflineDataset data = OfflineDataset::load(dataset_dir);
  const SimConfig cfg = sim_config_from(kv);
  const ScenarioSpec scen = scenario_from(kv, cfg);

  std::vector<std::string> values;
  {
    std::istringstream in(values_csv);
    std::string item;
    while (std::getline(in, item, ',')) values.push_back(item);
  }
  if (values.empty()) throw std::runtime_error("sweep: no values given");
  const std::vector<std::string> axes = {"omega", "horizon", "zeta", "diffusion_steps",
                                         "sampler", "xi"};
  if (std::find(axes.begin(), axes.end(), axis) == axes.end())
    throw std::runtime_error("sweep: invalid axis " + axis);

  fs::create_directories(out);
  std::map<std::string, std::string> model_cache;  // train-config json -> dir
  std::ofstream csv(fs::path(out) / "sweep.csv");
  csv << "axis,value,mean_reward,std_reward,per_action_ms\n";
  std::vector<double> xs, ys;

  for (std::size_t vi = 0; vi < values.size(); ++vi) {
    const std::string& value = values[vi];
    TrainConfig tc = train_config_from(kv);
    tc.seed = seed;
    PlannerConfig pc = planner_config_from(kv);
    if (axis == "omega") pc.omega = std::stod(value);
    else if (axis == "xi") pc.xi = std::stod(value);
    else if (axis == "horizon") tc.horizon = std::stoi(value);
    else if (axis == "zeta") {
      tc.variant = Variant::cdmp_pen;
      tc.zeta = std::stod(value);
    } else if (axis == "diffusion_steps") tc.diffusion_steps = std::stoi(value);
    else if (axis == "sampler") {
      if (value == "ddpm") pc.sampler = SamplerKind::ddpm;
      else if (value.rfind("ddim", 0) == 0) {
        pc.sampler = SamplerKind::ddim;
        const auto colon = value.find(':');
        pc.ddim_stride = colon == std::string::npos ? 4 : std::stoi(value.substr(colon + 1));
      } else throw std::runtime_error("sweep: bad sampler value " + value);
    }

    const std::string tc_key = train_config_json(tc).dump();
    std::string model_dir;
    if (auto it = model_cache.find(tc_key); it != model_cache.end()) {
      model_dir = it->second;
    } else {
      model_dir = (fs::path(out) / ("models_" + std::to_string(model_cache.size()))).string();
      std::cout << "sweep: training for " << axis << " = " << value << "\n";
      TrainedModels m = train(data, tc);
      m.save(model_dir);
      model_cache[tc_key] = model_dir;
    }
    TrainedModels models = TrainedModels::load(model_dir);

    EvalSpec spec;
    spec.sim = cfg;
    spec.scen = scen;
    spec.scenario_name = scenario_label(kv, scen);
    spec.seeds = seeds;
    spec.episodes = episodes;
    spec.frames = frames;
    spec.base_seed = seed;
    const auto rows = run_evaluation(
        spec, [&]() { return std::make_unique<PlannerPolicy>(models, pc); });
    std::vector<double> rewards, action_ms;
    for (const auto& r : rows) {
      rewards.push_back(r.reward);
      action_ms.push_back(r.per_action_ms);
    }
    const MeanStd ms = mean_std(rewards);
    const MeanStd tms = mean_std(action_ms);
    csv << axis << "," << value << "," << ms.mean << "," << ms.std << "," << tms.mean
        << "\n";
    std::cout << "sweep " << axis << " = " << value << ": mean reward " << ms.mean
              << " (std " << ms.std << ", " << tms.mean << " ms/action)\n";
    xs.push_back(static_cast<double>(vi));
    ys.push_back(ms.mean);
  }
  csv.close();
  write_svg_line(fs::path(out) / "sweep.svg", xs, ys, "sweep: " + axis);

  json resolved = kv_to_json(kv);
  resolved["axis"] = axis;
  resolved["values"] = values_csv;
  std::vector<std::string> inputs = {dataset_dir + "/meta.json"};
  if (!config_path.empty()) inputs.push_back(config_path);
  write_manifest(out, "sweep", resolved, seed, inputs, {"sweep.csv"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline diffusion planner for MF-TDMA resource allocation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, dataset_dir, checkpoint_dir, resume_dir;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-dataset", "Collect an offline behavior dataset");
  bool event_log = false;
  gen->add_option("--config", config_path, "config file");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "master seed");
  gen->add_flag("--event-log", event_log, "dump a per-event log for one extra episode");

  auto* tr = app.add_subcommand("train", "Train the planner on a dataset");
  int checkpoint_every = 0;
  std::string variant_flag;
  tr->add_option("--dataset", dataset_dir, "dataset directory")->required();
  tr->add_option("--config", config_path, "config file");
  tr->add_option("--out", out_dir, "output directory")->required();
  tr->add_option("--seed", seed, "training seed");
  tr->add_option("--resume", resume_dir, "train_state directory to resume from");
  tr->add_option("--checkpoint-every", checkpoint_every, "epochs between state saves");
  tr->add_option("--variant", variant_flag, "cdmp or cdmp_pen");

  auto* bc = app.add_subcommand("bc-baseline", "Train the behavior-cloning baseline");
  bc->add_option("--dataset", dataset_dir, "dataset directory")->required();
  bc->add_option("--config", config_path, "config file");
  bc->add_option("--out", out_dir, "output directory")->required();
  bc->add_option("--seed", seed, "training seed");

  auto* ev = app.add_subcommand("evaluate", "Roll out a policy and summarize QoS");
  std::string policy_name = "planner";
  int eval_seeds = 3, eval_episodes = 5, eval_frames = 100;
  std::string omega_override, sampler_override, xi_override;
  ev->add_option("--checkpoint", checkpoint_dir, "model directory (planner/bc)");
  ev->add_option("--config", config_path, "scenario config file");
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--seed", seed, "evaluation seed");
  ev->add_option("--policy", policy_name, "planner|oracle|random|uniform|bc");
  ev->add_option("--seeds", eval_seeds, "number of random scenarios");
  ev->add_option("--episodes", eval_episodes, "episodes per seed");
  ev->add_option("--frames", eval_frames, "frames per episode");
  ev->add_option("--omega", omega_override, "guidance scale override");
  ev->add_option("--sampler", sampler_override, "sampler override (ddpm|ddim:stride)");
  ev->add_option("--xi", xi_override, "noise temperature override");

  auto* vt = app.add_subcommand("verify-theory", "Run the uncertainty-theory checks");
  int queries = 1000;
  double sigma = 0.3;
  vt->add_option("--out", out_dir, "output directory")->required();
  vt->add_option("--queries", queries, "random queries per check");
  vt->add_option("--sigma", sigma, "smoothing level for the sandwich check");
  vt->add_option("--seed", seed, "rng seed");

  auto* sw = app.add_subcommand("sweep", "Train/evaluate along one hyperparameter axis");
  std::string axis, values_csv;
  int sw_seeds = 3, sw_episodes = 3, sw_frames = 100;
  sw->add_option("--axis", axis, "omega|horizon|zeta|diffusion_steps|sampler|xi")
      ->required();
  sw->add_option("--values", values_csv, "comma-separated values")->required();
  sw->add_option("--dataset", dataset_dir, "dataset directory")->required();
  sw->add_option("--config", config_path, "config file");
  sw->add_option("--out", out_dir, "output directory")->required();
  sw->add_option("--seed", seed, "seed");
  sw->add_option("--seeds", sw_seeds, "number of random scenarios");
  sw->add_option("--episodes", sw_episodes, "episodes per seed");
  sw->add_option("--frames", sw_frames, "frames per episode");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_dataset(config_path, out_dir, seed, event_log);
    if (tr->parsed())
      return cmd_train(dataset_dir, config_path, out_dir, seed, resume_dir,
                       checkpoint_every, variant_flag);
    if (bc->parsed()) return cmd_bc_baseline(dataset_dir, config_path, out_dir, seed);
    if (ev->parsed()) {
      if ((policy_name == "planner" || policy_name == "bc") && checkpoint_dir.empty())
        throw std::runtime_error("evaluate: --checkpoint required for " + policy_name);
      KvConfig overrides;
      if (!omega_override.empty()) overrides.set("omega", omega_override);
      if (!sampler_override.empty()) overrides.set("sampler", sampler_override);
      if (!xi_override.empty()) overrides.set("xi", xi_override);
      return cmd_evaluate(checkpoint_dir, config_path, out_dir, seed, policy_name,
                          eval_seeds, eval_episodes, eval_frames, overrides);
    }
    if (vt->parsed()) return cmd_verify_theory(out_dir, queries, sigma, seed);
    if (sw->parsed())
      return cmd_sweep(axis, values_csv, dataset_dir, config_path, out_dir, seed,
                       sw_seeds, sw_episodes, sw_frames);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
