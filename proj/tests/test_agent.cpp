#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdmp/agent.hpp"

#include <filesystem>

using namespace cdmp;
namespace fs = std::filesystem;

namespace {

OfflineDataset tiny_dataset(std::uint64_t seed = 7, int episodes = 4, int frames = 20) {
  SimConfig cfg = SimConfig::desk();
  cfg.n_nodes = 4;
  cfg.n_slots = 3;
  cfg.n_channels = 2;
  ScenarioSpec scen = ScenarioSpec::static_high({0});
  BehaviorPolicy policy(cfg, scen, 0.2);
  SimFactory factory = [cfg, scen](std::uint64_t s) { return Simulator(cfg, scen, s); };
  return collect_dataset(factory, policy, episodes, frames, seed, 4, 0.99);
}

TrainConfig tiny_train_config(Variant v = Variant::cdmp) {
  TrainConfig cfg;
  cfg.variant = v;
  cfg.diffusion_steps = 8;
  cfg.horizon = 4;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 4;
  cfg.batch_size = 8;
  cfg.base_channels = 8;
  cfg.time_embed_dim = 8;
  cfg.cond_embed_dim = 8;
  cfg.invdyn_hidden = 16;
  cfg.invdyn_head = 8;
  cfg.invdyn_embed = 4;
  cfg.seed = 1;
  return cfg;
}

bool stores_equal(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.entry_at(i).value != b.entry_at(i).value) return false;
  return true;
}

}  // namespace

TEST_CASE("zero-epoch training returns initialized models and no history") {
  OfflineDataset data = tiny_dataset();
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 0;
  TrainedModels m = train(data, cfg);
  CHECK(m.history.empty());
  CHECK(m.denoiser.config().state_dim == data.state_dim);
  CHECK(m.norm.horizon == cfg.horizon);
}

TEST_CASE("penalized variant with zero weight matches the plain variant bit-exactly") {
  OfflineDataset data = tiny_dataset();
  TrainConfig plain = tiny_train_config(Variant::cdmp);
  TrainConfig pen0 = tiny_train_config(Variant::cdmp_pen);
  pen0.zeta = 0.0;
  TrainedModels a = train(data, plain);
  TrainedModels b = train(data, pen0);
  CHECK(stores_equal(a.denoiser.params(), b.denoiser.params()));
  CHECK(stores_equal(a.invdyn.params(), b.invdyn.params()));
  for (std::size_t e = 0; e < a.history.size(); ++e)
    CHECK(a.history[e].total == b.history[e].total);
}

TEST_CASE("penalty makes the total loss at least the plain total on the same draws") {
  OfflineDataset data = tiny_dataset();
  TrainConfig plain = tiny_train_config(Variant::cdmp);
  TrainConfig pen = tiny_train_config(Variant::cdmp_pen);
  pen.zeta = 1.0;
  plain.epochs = pen.epochs = 1;
  plain.steps_per_epoch = pen.steps_per_epoch = 1;
  TrainedModels a = train(data, plain);
  TrainedModels b = train(data, pen);
  CHECK(b.history[0].ood >= 0.0);
  CHECK(b.history[0].total >= a.history[0].total);
  CHECK(b.history[0].diffusion == a.history[0].diffusion);
  CHECK(b.history[0].invdyn == a.history[0].invdyn);
}

TEST_CASE("training losses stay finite and are logged per epoch") {
  OfflineDataset data = tiny_dataset();
  TrainConfig cfg = tiny_train_config(Variant::cdmp_pen);
  cfg.epochs = 2;
  TrainedModels m = train(data, cfg);
  REQUIRE(m.history.size() == 2);
  for (const auto& h : m.history) {
    CHECK(std::isfinite(h.total));
    CHECK(h.diffusion > 0.0);
    CHECK(h.invdyn > 0.0);
    CHECK(h.ood > 0.0);
    CHECK(h.total == doctest::Approx(h.diffusion + h.invdyn + h.ood).epsilon(1e-5));
  }
}

TEST_CASE("interrupted training resumes to the identical result") {
  OfflineDataset data = tiny_dataset();
  TrainConfig cfg = tiny_train_config();
  cfg.epochs = 4;

  TrainedModels straight = train(data, cfg);

  const fs::path state = fs::temp_directory_path() / "cdmp_resume_state";
  fs::remove_all(state);
  TrainConfig half = cfg;
  half.epochs = 2;
  TrainHooks hooks;
  hooks.state_dir = state.string();
  train(data, half, hooks);

  TrainHooks resume;
  resume.resume_from = state.string();
  TrainedModels resumed = train(data, cfg, resume);
  CHECK(stores_equal(straight.denoiser.params(), resumed.denoiser.params()));
  CHECK(stores_equal(straight.invdyn.params(), resumed.invdyn.params()));
  CHECK(straight.history.size() == resumed.history.size());
  for (std::size_t i = 0; i < straight.history.size(); ++i)
    CHECK(straight.history[i].total == resumed.history[i].total);
  fs::remove_all(state);
}

TEST_CASE("trained models round-trip through the checkpoint directory") {
  OfflineDataset data = tiny_dataset();
  TrainedModels m = train(data, tiny_train_config());
  const fs::path dir = fs::temp_directory_path() / "cdmp_models_rt";
  fs::remove_all(dir);
  m.save(dir.string());
  TrainedModels back = TrainedModels::load(dir.string());
  CHECK(stores_equal(m.denoiser.params(), back.denoiser.params()));
  CHECK(stores_equal(m.invdyn.params(), back.invdyn.params()));
  CHECK(back.cfg.horizon == m.cfg.horizon);
  CHECK(back.norm.return_min == m.norm.return_min);
  fs::remove_all(dir);
}

TEST_CASE("planning") {
  OfflineDataset data = tiny_dataset();
  TrainedModels m = train(data, tiny_train_config());
  Eigen::VectorXd s_raw = data.trajectories[0].states[3];

  SUBCASE("zero-temperature planning is deterministic") {
    PlannerConfig pc;
    pc.xi = 0.0;
    Rng r1(1), r2(2);
    CHECK(plan_step(m, pc, s_raw, r1) == plan_step(m, pc, s_raw, r2));
  }
  SUBCASE("actions are valid grids") {
    PlannerConfig pc;
    Rng rng(3);
    RbGrid a = plan_step(m, pc, s_raw, rng);
    CHECK(a.assignment.rows() == 2);
    CHECK(a.assignment.cols() == 3);
    CHECK(a.assignment.minCoeff() >= 0);
    CHECK(a.assignment.maxCoeff() < 4);
  }
  SUBCASE("accelerated sampler plans too") {
    PlannerConfig pc;
    pc.sampler = SamplerKind::ddim;
    pc.ddim_stride = 2;
    Rng rng(4);
    CHECK_NOTHROW(plan_step(m, pc, s_raw, rng));
  }
}

TEST_CASE("rollout harness is transparent for scripted policies") {
  SimConfig cfg = SimConfig::desk();
  ScenarioSpec scen = ScenarioSpec::static_high({0, 1, 2});

  OraclePolicy oracle(cfg, scen);
  Simulator via_harness(cfg, scen, 31);
  Rng rng(0);
  EpisodeResult res = rollout_policy(via_harness, oracle, 25, rng);
  REQUIRE(res.rewards.size() == 25);
  REQUIRE(res.metrics.size() == 25);

  Simulator direct(cfg, scen, 31);
  for (int f = 0; f < 25; ++f) {
    auto [state, mx] = direct.step_frame(oracle_policy(cfg, {0, 1, 2}));
    CHECK(res.rewards[static_cast<std::size_t>(f)] == reward(mx));
  }

  SUBCASE("single frame rollout") {
    Simulator sim(cfg, scen, 5);
    Rng r(1);
    EpisodeResult one = rollout_policy(sim, oracle, 1, r);
    CHECK(one.rewards.size() == 1);
    CHECK(one.actions.size() == 1);
  }
}

TEST_CASE("behavior cloning overfits a tiny dataset and stays valid") {
  OfflineDataset data = tiny_dataset(9, 2, 8);
  BcModel bc = train_bc(data, 3, 20, 16, 3e-3, 5);
  BcPolicy policy(bc);
  Rng rng(2);
  RbGrid a = policy.act(data.trajectories[0].states[2], 0, rng);
  CHECK(a.assignment.rows() == 2);
  CHECK(a.assignment.cols() == 3);
  CHECK(a.assignment.maxCoeff() < 4);

  const fs::path dir = fs::temp_directory_path() / "cdmp_bc_rt";
  fs::remove_all(dir);
  bc.save(dir.string());
  BcModel back = BcModel::load(dir.string());
  CHECK(stores_equal(bc.head.params(), back.head.params()));
  fs::remove_all(dir);
}
