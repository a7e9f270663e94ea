#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdmp/invdyn.hpp"

using namespace cdmp;

namespace {

InvDynConfig toy_cfg(int nodes, int channels, int slots, bool pair = true) {
  InvDynConfig c;
  c.state_dim = 4 * nodes;
  c.n_nodes = nodes;
  c.n_channels = channels;
  c.n_slots = slots;
  c.hidden = 32;
  c.head = 16;
  c.embed = 8;
  c.pair_input = pair;
  return c;
}

Mat<float> random_inputs(const InvDynConfig& cfg, int cols, Rng& rng) {
  Mat<float> m(cfg.input_dim(), cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < cfg.input_dim(); ++r)
      m(r, c) = static_cast<float>(rng.uniform(-1, 1));
  return m;
}

}  // namespace

TEST_CASE("uniform logits give the maximum-entropy loss") {
  InvDynConfig cfg = toy_cfg(8, 2, 6);
  InverseDynamics<float> model(cfg, 3);
  model.params().value("out_w").setZero();
  model.params().value("out_b").setZero();
  Rng rng(1);
  Mat<float> in = random_inputs(cfg, 10, rng);
  Eigen::MatrixXi targets(cfg.positions(), 10);
  for (int c = 0; c < 10; ++c)
    for (int j = 0; j < cfg.positions(); ++j) targets(j, c) = rng.uniform_int(8);
  Tape<float> t;
  Ref loss = model.loss(t, in, targets);
  CHECK(t.val(loss)(0, 0) == doctest::Approx(std::log(8.0)).epsilon(1e-5));
}

TEST_CASE("greedy decode follows the argmax with low-index ties") {
  InvDynConfig cfg = toy_cfg(4, 1, 8);
  cfg.head = 4;  // align head width with the node count for the crafted logits
  InverseDynamics<float> model(cfg, 5);
  auto& p = model.params();
  // Silence every path except the per-position table, then make position j
  // point at node j mod N through an identity output head.
  p.value("enc1_w").setZero();
  p.value("enc1_b").setZero();
  p.value("enc2_w").setZero();
  p.value("enc2_b").setZero();
  p.value("encproj_w").setZero();
  p.value("encproj_b").setZero();
  p.value("prev_w").setZero();
  p.value("out_b").setZero();
  p.value("out_w") = Mat<float>::Identity(4, 4) * 10.0f;
  p.value("pos_tab").setZero();
  for (int j = 0; j < cfg.positions(); ++j)
    p.value("pos_tab")(j % 4, j) = 5.0f;
  Rng rng(2);
  RbGrid g = model.predict(Vec<float>::Zero(16), Vec<float>::Zero(16));
  for (int j = 0; j < cfg.positions(); ++j)
    CHECK(g.assignment(j / cfg.n_slots, j % cfg.n_slots) == j % 4);

  SUBCASE("all-equal logits resolve to node 0") {
    p.value("pos_tab").setZero();
    RbGrid tie = model.predict(Vec<float>::Zero(16), Vec<float>::Zero(16));
    CHECK(tie.assignment.maxCoeff() == 0);
  }
}

TEST_CASE("any input decodes to a valid grid, deterministically") {
  InvDynConfig cfg = toy_cfg(5, 2, 3);
  InverseDynamics<float> model(cfg, 9);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Vec<float> s(cfg.state_dim), sn(cfg.state_dim);
    for (int i = 0; i < cfg.state_dim; ++i) {
      s(i) = static_cast<float>(rng.uniform(-1, 1));
      sn(i) = static_cast<float>(rng.uniform(-1, 1));
    }
    RbGrid a = model.predict(s, sn);
    CHECK(a.assignment.minCoeff() >= 0);
    CHECK(a.assignment.maxCoeff() < 5);
    CHECK(model.predict(s, sn) == a);
  }
  Vec<float> bad = Vec<float>::Zero(3);
  CHECK_THROWS(model.predict(bad, bad));
}

TEST_CASE("overfitting a single transition reproduces its action") {
  InvDynConfig cfg = toy_cfg(3, 1, 2);
  InverseDynamics<float> model(cfg, 17);
  Rng rng(4);
  Mat<float> in = random_inputs(cfg, 1, rng);
  Eigen::MatrixXi target(2, 1);
  target << 2, 0;

  Adam<float> opt(1e-2f);
  opt.attach(model.params());
  for (int step = 0; step < 400; ++step) {
    Tape<float> t;
    Ref loss = model.loss(t, in, target);
    model.params().zero_grad();
    t.backward(loss);
    opt.step();
  }
  Tape<float> t;
  CHECK(t.val(model.loss(t, in, target))(0, 0) < 0.01f);
  RbGrid g = model.predict_batch(in)[0];
  CHECK(g.assignment(0, 0) == 2);
  CHECK(g.assignment(0, 1) == 0);
  CHECK(model.accuracy(in, target) == doctest::Approx(1.0));
}

TEST_CASE("loss is covariant under a consistent node relabeling") {
  // Two-node toy: swapping the node labels in states, targets, and the
  // node-indexed parameter slices leaves the teacher-forced loss unchanged.
  InvDynConfig cfg = toy_cfg(2, 1, 2);
  InverseDynamics<float> model(cfg, 21);
  Rng rng(5);
  const int T = 6;
  Mat<float> in = random_inputs(cfg, T, rng);
  Eigen::MatrixXi targets(2, T);
  for (int c = 0; c < T; ++c)
    for (int j = 0; j < 2; ++j) targets(j, c) = rng.uniform_int(2);

  InverseDynamics<float> swapped(cfg, 21);
  auto& sp = swapped.params();
  for (std::size_t i = 0; i < model.params().size(); ++i)
    sp.entry_at(i).value = model.params().entry_at(i).value;
  // act_emb columns and out_w/out_b rows are indexed by node.
  sp.value("act_emb").col(0).swap(sp.value("act_emb").col(1));
  sp.value("out_w").row(0).swap(sp.value("out_w").row(1));
  sp.value("out_b").row(0).swap(sp.value("out_b").row(1));
  // enc1_w consumes [s; s_next], each with two 4-feature node blocks.
  auto& w = sp.value("enc1_w");
  for (int half = 0; half < 2; ++half)
    for (int f = 0; f < 4; ++f)
      w.col(8 * half + f).swap(w.col(8 * half + 4 + f));

  Mat<float> in_swapped(cfg.input_dim(), T);
  for (int half = 0; half < 2; ++half) {
    in_swapped.middleRows(8 * half, 4) = in.middleRows(8 * half + 4, 4);
    in_swapped.middleRows(8 * half + 4, 4) = in.middleRows(8 * half, 4);
  }
  Eigen::MatrixXi targets_swapped = targets;
  for (int c = 0; c < T; ++c)
    for (int j = 0; j < 2; ++j) targets_swapped(j, c) = 1 - targets(j, c);

  Tape<float> t1, t2;
  const float a = t1.val(model.loss(t1, in, targets))(0, 0);
  const float b = t2.val(swapped.loss(t2, in_swapped, targets_swapped))(0, 0);
  CHECK(a == doctest::Approx(b).epsilon(1e-5));
}

TEST_CASE("bc head consumes a single state") {
  InvDynConfig cfg = toy_cfg(4, 1, 3, /*pair=*/false);
  InverseDynamics<float> model(cfg, 33);
  CHECK(cfg.input_dim() == 16);
  Vec<float> s = Vec<float>::Constant(16, 0.25f);
  RbGrid g = model.predict(s, s);
  CHECK(g.assignment.rows() == 1);
  CHECK(g.assignment.cols() == 3);
}
