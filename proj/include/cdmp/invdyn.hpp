#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdmp/netsim.hpp"
#include "cdmp/nn.hpp"
#include "cdmp/tape.hpp"

namespace cdmp {

struct InvDynConfig {
  int state_dim = 32;  // 4N
  int n_nodes = 8;
  int n_channels = 2;
  int n_slots = 6;
  int hidden = 128;        // encoder width
  int head = 64;           // per-position decoder width
  int embed = 32;          // action embedding width
  bool pair_input = true;  // false: condition on the current state only (BC head)

  int positions() const { return n_channels * n_slots; }
  int input_dim() const { return pair_input ? 2 * state_dim : state_dim; }

  void validate() const {
    if (state_dim < 1 || n_nodes < 2 || n_channels < 1 || n_slots < 1 || hidden < 1 ||
        head < 1 || embed < 1)
      throw std::invalid_argument("InvDynConfig: dimensions must be positive");
  }
};

/// Sequential decoder over the resource-block grid. The state (pair) is
/// encoded once; position j (row-major channel-then-slot) then combines the
/// projected encoding, a per-position embedding, and the running mean
/// embedding of the previously decoded node choices into N logits. Greedy
/// decoding breaks ties toward the lowest node index; training and accuracy
/// evaluation are teacher forced.
template <class S>
class InverseDynamics {
 public:
  InverseDynamics(InvDynConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int in = cfg_.input_dim();
    params_.add_fanin_uniform("enc1_w", cfg_.hidden, in, in, rng);
    params_.add_zeros("enc1_b", cfg_.hidden, 1);
    params_.add_fanin_uniform("enc2_w", cfg_.hidden, cfg_.hidden, cfg_.hidden, rng);
    params_.add_zeros("enc2_b", cfg_.hidden, 1);
    params_.add_fanin_uniform("encproj_w", cfg_.head, cfg_.hidden, cfg_.hidden, rng);
    params_.add_zeros("encproj_b", cfg_.head, 1);
    params_.add_fanin_uniform("pos_tab", cfg_.head, cfg_.positions(), cfg_.head, rng);
    params_.add_fanin_uniform("act_emb", cfg_.embed, cfg_.n_nodes, cfg_.embed, rng);
    params_.add_fanin_uniform("prev_w", cfg_.head, cfg_.embed, cfg_.embed, rng);
    params_.add_fanin_uniform("out_w", cfg_.n_nodes, cfg_.head, cfg_.head, rng);
    params_.add_zeros("out_b", cfg_.n_nodes, 1);
  }

  const InvDynConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  /// Teacher-forced mean cross-entropy over all positions and transitions.
  /// inputs: input_dim x T normalized state (pair) columns; targets:
  /// positions x T node indices.
  Ref loss(Tape<S>& t, const Mat<S>& inputs, const Eigen::MatrixXi& targets) const {
    const int T = static_cast<int>(inputs.cols());
    if (T < 1) throw std::invalid_argument("InverseDynamics::loss: empty batch");
    if (targets.rows() != cfg_.positions() || targets.cols() != T)
      throw std::invalid_argument("InverseDynamics::loss: target shape mismatch");
    Ref enc_proj = encode(t, t.constant(inputs));
    Ref prev_sum = t.constant(Mat<S>::Zero(cfg_.embed, T));
    Ref act_tab = params_.leaf(t, "act_emb");
    Ref total = scalar(t, S(0));
    for (int j = 0; j < cfg_.positions(); ++j) {
      Ref prev_mean = j == 0 ? prev_sum : scale(t, prev_sum, S(1) / static_cast<S>(j));
      Ref logits = position_logits(t, enc_proj, prev_mean, j, T);
      std::vector<int> tj(static_cast<std::size_t>(T));
      for (int c = 0; c < T; ++c) tj[static_cast<std::size_t>(c)] = targets(j, c);
      total = add(t, total, softmax_xent_mean(t, logits, tj));
      if (j + 1 < cfg_.positions())
        prev_sum = add(t, prev_sum, embed_cols(t, act_tab, std::move(tj)));
    }
    return scale(t, total, S(1) / static_cast<S>(cfg_.positions()));
  }

  /// Greedy decode for a batch of input columns.
  std::vector<RbGrid> predict_batch(const Mat<S>& inputs) const {
    Eigen::MatrixXi choices = decode(inputs, nullptr, nullptr);
    const int T = static_cast<int>(inputs.cols());
    std::vector<RbGrid> out;
    out.reserve(static_cast<std::size_t>(T));
    for (int c = 0; c < T; ++c) {
      RbGrid g;
      g.assignment.resize(cfg_.n_channels, cfg_.n_slots);
      for (int j = 0; j < cfg_.positions(); ++j)
        g.assignment(j / cfg_.n_slots, j % cfg_.n_slots) = choices(j, c);
      out.push_back(std::move(g));
    }
    return out;
  }

  /// Action explaining the transition s -> s_next (both normalized).
  RbGrid predict(const Vec<S>& s, const Vec<S>& s_next) const {
    Mat<S> in(cfg_.input_dim(), 1);
    if (cfg_.pair_input) {
      if (s.size() != cfg_.state_dim || s_next.size() != cfg_.state_dim)
        throw std::invalid_argument("InverseDynamics::predict: state dim mismatch");
      in.col(0).head(cfg_.state_dim) = s;
      in.col(0).tail(cfg_.state_dim) = s_next;
    } else {
      if (s.size() != cfg_.state_dim)
        throw std::invalid_argument("InverseDynamics::predict: state dim mismatch");
      in.col(0) = s;
    }
    return predict_batch(in)[0];
  }

  /// Teacher-forced per-position argmax accuracy.
  double accuracy(const Mat<S>& inputs, const Eigen::MatrixXi& targets) const {
    if (targets.rows() != cfg_.positions() || targets.cols() != inputs.cols())
      throw std::invalid_argument("InverseDynamics::accuracy: target shape mismatch");
    long hits = 0;
    decode(inputs, &targets, &hits);
    return static_cast<double>(hits) /
           (static_cast<double>(inputs.cols()) * static_cast<double>(cfg_.positions()));
  }

 private:
  /// Shared no-grad decode. With teacher targets, previous choices are fed
  /// from ground truth and hits counts argmax matches; otherwise the model's
  /// own greedy choices are fed back.
  Eigen::MatrixXi decode(const Mat<S>& inputs, const Eigen::MatrixXi* teacher,
                         long* hits) const {
    const int T = static_cast<int>(inputs.cols());
    Tape<S> t(false);
    Ref enc_proj = encode(t, t.constant(inputs));
    Ref act_tab = params_.leaf(t, "act_emb");
    Mat<S> prev_sum = Mat<S>::Zero(cfg_.embed, T);
    Eigen::MatrixXi choices(cfg_.positions(), T);
    for (int j = 0; j < cfg_.positions(); ++j) {
      Ref prev_mean =
          t.constant(j == 0 ? prev_sum : Mat<S>(prev_sum / static_cast<S>(j)));
      const Mat<S>& lv = t.val(position_logits(t, enc_proj, prev_mean, j, T));
      std::vector<int> feed(static_cast<std::size_t>(T));
      for (int c = 0; c < T; ++c) {
        int best = 0;
        for (int n = 1; n < cfg_.n_nodes; ++n)
          if (lv(n, c) > lv(best, c)) best = n;
        choices(j, c) = best;
        if (teacher) {
          if (best == (*teacher)(j, c)) ++*hits;
          feed[static_cast<std::size_t>(c)] = (*teacher)(j, c);
        } else {
          feed[static_cast<std::size_t>(c)] = best;
        }
      }
      if (j + 1 < cfg_.positions())
        prev_sum += t.val(embed_cols(t, act_tab, std::move(feed)));
    }
    return choices;
  }

  Ref encode(Tape<S>& t, Ref in) const {
    if (t.val(in).rows() != cfg_.input_dim())
      throw std::invalid_argument("InverseDynamics: input dim mismatch");
    Ref h = mish(t, affine(t, params_.leaf(t, "enc1_w"), in, params_.leaf(t, "enc1_b")));
    h = mish(t, affine(t, params_.leaf(t, "enc2_w"), h, params_.leaf(t, "enc2_b")));
    return affine(t, params_.leaf(t, "encproj_w"), h, params_.leaf(t, "encproj_b"));
  }

  Ref position_logits(Tape<S>& t, Ref enc_proj, Ref prev_mean, int j, int T) const {
    Ref pos = tile_cols(t, embed_cols(t, params_.leaf(t, "pos_tab"), {j}), T);
    Ref pre = add(t, add(t, enc_proj, pos),
                  matmul(t, params_.leaf(t, "prev_w"), prev_mean));
    return affine(t, params_.leaf(t, "out_w"), mish(t, pre), params_.leaf(t, "out_b"));
  }

  InvDynConfig cfg_;
  ParamStore<S> params_;
};

}  // namespace cdmp
