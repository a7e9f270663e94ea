#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdmp/nn.hpp"
#include "cdmp/rng.hpp"
#include "cdmp/tape.hpp"

namespace cdmp {

enum class ScheduleKind { cosine, linear };

/// Variance schedule of the forward noising process; index k runs 1..K.
struct NoiseSchedule {
  int K = 0;
  Eigen::VectorXd beta;       // beta[k-1]
  Eigen::VectorXd alpha;      // 1 - beta
  Eigen::VectorXd alpha_bar;  // running product of alpha

  double b(int k) const { return beta(check(k)); }
  double a(int k) const { return alpha(check(k)); }
  /// abar(0) = 1 by convention (used by the accelerated sampler's final hop).
  double abar(int k) const {
    if (k == 0) return 1.0;
    return alpha_bar(check(k));
  }
  /// Posterior variance beta_k * (1 - abar_{k-1}) / (1 - abar_k); the k = 1
  /// convention is beta_1.
  double posterior_var(int k) const {
    if (k == 1) return b(1);
    return b(k) * (1.0 - abar(k - 1)) / (1.0 - abar(k));
  }

  void validate() const;

 private:
  int check(int k) const {
    if (k < 1 || k > K) throw std::out_of_range("NoiseSchedule: k out of range");
    return k - 1;
  }
};

NoiseSchedule make_schedule(int K, ScheduleKind kind = ScheduleKind::cosine);
NoiseSchedule make_schedule_from_betas(const Eigen::VectorXd& betas);

/// x_k = sqrt(abar_k) x0 + sqrt(1 - abar_k) eps.
template <class S>
Mat<S> forward_diffuse(const Mat<S>& x0, int k, const Mat<S>& eps,
                       const NoiseSchedule& sched) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
    throw std::invalid_argument("forward_diffuse: shape mismatch");
  const S sa = static_cast<S>(std::sqrt(sched.abar(k)));
  const S sb = static_cast<S>(std::sqrt(1.0 - sched.abar(k)));
  return sa * x0 + sb * eps;
}

/// x0_hat = (x_k - sqrt(1 - abar_k) eps_hat) / sqrt(abar_k).
template <class S>
Mat<S> reconstruct_x0(const Mat<S>& x_k, const Mat<S>& eps_hat, int k,
                      const NoiseSchedule& sched) {
  if (x_k.rows() != eps_hat.rows() || x_k.cols() != eps_hat.cols())
    throw std::invalid_argument("reconstruct_x0: shape mismatch");
  const S sa = static_cast<S>(std::sqrt(sched.abar(k)));
  const S sb = static_cast<S>(std::sqrt(1.0 - sched.abar(k)));
  return (x_k - sb * eps_hat) / sa;
}

/// One reverse step: mean
///   mu = x_k / sqrt(alpha_k) - (1 - alpha_k) / (sqrt(1-abar_k) sqrt(alpha_k)) eps_hat
/// plus N(0, xi * posterior_var) noise; xi = 0 returns the mean exactly (and
/// draws nothing).
template <class S>
Mat<S> posterior_step(const Mat<S>& x_k, const Mat<S>& eps_hat, int k,
                      const NoiseSchedule& sched, S xi, Rng& rng) {
  if (x_k.rows() != eps_hat.rows() || x_k.cols() != eps_hat.cols())
    throw std::invalid_argument("posterior_step: shape mismatch");
  if (xi < S(0) || xi > S(1))
    throw std::invalid_argument("posterior_step: xi must be in [0,1]");
  const S inv_sa = static_cast<S>(1.0 / std::sqrt(sched.a(k)));
  const S coef = static_cast<S>((1.0 - sched.a(k)) /
                                (std::sqrt(1.0 - sched.abar(k)) * std::sqrt(sched.a(k))));
  Mat<S> mu = inv_sa * x_k - coef * eps_hat;
  if (xi == S(0)) return mu;
  const S sigma = static_cast<S>(std::sqrt(static_cast<double>(xi) * sched.posterior_var(k)));
  for (Eigen::Index c = 0; c < mu.cols(); ++c)
    for (Eigen::Index r = 0; r < mu.rows(); ++r)
      mu(r, c) += sigma * static_cast<S>(rng.gaussian());
  return mu;
}

/// Denoiser shape: a temporal U-Net over the horizon axis with two
/// down/up levels and six residual blocks. Each block is two
/// same-length temporal convolutions with group norm and the smooth gated
/// activation; the concatenated diffusion-step and condition embeddings are
/// projected and added after the block's first convolution unit. A learned
/// null embedding stands in for the condition when it is absent.
struct DenoiserConfig {
  int horizon = 8;
  int state_dim = 32;
  int base_channels = 32;
  int time_embed_dim = 64;
  int cond_embed_dim = 64;
  int kernel = 5;
  int gn_groups = 8;

  void validate() const {
    if (horizon < 4 || horizon % 4 != 0)
      throw std::invalid_argument("DenoiserConfig: horizon must be a positive multiple of 4");
    if (state_dim < 1 || base_channels < 1 || time_embed_dim < 2 || cond_embed_dim < 1)
      throw std::invalid_argument("DenoiserConfig: dimensions must be positive");
    if (time_embed_dim % 2 != 0)
      throw std::invalid_argument("DenoiserConfig: time_embed_dim must be even");
    if (kernel < 1 || kernel % 2 == 0)
      throw std::invalid_argument("DenoiserConfig: kernel must be odd");
    if (gn_groups < 1 || base_channels % gn_groups != 0)
      throw std::invalid_argument("DenoiserConfig: gn_groups must divide base_channels");
  }
};

/// Conditional noise model eps_theta(x_k, y, k). Sequence tensors are laid
/// out state_dim x (batch * horizon); sample b's window occupies columns
/// [b*H, (b+1)*H) with time ascending, so "row t of the window" is column
/// b*H + t here.
template <class S>
class Denoiser {
 public:
  Denoiser(DenoiserConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int et = cfg_.time_embed_dim;
    const int ec = cfg_.cond_embed_dim;
    const int c0 = cfg_.base_channels;
    const int c1 = 2 * c0;
    const int k = cfg_.kernel;

    params_.add_fanin_uniform("t1_w", et, et, et, rng);
    params_.add_zeros("t1_b", et, 1);
    params_.add_fanin_uniform("t2_w", et, et, et, rng);
    params_.add_zeros("t2_b", et, 1);
    params_.add_fanin_uniform("y1_w", ec, 1, 1, rng);
    params_.add_zeros("y1_b", ec, 1);
    params_.add_fanin_uniform("y2_w", ec, ec, ec, rng);
    params_.add_zeros("y2_b", ec, 1);
    params_.add_fanin_uniform("null_emb", ec, 1, ec, rng);

    block_io_ = {{cfg_.state_dim, c0}, {c0, c1},     {c1, c1},
                 {c1, c1},             {2 * c1, c0}, {2 * c0, c0}};
    for (std::size_t i = 0; i < block_io_.size(); ++i) {
      const auto [cin, cout] = block_io_[i];
      const std::string p = "rb" + std::to_string(i) + "_";
      params_.add_fanin_uniform(p + "conv1_w", cout, cin * k, cin * k, rng);
      params_.add_zeros(p + "conv1_b", cout, 1);
      params_.add_ones(p + "gn1_g", cout, 1);
      params_.add_zeros(p + "gn1_b", cout, 1);
      params_.add_fanin_uniform(p + "emb_w", cout, et + ec, et + ec, rng);
      params_.add_zeros(p + "emb_b", cout, 1);
      params_.add_fanin_uniform(p + "conv2_w", cout, cout * k, cout * k, rng);
      params_.add_zeros(p + "conv2_b", cout, 1);
      params_.add_ones(p + "gn2_g", cout, 1);
      params_.add_zeros(p + "gn2_b", cout, 1);
      if (cin != cout) {
        params_.add_fanin_uniform(p + "skip_w", cout, cin, cin, rng);
        params_.add_zeros(p + "skip_b", cout, 1);
      }
    }
    params_.add_fanin_uniform("out_w", cfg_.state_dim, c0, c0, rng);
    params_.add_zeros("out_b", cfg_.state_dim, 1);
  }

  Denoiser(const Denoiser& o) : cfg_(o.cfg_), params_(o.params_), block_io_(o.block_io_) {
    forward_calls_.store(o.forward_calls_.load());
  }
  Denoiser& operator=(const Denoiser& o) {
    cfg_ = o.cfg_;
    params_ = o.params_;
    block_io_ = o.block_io_;
    forward_calls_.store(o.forward_calls_.load());
    return *this;
  }

  const DenoiserConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }
  long forward_calls() const { return forward_calls_.load(); }

  /// Sinusoidal embedding of the diffusion step indices, one column per sample.
  Mat<S> sinusoidal_embed(const std::vector<int>& k) const {
    const int half = cfg_.time_embed_dim / 2;
    Mat<S> m(cfg_.time_embed_dim, static_cast<Eigen::Index>(k.size()));
    for (std::size_t c = 0; c < k.size(); ++c)
      for (int i = 0; i < half; ++i) {
        const double w = std::exp(-std::log(10000.0) * i / half);
        m(2 * i, static_cast<Eigen::Index>(c)) = static_cast<S>(std::sin(k[c] * w));
        m(2 * i + 1, static_cast<Eigen::Index>(c)) = static_cast<S>(std::cos(k[c] * w));
      }
    return m;
  }

  /// x: state_dim x (batch*H). k, y, use_cond: one entry per sample.
  /// Returns the predicted noise with the same shape as x.
  Ref forward(Tape<S>& t, Ref x, const std::vector<int>& k, const std::vector<S>& y,
              const std::vector<std::uint8_t>& use_cond, int batch) const {
    if (static_cast<int>(k.size()) != batch || static_cast<int>(y.size()) != batch ||
        static_cast<int>(use_cond.size()) != batch)
      throw std::invalid_argument("Denoiser::forward: per-sample vectors must match batch");
    if (t.val(x).rows() != cfg_.state_dim ||
        t.val(x).cols() != static_cast<Eigen::Index>(batch) * cfg_.horizon)
      throw std::invalid_argument("Denoiser::forward: input shape mismatch");
    forward_calls_.fetch_add(1, std::memory_order_relaxed);

    // Diffusion-step embedding MLP.
    Ref t_in = t.constant(sinusoidal_embed(k));
    Ref t_emb = affine(t, params_.leaf(t, "t2_w"),
                       mish(t, affine(t, params_.leaf(t, "t1_w"), t_in,
                                      params_.leaf(t, "t1_b"))),
                       params_.leaf(t, "t2_b"));

    // Condition embedding MLP, with the learned null embedding substituted
    // where the condition is absent.
    Mat<S> y_in(1, batch);
    for (int b = 0; b < batch; ++b) y_in(0, b) = y[static_cast<std::size_t>(b)];
    Ref y_emb = affine(t, params_.leaf(t, "y2_w"),
                       mish(t, affine(t, params_.leaf(t, "y1_w"), t.constant(y_in),
                                      params_.leaf(t, "y1_b"))),
                       params_.leaf(t, "y2_b"));
    Ref null_tiled = tile_cols(t, params_.leaf(t, "null_emb"), batch);
    Ref c_emb = select_cols(t, y_emb, null_tiled, use_cond);
    Ref emb = concat_rows(t, t_emb, c_emb);

    Ref h0 = res_block(t, 0, x, emb, batch);                       // c0 @ H
    Ref h1 = res_block(t, 1, avgpool2_time(t, h0, batch), emb, batch);  // c1 @ H/2
    Ref h2 = res_block(t, 2, avgpool2_time(t, h1, batch), emb, batch);  // c1 @ H/4
    Ref h3 = res_block(t, 3, h2, emb, batch);                      // c1 @ H/4
    Ref u1 = res_block(t, 4, concat_rows(t, upsample2_time(t, h3, batch), h1), emb,
                       batch);                                     // c0 @ H/2
    Ref u2 = res_block(t, 5, concat_rows(t, upsample2_time(t, u1, batch), h0), emb,
                       batch);                                     // c0 @ H
    return conv1d_same(t, u2, params_.leaf(t, "out_w"), params_.leaf(t, "out_b"), 1,
                       batch);
  }

 private:
  Ref res_block(Tape<S>& t, int idx, Ref x, Ref emb, int batch) const {
    const std::string p = "rb" + std::to_string(idx) + "_";
    const auto [cin, cout] = block_io_[static_cast<std::size_t>(idx)];
    Ref h = conv1d_same(t, x, params_.leaf(t, p + "conv1_w"),
                        params_.leaf(t, p + "conv1_b"), cfg_.kernel, batch);
    h = group_norm(t, h, params_.leaf(t, p + "gn1_g"), params_.leaf(t, p + "gn1_b"),
                   cfg_.gn_groups, batch);
    h = mish(t, h);
    Ref e = affine(t, params_.leaf(t, p + "emb_w"), mish(t, emb),
                   params_.leaf(t, p + "emb_b"));
    h = add_sample_vec(t, h, e, batch);
    h = conv1d_same(t, h, params_.leaf(t, p + "conv2_w"),
                    params_.leaf(t, p + "conv2_b"), cfg_.kernel, batch);
    h = group_norm(t, h, params_.leaf(t, p + "gn2_g"), params_.leaf(t, p + "gn2_b"),
                   cfg_.gn_groups, batch);
    h = mish(t, h);
    Ref skip = cin == cout
                   ? x
                   : conv1d_same(t, x, params_.leaf(t, p + "skip_w"),
                                 params_.leaf(t, p + "skip_b"), 1, batch);
    return add(t, h, skip);
  }

  DenoiserConfig cfg_;
  ParamStore<S> params_;
  std::vector<std::array<int, 2>> block_io_;
  mutable std::atomic<long> forward_calls_{0};
};

/// Classifier-free guided noise: the conditional and unconditional branches
/// are evaluated as one two-sample forward pass; omega = 0 and omega = 1
/// return the respective branch outputs exactly.
template <class S, class Model>
Mat<S> guided_noise(const Model& den, const Mat<S>& x_k, S y, int k, S omega) {
  const int H = den.config().horizon;
  if (x_k.rows() != den.config().state_dim || x_k.cols() != H)
    throw std::invalid_argument("guided_noise: window shape mismatch");
  Tape<S> t(false);
  Mat<S> x2(x_k.rows(), 2 * H);
  x2.leftCols(H) = x_k;
  x2.rightCols(H) = x_k;
  Ref out = den.forward(t, t.constant(std::move(x2)), {k, k}, {y, S(0)}, {1, 0}, 2);
  const Mat<S>& v = t.val(out);
  Mat<S> cond = v.leftCols(H);
  Mat<S> uncond = v.rightCols(H);
  if (omega == S(0)) return uncond;
  if (omega == S(1)) return cond;
  return uncond + omega * (cond - uncond);
}

enum class SamplerKind { ddpm, ddim };

/// Descending diffusion-step visit order for the accelerated sampler:
/// {1, 1+stride, 1+2*stride, ...} capped at K, visited high to low, with the
/// final hop landing on abar(0) = 1.
std::vector<int> ddim_steps(int K, int stride);

/// Reverse-samples a full normalized window conditioned on y_target and
/// constrained so the first trajectory row equals s_now at every step.
/// Returns the window as horizon x state_dim (rows are time steps).
template <class S, class Model>
Mat<S> sample_trajectory(const Model& den, const NoiseSchedule& sched, S y_target,
                         S omega, S xi, const Vec<S>& s_now, SamplerKind sampler,
                         int ddim_stride, Rng& rng) {
  const int H = den.config().horizon;
  const int D = den.config().state_dim;
  if (s_now.size() != D) throw std::invalid_argument("sample_trajectory: state dim mismatch");
  if (xi < S(0) || xi >= S(1))
    throw std::invalid_argument("sample_trajectory: xi must be in [0,1)");

  // x_K ~ N(0, xi * I); the zero-temperature path draws nothing.
  Mat<S> x = Mat<S>::Zero(D, H);
  if (xi > S(0)) {
    const S sd = static_cast<S>(std::sqrt(static_cast<double>(xi)));
    for (Eigen::Index c = 0; c < H; ++c)
      for (Eigen::Index r = 0; r < D; ++r) x(r, c) = sd * static_cast<S>(rng.gaussian());
  }
  x.col(0) = s_now;

  if (sampler == SamplerKind::ddpm) {
    for (int k = sched.K; k >= 1; --k) {
      Mat<S> eps = guided_noise(den, x, y_target, k, omega);
      x = posterior_step(x, eps, k, sched, xi, rng);
      x.col(0) = s_now;
    }
  } else {
    const std::vector<int> steps = ddim_steps(sched.K, ddim_stride);
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const int k = steps[i];
      const int k_next = i + 1 < steps.size() ? steps[i + 1] : 0;
      Mat<S> eps = guided_noise(den, x, y_target, k, omega);
      Mat<S> x0 = reconstruct_x0(x, eps, k, sched);
      const S sa = static_cast<S>(std::sqrt(sched.abar(k_next)));
      const S sb = static_cast<S>(std::sqrt(1.0 - sched.abar(k_next)));
      x = sa * x0 + sb * eps;
      x.col(0) = s_now;
    }
  }
  return x.transpose();
}

/// Packed window batch in the denoiser's layout: x0 is
/// state_dim x (batch*horizon); y holds one normalized return per sample.
template <class S>
struct WindowBatch {
  Mat<S> x0;
  std::vector<S> y;
  int batch = 0;
  int horizon = 0;
};

/// Forward pass artifacts kept for the OOD penalty, which must reuse the
/// exact noise draw, step indices, and prediction node of the loss it
/// extends.
template <class S>
struct DiffusionLossResult {
  Ref loss;               // scalar node, mean squared noise error per element
  Ref eps_hat;            // prediction node, state_dim x (batch*horizon)
  Mat<S> eps;             // drawn noise
  Mat<S> x_k;             // diffused input
  std::vector<int> k;     // per-sample step
  std::vector<std::uint8_t> cond_used;  // per-sample, 0 where dropped to null
  int batch = 0;
  int horizon = 0;
};

/// Noise-prediction loss with per-sample uniform step draw and Bernoulli
/// condition dropout; the expected value for an uninformative predictor is
/// the window element count. Per sample the draw order is: k, the dropout
/// coin, then the noise block column by column.
template <class S, class Model>
DiffusionLossResult<S> diffusion_loss(Tape<S>& t, const Model& den,
                                      const WindowBatch<S>& wb,
                                      const NoiseSchedule& sched, double beta_drop,
                                      Rng& rng) {
  if (beta_drop < 0.0 || beta_drop > 1.0)
    throw std::invalid_argument("diffusion_loss: beta_drop must be in [0,1]");
  const int B = wb.batch;
  const int H = wb.horizon;
  const Eigen::Index D = wb.x0.rows();
  if (wb.x0.cols() != static_cast<Eigen::Index>(B) * H ||
      static_cast<int>(wb.y.size()) != B)
    throw std::invalid_argument("diffusion_loss: batch shape mismatch");

  DiffusionLossResult<S> res;
  res.batch = B;
  res.horizon = H;
  res.k.resize(static_cast<std::size_t>(B));
  res.cond_used.resize(static_cast<std::size_t>(B));
  res.eps.resize(D, wb.x0.cols());
  res.x_k.resize(D, wb.x0.cols());
  for (int b = 0; b < B; ++b) {
    res.k[static_cast<std::size_t>(b)] = 1 + rng.uniform_int(sched.K);
    res.cond_used[static_cast<std::size_t>(b)] = rng.bernoulli(beta_drop) ? 0 : 1;
    const double sa = std::sqrt(sched.abar(res.k[static_cast<std::size_t>(b)]));
    const double sb = std::sqrt(1.0 - sched.abar(res.k[static_cast<std::size_t>(b)]));
    for (int h = 0; h < H; ++h) {
      const Eigen::Index c = static_cast<Eigen::Index>(b) * H + h;
      for (Eigen::Index r = 0; r < D; ++r) {
        const S e = static_cast<S>(rng.gaussian());
        res.eps(r, c) = e;
        res.x_k(r, c) = static_cast<S>(sa) * wb.x0(r, c) + static_cast<S>(sb) * e;
      }
    }
  }
  res.eps_hat = den.forward(t, t.constant(res.x_k), res.k, wb.y, res.cond_used, B);
  // Mean over the batch of window-level squared noise errors (the norm runs
  // over all horizon x state_dim entries of a sample).
  std::vector<S> col_w(static_cast<std::size_t>(B) * H, S(1) / static_cast<S>(B));
  res.loss = weighted_colsq_to_const(t, res.eps_hat, res.eps, std::move(col_w));
  return res;
}

}  // namespace cdmp
