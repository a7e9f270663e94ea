#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cdmp/diffusion.hpp"
#include "cdmp/rng.hpp"
#include "cdmp/tape.hpp"

namespace cdmp {

struct UncertaintyConfig {
  double sigma = 0.3;  // smoothing noise level
  double zeta = 1.0;   // penalty weight
  /// Positivity constant; NaN selects the default sigma^2 * log(M'), which
  /// makes the smoothed distance nonnegative and zeroes the bound's C2.
  double c1 = std::numeric_limits<double>::quiet_NaN();

  double resolve_c1(int n_points) const {
    if (std::isnan(c1)) return sigma * sigma * std::log(static_cast<double>(n_points));
    return c1;
  }
};

struct UncertaintyReport {
  double d_sigma_sq = 0.0;
  double d_min_sq = 0.0;
  int closest_index = -1;
  double lipschitz = 0.0;
  double bound = 0.0;
  double c2 = 0.0;
};

/// Max-shifted log-sum-exp of the given exponents.
double log_sum_exp(const Eigen::VectorXd& exponents);

/// Smoothed squared distance to data (softmin over half squared distances):
///   -sigma^2 log sum_i exp(-||q - s_i||^2 / (2 sigma^2)) + c1.
/// data holds one point per column.
double smoothed_distance_sq(const Eigen::VectorXd& query, const Eigen::MatrixXd& data,
                            double sigma, double c1);

/// min_i 0.5 ||q - s_i||^2 and the index of the closest point (ties low).
std::pair<double, int> min_distance_sq(const Eigen::VectorXd& query,
                                       const Eigen::MatrixXd& data);

/// Max residual over random queries of the identity
///   -sigma^2 log q_sigma(s) = d_sigma(s)^2 + sigma^2 (log M' + n/2 log(2 pi sigma)),
/// with q_sigma the Gaussian mixture over the data and d_sigma computed at
/// c1 = 0. The mixture normalization follows the (2 pi sigma)^(n/2)
/// convention used by the smoothed-distance derivation.
double verify_lemma1(const Eigen::MatrixXd& data, double sigma, int n_queries, Rng& rng);

/// Max pairwise finite slope |e_i - e_j| / ||s_i - s_j||, identical points
/// skipped. points holds one point per column.
double estimate_lipschitz(const Eigen::MatrixXd& points, const Eigen::VectorXd& values);

/// Upper bound on the true error at the query:
///   e(s_c) + sqrt(2) L_e sqrt(d_sigma^2 + C2),   C2 = sigma^2 log M' - c1.
double uncertainty_bound(const Eigen::VectorXd& query, const Eigen::MatrixXd& data,
                         const UncertaintyConfig& cfg, double lipschitz,
                         double e_at_closest);

UncertaintyReport uncertainty_report(const Eigen::VectorXd& query,
                                     const Eigen::MatrixXd& data,
                                     const UncertaintyConfig& cfg, double lipschitz,
                                     double e_at_closest);

/// Trajectory-reconstruction OOD penalty on the diffusion loss caches: the
/// windows are rebuilt from the predicted noise and penalized against the
/// clean batch on every row but the first,
///   mean_b sum_{t'>=1} || s_t' - s^hat_t' ||^2.
/// Gradients flow through the noise prediction only; the diffused input acts
/// as data.
template <class S>
Ref ood_penalty(Tape<S>& t, const DiffusionLossResult<S>& cache, const Mat<S>& x0,
                const NoiseSchedule& sched) {
  const int B = cache.batch;
  const int H = cache.horizon;
  if (x0.rows() != cache.x_k.rows() || x0.cols() != cache.x_k.cols())
    throw std::invalid_argument("ood_penalty: cache shape mismatch");
  if (static_cast<int>(cache.k.size()) != B)
    throw std::invalid_argument("ood_penalty: cache batch mismatch");

  // s_hat = x_k / sqrt(abar_k) - sqrt(1-abar_k)/sqrt(abar_k) * eps_hat,
  // assembled as a per-sample affine map of the prediction node.
  std::vector<S> mul(static_cast<std::size_t>(B));
  Mat<S> shift(x0.rows(), x0.cols());
  for (int b = 0; b < B; ++b) {
    const double abar = sched.abar(cache.k[static_cast<std::size_t>(b)]);
    mul[static_cast<std::size_t>(b)] = static_cast<S>(-std::sqrt(1.0 - abar) / std::sqrt(abar));
    shift.middleCols(static_cast<Eigen::Index>(b) * H, H) =
        cache.x_k.middleCols(static_cast<Eigen::Index>(b) * H, H) /
        static_cast<S>(std::sqrt(abar));
  }
  Ref s_hat = per_sample_affine(t, cache.eps_hat, std::move(mul), shift, B);

  std::vector<S> col_w(static_cast<std::size_t>(B) * H);
  const S inv_b = S(1) / static_cast<S>(B);
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h)
      col_w[static_cast<std::size_t>(b * H + h)] = h == 0 ? S(0) : inv_b;
  return weighted_colsq_to_const(t, s_hat, x0, std::move(col_w));
}

/// Convenience evaluation of the penalty value outside a training graph.
template <class S>
S ood_penalty_value(const DiffusionLossResult<S>& cache, const Mat<S>& x0,
                    const NoiseSchedule& sched, const Mat<S>& eps_hat_value) {
  Tape<S> t(false);
  DiffusionLossResult<S> local = cache;
  local.eps_hat = t.constant(eps_hat_value);
  Ref p = ood_penalty(t, local, x0, sched);
  return t.val(p)(0, 0);
}

}  // namespace cdmp
