#include "cdmp/ood.hpp"

namespace cdmp {

double log_sum_exp(const Eigen::VectorXd& exponents) {
  if (exponents.size() == 0)
    throw std::invalid_argument("log_sum_exp: empty");
  const double m = exponents.maxCoeff();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < exponents.size(); ++i)
    acc += std::exp(exponents(i) - m);
  return m + std::log(acc);
}

double smoothed_distance_sq(const Eigen::VectorXd& query, const Eigen::MatrixXd& data,
                            double sigma, double c1) {
  if (data.cols() == 0) throw std::invalid_argument("smoothed_distance_sq: empty dataset");
  if (data.rows() != query.size())
    throw std::invalid_argument("smoothed_distance_sq: dimension mismatch");
  if (sigma <= 0.0) throw std::invalid_argument("smoothed_distance_sq: sigma must be > 0");
  const double s2 = sigma * sigma;
  Eigen::VectorXd exponents(data.cols());
  for (Eigen::Index i = 0; i < data.cols(); ++i)
    exponents(i) = -(query - data.col(i)).squaredNorm() / (2.0 * s2);
  return -s2 * log_sum_exp(exponents) + c1;
}

std::pair<double, int> min_distance_sq(const Eigen::VectorXd& query,
                                       const Eigen::MatrixXd& data) {
  if (data.cols() == 0) throw std::invalid_argument("min_distance_sq: empty dataset");
  if (data.rows() != query.size())
    throw std::invalid_argument("min_distance_sq: dimension mismatch");
  double best = std::numeric_limits<double>::infinity();
  int best_i = 0;
  for (Eigen::Index i = 0; i < data.cols(); ++i) {
    const double d = 0.5 * (query - data.col(i)).squaredNorm();
    if (d < best) {
      best = d;
      best_i = static_cast<int>(i);
    }
  }
  return {best, best_i};
}

double verify_lemma1(const Eigen::MatrixXd& data, double sigma, int n_queries, Rng& rng) {
  if (sigma <= 0.0) throw std::invalid_argument("verify_lemma1: sigma must be > 0");
  const int n = static_cast<int>(data.rows());
  const int m = static_cast<int>(data.cols());
  if (m == 0) throw std::invalid_argument("verify_lemma1: empty dataset");
  const double s2 = sigma * sigma;
  const double c_const = s2 * (std::log(static_cast<double>(m)) +
                               0.5 * n * std::log(2.0 * M_PI * sigma));
  double max_residual = 0.0;
  for (int q = 0; q < n_queries; ++q) {
    // Queries scatter around dataset points at a few smoothing lengths.
    Eigen::VectorXd query = data.col(rng.uniform_int(m));
    for (int i = 0; i < n; ++i) query(i) += 3.0 * sigma * rng.gaussian();

    // Left side: -sigma^2 log of the Gaussian mixture, normalized by
    // (2 pi sigma)^(n/2).
    Eigen::VectorXd exponents(m);
    for (int i = 0; i < m; ++i)
      exponents(i) = -(query - data.col(i)).squaredNorm() / (2.0 * s2);
    const double log_q = -std::log(static_cast<double>(m)) -
                         0.5 * n * std::log(2.0 * M_PI * sigma) + log_sum_exp(exponents);
    const double lhs = -s2 * log_q;
    const double rhs = smoothed_distance_sq(query, data, sigma, 0.0) + c_const;
    max_residual = std::max(max_residual, std::abs(lhs - rhs));
  }
  return max_residual;
}

double estimate_lipschitz(const Eigen::MatrixXd& points, const Eigen::VectorXd& values) {
  if (points.cols() != values.size())
    throw std::invalid_argument("estimate_lipschitz: count mismatch");
  if (points.cols() < 2)
    throw std::invalid_argument("estimate_lipschitz: need at least two points");
  double best = 0.0;
  bool any = false;
  for (Eigen::Index i = 0; i < points.cols(); ++i)
    for (Eigen::Index j = i + 1; j < points.cols(); ++j) {
      const double dist = (points.col(i) - points.col(j)).norm();
      if (dist == 0.0) continue;
      any = true;
      best = std::max(best, std::abs(values(i) - values(j)) / dist);
    }
  if (!any)
    throw std::invalid_argument("estimate_lipschitz: fewer than two distinct points");
  return best;
}

double uncertainty_bound(const Eigen::VectorXd& query, const Eigen::MatrixXd& data,
                         const UncertaintyConfig& cfg, double lipschitz,
                         double e_at_closest) {
  if (lipschitz < 0.0)
    throw std::invalid_argument("uncertainty_bound: lipschitz must be >= 0");
  const int m = static_cast<int>(data.cols());
  const double c1 = cfg.resolve_c1(m);
  const double c2 = cfg.sigma * cfg.sigma * std::log(static_cast<double>(m)) - c1;
  const double d2 = smoothed_distance_sq(query, data, cfg.sigma, c1);
  const double radicand = d2 + c2;
  if (radicand < 0.0)
    throw std::domain_error("uncertainty_bound: negative radicand (c1 too large)");
  return e_at_closest + std::sqrt(2.0) * lipschitz * std::sqrt(radicand);
}

UncertaintyReport uncertainty_report(const Eigen::VectorXd& query,
                                     const Eigen::MatrixXd& data,
                                     const UncertaintyConfig& cfg, double lipschitz,
                                     double e_at_closest) {
  UncertaintyReport r;
  const int m = static_cast<int>(data.cols());
  const double c1 = cfg.resolve_c1(m);
  r.c2 = cfg.sigma * cfg.sigma * std::log(static_cast<double>(m)) - c1;
  r.d_sigma_sq = smoothed_distance_sq(query, data, cfg.sigma, c1);
  auto [dmin, idx] = min_distance_sq(query, data);
  r.d_min_sq = dmin;
  r.closest_index = idx;
  r.lipschitz = lipschitz;
  r.bound = uncertainty_bound(query, data, cfg, lipschitz, e_at_closest);
  return r;
}

}  // namespace cdmp
