#include "cdmp/diffusion.hpp"

#include <algorithm>

namespace cdmp {

void NoiseSchedule::validate() const {
  if (K < 1) throw std::invalid_argument("NoiseSchedule: K must be >= 1");
  if (beta.size() != K || alpha.size() != K || alpha_bar.size() != K)
    throw std::invalid_argument("NoiseSchedule: array length mismatch");
  double prev = 1.0;
  for (int k = 1; k <= K; ++k) {
    if (!(beta(k - 1) > 0.0 && beta(k - 1) < 1.0))
      throw std::invalid_argument("NoiseSchedule: beta out of (0,1)");
    if (std::abs(alpha(k - 1) - (1.0 - beta(k - 1))) > 1e-12)
      throw std::invalid_argument("NoiseSchedule: alpha != 1 - beta");
    const double expect = prev * alpha(k - 1);
    if (std::abs(alpha_bar(k - 1) - expect) > 1e-12)
      throw std::invalid_argument("NoiseSchedule: alpha_bar not a running product");
    if (!(alpha_bar(k - 1) > 0.0 && alpha_bar(k - 1) < prev))
      throw std::invalid_argument("NoiseSchedule: alpha_bar must strictly decrease in (0,1)");
    prev = alpha_bar(k - 1);
  }
}

NoiseSchedule make_schedule_from_betas(const Eigen::VectorXd& betas) {
  NoiseSchedule s;
  s.K = static_cast<int>(betas.size());
  if (s.K < 1) throw std::invalid_argument("make_schedule_from_betas: empty");
  s.beta = betas;
  s.alpha = 1.0 - betas.array();
  s.alpha_bar.resize(s.K);
  double acc = 1.0;
  for (int k = 0; k < s.K; ++k) {
    acc *= s.alpha(k);
    s.alpha_bar(k) = acc;
  }
  s.validate();
  return s;
}

NoiseSchedule make_schedule(int K, ScheduleKind kind) {
  if (K < 1) throw std::invalid_argument("make_schedule: K must be >= 1");
  Eigen::VectorXd betas(K);
  if (kind == ScheduleKind::linear) {
    // Endpoints adapt to K so the terminal signal level alpha_bar_K lands
    // near 1e-2 regardless of step count. This keeps the reconstruction
    // weight (1 - abar_K) / abar_K of the penalized objective bounded near
    // 1e2; the squared-cosine profile ends orders of magnitude lower.
    const double lo = 1e-4;
    const double target = std::log(100.0);  // -log(alpha_bar_K)
    const double hi = std::min(std::max(2.0 * target / K - lo, lo), 0.999);
    for (int k = 0; k < K; ++k)
      betas(k) = K == 1 ? hi : lo + (hi - lo) * k / (K - 1);
  } else {
    // Squared-cosine alpha_bar profile, beta clipped at 0.999.
    const double s = 0.008;
    auto f = [&](double step) {
      const double t = (step / K + s) / (1.0 + s) * M_PI / 2.0;
      const double c = std::cos(t);
      return c * c;
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int k = 1; k <= K; ++k) {
      const double abar = f(static_cast<double>(k)) / f0;
      double beta = 1.0 - abar / prev;
      beta = std::min(beta, 0.999);
      betas(k - 1) = beta;
      prev *= 1.0 - beta;
    }
  }
  return make_schedule_from_betas(betas);
}

std::vector<int> ddim_steps(int K, int stride) {
  if (stride < 1) throw std::invalid_argument("ddim_steps: stride must be >= 1");
  if (K < 1) throw std::invalid_argument("ddim_steps: K must be >= 1");
  std::vector<int> steps;
  for (int k = 1; k <= K; k += stride) steps.push_back(k);
  std::reverse(steps.begin(), steps.end());
  return steps;
}

}  // namespace cdmp
