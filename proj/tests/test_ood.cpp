#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdmp/ood.hpp"

using namespace cdmp;

namespace {

Eigen::MatrixXd gauss_cloud(int dim, int count, Rng& rng, double spread = 2.0) {
  Eigen::MatrixXd m(dim, count);
  for (int c = 0; c < count; ++c)
    for (int r = 0; r < dim; ++r) m(r, c) = spread * rng.gaussian();
  return m;
}

Eigen::MatrixXd sine_dataset(int count) {
  Eigen::MatrixXd m(1, count);
  for (int i = 0; i < count; ++i)
    m(0, i) = 2.0 * M_PI * i / (count - 1);
  return m;
}

double sine_error(double s) { return std::abs(std::sin(s)); }

}  // namespace

TEST_CASE("smoothed distance to data") {
  SUBCASE("single point at zero distance") {
    Eigen::MatrixXd data(2, 1);
    data << 0.5, -0.25;
    CHECK(smoothed_distance_sq(data.col(0), data, 0.7, 0.0) == doctest::Approx(0.0));
  }
  SUBCASE("symmetric pair equals the plain squared distance") {
    Eigen::MatrixXd data(1, 2);
    data << -1.0, 1.0;
    Eigen::VectorXd q(1);
    q << 0.0;
    const double c1 = std::log(2.0);  // sigma^2 log M' at sigma = 1
    CHECK(smoothed_distance_sq(q, data, 1.0, c1) == doctest::Approx(0.5));
  }
  SUBCASE("no overflow for far queries") {
    Eigen::MatrixXd data(1, 3);
    data << 0.0, 1.0, 2.0;
    Eigen::VectorXd q(1);
    q << 1000.0;
    const double d = smoothed_distance_sq(q, data, 1.0, 0.0);
    CHECK(std::isfinite(d));
    CHECK(d == doctest::Approx(0.5 * 998.0 * 998.0).epsilon(1e-9));
  }
  SUBCASE("empty dataset rejected") {
    Eigen::MatrixXd data(1, 0);
    Eigen::VectorXd q(1);
    q << 0.0;
    CHECK_THROWS(smoothed_distance_sq(q, data, 1.0, 0.0));
  }
}

TEST_CASE("standard squared distance") {
  Eigen::MatrixXd data(2, 2);
  data << 0.0, 3.0, 0.0, 4.0;
  Eigen::VectorXd q(2);
  q << 0.0, 1.0;
  auto [d, idx] = min_distance_sq(q, data);
  CHECK(d == doctest::Approx(0.5));
  CHECK(idx == 0);
  auto [d2, idx2] = min_distance_sq(data.col(1), data);
  CHECK(d2 == 0.0);
  CHECK(idx2 == 1);
}

TEST_CASE("softmin sandwich and convergence to the standard distance") {
  Rng rng(7);
  const Eigen::MatrixXd data = gauss_cloud(4, 32, rng);
  const double log_m = std::log(32.0);
  for (double sigma : {0.5, 0.2, 0.05}) {
    const double c1 = sigma * sigma * log_m;
    double max_gap = 0.0;
    for (int i = 0; i < 1000; ++i) {
      Eigen::VectorXd q = gauss_cloud(4, 1, rng).col(0);
      const double dsig = smoothed_distance_sq(q, data, sigma, c1);
      const double dmin = min_distance_sq(q, data).first;
      REQUIRE(dmin <= dsig + 1e-12);
      REQUIRE(dsig <= dmin + sigma * sigma * log_m + 1e-12);
      max_gap = std::max(max_gap, std::abs(dsig - dmin));
    }
    CHECK(max_gap <= sigma * sigma * log_m + 1e-12);
  }
}

TEST_CASE("negative log-likelihood identity over randomized instances") {
  Rng rng(11);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const int n = 1 + rng.uniform_int(16);
    const int m = 1 + rng.uniform_int(64);
    const double sigma = rng.uniform(0.05, 1.0);
    const Eigen::MatrixXd data = gauss_cloud(n, m, rng);
    worst = std::max(worst, verify_lemma1(data, sigma, 10, rng));
  }
  CHECK(worst <= 1e-9);

  SUBCASE("single Gaussian is exact") {
    Rng r2(1);
    const Eigen::MatrixXd data = gauss_cloud(3, 1, r2);
    CHECK(verify_lemma1(data, 0.3, 50, r2) <= 1e-12);
  }
  SUBCASE("scale invariance of the residual") {
    Rng r3(2);
    Eigen::MatrixXd data = gauss_cloud(2, 8, r3);
    const double res1 = verify_lemma1(data, 0.2, 50, r3);
    Eigen::MatrixXd scaled = 10.0 * data;
    const double res2 = verify_lemma1(scaled, 2.0, 50, r3);
    CHECK(res1 <= 1e-9);
    CHECK(res2 <= 1e-9);
  }
}

TEST_CASE("pairwise slope estimate") {
  SUBCASE("linear function recovers its slope") {
    Eigen::MatrixXd pts(1, 3);
    pts << 0.0, 1.0, 2.0;
    Eigen::VectorXd vals(3);
    vals << 0.0, 2.0, 4.0;
    CHECK(estimate_lipschitz(pts, vals) == doctest::Approx(2.0));
  }
  SUBCASE("constant function has zero slope") {
    Eigen::MatrixXd pts(1, 4);
    pts << 0.0, 1.0, 2.0, 3.0;
    CHECK(estimate_lipschitz(pts, Eigen::VectorXd::Constant(4, 7.0)) == 0.0);
  }
  SUBCASE("|sin| on a uniform grid estimates just under 1") {
    const Eigen::MatrixXd pts = sine_dataset(50);
    Eigen::VectorXd vals(50);
    for (int i = 0; i < 50; ++i) vals(i) = sine_error(pts(0, i));
    const double L = estimate_lipschitz(pts, vals);
    CHECK(L <= 1.0);
    CHECK(L >= 0.9);
  }
  SUBCASE("identical points are skipped, all-identical rejected") {
    Eigen::MatrixXd pts(1, 3);
    pts << 1.0, 1.0, 2.0;
    Eigen::VectorXd vals(3);
    vals << 5.0, 9.0, 6.0;
    CHECK(std::isfinite(estimate_lipschitz(pts, vals)));
    Eigen::MatrixXd same = Eigen::MatrixXd::Ones(1, 3);
    CHECK_THROWS(estimate_lipschitz(same, vals));
  }
}

TEST_CASE("error bound") {
  SUBCASE("direct arithmetic") {
    // e(s_c) = 0, L = 1, d^2 + C2 = 2 -> bound = 2.
    Eigen::MatrixXd data(1, 1);
    data << 0.0;
    Eigen::VectorXd q(1);
    UncertaintyConfig cfg;
    cfg.sigma = 1.0;
    cfg.c1 = 0.0;  // C2 = sigma^2 log 1 - 0 = 0, d^2 = half squared distance
    q << 2.0;
    CHECK(uncertainty_bound(q, data, cfg, 1.0, 0.0) ==
          doctest::Approx(std::sqrt(2.0) * std::sqrt(2.0)));
  }
  SUBCASE("zero slope collapses to the closest-point error") {
    Rng rng(3);
    const Eigen::MatrixXd data = gauss_cloud(3, 10, rng);
    Eigen::VectorXd q = gauss_cloud(3, 1, rng).col(0);
    UncertaintyConfig cfg;
    cfg.sigma = 0.4;
    CHECK(uncertainty_bound(q, data, cfg, 0.0, 1.25) == doctest::Approx(1.25));
  }
  SUBCASE("certification on |sin|: no violations across random queries") {
    const Eigen::MatrixXd data = sine_dataset(50);
    Eigen::VectorXd vals(50);
    for (int i = 0; i < 50; ++i) vals(i) = sine_error(data(0, i));
    const double L = estimate_lipschitz(data, vals);
    UncertaintyConfig cfg;
    cfg.sigma = 0.25;
    Rng rng(13);
    int violations = 0;
    for (int i = 0; i < 2000; ++i) {
      Eigen::VectorXd q(1);
      q << rng.uniform(0.0, 2.0 * M_PI);
      const auto [dmin, idx] = min_distance_sq(q, data);
      const double bound = uncertainty_bound(q, data, cfg, L, sine_error(data(0, idx)));
      if (sine_error(q(0)) > bound) ++violations;
    }
    CHECK(violations == 0);
  }
  SUBCASE("report fields are consistent") {
    Rng rng(5);
    const Eigen::MatrixXd data = gauss_cloud(2, 12, rng);
    Eigen::VectorXd q = gauss_cloud(2, 1, rng).col(0);
    UncertaintyConfig cfg;
    cfg.sigma = 0.3;
    UncertaintyReport r = uncertainty_report(q, data, cfg, 0.8, 0.1);
    CHECK(r.c2 == doctest::Approx(0.0));  // default c1 zeroes C2
    CHECK(r.d_sigma_sq >= r.d_min_sq - 1e-12);
    CHECK(r.d_sigma_sq >= 0.0);
    CHECK(r.bound >= 0.1);
    CHECK(r.closest_index >= 0);
  }
}

TEST_CASE("reconstruction penalty") {
  NoiseSchedule sched = make_schedule_from_betas([] {
    Eigen::VectorXd b(2);
    b << 0.1, 0.2;
    return b;
  }());

  SUBCASE("exact noise prediction gives zero penalty") {
    const int B = 3, H = 4, D = 2;
    Rng rng(1);
    Mat<double> x0(D, B * H), eps(D, B * H);
    for (int c = 0; c < B * H; ++c)
      for (int r = 0; r < D; ++r) {
        x0(r, c) = rng.uniform(-1, 1);
        eps(r, c) = rng.gaussian();
      }
    DiffusionLossResult<double> cache;
    cache.batch = B;
    cache.horizon = H;
    cache.k = {1, 2, 1};
    cache.eps = eps;
    cache.x_k.resize(D, B * H);
    for (int b = 0; b < B; ++b)
      cache.x_k.middleCols(b * H, H) = forward_diffuse(
          Mat<double>(x0.middleCols(b * H, H)),
          cache.k[static_cast<std::size_t>(b)], Mat<double>(eps.middleCols(b * H, H)),
          sched);
    Tape<double> t;
    cache.eps_hat = t.constant(eps);
    CHECK(t.val(ood_penalty(t, cache, x0, sched))(0, 0) == doctest::Approx(0.0));
  }

  SUBCASE("scalar case matches (1-abar)/abar") {
    // One sample, one penalized row, unit noise error at abar = 0.72.
    DiffusionLossResult<double> cache;
    cache.batch = 1;
    cache.horizon = 2;
    cache.k = {2};
    Mat<double> x0 = Mat<double>::Zero(1, 2);
    cache.eps = Mat<double>::Zero(1, 2);
    cache.x_k.resize(1, 2);
    cache.x_k = forward_diffuse(x0, 2, cache.eps, sched);
    Tape<double> t;
    Mat<double> eps_hat = Mat<double>::Zero(1, 2);
    eps_hat(0, 1) = 1.0;  // ||eps - eps_hat||^2 = 1 on the penalized row
    cache.eps_hat = t.constant(eps_hat);
    CHECK(t.val(ood_penalty(t, cache, x0, sched))(0, 0) ==
          doctest::Approx(0.28 / 0.72).epsilon(1e-9));
  }

  SUBCASE("matches the closed-form restricted noise error on random batches") {
    Rng rng(2);
    NoiseSchedule s64 = make_schedule(64);
    for (int trial = 0; trial < 100; ++trial) {
      const int B = 1 + rng.uniform_int(6);
      const int H = 2 + rng.uniform_int(5);
      const int D = 1 + rng.uniform_int(4);
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
      for (int b = 0; b < B; ++b) {
        cache.k.push_back(1 + rng.uniform_int(64));
        cache.x_k.middleCols(b * H, H) =
            forward_diffuse(Mat<double>(x0.middleCols(b * H, H)), cache.k.back(),
                            Mat<double>(eps.middleCols(b * H, H)), s64);
      }
      Tape<double> t;
      cache.eps_hat = t.constant(eps_hat);
      const double penalty = t.val(ood_penalty(t, cache, x0, s64))(0, 0);

      double expect = 0.0;
      for (int b = 0; b < B; ++b) {
        const double abar = s64.abar(cache.k[static_cast<std::size_t>(b)]);
        double err = 0.0;
        for (int h = 1; h < H; ++h)
          err += (eps.col(b * H + h) - eps_hat.col(b * H + h)).squaredNorm();
        expect += (1.0 - abar) / abar * err;
      }
      expect /= B;
      REQUIRE(penalty == doctest::Approx(expect).epsilon(1e-6));
    }
  }
}
