#pragma once

#include <functional>

#include "cdmp/nn.hpp"
#include "cdmp/tape.hpp"

namespace cdmp::testing {

using BuildFn = std::function<Ref(Tape<double>&, const ParamStore<double>&)>;

/// Central finite differences on every parameter entry against the tape's
/// analytic gradients. Returns the worst relative error seen.
inline double max_gradient_error(ParamStore<double>& store, const BuildFn& build) {
  store.zero_grad();
  Tape<double> t;
  Ref loss = build(t, store);
  t.backward(loss);

  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store.entry_at(i);
    for (Eigen::Index c = 0; c < e.value.cols(); ++c)
      for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
        const double orig = e.value(r, c);
        e.value(r, c) = orig + h;
        Tape<double> tp(false);
        const double fp = tp.val(build(tp, store))(0, 0);
        e.value(r, c) = orig - h;
        Tape<double> tm(false);
        const double fm = tm.val(build(tm, store))(0, 0);
        e.value(r, c) = orig;
        const double numeric = (fp - fm) / (2 * h);
        const double analytic = e.grad(r, c);
        const double err = std::abs(analytic - numeric) /
                           std::max({1.0, std::abs(analytic), std::abs(numeric)});
        worst = std::max(worst, err);
      }
  }
  return worst;
}

inline Mat<double> random_mat(int rows, int cols, Rng& rng, double scale = 1.0) {
  Mat<double> m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = scale * rng.gaussian();
  return m;
}

}  // namespace cdmp::testing
