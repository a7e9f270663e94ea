#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cdmp {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Node handle on a Tape.
struct Ref {
  int id = -1;
};

/// Reverse-mode tape over dense matrices. Values are computed eagerly; ops
/// register pull-back closures that run in reverse creation order. With
/// recording off (inference) closures and caches are skipped entirely, so the
/// same forward code serves training and sampling.
///
/// Gradients accumulate into externally owned parameter buffers through leaf
/// nodes; a tape assumes exclusive ownership of those buffers while it runs.
template <class S>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Ref constant(Mat<S> value) {
    nodes_.push_back(Node{std::move(value), Mat<S>(), nullptr, false});
    return Ref{static_cast<int>(nodes_.size()) - 1};
  }

  /// Leaf over an external parameter matrix; backward accumulates into *grad.
  Ref leaf(const Mat<S>& value, Mat<S>* grad) {
    Ref r = constant(value);
    if (recording_ && grad != nullptr) {
      Node& n = nodes_[static_cast<std::size_t>(r.id)];
      n.needs_grad = true;
      n.back = [r, grad](Tape<S>& t) {
        if (grad->size() == 0)
          *grad = Mat<S>::Zero(t.val(r).rows(), t.val(r).cols());
        *grad += t.grad(r);
      };
    }
    return r;
  }

  /// Creates a node; the caller attaches the pull-back afterwards (it needs
  /// the node's own Ref).
  Ref make(Mat<S> value, bool needs_grad) {
    const bool ng = recording_ && needs_grad;
    nodes_.push_back(Node{std::move(value), Mat<S>(), nullptr, ng});
    return Ref{static_cast<int>(nodes_.size()) - 1};
  }

  void set_back(Ref r, std::function<void(Tape<S>&)> back) {
    Node& n = nodes_[check(r)];
    if (n.needs_grad) n.back = std::move(back);
  }

  const Mat<S>& val(Ref r) const { return nodes_[check(r)].value; }

  Mat<S>& grad(Ref r) {
    Node& n = nodes_[check(r)];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool needs_grad(Ref r) const { return nodes_[check(r)].needs_grad; }

  /// Seeds d(loss)/d(loss) = 1 and runs the reverse sweep; loss must be 1x1.
  void backward(Ref loss) {
    if (!recording_) throw std::logic_error("Tape::backward: recording disabled");
    if (val(loss).rows() != 1 || val(loss).cols() != 1)
      throw std::logic_error("Tape::backward: loss must be scalar");
    grad(loss)(0, 0) = S(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back && n.grad.size() != 0) n.back(*this);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    std::function<void(Tape<S>&)> back;
    bool needs_grad = false;
  };

  std::size_t check(Ref r) const {
    if (r.id < 0 || static_cast<std::size_t>(r.id) >= nodes_.size())
      throw std::logic_error("Tape: invalid node reference");
    return static_cast<std::size_t>(r.id);
  }

  bool recording_;
  std::vector<Node> nodes_;
};

namespace detail {

template <class S>
inline void accum(Tape<S>& t, Ref r, const Mat<S>& g) {
  if (t.needs_grad(r)) t.grad(r) += g;
}

inline int time_len(int cols, int batch, const char* who) {
  if (batch <= 0 || cols % batch != 0)
    throw std::invalid_argument(std::string(who) + ": columns not divisible by batch");
  return cols / batch;
}

}  // namespace detail

template <class S>
Ref scalar(Tape<S>& t, S v) {
  Mat<S> m(1, 1);
  m(0, 0) = v;
  return t.constant(std::move(m));
}

template <class S>
Ref matmul(Tape<S>& t, Ref a, Ref b) {
  Ref out = t.make(t.val(a) * t.val(b), t.needs_grad(a) || t.needs_grad(b));
  t.set_back(out, [a, b, out](Tape<S>& t2) {
    const Mat<S>& g = t2.grad(out);
    if (t2.needs_grad(a)) t2.grad(a).noalias() += g * t2.val(b).transpose();
    if (t2.needs_grad(b)) t2.grad(b).noalias() += t2.val(a).transpose() * g;
  });
  return out;
}

template <class S>
Ref add(Tape<S>& t, Ref a, Ref b) {
  if (t.val(a).rows() != t.val(b).rows() || t.val(a).cols() != t.val(b).cols())
    throw std::invalid_argument("add: shape mismatch");
  Ref out = t.make(t.val(a) + t.val(b), t.needs_grad(a) || t.needs_grad(b));
  t.set_back(out, [a, b, out](Tape<S>& t2) {
    detail::accum(t2, a, t2.grad(out));
    detail::accum(t2, b, t2.grad(out));
  });
  return out;
}

template <class S>
Ref scale(Tape<S>& t, Ref a, S factor) {
  Ref out = t.make(t.val(a) * factor, t.needs_grad(a));
  t.set_back(out, [a, out, factor](Tape<S>& t2) {
    detail::accum(t2, a, Mat<S>(t2.grad(out) * factor));
  });
  return out;
}

/// Broadcast-adds a column vector to every column.
template <class S>
Ref add_colvec(Tape<S>& t, Ref a, Ref v) {
  if (t.val(v).cols() != 1 || t.val(v).rows() != t.val(a).rows())
    throw std::invalid_argument("add_colvec: shape mismatch");
  Mat<S> out_v = t.val(a);
  out_v.colwise() += Vec<S>(t.val(v).col(0));
  Ref out = t.make(std::move(out_v), t.needs_grad(a) || t.needs_grad(v));
  t.set_back(out, [a, v, out](Tape<S>& t2) {
    const Mat<S>& g = t2.grad(out);
    detail::accum(t2, a, g);
    if (t2.needs_grad(v)) t2.grad(v) += g.rowwise().sum();
  });
  return out;
}

template <class S>
Ref affine(Tape<S>& t, Ref w, Ref x, Ref b) {
  return add_colvec(t, matmul(t, w, x), b);
}

/// x * tanh(softplus(x)), the smooth gated activation used throughout.
template <class S>
Ref mish(Tape<S>& t, Ref a) {
  const Mat<S>& x = t.val(a);
  Mat<S> v(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const S xi = x(i, j);
      const S sp = xi > S(20) ? xi : std::log1p(std::exp(xi));
      v(i, j) = xi * std::tanh(sp);
    }
  Ref out = t.make(std::move(v), t.needs_grad(a));
  t.set_back(out, [a, out](Tape<S>& t2) {
    if (!t2.needs_grad(a)) return;
    const Mat<S>& x2 = t2.val(a);
    const Mat<S>& g = t2.grad(out);
    Mat<S>& ga = t2.grad(a);
    for (Eigen::Index j = 0; j < x2.cols(); ++j)
      for (Eigen::Index i = 0; i < x2.rows(); ++i) {
        const S xi = x2(i, j);
        const S sp = xi > S(20) ? xi : std::log1p(std::exp(xi));
        const S th = std::tanh(sp);
        const S sig = S(1) / (S(1) + std::exp(-xi));
        ga(i, j) += g(i, j) * (th + xi * (S(1) - th * th) * sig);
      }
  });
  return out;
}

/// Stacks a on top of b.
template <class S>
Ref concat_rows(Tape<S>& t, Ref a, Ref b) {
  if (t.val(a).cols() != t.val(b).cols())
    throw std::invalid_argument("concat_rows: column mismatch");
  const Eigen::Index ra = t.val(a).rows(), rb = t.val(b).rows();
  Mat<S> v(ra + rb, t.val(a).cols());
  v.topRows(ra) = t.val(a);
  v.bottomRows(rb) = t.val(b);
  Ref out = t.make(std::move(v), t.needs_grad(a) || t.needs_grad(b));
  t.set_back(out, [a, b, out, ra, rb](Tape<S>& t2) {
    const Mat<S>& g = t2.grad(out);
    detail::accum(t2, a, Mat<S>(g.topRows(ra)));
    detail::accum(t2, b, Mat<S>(g.bottomRows(rb)));
  });
  return out;
}

/// Gathers table columns: out.col(i) = table.col(idx[i]).
template <class S>
Ref embed_cols(Tape<S>& t, Ref table, std::vector<int> idx) {
  const Mat<S>& tab = t.val(table);
  Mat<S> v(tab.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= tab.cols())
      throw std::invalid_argument("embed_cols: index out of range");
    v.col(static_cast<Eigen::Index>(i)) = tab.col(idx[i]);
  }
  Ref out = t.make(std::move(v), t.needs_grad(table));
  t.set_back(out, [table, out, idx = std::move(idx)](Tape<S>& t2) {
    if (!t2.needs_grad(table)) return;
    const Mat<S>& g = t2.grad(out);
    Mat<S>& gt = t2.grad(table);
    for (std::size_t i = 0; i < idx.size(); ++i)
      gt.col(idx[i]) += g.col(static_cast<Eigen::Index>(i));
  });
  return out;
}

/// Repeats a column vector n times.
template <class S>
Ref tile_cols(Tape<S>& t, Ref v, int n) {
  if (t.val(v).cols() != 1) throw std::invalid_argument("tile_cols: need column vector");
  Ref out = t.make(t.val(v).replicate(1, n), t.needs_grad(v));
  t.set_back(out, [v, out](Tape<S>& t2) {
    if (t2.needs_grad(v)) t2.grad(v) += t2.grad(out).rowwise().sum();
  });
  return out;
}

/// Per-column choice between two equally shaped inputs.
template <class S>
Ref select_cols(Tape<S>& t, Ref a, Ref b, std::vector<std::uint8_t> use_a) {
  const Mat<S>& va = t.val(a);
  const Mat<S>& vb = t.val(b);
  if (va.rows() != vb.rows() || va.cols() != vb.cols() ||
      static_cast<Eigen::Index>(use_a.size()) != va.cols())
    throw std::invalid_argument("select_cols: shape mismatch");
  Mat<S> v(va.rows(), va.cols());
  for (Eigen::Index c = 0; c < va.cols(); ++c)
    v.col(c) = use_a[static_cast<std::size_t>(c)] ? va.col(c) : vb.col(c);
  Ref out = t.make(std::move(v), t.needs_grad(a) || t.needs_grad(b));
  t.set_back(out, [a, b, out, use_a = std::move(use_a)](Tape<S>& t2) {
    const Mat<S>& g = t2.grad(out);
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      const Ref dst = use_a[static_cast<std::size_t>(c)] ? a : b;
      if (t2.needs_grad(dst)) t2.grad(dst).col(c) += g.col(c);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Sequence ops. Sequence tensors are laid out channels x (batch * time); the
// T columns of sample b occupy [b*T, (b+1)*T).
// ---------------------------------------------------------------------------

/// Adds e.col(b) to every time column of sample b.
template <class S>
Ref add_sample_vec(Tape<S>& t, Ref x, Ref e, int batch) {
  const Mat<S>& vx = t.val(x);
  const Mat<S>& ve = t.val(e);
  const int T = detail::time_len(static_cast<int>(vx.cols()), batch, "add_sample_vec");
  if (ve.rows() != vx.rows() || ve.cols() != batch)
    throw std::invalid_argument("add_sample_vec: embedding shape mismatch");
  Mat<S> v = vx;
  for (int b = 0; b < batch; ++b)
    v.middleCols(b * T, T).colwise() += Vec<S>(ve.col(b));
  Ref out = t.make(std::move(v), t.needs_grad(x) || t.needs_grad(e));
  t.set_back(out, [x, e, out, batch, T](Tape<S>& t2) {
    const Mat<S>& g = t2.grad(out);
    detail::accum(t2, x, g);
    if (t2.needs_grad(e)) {
      Mat<S>& ge = t2.grad(e);
      for (int b = 0; b < batch; ++b) ge.col(b) += g.middleCols(b * T, T).rowwise().sum();
    }
  });
  return out;
}

/// y.col(b*T + i) = mul[b] * x.col(b*T + i) + shift.col(b*T + i).
template <class S>
Ref per_sample_affine(Tape<S>& t, Ref x, std::vector<S> mul, const Mat<S>& shift,
                      int batch) {
  const Mat<S>& vx = t.val(x);
  const int T = detail::time_len(static_cast<int>(vx.cols()), batch, "per_sample_affine");
  if (static_cast<int>(mul.size()) != batch || shift.rows() != vx.rows() ||
      shift.cols() != vx.cols())
    throw std::invalid_argument("per_sample_affine: shape mismatch");
  Mat<S> v(vx.rows(), vx.cols());
  for (int b = 0; b < batch; ++b)
    v.middleCols(b * T, T) =
        mul[static_cast<std::size_t>(b)] * vx.middleCols(b * T, T) + shift.middleCols(b * T, T);
  Ref out = t.make(std::move(v), t.needs_grad(x));
  t.set_back(out, [x, out, mul = std::move(mul), batch, T](Tape<S>& t2) {
    if (!t2.needs_grad(x)) return;
    const Mat<S>& g = t2.grad(out);
    Mat<S>& gx = t2.grad(x);
    for (int b = 0; b < batch; ++b)
      gx.middleCols(b * T, T) += mul[static_cast<std::size_t>(b)] * g.middleCols(b * T, T);
  });
  return out;
}

/// Same-length 1-D convolution over the time axis of every sample block,
/// zero padded. w is (C_out x C_in*k); column t of the im2col block stacks
/// x[:, t - k/2 .. t + k/2].
template <class S>
Ref conv1d_same(Tape<S>& t, Ref x, Ref w, Ref b, int kernel, int batch) {
  const Mat<S>& vx = t.val(x);
  const Mat<S>& vw = t.val(w);
  const Mat<S>& vb = t.val(b);
  const int cin = static_cast<int>(vx.rows());
  const int T = detail::time_len(static_cast<int>(vx.cols()), batch, "conv1d_same");
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("conv1d_same: kernel must be odd and positive");
  if (vw.cols() != static_cast<Eigen::Index>(cin) * kernel)
    throw std::invalid_argument("conv1d_same: weight shape mismatch");
  if (vb.rows() != vw.rows() || vb.cols() != 1)
    throw std::invalid_argument("conv1d_same: bias shape mismatch");
  const int pad = kernel / 2;

  Mat<S> col = Mat<S>::Zero(static_cast<Eigen::Index>(cin) * kernel, vx.cols());
  for (int bi = 0; bi < batch; ++bi)
    for (int ti = 0; ti < T; ++ti) {
      const Eigen::Index c = static_cast<Eigen::Index>(bi) * T + ti;
      for (int j = 0; j < kernel; ++j) {
        const int src = ti - pad + j;
        if (src >= 0 && src < T)
          col.block(static_cast<Eigen::Index>(j) * cin, c, cin, 1) =
              vx.col(static_cast<Eigen::Index>(bi) * T + src);
      }
    }

  Mat<S> v = vw * col;
  v.colwise() += Vec<S>(vb.col(0));
  Ref out = t.make(std::move(v), t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b));
  t.set_back(out, [x, w, b, out, kernel, batch, T, cin, pad,
                   col = std::move(col)](Tape<S>& t2) {
    const Mat<S>& g = t2.grad(out);
    if (t2.needs_grad(w)) t2.grad(w).noalias() += g * col.transpose();
    if (t2.needs_grad(b)) t2.grad(b) += g.rowwise().sum();
    if (t2.needs_grad(x)) {
      Mat<S> gcol = t2.val(w).transpose() * g;
      Mat<S>& gx = t2.grad(x);
      for (int bi = 0; bi < batch; ++bi)
        for (int ti = 0; ti < T; ++ti) {
          const Eigen::Index c = static_cast<Eigen::Index>(bi) * T + ti;
          for (int j = 0; j < kernel; ++j) {
            const int src = ti - pad + j;
            if (src >= 0 && src < T)
              gx.col(static_cast<Eigen::Index>(bi) * T + src) +=
                  gcol.block(static_cast<Eigen::Index>(j) * cin, c, cin, 1);
          }
        }
    }
  });
  return out;
}

/// Group normalization per sample over (channels-in-group x time), with
/// per-channel scale and shift.
template <class S>
Ref group_norm(Tape<S>& t, Ref x, Ref gamma, Ref beta, int groups, int batch) {
  const Mat<S>& vx = t.val(x);
  const int C = static_cast<int>(vx.rows());
  const int T = detail::time_len(static_cast<int>(vx.cols()), batch, "group_norm");
  if (groups < 1 || C % groups != 0)
    throw std::invalid_argument("group_norm: groups must divide channels");
  if (t.val(gamma).rows() != C || t.val(gamma).cols() != 1 || t.val(beta).rows() != C ||
      t.val(beta).cols() != 1)
    throw std::invalid_argument("group_norm: scale/shift shape mismatch");
  const int cg = C / groups;
  const S eps = S(1e-5);

  Mat<S> xhat(C, vx.cols());
  Mat<S> inv_std(groups, batch);
  for (int bi = 0; bi < batch; ++bi)
    for (int gi = 0; gi < groups; ++gi) {
      auto block = vx.block(gi * cg, static_cast<Eigen::Index>(bi) * T, cg, T);
      const S mean = block.mean();
      const S var = (block.array() - mean).square().mean();
      const S inv = S(1) / std::sqrt(var + eps);
      inv_std(gi, bi) = inv;
      xhat.block(gi * cg, static_cast<Eigen::Index>(bi) * T, cg, T) =
          (block.array() - mean) * inv;
    }
  Mat<S> v = xhat;
  v.array().colwise() *= t.val(gamma).col(0).array();
  v.colwise() += Vec<S>(t.val(beta).col(0));

  Ref out = t.make(std::move(v),
                   t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta));
  t.set_back(out, [x, gamma, beta, out, groups, batch, T, cg,
                   xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<S>& t2) {
    const Mat<S>& g = t2.grad(out);
    if (t2.needs_grad(beta)) t2.grad(beta) += g.rowwise().sum();
    if (t2.needs_grad(gamma))
      t2.grad(gamma) += (g.array() * xhat.array()).rowwise().sum().matrix();
    if (t2.needs_grad(x)) {
      Mat<S>& gx = t2.grad(x);
      const Vec<S> gam = t2.val(gamma).col(0);
      for (int bi = 0; bi < batch; ++bi)
        for (int gi = 0; gi < groups; ++gi) {
          auto gb = g.block(gi * cg, static_cast<Eigen::Index>(bi) * T, cg, T);
          auto xb = xhat.block(gi * cg, static_cast<Eigen::Index>(bi) * T, cg, T);
          Mat<S> h = (gb.array().colwise() * gam.segment(gi * cg, cg).array()).matrix();
          const S mean_h = h.mean();
          const S mean_hx = (h.array() * xb.array()).mean();
          gx.block(gi * cg, static_cast<Eigen::Index>(bi) * T, cg, T).array() +=
              inv_std(gi, bi) * (h.array() - mean_h - xb.array() * mean_hx);
        }
    }
  });
  return out;
}

/// Halves each sample's time axis by averaging adjacent columns.
template <class S>
Ref avgpool2_time(Tape<S>& t, Ref x, int batch) {
  const Mat<S>& vx = t.val(x);
  const int T = detail::time_len(static_cast<int>(vx.cols()), batch, "avgpool2_time");
  if (T % 2 != 0) throw std::invalid_argument("avgpool2_time: time length must be even");
  const int T2 = T / 2;
  Mat<S> v(vx.rows(), static_cast<Eigen::Index>(batch) * T2);
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < T2; ++i)
      v.col(static_cast<Eigen::Index>(b) * T2 + i) =
          S(0.5) * (vx.col(static_cast<Eigen::Index>(b) * T + 2 * i) +
                    vx.col(static_cast<Eigen::Index>(b) * T + 2 * i + 1));
  Ref out = t.make(std::move(v), t.needs_grad(x));
  t.set_back(out, [x, out, batch, T, T2](Tape<S>& t2) {
    if (!t2.needs_grad(x)) return;
    const Mat<S>& g = t2.grad(out);
    Mat<S>& gx = t2.grad(x);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < T2; ++i) {
        const auto gc = S(0.5) * g.col(static_cast<Eigen::Index>(b) * T2 + i);
        gx.col(static_cast<Eigen::Index>(b) * T + 2 * i) += gc;
        gx.col(static_cast<Eigen::Index>(b) * T + 2 * i + 1) += gc;
      }
  });
  return out;
}

/// Doubles each sample's time axis by repeating columns.
template <class S>
Ref upsample2_time(Tape<S>& t, Ref x, int batch) {
  const Mat<S>& vx = t.val(x);
  const int T = detail::time_len(static_cast<int>(vx.cols()), batch, "upsample2_time");
  Mat<S> v(vx.rows(), static_cast<Eigen::Index>(batch) * 2 * T);
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < T; ++i) {
      v.col(static_cast<Eigen::Index>(b) * 2 * T + 2 * i) =
          vx.col(static_cast<Eigen::Index>(b) * T + i);
      v.col(static_cast<Eigen::Index>(b) * 2 * T + 2 * i + 1) =
          vx.col(static_cast<Eigen::Index>(b) * T + i);
    }
  Ref out = t.make(std::move(v), t.needs_grad(x));
  t.set_back(out, [x, out, batch, T](Tape<S>& t2) {
    if (!t2.needs_grad(x)) return;
    const Mat<S>& g = t2.grad(out);
    Mat<S>& gx = t2.grad(x);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < T; ++i)
        gx.col(static_cast<Eigen::Index>(b) * T + i) +=
            g.col(static_cast<Eigen::Index>(b) * 2 * T + 2 * i) +
            g.col(static_cast<Eigen::Index>(b) * 2 * T + 2 * i + 1);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean squared error against a constant target, averaged over all elements.
template <class S>
Ref mse_all(Tape<S>& t, Ref pred, const Mat<S>& target) {
  const Mat<S>& vp = t.val(pred);
  if (vp.rows() != target.rows() || vp.cols() != target.cols())
    throw std::invalid_argument("mse_all: shape mismatch");
  const S numel = static_cast<S>(vp.size());
  Mat<S> v(1, 1);
  v(0, 0) = (vp - target).squaredNorm() / numel;
  Ref out = t.make(std::move(v), t.needs_grad(pred));
  t.set_back(out, [pred, out, target, numel](Tape<S>& t2) {
    if (!t2.needs_grad(pred)) return;
    const S gs = t2.grad(out)(0, 0);
    t2.grad(pred) += (gs * S(2) / numel) * (t2.val(pred) - target);
  });
  return out;
}

/// sum_c w_c * ||x.col(c) - target.col(c)||^2 as a scalar node.
template <class S>
Ref weighted_colsq_to_const(Tape<S>& t, Ref x, const Mat<S>& target,
                            std::vector<S> col_w) {
  const Mat<S>& vx = t.val(x);
  if (vx.rows() != target.rows() || vx.cols() != target.cols() ||
      static_cast<Eigen::Index>(col_w.size()) != vx.cols())
    throw std::invalid_argument("weighted_colsq_to_const: shape mismatch");
  S acc = S(0);
  for (Eigen::Index c = 0; c < vx.cols(); ++c)
    acc += col_w[static_cast<std::size_t>(c)] * (vx.col(c) - target.col(c)).squaredNorm();
  Mat<S> v(1, 1);
  v(0, 0) = acc;
  Ref out = t.make(std::move(v), t.needs_grad(x));
  t.set_back(out, [x, out, target, col_w = std::move(col_w)](Tape<S>& t2) {
    if (!t2.needs_grad(x)) return;
    const S gs = t2.grad(out)(0, 0);
    Mat<S>& gx = t2.grad(x);
    for (Eigen::Index c = 0; c < gx.cols(); ++c)
      gx.col(c) += gs * S(2) * col_w[static_cast<std::size_t>(c)] *
                   (t2.val(x).col(c) - target.col(c));
  });
  return out;
}

/// Mean softmax cross-entropy over columns; targets[c] indexes the true row.
template <class S>
Ref softmax_xent_mean(Tape<S>& t, Ref logits, std::vector<int> targets) {
  const Mat<S>& vl = t.val(logits);
  if (static_cast<Eigen::Index>(targets.size()) != vl.cols())
    throw std::invalid_argument("softmax_xent_mean: target count mismatch");
  Mat<S> soft(vl.rows(), vl.cols());
  S acc = S(0);
  for (Eigen::Index c = 0; c < vl.cols(); ++c) {
    const int tc = targets[static_cast<std::size_t>(c)];
    if (tc < 0 || tc >= vl.rows())
      throw std::invalid_argument("softmax_xent_mean: target out of range");
    const S mx = vl.col(c).maxCoeff();
    Vec<S> e = (vl.col(c).array() - mx).exp();
    const S z = e.sum();
    soft.col(c) = e / z;
    acc += std::log(z) + mx - vl(tc, c);
  }
  const S inv_n = S(1) / static_cast<S>(vl.cols());
  Mat<S> v(1, 1);
  v(0, 0) = acc * inv_n;
  Ref out = t.make(std::move(v), t.needs_grad(logits));
  t.set_back(out, [logits, out, inv_n, soft = std::move(soft),
                   targets = std::move(targets)](Tape<S>& t2) {
    if (!t2.needs_grad(logits)) return;
    const S gs = t2.grad(out)(0, 0) * inv_n;
    Mat<S>& gl = t2.grad(logits);
    gl += gs * soft;
    for (Eigen::Index c = 0; c < gl.cols(); ++c)
      gl(targets[static_cast<std::size_t>(c)], c) -= gs;
  });
  return out;
}

}  // namespace cdmp
