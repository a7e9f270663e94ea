#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cdmp/rng.hpp"
#include "cdmp/tape.hpp"

namespace cdmp {

/// Named parameter tensors plus mirrored gradient buffers. Iteration follows
/// registration order, which together with seeded initialization makes every
/// training run reproducible. Gradient buffers are scratch space owned by
/// whichever tape is currently training the store.
template <class S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Mat<S> value;
    mutable Mat<S> grad;
  };

  Mat<S>& add_zeros(const std::string& name, int rows, int cols) {
    return add(name, Mat<S>::Zero(rows, cols));
  }

  /// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mat<S>& add_fanin_uniform(const std::string& name, int rows, int cols, int fan_in,
                            Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Mat<S> m(rows, cols);
    for (int c = 0; c < cols; ++c)
      for (int r = 0; r < rows; ++r)
        m(r, c) = static_cast<S>(rng.uniform(-bound, bound));
    return add(name, std::move(m));
  }

  Mat<S>& add_ones(const std::string& name, int rows, int cols) {
    return add(name, Mat<S>::Ones(rows, cols));
  }

  Mat<S>& add(const std::string& name, Mat<S> value) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate " + name);
    index_[name] = entries_.size();
    Entry e;
    e.name = name;
    e.grad = Mat<S>::Zero(value.rows(), value.cols());
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  const Mat<S>& value(const std::string& name) const { return at(name).value; }
  Mat<S>& value(const std::string& name) { return entry(name).value; }
  Mat<S>& grad(const std::string& name) const { return at(name).grad; }

  /// Tape leaf for a parameter; gradients from backward land in grad(name).
  Ref leaf(Tape<S>& t, const std::string& name) const {
    const Entry& e = at(name);
    return t.leaf(e.value, &e.grad);
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.setZero();
  }

  bool grads_finite() const {
    for (const auto& e : entries_)
      if (!e.grad.allFinite()) return false;
    return true;
  }

  std::size_t size() const { return entries_.size(); }
  const Entry& entry_at(std::size_t i) const { return entries_[i]; }
  Entry& entry_at(std::size_t i) { return entries_[i]; }
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  long param_count() const {
    long n = 0;
    for (const auto& e : entries_) n += static_cast<long>(e.value.size());
    return n;
  }

 private:
  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown " + name);
    return entries_[it->second];
  }
  Entry& entry(const std::string& name) {
    return const_cast<Entry&>(at(name));
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Bias-corrected adaptive-moment optimizer state over one or more stores.
template <class S>
class Adam {
 public:
  Adam(S lr = S(1e-4), S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void attach(ParamStore<S>& store) { stores_.push_back(&store); }

  long step_count() const { return step_; }
  S learning_rate() const { return lr_; }

  /// One update over all attached stores. If any gradient is non-finite the
  /// step is skipped entirely and false is returned.
  bool step() {
    for (ParamStore<S>* s : stores_)
      if (!s->grads_finite()) return false;
    if (m_.empty()) init_moments();
    ++step_;
    const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(step_));
    const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(step_));
    std::size_t slot = 0;
    for (ParamStore<S>* s : stores_) {
      for (std::size_t i = 0; i < s->size(); ++i, ++slot) {
        auto& e = s->entry_at(i);
        Mat<S>& m = m_[slot];
        Mat<S>& v = v_[slot];
        m = beta1_ * m + (S(1) - beta1_) * e.grad;
        v = beta2_ * v + (S(1) - beta2_) * e.grad.cwiseProduct(e.grad);
        e.value.array() -=
            lr_ * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
      }
    }
    return true;
  }

  std::vector<Mat<S>>& first_moments() { return m_; }
  std::vector<Mat<S>>& second_moments() { return v_; }
  void set_step_count(long s) { step_ = s; }
  void ensure_moments() {
    if (m_.empty()) init_moments();
  }

 private:
  void init_moments() {
    for (ParamStore<S>* s : stores_)
      for (std::size_t i = 0; i < s->size(); ++i) {
        const auto& e = s->entry_at(i);
        m_.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
        v_.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
      }
  }

  S lr_, beta1_, beta2_, eps_;
  long step_ = 0;
  std::vector<ParamStore<S>*> stores_;
  std::vector<Mat<S>> m_, v_;
};

/// Exponentially averaged shadow of a parameter store; evaluation always
/// runs on the shadow weights.
template <class S>
class EmaStore {
 public:
  EmaStore() = default;
  EmaStore(const ParamStore<S>& store, S decay) : decay_(decay) {
    shadow_.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i)
      shadow_.push_back(store.entry_at(i).value);
  }

  void update(const ParamStore<S>& store) {
    if (shadow_.size() != store.size())
      throw std::invalid_argument("EmaStore: store size mismatch");
    for (std::size_t i = 0; i < store.size(); ++i)
      shadow_[i] = decay_ * shadow_[i] + (S(1) - decay_) * store.entry_at(i).value;
  }

  void copy_to(ParamStore<S>& store) const {
    if (shadow_.size() != store.size())
      throw std::invalid_argument("EmaStore: store size mismatch");
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& e = store.entry_at(i);
      if (e.value.rows() != shadow_[i].rows() || e.value.cols() != shadow_[i].cols())
        throw std::invalid_argument("EmaStore: shape mismatch at " + e.name);
      e.value = shadow_[i];
    }
  }

  S decay() const { return decay_; }
  std::vector<Mat<S>>& shadow() { return shadow_; }
  const std::vector<Mat<S>>& shadow() const { return shadow_; }

 private:
  S decay_ = S(0.995);
  std::vector<Mat<S>> shadow_;
};

}  // namespace cdmp
