#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lhdff/nn.hpp"
#include "lhdff/tensor.hpp"

namespace lhdff {

// Bias-corrected Adam over the trainable subset of a registry. Frozen
// parameters (requires_grad == false) are skipped entirely; a parameter with
// no populated gradient counts as zero gradient.
template <class S>
class AdamOptimizer {
 public:
  struct Slot {
    std::string name;
    TensorT<S> param;
    std::vector<S> m, v;
  };

  explicit AdamOptimizer(ParamRegistry<S>& reg, S beta1 = S(0.9), S beta2 = S(0.999),
                         S eps = S(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& [name, t] : reg.params) {
      if (!t.requires_grad()) continue;
      slots_.push_back({name, t, std::vector<S>(t.size(), S(0)), std::vector<S>(t.size(), S(0))});
    }
  }

  void step(S lr) {
    // validate before mutating anything, so a bad batch aborts cleanly
    for (const auto& slot : slots_) {
      if (!slot.param.has_grad()) continue;
      for (S g : slot.param.grad())
        require<NumericError>(std::isfinite(static_cast<double>(g)),
                              "adam: non-finite gradient in parameter '" + slot.name + "'");
    }
    ++t_;
    S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1_), static_cast<double>(t_)));
    S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2_), static_cast<double>(t_)));
    for (auto& slot : slots_) {
      auto p = slot.param.mutable_data();
      const S* g = slot.param.has_grad() ? slot.param.grad().data() : nullptr;
      for (size_t i = 0; i < p.size(); ++i) {
        S gi = g ? g[i] : S(0);
        slot.m[i] = beta1_ * slot.m[i] + (S(1) - beta1_) * gi;
        slot.v[i] = beta2_ * slot.v[i] + (S(1) - beta2_) * gi * gi;
        S mhat = slot.m[i] / bc1;
        S vhat = slot.v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void zero_grad() {
    for (auto& slot : slots_) slot.param.zero_grad();
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }

 private:
  S beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Slot> slots_;
};

// Global-norm gradient clipping across the trainable parameters. Returns the
// pre-clip norm.
template <class S>
double clip_global_norm(AdamOptimizer<S>& opt, double max_norm) {
  double sq = 0;
  for (auto& slot : opt.slots()) {
    if (!slot.param.has_grad()) continue;
    for (S g : slot.param.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    S factor = static_cast<S>(max_norm / norm);
    for (auto& slot : opt.slots()) {
      if (!slot.param.has_grad()) continue;
      for (S& g : slot.param.grad_buffer()) g *= factor;
    }
  }
  return norm;
}

}  // namespace lhdff
