#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lhdff/rng.hpp"
#include "lhdff/tensor.hpp"

namespace lhdff {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // 0 checks every coordinate; otherwise a random sample per tensor.
  size_t coords_per_tensor = 0;
  uint64_t sample_seed = 1;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t coords_checked = 0;
  bool ok(double tol) const { return max_rel_err <= tol; }
};

// Central finite differences against tape gradients. The forward closure must
// be a pure function of the checked tensors' current values; it is re-run
// twice per sampled coordinate with no tape active, so the oracle depends only
// on forward arithmetic.
template <class S>
GradCheckReport check_gradients(std::vector<TensorT<S>> wrt,
                                const std::function<TensorT<S>()>& forward,
                                const GradCheckOptions& opts = {}) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::vector<std::vector<S>> analytic;
  {
    GradientTapeT<S> tape;
    auto loss = forward();
    tape.backward(loss);
    for (auto& t : wrt) {
      if (t.has_grad())
        analytic.emplace_back(t.grad().begin(), t.grad().end());
      else
        analytic.emplace_back(t.size(), S(0));
      t.zero_grad();
    }
  }

  GradCheckReport report;
  RngStream pick(opts.sample_seed);
  const S h = static_cast<S>(opts.step);
  for (size_t ti = 0; ti < wrt.size(); ++ti) {
    auto& t = wrt[ti];
    std::vector<size_t> coords;
    if (opts.coords_per_tensor == 0 || opts.coords_per_tensor >= t.size()) {
      coords.resize(t.size());
      for (size_t i = 0; i < t.size(); ++i) coords[i] = i;
    } else {
      for (size_t i = 0; i < opts.coords_per_tensor; ++i)
        coords.push_back(static_cast<size_t>(pick.below(t.size())));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (size_t c : coords) {
      S saved = t.mutable_data()[c];
      t.mutable_data()[c] = saved + h;
      double up = static_cast<double>(forward().item());
      t.mutable_data()[c] = saved - h;
      double down = static_cast<double>(forward().item());
      t.mutable_data()[c] = saved;
      double fd = (up - down) / (2.0 * static_cast<double>(h));
      double an = static_cast<double>(analytic[ti][c]);
      double denom = std::max({std::fabs(fd), std::fabs(an), 1e-3});
      double rel = std::fabs(fd - an) / denom;
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.coords_checked;
    }
  }
  return report;
}

}  // namespace lhdff
