#pragma once
// Central finite-difference verification of autodiff gradients.
//
// Always run at f64.  The builder is called repeatedly: once with a live
// graph to obtain analytic gradients, then twice per probed coordinate
// (graph = nullptr) for the +h / -h forward evaluations.  Builders that use
// stochastic ops (dropout) must construct their rng from a fixed seed
// internally so every invocation sees identical masks.

#include <cmath>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

struct GradCheckOpts {
  double h = 1e-4;
  // cap on probed coordinates per input (0 = probe all); large models are
  // spot-checked at deterministically sampled coordinates
  int64_t max_coords_per_input = 0;
  uint64_t sample_seed = 0x5eedc0de;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
};

// F: (Graph<double>*) -> scalar Tensor<double>
template <class F>
GradCheckResult grad_check(F&& build, const std::vector<Tensor<double>>& inputs,
                           GradCheckOpts opts = {}) {
  for (const auto& in : inputs) {
    in.storage()->needs_grad = true;
    in.storage()->ensure_grad();
    for (auto& gv : in.storage()->g) gv = 0.0;  // discard stale accumulation
  }

  Graph<double> g;
  auto loss = build(&g);
  if (loss.numel() != 1)
    throw ArgumentError("grad_check: builder output is not scalar, shape " +
                        shape_str(loss.shape()));
  g.backward(loss);

  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) {
    in.storage()->ensure_grad();
    analytic.push_back(in.gradvec());
  }
  g.clear();

  Rng pick(opts.sample_seed);
  GradCheckResult res;
  for (size_t t = 0; t < inputs.size(); ++t) {
    auto& vals = const_cast<Tensor<double>&>(inputs[t]).vec();
    const int64_t n = int64_t(vals.size());
    std::vector<int64_t> coords;
    if (opts.max_coords_per_input <= 0 || n <= opts.max_coords_per_input) {
      coords.resize(size_t(n));
      for (int64_t i = 0; i < n; ++i) coords[size_t(i)] = i;
    } else {
      std::unordered_set<int64_t> seen;
      while (int64_t(coords.size()) < opts.max_coords_per_input) {
        const int64_t i = int64_t(pick.bounded(uint64_t(n)));
        if (seen.insert(i).second) coords.push_back(i);
      }
    }
    for (int64_t i : coords) {
      const double keep = vals[size_t(i)];
      vals[size_t(i)] = keep + opts.h;
      const double lp = build(nullptr).data()[0];
      vals[size_t(i)] = keep - opts.h;
      const double lm = build(nullptr).data()[0];
      vals[size_t(i)] = keep;
      const double numeric = (lp - lm) / (2.0 * opts.h);
      const double a = analytic[t][size_t(i)];
      const double rel =
          std::abs(a - numeric) /
          std::max({1.0, std::abs(a), std::abs(numeric)});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.coords_checked;
    }
  }
  return res;
}

}  // namespace cseg
