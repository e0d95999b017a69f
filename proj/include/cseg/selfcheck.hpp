#pragma once
// Runtime verification suites: parameter-count assertions, finite-difference
// gradient checks over every differentiable operation and whole
// architectures, and randomized comparisons against brute-force reference
// implementations.  Shared by the `verify` command and the acceptance
// harness so both report from the same code.

#include <string>
#include <vector>

namespace cseg {

struct CheckLine {
  std::string name;    // e.g. "params/G", "grad/conv2d", "oracle/matmul"
  bool pass = false;
  std::string detail;  // the measured value and the bound it was held to
};

// Trainable-parameter totals for every architecture: the exact closed-form
// value, plus the display rounding (millions, one decimal) the summary
// tables use.  E and H are accepted within a tolerance band of their
// customary figures instead of exactly; the detail line says which.
std::vector<CheckLine> check_params();

// Central finite differences at 64-bit over every differentiable operation
// (small dense instances, every coordinate probed), then over full
// architectures A, E, F, G and H on 2-sample batches with
// `model_coords_per_tensor` sampled coordinates per probed tensor.  A line
// passes when the worst relative error stays below 1e-4.
std::vector<CheckLine> check_grads(int model_coords_per_tensor = 5);

// Randomized equivalence of matmul, conv2d, maxpool2d and the LSTM step
// against the naive nested-loop references, `cases_per_op` instances each
// with freshly drawn shapes and contents, compared at 64-bit to an absolute
// error below 1e-6.
std::vector<CheckLine> check_oracles(int cases_per_op = 100);

inline bool all_passed(const std::vector<CheckLine>& lines) {
  for (const auto& l : lines)
    if (!l.pass) return false;
  return true;
}

}  // namespace cseg
