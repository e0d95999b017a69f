#include "cseg/selfcheck.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "cseg/gradcheck.hpp"
#include "cseg/layers.hpp"
#include "cseg/model.hpp"
#include "cseg/ops.hpp"
#include "cseg/reference.hpp"
#include "cseg/rng.hpp"

namespace cseg {

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

// ------------------------------------------------------------- parameters

std::string millions(int64_t n) {
  return fmt("%.1f", double(n) / 1e6) + "M";
}

CheckLine exact_params(Arch arch, int64_t expect, const std::string& display) {
  Rng rng(1);
  auto m = build_model<float>(arch);  // counting needs no init
  const int64_t got = m.count_params();
  CheckLine line;
  line.name = std::string("params/") + arch_name(arch);
  const bool count_ok = got == expect;
  const bool display_ok = display.empty() || millions(got) == display;
  line.pass = count_ok && display_ok;
  line.detail = std::to_string(got) + (display.empty()
                                           ? ""
                                           : " (" + millions(got) + ")") +
                (count_ok ? "" : ", expected " + std::to_string(expect)) +
                (display_ok ? "" : ", expected display " + display);
  return line;
}

CheckLine banded_params(Arch arch, double center, double tol_frac) {
  auto m = build_model<float>(arch);
  const int64_t got = m.count_params();
  const double rel = std::abs(double(got) - center) / center;
  CheckLine line;
  line.name = std::string("params/") + arch_name(arch);
  line.pass = rel <= tol_frac;
  line.detail = std::to_string(got) + " vs " + millions(int64_t(center)) +
                ", off by " + fmt("%.2f", rel * 100) + "% (bound " +
                fmt("%.1f", tol_frac * 100) + "%)";
  return line;
}

// -------------------------------------------------- operation grad checks

using Builder = std::function<Tensor<double>(Graph<double>*)>;

// scalar loss sum(t * fixed_random_weights): keeps every output coordinate
// in play with distinct sensitivities
Tensor<double> weighted_sum(Ctx<double>& cx, const Tensor<double>& t,
                            uint64_t wseed) {
  Rng r(wseed);
  auto w = Tensor<double>::zeros(t.shape());
  for (int64_t i = 0; i < w.numel(); ++i) w.data()[i] = r.uniform(0.5, 1.5);
  return sum(cx, mul(cx, t, w));
}

CheckLine run_grad(const std::string& name, const Builder& build,
                   const std::vector<Tensor<double>>& inputs,
                   GradCheckOpts opts = {}) {
  CheckLine line;
  line.name = "grad/" + name;
  auto res = grad_check(build, inputs, opts);
  line.pass = res.max_rel_err < 1e-4;
  line.detail = "max rel err " + fmt("%.2e", res.max_rel_err) + " over " +
                std::to_string(res.coords_checked) + " coords (bound 1e-4)";
  return line;
}

void op_grad_checks(std::vector<CheckLine>& out) {
  using reference::random_tensor;
  Rng rng(0xc31c);

  {
    auto a = random_tensor<double>({3, 4}, rng);
    auto b = random_tensor<double>({4, 2}, rng);
    out.push_back(run_grad(
        "matmul",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          return weighted_sum(cx, matmul(cx, a, b), 11);
        },
        {a, b}));
  }
  {
    auto a = random_tensor<double>({2, 5}, rng);
    auto b = random_tensor<double>({2, 5}, rng);
    out.push_back(run_grad(
        "add",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          return weighted_sum(cx, add(cx, a, b), 12);
        },
        {a, b}));
    out.push_back(run_grad(
        "mul",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          return weighted_sum(cx, mul(cx, a, b), 13);
        },
        {a, b}));
  }
  {
    auto x = random_tensor<double>({3, 6}, rng);
    auto bias = random_tensor<double>({6}, rng);
    out.push_back(run_grad(
        "add_rowvec",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          return weighted_sum(cx, add_rowvec(cx, x, bias), 14);
        },
        {x, bias}));
    out.push_back(run_grad(
        "slice_cols",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          return weighted_sum(cx, slice_cols(cx, x, 1, 4), 15);
        },
        {x}));
    out.push_back(run_grad(
        "sum",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          return sum(cx, x);
        },
        {x}));
    out.push_back(run_grad(
        "reshape",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          return weighted_sum(cx, reshape(cx, x, {2, 9}), 16);
        },
        {x}));
  }
  {
    auto a = random_tensor<double>({2, 3}, rng);
    auto b = random_tensor<double>({2, 4}, rng);
    out.push_back(run_grad(
        "concat",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          return weighted_sum(cx, concat(cx, {a, b}, 1), 17);
        },
        {a, b}));
  }
  {
    auto x = random_tensor<double>({4, 5}, rng, -2.0, 2.0);
    const char* names[] = {"relu", "sigmoid", "tanh"};
    for (int which = 0; which < 3; ++which) {
      out.push_back(run_grad(
          names[which],
          [&, which](Graph<double>* g) {
            Ctx<double> cx{g, Mode::train, nullptr};
            Tensor<double> y = which == 0   ? relu(cx, x)
                               : which == 1 ? sigmoid(cx, x)
                                            : tanh_op(cx, x);
            return weighted_sum(cx, y, uint64_t(18 + which));
          },
          {x}));
    }
    // relu_inplace overwrites its operand, so it is applied to a fresh
    // buffer (x + 0) to keep the probed tensor intact between evaluations
    auto zero = Tensor<double>::zeros({4, 5});
    out.push_back(run_grad(
        "relu_inplace",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          return weighted_sum(cx, relu_inplace(cx, add(cx, x, zero)), 21);
        },
        {x}));
  }
  {
    auto x = random_tensor<double>({8}, rng);
    out.push_back(run_grad(
        "dropout",
        [&](Graph<double>* g) {
          Rng mask_rng(555);  // frozen mask across invocations
          Ctx<double> cx{g, Mode::train, &mask_rng};
          return sum(cx, dropout(cx, x, 0.5));
        },
        {x}));
  }
  {
    auto x = random_tensor<double>({2, 2, 5, 5}, rng);
    auto w = random_tensor<double>({3, 2, 4, 4}, rng);
    out.push_back(run_grad(
        "conv2d",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          return weighted_sum(cx, conv2d(cx, x, w), 22);
        },
        {x, w}));
  }
  {
    auto x = random_tensor<double>({2, 2, 4, 4}, rng);
    out.push_back(run_grad(
        "maxpool2d",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          return weighted_sum(cx, maxpool2d(cx, x), 23);
        },
        {x}));
  }
  {
    auto x = random_tensor<double>({2, 3, 4, 4}, rng);
    auto gamma = random_tensor<double>({3}, rng, 0.5, 1.5);
    auto beta = random_tensor<double>({3}, rng, -0.5, 0.5);
    out.push_back(run_grad(
        "batchnorm2d",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          BnStats<double> st;  // fresh stats: train-mode value is pure
          st.mean = Tensor<double>::zeros({3});
          st.var = Tensor<double>::full({3}, 1.0);
          return weighted_sum(cx, batchnorm2d(cx, x, gamma, beta, st), 24);
        },
        {x, gamma, beta}));
  }
  {
    auto z = random_tensor<double>({5, 4}, rng, -2.0, 2.0);
    out.push_back(run_grad(
        "softmax_cross_entropy",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          return softmax_cross_entropy(cx, z, {0, 3, 1, 2, 2});
        },
        {z}));
  }
  {
    LstmCell<double> cell;
    cell.build(6, 5);
    Rng fill(0x157);
    for (auto* t : {&cell.wx, &cell.wh, &cell.b})
      for (auto& v : t->vec()) v = fill.uniform(-0.5, 0.5);
    auto x = random_tensor<double>({3, 6}, rng);
    auto h = random_tensor<double>({3, 5}, rng);
    auto c = random_tensor<double>({3, 5}, rng);
    out.push_back(run_grad(
        "lstm_step",
        [&](Graph<double>* g) {
          Ctx<double> cx{g, Mode::train, nullptr};
          auto [hn, cn] = cell.step(cx, x, h, c);
          return add(cx, weighted_sum(cx, hn, 25), weighted_sum(cx, cn, 26));
        },
        {x, h, c, cell.wx, cell.wh, cell.b}));
  }
}

// ------------------------------------------------- whole-model grad checks

CheckLine model_grad_check(Arch arch, int coords_per_tensor) {
  using reference::random_tensor;
  Rng rng(0xa11 + uint64_t(arch));
  auto model = build_and_init<double>(arch, rng);

  const int batch = 2;
  std::array<Tensor<double>, 4> scales;
  Tensor<double> hires;
  std::vector<Tensor<double>> inputs;
  if (model.uses_hires()) {
    hires = random_tensor<double>({batch, 3, 512, 512}, rng);
    inputs.push_back(hires);
  } else {
    for (auto& s : scales) {
      s = random_tensor<double>({batch, 3, 64, 64}, rng);
    }
    inputs.push_back(scales[0]);
  }

  // probe a spread of trainable tensors: first, one third, two thirds, last
  std::vector<size_t> trainable;
  for (size_t i = 0; i < model.reg.items.size(); ++i)
    if (model.reg.items[i].trainable) trainable.push_back(i);
  const size_t n = trainable.size();
  for (size_t pick : {size_t(0), n / 3, 2 * n / 3, n - 1})
    inputs.push_back(model.reg.items[trainable[pick]].t);

  const std::vector<int> labels{1, 3};
  GradCheckOpts opts;
  // At the default step the probe shifts millions of normalized
  // preactivations enough to cross relu/maxpool kinks, which central
  // differences register as error; a tighter step stays on one linear piece
  // while 64-bit precision keeps the difference quotient far above roundoff.
  opts.h = 1e-5;
  opts.max_coords_per_input = coords_per_tensor;
  return run_grad(
      std::string("model-") + arch_name(arch),
      [&](Graph<double>* g) {
        Rng drop_rng(0xd0d0);  // frozen dropout masks across invocations
        Ctx<double> cx{g, Mode::train, &drop_rng};
        auto logits =
            model.forward(cx, scales, model.uses_hires() ? &hires : nullptr);
        return softmax_cross_entropy(cx, logits, labels);
      },
      inputs, opts);
}

// -------------------------------------------------------- oracle equality

CheckLine oracle_line(const std::string& name, double worst, int cases) {
  CheckLine line;
  line.name = "oracle/" + name;
  line.pass = worst < 1e-6;
  line.detail = "max abs err " + fmt("%.2e", worst) + " over " +
                std::to_string(cases) + " cases (bound 1e-6)";
  return line;
}

double matmul_cases(Rng& rng, int cases) {
  using reference::random_tensor;
  double worst = 0;
  Ctx<double> cx;
  for (int it = 0; it < cases; ++it) {
    const int m = 1 + int(rng.bounded(8)), k = 1 + int(rng.bounded(8)),
              n = 1 + int(rng.bounded(8));
    auto a = random_tensor<double>({m, k}, rng);
    auto b = random_tensor<double>({k, n}, rng);
    auto y = matmul(cx, a, b);
    auto ref = reference::matmul_ref(reference::to_f64(a),
                                     reference::to_f64(b), m, k, n);
    for (int64_t i = 0; i < y.numel(); ++i)
      worst = std::max(worst, std::abs(y.data()[i] - ref[size_t(i)]));
  }
  return worst;
}

double conv2d_cases(Rng& rng, int cases) {
  using reference::random_tensor;
  double worst = 0;
  Ctx<double> cx;
  for (int it = 0; it < cases; ++it) {
    const int n = 1 + int(rng.bounded(2)), c = 1 + int(rng.bounded(4)),
              k = 1 + int(rng.bounded(4)), hw = 4 + 2 * int(rng.bounded(3));
    auto x = random_tensor<double>({n, c, hw, hw}, rng);
    auto w = random_tensor<double>({k, c, 4, 4}, rng);
    auto y = conv2d(cx, x, w);
    auto ref = reference::conv2d_ref(reference::to_f64(x),
                                     reference::to_f64(w), n, c, hw, hw, k);
    for (int64_t i = 0; i < y.numel(); ++i)
      worst = std::max(worst, std::abs(y.data()[i] - ref[size_t(i)]));
  }
  return worst;
}

double maxpool_cases(Rng& rng, int cases) {
  using reference::random_tensor;
  double worst = 0;
  Ctx<double> cx;
  for (int it = 0; it < cases; ++it) {
    const int n = 1 + int(rng.bounded(4)), c = 1 + int(rng.bounded(4)),
              hw = 2 + 2 * int(rng.bounded(4));
    auto x = random_tensor<double>({n, c, hw, hw}, rng);
    auto y = maxpool2d(cx, x);
    auto ref = reference::maxpool_ref(reference::to_f64(x), n, c, hw, hw);
    for (int64_t i = 0; i < y.numel(); ++i)
      worst = std::max(worst, std::abs(y.data()[i] - ref[size_t(i)]));
  }
  return worst;
}

double lstm_cases(Rng& rng, int cases) {
  using reference::random_tensor;
  double worst = 0;
  Ctx<double> cx;
  for (int it = 0; it < cases; ++it) {
    const int n = 1 + int(rng.bounded(3)), in = 1 + int(rng.bounded(6)),
              hidden = 1 + int(rng.bounded(5));
    LstmCell<double> cell;
    cell.build(in, hidden);
    for (auto* t : {&cell.wx, &cell.wh, &cell.b})
      for (auto& v : t->vec()) v = rng.uniform(-0.8, 0.8);
    auto x = random_tensor<double>({n, in}, rng);
    auto h = random_tensor<double>({n, hidden}, rng);
    auto c = random_tensor<double>({n, hidden}, rng);
    auto [hn, cn] = cell.step(cx, x, h, c);
    auto ref = reference::lstm_step_ref(
        reference::to_f64(x), reference::to_f64(h), reference::to_f64(c),
        reference::to_f64(cell.wx), reference::to_f64(cell.wh),
        reference::to_f64(cell.b), n, in, hidden);
    for (int64_t i = 0; i < hn.numel(); ++i) {
      worst = std::max(worst, std::abs(hn.data()[i] - ref.h[size_t(i)]));
      worst = std::max(worst, std::abs(cn.data()[i] - ref.c[size_t(i)]));
    }
  }
  return worst;
}

}  // namespace

std::vector<CheckLine> check_params() {
  std::vector<CheckLine> out;
  for (Arch a : {Arch::A, Arch::B, Arch::C, Arch::D})
    out.push_back(exact_params(a, 7217028, "7.2M"));
  out.push_back(banded_params(Arch::E, 7.3e6, 0.015));
  out.push_back(exact_params(Arch::F, 8003460, "8.0M"));
  out.push_back(exact_params(Arch::G, 10102660, "10.1M"));
  out.push_back(banded_params(Arch::H, 19.8e6, 0.10));
  out.push_back(exact_params(Arch::I, 28860420, "28.9M"));
  out.push_back(exact_params(Arch::J, 30959620, "31.0M"));
  out.push_back(exact_params(Arch::G_BIDIR, 13250436, ""));
  return out;
}

std::vector<CheckLine> check_grads(int model_coords_per_tensor) {
  std::vector<CheckLine> out;
  op_grad_checks(out);
  for (Arch a : {Arch::A, Arch::E, Arch::F, Arch::G, Arch::H})
    out.push_back(model_grad_check(a, model_coords_per_tensor));
  return out;
}

std::vector<CheckLine> check_oracles(int cases_per_op) {
  Rng rng(0x0aac1e);
  std::vector<CheckLine> out;
  out.push_back(
      oracle_line("matmul", matmul_cases(rng, cases_per_op), cases_per_op));
  out.push_back(
      oracle_line("conv2d", conv2d_cases(rng, cases_per_op), cases_per_op));
  out.push_back(
      oracle_line("maxpool2d", maxpool_cases(rng, cases_per_op), cases_per_op));
  out.push_back(
      oracle_line("lstm_step", lstm_cases(rng, cases_per_op), cases_per_op));
  return out;
}

}  // namespace cseg
