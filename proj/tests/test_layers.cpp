#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cseg/gradcheck.hpp"
#include "cseg/layers.hpp"
#include "support/oracles.hpp"

using namespace cseg;
using oracle::random_tensor;

TEST_CASE("registry rejects duplicate names and counts only trainables") {
  ParamRegistry<float> r;
  Dense<float> d;
  d.build(8, 4);
  d.reg(r, "fc");
  CHECK_THROWS_AS(d.reg(r, "fc"), ArgumentError);
  ConvBlock<float> cb;
  cb.build(3, 5);
  cb.reg(r, "b1");
  // 8*4+4 dense + conv (3*5*16 + 2*5); running stats excluded
  CHECK(r.count_trainable() == 36 + 240 + 10);
  CHECK(r.find("b1.gamma") != nullptr);
  CHECK(r.find("nope") == nullptr);
}

TEST_CASE("closed-form layer parameter counts") {
  Dense<float> d;
  d.build(512, 512);
  CHECK(d.param_count() == 262656);
  LstmCell<float> l;
  l.build(512, 512);
  CHECK(l.param_count() == 2099200);
  ConvBlock<float> c;
  c.build(3, 64);
  CHECK(c.param_count() == 3 * 64 * 16 + 128);
  // registry agrees with the closed forms
  ParamRegistry<float> r;
  d.reg(r, "fc");
  l.reg(r, "lstm");
  c.reg(r, "b");
  CHECK(r.count_trainable() == 262656 + 2099200 + c.param_count());
}

TEST_CASE("ConvBlock halves spatial extents") {
  ConvBlock<float> cb;
  cb.build(3, 8);
  ParamRegistry<float> r;
  cb.reg(r, "b");
  Rng rng(3);
  init_params(r, rng);
  Ctx<float> cx{nullptr, Mode::train, nullptr};
  auto y = cb.forward(cx, random_tensor<float>({2, 3, 16, 16}, rng));
  CHECK(y.shape() == Shape{2, 8, 8, 8});
}

TEST_CASE("count_params is invariant under forward/backward") {
  ConvBlock<float> cb;
  cb.build(3, 4);
  ParamRegistry<float> r;
  cb.reg(r, "b");
  Rng rng(4);
  init_params(r, rng);
  const auto before = r.count_trainable();
  Graph<float> g;
  Ctx<float> cx{&g, Mode::train, nullptr};
  auto y = cb.forward(cx, random_tensor<float>({2, 3, 8, 8}, rng));
  auto loss = sum(cx, y);
  g.backward(loss);
  CHECK(r.count_trainable() == before);
}

TEST_CASE("init is a pure function of the seed") {
  auto make = [](uint64_t seed) {
    ParamRegistry<float> r;
    Dense<float> d;
    d.build(64, 32);
    ConvBlock<float> c;
    c.build(3, 8);
    LstmCell<float> l;
    l.build(16, 16);
    d.reg(r, "fc");
    c.reg(r, "b");
    l.reg(r, "lstm");
    Rng rng(seed);
    init_params(r, rng);
    std::vector<float> all;
    for (auto& e : r.items)
      all.insert(all.end(), e.t.vec().begin(), e.t.vec().end());
    return all;
  };
  CHECK(make(7) == make(7));
  CHECK(make(7) != make(8));
}

TEST_CASE("init fills gamma with ones and biases with zeros") {
  ParamRegistry<float> r;
  ConvBlock<float> c;
  c.build(3, 8);
  Dense<float> d;
  d.build(8, 4);
  c.reg(r, "b");
  d.reg(r, "fc");
  Rng rng(11);
  init_params(r, rng);
  for (int i = 0; i < 8; ++i) CHECK(c.gamma.data()[i] == 1.0f);
  for (int i = 0; i < 8; ++i) CHECK(c.beta.data()[i] == 0.0f);
  for (int i = 0; i < 4; ++i) CHECK(d.b.data()[i] == 0.0f);
  for (int i = 0; i < 8; ++i) CHECK(c.bn.var.data()[i] == 1.0f);
}

TEST_CASE("dense init std lands within 10% of the fan-in target") {
  ParamRegistry<float> r;
  Dense<float> d;
  d.build(512, 512);
  d.reg(r, "fc");
  Rng rng(12);
  init_params(r, rng);
  // U(-a,a) with a = sqrt(6/512) has std a/sqrt(3) = sqrt(2/512)
  double s = 0, s2 = 0;
  const int64_t n = d.w.numel();
  for (int64_t i = 0; i < n; ++i) {
    s += d.w.data()[i];
    s2 += double(d.w.data()[i]) * d.w.data()[i];
  }
  const double mean = s / double(n);
  const double std = std::sqrt(s2 / double(n) - mean * mean);
  const double target = std::sqrt(2.0 / 512.0);
  CHECK(std::abs(std - target) / target < 0.10);
  // and the draws respect the he bound
  const double bound = std::sqrt(6.0 / 512.0);
  for (int64_t i = 0; i < n; ++i) REQUIRE(std::abs(d.w.data()[i]) <= bound);
}

TEST_CASE("lstm bias init sets only the forget gate to one") {
  ParamRegistry<float> r;
  LstmCell<float> l;
  l.build(8, 8);
  l.reg(r, "lstm");
  Rng rng(13);
  init_params(r, rng);
  for (int i = 0; i < 32; ++i) {
    const bool forget = i >= 8 && i < 16;
    CHECK(l.b.data()[i] == (forget ? 1.0f : 0.0f));
  }
}

TEST_CASE("lstm_step with all-zero weights gives zero state") {
  LstmCell<float> l;
  l.build(8, 8);  // tensors stay zero: no init
  Ctx<float> cx;
  Rng rng(14);
  auto x = random_tensor<float>({3, 8}, rng);
  auto h = Tensor<float>::zeros({3, 8});
  auto c = Tensor<float>::zeros({3, 8});
  auto [hn, cn] = l.step(cx, x, h, c);
  for (int64_t i = 0; i < hn.numel(); ++i) CHECK(hn.data()[i] == 0.0f);
  for (int64_t i = 0; i < cn.numel(); ++i) CHECK(cn.data()[i] == 0.0f);
}

TEST_CASE("lstm_step with saturated forget bias carries the cell state") {
  LstmCell<float> l;
  l.build(4, 4);
  for (int i = 4; i < 8; ++i) l.b.data()[i] = 10.0f;  // forget gate ~1
  Ctx<float> cx;
  Rng rng(15);
  auto x = random_tensor<float>({2, 4}, rng);
  auto h = Tensor<float>::zeros({2, 4});
  auto c = random_tensor<float>({2, 4}, rng, -1.0, 1.0);
  auto [hn, cn] = l.step(cx, x, h, c);
  for (int64_t i = 0; i < cn.numel(); ++i)
    CHECK(std::abs(cn.data()[i] - c.data()[i]) < 1e-4);
}

TEST_CASE("lstm_step matches the plain-loop oracle") {
  Rng rng(16);
  for (int rep = 0; rep < 10; ++rep) {
    LstmCell<double> l;
    l.build(6, 5);
    ParamRegistry<double> r;
    l.reg(r, "lstm");
    Rng init(100 + uint64_t(rep));
    init_params(r, init);
    auto x = random_tensor<double>({3, 6}, rng);
    auto h = random_tensor<double>({3, 5}, rng);
    auto c = random_tensor<double>({3, 5}, rng);
    Ctx<double> cx;
    auto [hn, cn] = l.step(cx, x, h, c);
    auto ref = oracle::lstm_step_ref(oracle::to_f64(x), oracle::to_f64(h),
                                     oracle::to_f64(c), oracle::to_f64(l.wx),
                                     oracle::to_f64(l.wh), oracle::to_f64(l.b), 3,
                                     6, 5);
    for (int64_t i = 0; i < hn.numel(); ++i) {
      CHECK(std::abs(hn.data()[i] - ref.h[size_t(i)]) < 1e-6);
      CHECK(std::abs(cn.data()[i] - ref.c[size_t(i)]) < 1e-6);
    }
  }
}

TEST_CASE("lstm_step rejects mismatched hidden size") {
  LstmCell<float> l;
  l.build(8, 8);
  Ctx<float> cx;
  CHECK_THROWS_AS(l.step(cx, Tensor<float>::zeros({2, 8}),
                         Tensor<float>::zeros({2, 4}),
                         Tensor<float>::zeros({2, 4})),
                  DimensionError);
}

TEST_CASE("gradient through 4 chained lstm steps vs finite differences") {
  LstmCell<double> l;
  l.build(5, 4);
  ParamRegistry<double> r;
  l.reg(r, "lstm");
  Rng init(17);
  init_params(r, init);
  Rng rng(18);
  std::vector<Tensor<double>> xs;
  for (int t = 0; t < 4; ++t) xs.push_back(random_tensor<double>({2, 5}, rng));
  auto wsum = random_tensor<double>({2, 4}, rng, 0.5, 1.5);
  std::vector<Tensor<double>> inputs = xs;
  inputs.push_back(l.wx);
  inputs.push_back(l.wh);
  inputs.push_back(l.b);
  auto res = grad_check(
      [&](Graph<double>* g) {
        Ctx<double> cx{g, Mode::train, nullptr};
        auto h = Tensor<double>::zeros({2, 4});
        auto c = Tensor<double>::zeros({2, 4});
        for (int t = 0; t < 4; ++t) {
          auto [hn, cn] = l.step(cx, xs[size_t(t)], h, c);
          h = hn;
          c = cn;
        }
        return sum(cx, mul(cx, h, wsum));
      },
      inputs);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("ConvBlock gradient vs finite differences") {
  ConvBlock<double> cb;
  cb.build(2, 3);
  ParamRegistry<double> r;
  cb.reg(r, "b");
  Rng init(19);
  init_params(r, init);
  Rng rng(20);
  auto x = random_tensor<double>({2, 2, 6, 6}, rng);
  auto wsum = random_tensor<double>({2, 3, 3, 3}, rng, 0.5, 1.5);
  auto res = grad_check(
      [&](Graph<double>* g) {
        Ctx<double> cx{g, Mode::train, nullptr};
        return sum(cx, mul(cx, cb.forward(cx, x), wsum));
      },
      {x, cb.w, cb.gamma, cb.beta});
  CHECK(res.max_rel_err < 1e-4);
}
