#pragma once
// Brute-force reference implementations, shared by the test suite and the
// runtime verification suites.  Written as plain nested loops with none of
// the library's layout tricks so they fail independently of the code under
// verification.

#include <cmath>
#include <vector>

#include "cseg/rng.hpp"
#include "cseg/tensor.hpp"

namespace cseg::reference {

inline std::vector<double> matmul_ref(const std::vector<double>& a,
                                      const std::vector<double>& b, int m, int k,
                                      int n) {
  std::vector<double> c(size_t(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int t = 0; t < k; ++t)
        c[size_t(i) * n + j] += a[size_t(i) * k + t] * b[size_t(t) * n + j];
  return c;
}

// 4x4 convolution, padding top/left 1 and bottom/right 2, no bias
inline std::vector<double> conv2d_ref(const std::vector<double>& x,
                                      const std::vector<double>& w, int N, int C,
                                      int H, int W, int K) {
  std::vector<double> y(size_t(N) * K * H * W, 0.0);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          double acc = 0;
          for (int c = 0; c < C; ++c)
            for (int u = 0; u < 4; ++u)
              for (int v = 0; v < 4; ++v) {
                const int r = i + u - 1, q = j + v - 1;
                if (r < 0 || r >= H || q < 0 || q >= W) continue;
                acc += x[((size_t(n) * C + c) * H + r) * W + q] *
                       w[((size_t(k) * C + c) * 4 + u) * 4 + v];
              }
          y[((size_t(n) * K + k) * H + i) * W + j] = acc;
        }
  return y;
}

// 2x2/2 max pooling by explicit window scan
inline std::vector<double> maxpool_ref(const std::vector<double>& x, int N, int C,
                                       int H, int W) {
  const int oh = H / 2, ow = W / 2;
  std::vector<double> y(size_t(N) * C * oh * ow);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double best = -1e300;
          for (int u = 0; u < 2; ++u)
            for (int v = 0; v < 2; ++v)
              best = std::max(best, x[((size_t(n) * C + c) * H + 2 * i + u) * W +
                                      2 * j + v]);
          y[((size_t(n) * C + c) * oh + i) * ow + j] = best;
        }
  return y;
}

inline double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// one LSTM step; gates packed i,f,g,o along the 4*hidden axis of wx/wh/b
struct LstmRefOut {
  std::vector<double> h, c;
};
inline LstmRefOut lstm_step_ref(const std::vector<double>& x,
                                const std::vector<double>& h,
                                const std::vector<double>& c,
                                const std::vector<double>& wx,
                                const std::vector<double>& wh,
                                const std::vector<double>& b, int N, int in_dim,
                                int hidden) {
  LstmRefOut out;
  out.h.resize(size_t(N) * hidden);
  out.c.resize(size_t(N) * hidden);
  const int gw = 4 * hidden;
  for (int n = 0; n < N; ++n)
    for (int j = 0; j < hidden; ++j) {
      double gate[4];
      for (int gidx = 0; gidx < 4; ++gidx) {
        const int col = gidx * hidden + j;
        double acc = b[size_t(col)];
        for (int t = 0; t < in_dim; ++t)
          acc += x[size_t(n) * in_dim + t] * wx[size_t(t) * gw + col];
        for (int t = 0; t < hidden; ++t)
          acc += h[size_t(n) * hidden + t] * wh[size_t(t) * gw + col];
        gate[gidx] = acc;
      }
      const double gi = sigmoid_ref(gate[0]);
      const double gf = sigmoid_ref(gate[1]);
      const double gg = std::tanh(gate[2]);
      const double go = sigmoid_ref(gate[3]);
      const double cn = gf * c[size_t(n) * hidden + j] + gi * gg;
      out.c[size_t(n) * hidden + j] = cn;
      out.h[size_t(n) * hidden + j] = go * std::tanh(cn);
    }
  return out;
}

template <class T>
cseg::Tensor<T> random_tensor(cseg::Shape shape, cseg::Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
  auto t = cseg::Tensor<T>::zeros(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = T(rng.uniform(lo, hi));
  return t;
}

template <class T>
std::vector<double> to_f64(const cseg::Tensor<T>& t) {
  std::vector<double> out(size_t(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) out[size_t(i)] = double(t.data()[i]);
  return out;
}

}  // namespace cseg::reference
