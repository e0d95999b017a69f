#pragma once
// Stateful layers and the named-parameter registry.
//
// A ParamRegistry is an ordered list of (hierarchical name, tensor) entries;
// its order fixes initialization draws, optimizer iteration, and checkpoint
// layout.  Layers register trainable weights plus non-trainable batchnorm
// running statistics (persisted, never counted or optimized).  Shared layers
// are registered exactly once by whoever owns them.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cseg/ops.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

enum class InitKind {
  he_uniform,   // weight matrices / kernels: U(-sqrt(6/fan_in), +sqrt(6/fan_in))
  zeros,        // biases, bn beta, running mean
  ones,         // bn gamma, running var
  lstm_bias     // zeros with the forget-gate quarter set to 1
};

template <class T>
struct ParamRegistry {
  struct Entry {
    std::string name;
    Tensor<T> t;
    bool trainable;
    InitKind kind;
    int64_t fan_in;  // used by he_uniform only
  };
  std::vector<Entry> items;
  std::unordered_map<std::string, size_t> index;

  void add(const std::string& name, Tensor<T> t, bool trainable, InitKind kind,
           int64_t fan_in = 0) {
    if (index.count(name))
      throw ArgumentError("registry: duplicate parameter name " + name);
    if (trainable) t.storage()->needs_grad = true;
    index[name] = items.size();
    items.push_back(Entry{name, std::move(t), trainable, kind, fan_in});
  }

  Tensor<T>* find(const std::string& name) {
    auto it = index.find(name);
    return it == index.end() ? nullptr : &items[it->second].t;
  }

  int64_t count_trainable() const {
    int64_t n = 0;
    for (const auto& e : items)
      if (e.trainable) n += e.t.numel();
    return n;
  }
};

// Fills every registered tensor in registration order from the given rng.
// Weight draws consume the stream sequentially, so the full parameter state
// is a pure function of the seed.
template <class T>
void init_params(ParamRegistry<T>& reg, Rng& rng) {
  for (auto& e : reg.items) {
    switch (e.kind) {
      case InitKind::he_uniform: {
        const double bound = std::sqrt(6.0 / double(e.fan_in));
        for (int64_t i = 0; i < e.t.numel(); ++i)
          e.t.data()[i] = T(rng.uniform(-bound, bound));
        break;
      }
      case InitKind::zeros:
        for (int64_t i = 0; i < e.t.numel(); ++i) e.t.data()[i] = T(0);
        break;
      case InitKind::ones:
        for (int64_t i = 0; i < e.t.numel(); ++i) e.t.data()[i] = T(1);
        break;
      case InitKind::lstm_bias: {
        // gates packed i,f,g,o: the second quarter is the forget gate
        const int64_t q = e.t.numel() / 4;
        for (int64_t i = 0; i < e.t.numel(); ++i)
          e.t.data()[i] = (i >= q && i < 2 * q) ? T(1) : T(0);
        break;
      }
    }
  }
}

// conv2d 4x4 (no bias) -> batchnorm -> relu -> 2x2 maxpool
template <class T>
struct ConvBlock {
  int in_ch = 0, out_ch = 0;
  Tensor<T> w, gamma, beta;
  BnStats<T> bn;

  void build(int in, int out) {
    in_ch = in;
    out_ch = out;
    w = Tensor<T>::zeros({out, in, 4, 4});
    gamma = Tensor<T>::zeros({out});
    beta = Tensor<T>::zeros({out});
    bn.mean = Tensor<T>::zeros({out});
    bn.var = Tensor<T>::zeros({out});
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    r.add(p + ".w", w, true, InitKind::he_uniform, int64_t(in_ch) * 16);
    r.add(p + ".gamma", gamma, true, InitKind::ones);
    r.add(p + ".beta", beta, true, InitKind::zeros);
    r.add(p + ".running_mean", bn.mean, false, InitKind::zeros);
    r.add(p + ".running_var", bn.var, false, InitKind::ones);
  }

  Tensor<T> forward(Ctx<T>& cx, const Tensor<T>& x) {
    auto y = batchnorm2d(cx, conv2d(cx, x, w), gamma, beta, bn);
    return maxpool2d(cx, relu_inplace(cx, y));
  }

  int64_t param_count() const { return int64_t(in_ch) * out_ch * 16 + 2 * out_ch; }
};

template <class T>
struct Dense {
  int in_dim = 0, out_dim = 0;
  Tensor<T> w, b;  // y = x.W + b, W: [in,out]

  void build(int in, int out) {
    in_dim = in;
    out_dim = out;
    w = Tensor<T>::zeros({in, out});
    b = Tensor<T>::zeros({out});
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    r.add(p + ".w", w, true, InitKind::he_uniform, in_dim);
    r.add(p + ".b", b, true, InitKind::zeros);
  }

  Tensor<T> forward(Ctx<T>& cx, const Tensor<T>& x) {
    return add_rowvec(cx, matmul(cx, x, w), b);
  }

  int64_t param_count() const { return int64_t(in_dim) * out_dim + out_dim; }
};

// Four-gate LSTM cell; gate columns packed i,f,g,o along the 4*hidden axis.
template <class T>
struct LstmCell {
  int in_dim = 0, hidden = 0;
  Tensor<T> wx, wh, b;  // [in,4H], [H,4H], [4H]

  void build(int in, int h) {
    in_dim = in;
    hidden = h;
    wx = Tensor<T>::zeros({in, 4 * h});
    wh = Tensor<T>::zeros({h, 4 * h});
    b = Tensor<T>::zeros({4 * h});
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    r.add(p + ".wx", wx, true, InitKind::he_uniform, in_dim);
    r.add(p + ".wh", wh, true, InitKind::he_uniform, hidden);
    r.add(p + ".b", b, true, InitKind::lstm_bias);  // forget bias 1
  }

  std::pair<Tensor<T>, Tensor<T>> step(Ctx<T>& cx, const Tensor<T>& x,
                                       const Tensor<T>& h, const Tensor<T>& c) {
    if (x.rank() != 2 || x.dim(1) != in_dim)
      throw DimensionError("lstm_step: input " + shape_str(x.shape()) +
                           ", expected [N," + std::to_string(in_dim) + "]");
    if (h.dim(1) != hidden || c.dim(1) != hidden)
      throw DimensionError("lstm_step: state extent != hidden size " +
                           std::to_string(hidden));
    auto gates =
        add_rowvec(cx, add(cx, matmul(cx, x, wx), matmul(cx, h, wh)), b);
    auto gi = sigmoid(cx, slice_cols(cx, gates, 0, hidden));
    auto gf = sigmoid(cx, slice_cols(cx, gates, hidden, 2 * hidden));
    auto gg = tanh_op(cx, slice_cols(cx, gates, 2 * hidden, 3 * hidden));
    auto go = sigmoid(cx, slice_cols(cx, gates, 3 * hidden, 4 * hidden));
    auto cn = add(cx, mul(cx, gf, c), mul(cx, gi, gg));
    auto hn = mul(cx, go, tanh_op(cx, cn));
    return {hn, cn};
  }

  int64_t param_count() const {
    return int64_t(4) * (int64_t(in_dim) * hidden + int64_t(hidden) * hidden + hidden);
  }
};

}  // namespace cseg
