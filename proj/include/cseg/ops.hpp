#pragma once
// Differentiable tensor operations.
//
// Every op computes its forward result eagerly and, when run under a
// non-null Graph with any input requiring gradients, appends one tape node
// whose closure accumulates (+=) into the input gradients.  Closures bail
// out when the output gradient was never allocated (the output did not feed
// the loss).
//
// Conventions fixed here:
//   - conv2d: 4x4 kernels, no bias, asymmetric same-padding (1 before,
//     2 after on each spatial axis), computed as im2col + GEMM.
//   - maxpool2d: 2x2 window, stride 2; ties keep the first cell in
//     row-major scan order.
//   - batchnorm2d: eps 1e-5, running-stat momentum 0.1, biased variance.
//   - dropout: inverted scaling, identity in eval mode and at p=0.
//   - relu gradient at exactly 0 is 0.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<MatR<T>>;
template <class T>
using CMapM = Eigen::Map<const MatR<T>>;

// ---------------------------------------------------------------- matmul

template <class T>
Tensor<T> matmul(Ctx<T>& cx, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = Tensor<T>::zeros({m, n});
  CMapM<T> A(a.data(), m, k), B(b.data(), k, n);
  MapM<T> C(out.data(), m, n);
  C.noalias() = A * B;
  if (cx.g && (a.needs_grad() || b.needs_grad())) {
    out.storage()->needs_grad = true;
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    out.node = cx.g->emit({a.node, b.node}, [sa, sb, so, m, k, n] {
      if (so->g.empty()) return;
      CMapM<T> dC(so->g.data(), m, n);
      if (sa->needs_grad) {
        sa->ensure_grad();
        CMapM<T> B(sb->v.data(), k, n);
        MapM<T> dA(sa->g.data(), m, k);
        dA.noalias() += dC * B.transpose();
      }
      if (sb->needs_grad) {
        sb->ensure_grad();
        CMapM<T> A(sa->v.data(), m, k);
        MapM<T> dB(sb->g.data(), k, n);
        dB.noalias() += A.transpose() * dC;
      }
    });
  }
  return out;
}

// ------------------------------------------------------- elementwise ops

template <class T>
Tensor<T> add(Ctx<T>& cx, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  auto out = Tensor<T>::zeros(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (cx.g && (a.needs_grad() || b.needs_grad())) {
    out.storage()->needs_grad = true;
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    out.node = cx.g->emit({a.node, b.node}, [sa, sb, so, n] {
      if (so->g.empty()) return;
      if (sa->needs_grad) {
        sa->ensure_grad();
        for (int64_t i = 0; i < n; ++i) sa->g[size_t(i)] += so->g[size_t(i)];
      }
      if (sb->needs_grad) {
        sb->ensure_grad();
        for (int64_t i = 0; i < n; ++i) sb->g[size_t(i)] += so->g[size_t(i)];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(Ctx<T>& cx, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  auto out = Tensor<T>::zeros(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (cx.g && (a.needs_grad() || b.needs_grad())) {
    out.storage()->needs_grad = true;
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    out.node = cx.g->emit({a.node, b.node}, [sa, sb, so, n] {
      if (so->g.empty()) return;
      if (sa->needs_grad) {
        sa->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          sa->g[size_t(i)] += so->g[size_t(i)] * sb->v[size_t(i)];
      }
      if (sb->needs_grad) {
        sb->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
          sb->g[size_t(i)] += so->g[size_t(i)] * sa->v[size_t(i)];
      }
    });
  }
  return out;
}

// x: [N x F], bias: [F], broadcast over rows
template <class T>
Tensor<T> add_rowvec(Ctx<T>& cx, const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw DimensionError("add_rowvec: " + shape_str(x.shape()) + " with bias " +
                         shape_str(bias.shape()));
  const int n = x.dim(0), f = x.dim(1);
  auto out = Tensor<T>::zeros(x.shape());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < f; ++j)
      out.data()[size_t(i) * f + j] = x.data()[size_t(i) * f + j] + bias.data()[j];
  if (cx.g && (x.needs_grad() || bias.needs_grad())) {
    out.storage()->needs_grad = true;
    auto sx = x.storage(), sb = bias.storage(), so = out.storage();
    out.node = cx.g->emit({x.node, bias.node}, [sx, sb, so, n, f] {
      if (so->g.empty()) return;
      if (sx->needs_grad) {
        sx->ensure_grad();
        for (size_t i = 0; i < so->g.size(); ++i) sx->g[i] += so->g[i];
      }
      if (sb->needs_grad) {
        sb->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < f; ++j) sb->g[size_t(j)] += so->g[size_t(i) * f + j];
      }
    });
  }
  return out;
}

// columns [c0, c1) of a 2-d tensor
template <class T>
Tensor<T> slice_cols(Ctx<T>& cx, const Tensor<T>& x, int c0, int c1) {
  if (x.rank() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
    throw DimensionError("slice_cols: [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") of " + shape_str(x.shape()));
  const int n = x.dim(0), f = x.dim(1), w = c1 - c0;
  auto out = Tensor<T>::zeros({n, w});
  for (int i = 0; i < n; ++i)
    std::copy(x.data() + size_t(i) * f + c0, x.data() + size_t(i) * f + c1,
              out.data() + size_t(i) * w);
  if (cx.g && x.needs_grad()) {
    out.storage()->needs_grad = true;
    auto sx = x.storage(), so = out.storage();
    out.node = cx.g->emit({x.node}, [sx, so, n, f, w, c0] {
      if (so->g.empty()) return;
      sx->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j)
          sx->g[size_t(i) * f + c0 + j] += so->g[size_t(i) * w + j];
    });
  }
  return out;
}

template <class T>
Tensor<T> concat(Ctx<T>& cx, const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw ArgumentError("concat: no inputs");
  const int rank = xs[0].rank();
  if (axis < 0 || axis >= rank) throw DimensionError("concat: bad axis");
  for (const auto& x : xs) {
    if (x.rank() != rank) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && x.shape()[size_t(d)] != xs[0].shape()[size_t(d)])
        throw DimensionError("concat: extent mismatch at axis " + std::to_string(d) +
                             ": " + shape_str(x.shape()) + " vs " +
                             shape_str(xs[0].shape()));
  }
  Shape oshape = xs[0].shape();
  int total_axis = 0;
  for (const auto& x : xs) total_axis += x.shape()[size_t(axis)];
  oshape[size_t(axis)] = total_axis;

  int64_t outer = 1, tail = 1;
  for (int d = 0; d < axis; ++d) outer *= oshape[size_t(d)];
  for (int d = axis + 1; d < rank; ++d) tail *= oshape[size_t(d)];

  auto out = Tensor<T>::zeros(oshape);
  const int64_t out_inner = int64_t(total_axis) * tail;
  std::vector<int64_t> offs;  // start offset of each input inside a row
  {
    int64_t off = 0;
    for (const auto& x : xs) {
      offs.push_back(off);
      const int64_t inner = int64_t(x.shape()[size_t(axis)]) * tail;
      for (int64_t o = 0; o < outer; ++o)
        std::copy(x.data() + o * inner, x.data() + (o + 1) * inner,
                  out.data() + o * out_inner + off);
      off += inner;
    }
  }
  bool any = false;
  for (const auto& x : xs) any = any || x.needs_grad();
  if (cx.g && any) {
    out.storage()->needs_grad = true;
    std::vector<std::shared_ptr<Storage<T>>> srcs;
    std::vector<int> in_nodes;
    for (const auto& x : xs) {
      srcs.push_back(x.storage());
      in_nodes.push_back(x.node);
    }
    auto so = out.storage();
    out.node =
        cx.g->emit(in_nodes, [srcs, so, offs, outer, tail, out_inner, axis] {
          if (so->g.empty()) return;
          for (size_t t = 0; t < srcs.size(); ++t) {
            if (!srcs[t]->needs_grad) continue;
            srcs[t]->ensure_grad();
            const int64_t inner =
                int64_t(srcs[t]->shape[size_t(axis)]) * tail;
            for (int64_t o = 0; o < outer; ++o) {
              const T* src = so->g.data() + o * out_inner + offs[t];
              T* dst = srcs[t]->g.data() + o * inner;
              for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
          }
        });
  }
  return out;
}

// copy with a new shape of identical element count
template <class T>
Tensor<T> reshape(Ctx<T>& cx, const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
  auto out = Tensor<T>::from_vec(std::move(shape), x.vec());
  if (cx.g && x.needs_grad()) {
    out.storage()->needs_grad = true;
    auto sx = x.storage(), so = out.storage();
    out.node = cx.g->emit({x.node}, [sx, so] {
      if (so->g.empty()) return;
      sx->ensure_grad();
      for (size_t i = 0; i < so->g.size(); ++i) sx->g[i] += so->g[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> sum(Ctx<T>& cx, const Tensor<T>& x) {
  double acc = 0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += double(x.data()[i]);
  auto out = Tensor<T>::from_vec({1}, {T(acc)});
  if (cx.g && x.needs_grad()) {
    out.storage()->needs_grad = true;
    auto sx = x.storage(), so = out.storage();
    out.node = cx.g->emit({x.node}, [sx, so] {
      if (so->g.empty()) return;
      sx->ensure_grad();
      for (auto& gi : sx->g) gi += so->g[0];
    });
  }
  return out;
}

// ----------------------------------------------------------- activations

template <class T>
Tensor<T> relu(Ctx<T>& cx, const Tensor<T>& x) {
  auto out = Tensor<T>::zeros(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i)
    out.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  if (cx.g && x.needs_grad()) {
    out.storage()->needs_grad = true;
    auto sx = x.storage(), so = out.storage();
    out.node = cx.g->emit({x.node}, [sx, so, n] {
      if (so->g.empty()) return;
      sx->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        if (so->v[size_t(i)] > T(0)) sx->g[size_t(i)] += so->g[size_t(i)];
    });
  }
  return out;
}

// In-place relu: output shares the input's storage (values overwritten, the
// gradient buffer masked in place during backward).  Only valid when the
// input tensor has no other consumer — used inside sequential blocks where
// the pre-activation is dead after this point.
template <class T>
Tensor<T> relu_inplace(Ctx<T>& cx, const Tensor<T>& x) {
  auto s = x.storage();
  for (auto& v : s->v)
    if (v < T(0)) v = T(0);
  Tensor<T> out = x;
  if (cx.g && x.needs_grad()) {
    out.node = cx.g->emit({x.node}, [s] {
      if (s->g.empty()) return;
      for (size_t i = 0; i < s->v.size(); ++i)
        if (!(s->v[i] > T(0))) s->g[i] = T(0);
    });
  }
  return out;
}

template <class T>
Tensor<T> sigmoid(Ctx<T>& cx, const Tensor<T>& x) {
  auto out = Tensor<T>::zeros(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    const T v = x.data()[i];
    if (v >= T(0)) {
      out.data()[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out.data()[i] = e / (T(1) + e);
    }
  }
  if (cx.g && x.needs_grad()) {
    out.storage()->needs_grad = true;
    auto sx = x.storage(), so = out.storage();
    out.node = cx.g->emit({x.node}, [sx, so, n] {
      if (so->g.empty()) return;
      sx->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const T s = so->v[size_t(i)];
        sx->g[size_t(i)] += so->g[size_t(i)] * s * (T(1) - s);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> tanh_op(Ctx<T>& cx, const Tensor<T>& x) {
  auto out = Tensor<T>::zeros(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::tanh(x.data()[i]);
  if (cx.g && x.needs_grad()) {
    out.storage()->needs_grad = true;
    auto sx = x.storage(), so = out.storage();
    out.node = cx.g->emit({x.node}, [sx, so, n] {
      if (so->g.empty()) return;
      sx->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const T t = so->v[size_t(i)];
        sx->g[size_t(i)] += so->g[size_t(i)] * (T(1) - t * t);
      }
    });
  }
  return out;
}

// --------------------------------------------------------------- dropout

template <class T>
Tensor<T> dropout(Ctx<T>& cx, const Tensor<T>& x, double p) {
  if (p < 0.0 || p >= 1.0)
    throw ArgumentError("dropout: rate " + std::to_string(p) + " outside [0,1)");
  if (cx.mode == Mode::eval || p == 0.0) return x;  // exact identity
  if (!cx.rng) throw StateError("dropout: train mode requires an rng");
  const int64_t n = x.numel();
  auto mask = std::make_shared<std::vector<uint8_t>>(size_t(n));
  const T scale = T(1.0 / (1.0 - p));
  auto out = Tensor<T>::zeros(x.shape());
  for (int64_t i = 0; i < n; ++i) {
    const bool keep = !cx.rng->bernoulli(p);
    (*mask)[size_t(i)] = keep;
    out.data()[i] = keep ? x.data()[i] * scale : T(0);
  }
  if (cx.g && x.needs_grad()) {
    out.storage()->needs_grad = true;
    auto sx = x.storage(), so = out.storage();
    out.node = cx.g->emit({x.node}, [sx, so, mask, scale, n] {
      if (so->g.empty()) return;
      sx->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        if ((*mask)[size_t(i)]) sx->g[size_t(i)] += so->g[size_t(i)] * scale;
    });
  }
  return out;
}

// ------------------------------------------------------------ conv2d 4x4

// im2col for 4x4 kernels with padding (top 1, left 1, bottom 2, right 2):
// col[(c*4+u)*4+v, i*W+j] = x[c, i+u-1, j+v-1], zero outside.
template <class T>
void im2col_4x4(const T* x, int C, int H, int W, T* col) {
  const int64_t hw = int64_t(H) * W;
  std::fill(col, col + int64_t(C) * 16 * hw, T(0));
  for (int c = 0; c < C; ++c)
    for (int u = 0; u < 4; ++u)
      for (int v = 0; v < 4; ++v) {
        T* dst = col + (int64_t(c) * 16 + u * 4 + v) * hw;
        const int i0 = std::max(0, 1 - u), i1 = std::min(H, H + 1 - u);
        const int j0 = std::max(0, 1 - v), j1 = std::min(W, W + 1 - v);
        for (int i = i0; i < i1; ++i) {
          const T* src = x + (int64_t(c) * H + i + u - 1) * W + (j0 + v - 1);
          std::copy(src, src + (j1 - j0), dst + int64_t(i) * W + j0);
        }
      }
}

// transpose of im2col: scatter-add columns back onto the image grid
template <class T>
void col2im_4x4_add(const T* col, int C, int H, int W, T* dx) {
  const int64_t hw = int64_t(H) * W;
  for (int c = 0; c < C; ++c)
    for (int u = 0; u < 4; ++u)
      for (int v = 0; v < 4; ++v) {
        const T* src = col + (int64_t(c) * 16 + u * 4 + v) * hw;
        const int i0 = std::max(0, 1 - u), i1 = std::min(H, H + 1 - u);
        const int j0 = std::max(0, 1 - v), j1 = std::min(W, W + 1 - v);
        for (int i = i0; i < i1; ++i) {
          T* dst = dx + (int64_t(c) * H + i + u - 1) * W + (j0 + v - 1);
          const T* s = src + int64_t(i) * W + j0;
          for (int j = 0; j < j1 - j0; ++j) dst[j] += s[j];
        }
      }
}

// x: [N,C,H,W], w: [K,C,4,4] -> [N,K,H,W]; no bias (batchnorm follows)
template <class T>
Tensor<T> conv2d(Ctx<T>& cx, const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(2) != 4 || w.dim(3) != 4)
    throw DimensionError("conv2d: need x [N,C,H,W] and w [K,C,4,4], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (x.dim(1) != w.dim(1))
    throw DimensionError("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                         " vs kernel " + shape_str(w.shape()));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), k = w.dim(0);
  const int64_t hw = int64_t(h) * wd;
  const int ck = c * 16;
  auto out = Tensor<T>::zeros({n, k, h, wd});
  {
    std::vector<T> col(size_t(ck) * hw);
    CMapM<T> wm(w.data(), k, ck);
    for (int i = 0; i < n; ++i) {
      im2col_4x4(x.data() + int64_t(i) * c * hw, c, h, wd, col.data());
      CMapM<T> cm(col.data(), ck, hw);
      MapM<T> om(out.data() + int64_t(i) * k * hw, k, hw);
      om.noalias() = wm * cm;
    }
  }
  if (cx.g && (x.needs_grad() || w.needs_grad())) {
    out.storage()->needs_grad = true;
    auto sx = x.storage(), sw = w.storage(), so = out.storage();
    out.node = cx.g->emit({x.node, w.node}, [sx, sw, so, n, c, h, wd, k, hw, ck] {
      if (so->g.empty()) return;
      std::vector<T> col(size_t(ck) * hw);
      for (int i = 0; i < n; ++i) {
        CMapM<T> dy(so->g.data() + int64_t(i) * k * hw, k, hw);
        if (sw->needs_grad) {
          sw->ensure_grad();
          im2col_4x4(sx->v.data() + int64_t(i) * c * hw, c, h, wd, col.data());
          CMapM<T> cm(col.data(), ck, hw);
          MapM<T> dw(sw->g.data(), k, ck);
          dw.noalias() += dy * cm.transpose();
        }
        if (sx->needs_grad) {
          sx->ensure_grad();
          CMapM<T> wm(sw->v.data(), k, ck);
          MapM<T> dcol(col.data(), ck, hw);
          dcol.noalias() = wm.transpose() * dy;
          col2im_4x4_add(col.data(), c, h, wd,
                         sx->g.data() + int64_t(i) * c * hw);
        }
      }
    });
  }
  return out;
}

// ------------------------------------------------------------- maxpool2d

template <class T>
Tensor<T> maxpool2d(Ctx<T>& cx, const Tensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("maxpool2d: need [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2)
    throw DimensionError("maxpool2d: odd spatial extent " + shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  auto out = Tensor<T>::zeros({n, c, oh, ow});
  auto idx = std::make_shared<std::vector<int64_t>>(size_t(out.numel()));
  int64_t t = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const T* plane = x.data() + (int64_t(i) * c + ch) * h * w;
      const int64_t base = (int64_t(i) * c + ch) * h * w;
      for (int r = 0; r < oh; ++r)
        for (int q = 0; q < ow; ++q, ++t) {
          // first occurrence in row-major scan order wins ties
          int best = (2 * r) * w + 2 * q;
          T bv = plane[best];
          const int cand[3] = {(2 * r) * w + 2 * q + 1, (2 * r + 1) * w + 2 * q,
                               (2 * r + 1) * w + 2 * q + 1};
          for (int cc : cand)
            if (plane[cc] > bv) {
              bv = plane[cc];
              best = cc;
            }
          out.data()[t] = bv;
          (*idx)[size_t(t)] = base + best;
        }
    }
  if (cx.g && x.needs_grad()) {
    out.storage()->needs_grad = true;
    auto sx = x.storage(), so = out.storage();
    out.node = cx.g->emit({x.node}, [sx, so, idx] {
      if (so->g.empty()) return;
      sx->ensure_grad();
      for (size_t i = 0; i < idx->size(); ++i)
        sx->g[size_t((*idx)[i])] += so->g[i];
    });
  }
  return out;
}

// ----------------------------------------------------------- batchnorm2d

template <class T>
struct BnStats {
  Tensor<T> mean, var;  // running statistics, [C]
  bool has_stats = false;
};

template <class T>
Tensor<T> batchnorm2d(Ctx<T>& cx, const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BnStats<T>& stats,
                      T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.rank() != 4) throw DimensionError("batchnorm2d: need [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.numel() != c || beta.numel() != c)
    throw DimensionError("batchnorm2d: gamma/beta extent != channels");
  const int64_t hw = int64_t(h) * w;
  const int64_t m = int64_t(n) * hw;  // elements per channel
  auto out = Tensor<T>::zeros(x.shape());

  auto channel_at = [&](const T* p, int i, int ch) {
    return p + (int64_t(i) * c + ch) * hw;
  };

  if (cx.mode == Mode::train) {
    std::vector<T> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
    auto xhat = std::make_shared<std::vector<T>>(size_t(x.numel()));
    for (int ch = 0; ch < c; ++ch) {
      double s = 0;
      for (int i = 0; i < n; ++i) {
        const T* p = channel_at(x.data(), i, ch);
        for (int64_t j = 0; j < hw; ++j) s += double(p[j]);
      }
      const double mu = s / double(m);
      double sv = 0;
      for (int i = 0; i < n; ++i) {
        const T* p = channel_at(x.data(), i, ch);
        for (int64_t j = 0; j < hw; ++j) {
          const double d = double(p[j]) - mu;
          sv += d * d;
        }
      }
      const double var = sv / double(m);  // biased, also for running stats
      mean[size_t(ch)] = T(mu);
      inv_std[size_t(ch)] = T(1.0 / std::sqrt(var + double(eps)));
      stats.mean.data()[ch] =
          (T(1) - momentum) * stats.mean.data()[ch] + momentum * T(mu);
      stats.var.data()[ch] =
          (T(1) - momentum) * stats.var.data()[ch] + momentum * T(var);
    }
    stats.has_stats = true;
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const T* p = channel_at(x.data(), i, ch);
        T* q = const_cast<T*>(channel_at(out.data(), i, ch));
        T* xh = xhat->data() + (int64_t(i) * c + ch) * hw;
        const T g = gamma.data()[ch], b = beta.data()[ch];
        const T mu = mean[size_t(ch)], is = inv_std[size_t(ch)];
        for (int64_t j = 0; j < hw; ++j) {
          xh[j] = (p[j] - mu) * is;
          q[j] = g * xh[j] + b;
        }
      }
    if (cx.g && (x.needs_grad() || gamma.needs_grad() || beta.needs_grad())) {
      out.storage()->needs_grad = true;
      auto sx = x.storage(), sg = gamma.storage(), sb = beta.storage(),
           so = out.storage();
      const std::vector<T> istd = inv_std;
      out.node = cx.g->emit(
          {x.node, gamma.node, beta.node}, [sx, sg, sb, so, xhat, istd, n, c, hw, m] {
            if (so->g.empty()) return;
            // per channel: s1 = sum(dy), s2 = sum(dy * xhat)
            std::vector<double> s1(size_t(c), 0), s2(size_t(c), 0);
            for (int i = 0; i < n; ++i)
              for (int ch = 0; ch < c; ++ch) {
                const T* dy = so->g.data() + (int64_t(i) * c + ch) * hw;
                const T* xh = xhat->data() + (int64_t(i) * c + ch) * hw;
                double a = 0, b = 0;
                for (int64_t j = 0; j < hw; ++j) {
                  a += double(dy[j]);
                  b += double(dy[j]) * double(xh[j]);
                }
                s1[size_t(ch)] += a;
                s2[size_t(ch)] += b;
              }
            if (sg->needs_grad) {
              sg->ensure_grad();
              for (int ch = 0; ch < c; ++ch) sg->g[size_t(ch)] += T(s2[size_t(ch)]);
            }
            if (sb->needs_grad) {
              sb->ensure_grad();
              for (int ch = 0; ch < c; ++ch) sb->g[size_t(ch)] += T(s1[size_t(ch)]);
            }
            if (sx->needs_grad) {
              sx->ensure_grad();
              for (int i = 0; i < n; ++i)
                for (int ch = 0; ch < c; ++ch) {
                  const T* dy = so->g.data() + (int64_t(i) * c + ch) * hw;
                  const T* xh = xhat->data() + (int64_t(i) * c + ch) * hw;
                  T* dx = sx->g.data() + (int64_t(i) * c + ch) * hw;
                  const T scale = sg->v[size_t(ch)] * istd[size_t(ch)] / T(m);
                  const T a = T(s1[size_t(ch)]), b = T(s2[size_t(ch)]);
                  for (int64_t j = 0; j < hw; ++j)
                    dx[j] += scale * (T(m) * dy[j] - a - xh[j] * b);
                }
            }
          });
    }
    return out;
  }

  // eval mode: normalize with running statistics (must exist)
  if (!stats.has_stats)
    throw StateError("batchnorm2d: eval mode before any running statistics "
                     "were populated (train first or load a checkpoint)");
  std::vector<T> inv_std(static_cast<size_t>(c));
  for (int ch = 0; ch < c; ++ch)
    inv_std[size_t(ch)] =
        T(1.0 / std::sqrt(double(stats.var.data()[ch]) + double(eps)));
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const T* p = channel_at(x.data(), i, ch);
      T* q = const_cast<T*>(channel_at(out.data(), i, ch));
      const T g = gamma.data()[ch], b = beta.data()[ch];
      const T mu = stats.mean.data()[ch], is = inv_std[size_t(ch)];
      for (int64_t j = 0; j < hw; ++j) q[j] = g * (p[j] - mu) * is + b;
    }
  if (cx.g && (x.needs_grad() || gamma.needs_grad() || beta.needs_grad())) {
    // running stats are constants here, so the op is affine per channel
    out.storage()->needs_grad = true;
    auto sx = x.storage(), sg = gamma.storage(), sb = beta.storage(),
         so = out.storage();
    const std::vector<T> istd = inv_std;
    std::vector<T> rmean(stats.mean.vec());
    out.node = cx.g->emit(
        {x.node, gamma.node, beta.node}, [sx, sg, sb, so, istd, rmean, n, c, hw] {
          if (so->g.empty()) return;
          for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
              const T* dy = so->g.data() + (int64_t(i) * c + ch) * hw;
              const T* xv = sx->v.data() + (int64_t(i) * c + ch) * hw;
              const T is = istd[size_t(ch)], mu = rmean[size_t(ch)];
              if (sx->needs_grad) {
                sx->ensure_grad();
                T* dx = sx->g.data() + (int64_t(i) * c + ch) * hw;
                const T gs = sg->v[size_t(ch)] * is;
                for (int64_t j = 0; j < hw; ++j) dx[j] += gs * dy[j];
              }
              if (sg->needs_grad) {
                sg->ensure_grad();
                double a = 0;
                for (int64_t j = 0; j < hw; ++j)
                  a += double(dy[j]) * double((xv[j] - mu) * is);
                sg->g[size_t(ch)] += T(a);
              }
              if (sb->needs_grad) {
                sb->ensure_grad();
                double a = 0;
                for (int64_t j = 0; j < hw; ++j) a += double(dy[j]);
                sb->g[size_t(ch)] += T(a);
              }
            }
        });
  }
  return out;
}

// ------------------------------------------- softmax cross entropy (mean)

template <class T>
Tensor<T> softmax_cross_entropy(Ctx<T>& cx, const Tensor<T>& logits,
                                const std::vector<int>& labels) {
  if (logits.rank() != 2) throw DimensionError("softmax_cross_entropy: need [N,C]");
  const int n = logits.dim(0), c = logits.dim(1);
  if (int(labels.size()) != n)
    throw ArgumentError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                        " labels for batch of " + std::to_string(n));
  for (int i = 0; i < n; ++i)
    if (labels[size_t(i)] < 0 || labels[size_t(i)] >= c)
      throw ArgumentError("softmax_cross_entropy: label " +
                          std::to_string(labels[size_t(i)]) + " at row " +
                          std::to_string(i) + " outside [0," + std::to_string(c) +
                          ")");
  auto probs = std::make_shared<std::vector<T>>(size_t(logits.numel()));
  double loss = 0;
  for (int i = 0; i < n; ++i) {
    const T* z = logits.data() + int64_t(i) * c;
    T zmax = z[0];
    for (int j = 1; j < c; ++j) zmax = std::max(zmax, z[j]);
    double se = 0;
    for (int j = 0; j < c; ++j) se += std::exp(double(z[j] - zmax));
    const double lse = double(zmax) + std::log(se);
    for (int j = 0; j < c; ++j)
      (*probs)[size_t(int64_t(i) * c + j)] = T(std::exp(double(z[j]) - lse));
    loss += lse - double(z[labels[size_t(i)]]);
  }
  auto out = Tensor<T>::from_vec({1}, {T(loss / n)});
  if (cx.g && logits.needs_grad()) {
    out.storage()->needs_grad = true;
    auto sl = logits.storage(), so = out.storage();
    auto lab = labels;
    out.node = cx.g->emit({logits.node}, [sl, so, probs, lab, n, c] {
      if (so->g.empty()) return;
      sl->ensure_grad();
      const T gscale = so->g[0] / T(n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
          T d = (*probs)[size_t(int64_t(i) * c + j)];
          if (j == lab[size_t(i)]) d -= T(1);
          sl->g[size_t(int64_t(i) * c + j)] += gscale * d;
        }
    });
  }
  return out;
}

// ------------------------------------------------- forward-only utilities

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows: need [N,C]");
  const int n = logits.dim(0), c = logits.dim(1);
  auto out = Tensor<T>::zeros(logits.shape());
  for (int i = 0; i < n; ++i) {
    const T* z = logits.data() + int64_t(i) * c;
    T* o = out.data() + int64_t(i) * c;
    T zmax = z[0];
    for (int j = 1; j < c; ++j) zmax = std::max(zmax, z[j]);
    double se = 0;
    for (int j = 0; j < c; ++j) se += std::exp(double(z[j] - zmax));
    for (int j = 0; j < c; ++j) o[j] = T(std::exp(double(z[j] - zmax)) / se);
  }
  return out;
}

template <class T>
std::vector<int> argmax_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("argmax_rows: need [N,C]");
  const int n = x.dim(0), c = x.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const T* row = x.data() + int64_t(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[size_t(i)] = best;
  }
  return out;
}

}  // namespace cseg
