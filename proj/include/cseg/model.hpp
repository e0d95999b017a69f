#pragma once
// The architecture zoo.
//
// Common vocabulary: a "stream" is 4 ConvBlocks (3->64->128->256->512) on a
// 64x64 input followed by FC1 (8192->512), relu and dropout, yielding one
// 512-d feature vector per patch.  The architectures differ in how many
// streams exist, which scales feed them, and how per-scale features fuse:
//
//   A-D  single scale (A lowest magnification ... D highest), one stream
//   E    early fusion: all four scales stacked to 12 channels, one stream
//   F    shared stream over all four scales, feature concat (2048)
//   G    shared stream + LSTM stepped over the scale sequence; classifier
//        reads the concat of all 4 hidden states (2048)
//   H    single stream of 8 ConvBlocks on the 512x512 high-res patch
//   I    four separate streams, feature concat
//   J    four separate streams + LSTM as in G
//   G_BIDIR  G plus a second, independently parameterized LSTM scanning the
//        scales in reverse; all 8 hidden states concat to 4096
//
// After fusion every architecture ends with FC2 (->512), relu, dropout and
// a linear 4-way classifier.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cseg/layers.hpp"

namespace cseg {

enum class Arch { A, B, C, D, E, F, G, H, I, J, G_BIDIR };
enum class ScaleOrder { low_to_high, high_to_low, random_fixed };

inline const char* arch_name(Arch a) {
  switch (a) {
    case Arch::A: return "A";
    case Arch::B: return "B";
    case Arch::C: return "C";
    case Arch::D: return "D";
    case Arch::E: return "E";
    case Arch::F: return "F";
    case Arch::G: return "G";
    case Arch::H: return "H";
    case Arch::I: return "I";
    case Arch::J: return "J";
    case Arch::G_BIDIR: return "G_BIDIR";
  }
  return "?";
}

inline Arch parse_arch(const std::string& s) {
  for (int i = 0; i <= int(Arch::G_BIDIR); ++i)
    if (s == arch_name(Arch(i))) return Arch(i);
  throw ArgumentError("unknown architecture id '" + s +
                      "' (expected A..J or G_BIDIR)");
}

inline const char* order_name(ScaleOrder o) {
  switch (o) {
    case ScaleOrder::low_to_high: return "low_to_high";
    case ScaleOrder::high_to_low: return "high_to_low";
    case ScaleOrder::random_fixed: return "random_fixed";
  }
  return "?";
}

inline ScaleOrder parse_order(const std::string& s) {
  for (int i = 0; i <= int(ScaleOrder::random_fixed); ++i)
    if (s == order_name(ScaleOrder(i))) return ScaleOrder(i);
  throw ArgumentError("unknown scale order '" + s + "'");
}

// Scale index convention: 0 = lowest magnification (widest field of view),
// 3 = highest.  "random_fixed" is the documented fixed permutation
// mid, low, high, mid-high — i.e. scales (1,0,3,2).
inline std::array<int, 4> order_perm(ScaleOrder o) {
  switch (o) {
    case ScaleOrder::low_to_high: return {0, 1, 2, 3};
    case ScaleOrder::high_to_low: return {3, 2, 1, 0};
    case ScaleOrder::random_fixed: return {1, 0, 3, 2};
  }
  return {0, 1, 2, 3};
}

template <class T>
struct Model {
  Arch arch = Arch::A;
  ScaleOrder order = ScaleOrder::low_to_high;
  int input_size = 64;    // spatial extent of the consumed patches (H: 512)
  int scale_index = -1;   // A-D only: which scale feeds the stream
  double dropout_p = 0.5;

  // streams[0] is the only stream for A-H (shared across scales in E-G);
  // I and J carry four.  fc1s parallels streams.
  std::vector<std::vector<ConvBlock<T>>> streams;
  std::vector<Dense<T>> fc1s;
  Dense<T> fc2, cls;
  LstmCell<T> lstm, lstm_rev;
  bool has_lstm = false, bidir = false;

  ParamRegistry<T> reg;

  bool uses_all_scales() const {
    return arch == Arch::E || arch == Arch::F || arch == Arch::G ||
           arch == Arch::I || arch == Arch::J || arch == Arch::G_BIDIR;
  }
  bool uses_hires() const { return arch == Arch::H; }

  std::vector<ConvBlock<T>*> all_blocks() {
    std::vector<ConvBlock<T>*> out;
    for (auto& s : streams)
      for (auto& b : s) out.push_back(&b);
    return out;
  }

  void set_bn_populated(bool v) {
    for (auto* b : all_blocks()) b->bn.has_stats = v;
  }

  // features of one stream for one 64x64-scale input
  Tensor<T> stream_features(Ctx<T>& cx, size_t stream_idx, const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& b : streams[stream_idx]) y = b.forward(cx, y);
    const int n = y.dim(0);
    y = reshape(cx, y, {n, int(y.numel() / n)});
    y = dropout(cx, relu_inplace(cx, fc1s[stream_idx].forward(cx, y)), dropout_p);
    return y;
  }

  Tensor<T> head(Ctx<T>& cx, const Tensor<T>& fused) {
    auto y = dropout(cx, relu_inplace(cx, fc2.forward(cx, fused)), dropout_p);
    return cls.forward(cx, y);
  }

  // scales: per-index 64x64 patches; an undefined tensor is rejected only if
  // the architecture needs that scale.  hires: 512x512 patch for H, may be
  // null otherwise.
  Tensor<T> forward(Ctx<T>& cx, const std::array<Tensor<T>, 4>& scales,
                    const Tensor<T>* hires = nullptr) {
    auto need = [&](int idx) -> const Tensor<T>& {
      const auto& t = scales[size_t(idx)];
      if (!t.defined())
        throw InputError(std::string("forward(") + arch_name(arch) +
                         "): missing scale" + std::to_string(idx) + " input");
      if (t.rank() != 4 || t.dim(1) != 3 || t.dim(2) != 64 || t.dim(3) != 64)
        throw InputError(std::string("forward(") + arch_name(arch) + "): scale" +
                         std::to_string(idx) + " has shape " +
                         shape_str(t.shape()) + ", expected [N,3,64,64]");
      return t;
    };

    switch (arch) {
      case Arch::A:
      case Arch::B:
      case Arch::C:
      case Arch::D: {
        return head(cx, stream_features(cx, 0, need(scale_index)));
      }
      case Arch::E: {
        std::vector<Tensor<T>> chans;
        for (int s = 0; s < 4; ++s) chans.push_back(need(s));
        return head(cx, stream_features(cx, 0, concat(cx, chans, 1)));
      }
      case Arch::F:
      case Arch::I: {
        std::vector<Tensor<T>> feats;
        for (int s = 0; s < 4; ++s)
          feats.push_back(
              stream_features(cx, arch == Arch::I ? size_t(s) : 0, need(s)));
        return head(cx, concat(cx, feats, 1));
      }
      case Arch::G:
      case Arch::J:
      case Arch::G_BIDIR: {
        std::array<Tensor<T>, 4> feats;
        for (int s = 0; s < 4; ++s)
          feats[size_t(s)] =
              stream_features(cx, arch == Arch::J ? size_t(s) : 0, need(s));
        const int n = feats[0].dim(0);
        const auto perm = order_perm(order);
        std::vector<Tensor<T>> hs;
        {
          auto h = Tensor<T>::zeros({n, lstm.hidden});
          auto c = Tensor<T>::zeros({n, lstm.hidden});
          for (int t = 0; t < 4; ++t) {
            auto [hn, cn] = lstm.step(cx, feats[size_t(perm[size_t(t)])], h, c);
            h = hn;
            c = cn;
            hs.push_back(h);
          }
        }
        if (bidir) {
          auto h = Tensor<T>::zeros({n, lstm_rev.hidden});
          auto c = Tensor<T>::zeros({n, lstm_rev.hidden});
          for (int t = 3; t >= 0; --t) {
            auto [hn, cn] =
                lstm_rev.step(cx, feats[size_t(perm[size_t(t)])], h, c);
            h = hn;
            c = cn;
            hs.push_back(h);
          }
        }
        return head(cx, concat(cx, hs, 1));
      }
      case Arch::H: {
        if (!hires || !hires->defined())
          throw InputError("forward(H): missing hires input");
        if (hires->rank() != 4 || hires->dim(1) != 3 || hires->dim(2) != 512 ||
            hires->dim(3) != 512)
          throw InputError("forward(H): hires has shape " +
                           shape_str(hires->shape()) + ", expected [N,3,512,512]");
        Tensor<T> y = *hires;
        for (auto& b : streams[0]) y = b.forward(cx, y);
        const int n = y.dim(0);
        y = reshape(cx, y, {n, int(y.numel() / n)});
        y = dropout(cx, relu_inplace(cx, fc1s[0].forward(cx, y)), dropout_p);
        return head(cx, y);
      }
    }
    throw ArgumentError("forward: unknown architecture");
  }

  int64_t count_params() const { return reg.count_trainable(); }
};

// Constructs layers and the registry; weights stay zero until init_params
// (or a checkpoint load) fills them.
template <class T>
Model<T> build_model(Arch arch, ScaleOrder order = ScaleOrder::low_to_high) {
  Model<T> m;
  m.arch = arch;
  m.order = order;

  auto add_stream = [&](const std::string& prefix, int in_ch, int n_blocks,
                        int fc_in) {
    std::vector<ConvBlock<T>> blocks;
    const int plan[8] = {64, 128, 256, 512, 512, 512, 512, 512};
    int in = in_ch;
    for (int i = 0; i < n_blocks; ++i) {
      ConvBlock<T> b;
      b.build(in, plan[i]);
      blocks.push_back(b);
      in = plan[i];
    }
    m.streams.push_back(std::move(blocks));
    Dense<T> fc;
    fc.build(fc_in, 512);
    m.fc1s.push_back(fc);
    size_t idx = m.streams.size() - 1;
    for (size_t i = 0; i < m.streams[idx].size(); ++i)
      m.streams[idx][i].reg(m.reg, prefix + ".b" + std::to_string(i + 1));
    m.fc1s[idx].reg(m.reg, prefix + ".fc1");
  };

  switch (arch) {
    case Arch::A:
    case Arch::B:
    case Arch::C:
    case Arch::D:
      m.scale_index = int(arch) - int(Arch::A);
      add_stream("stream", 3, 4, 512 * 4 * 4);
      m.fc2.build(512, 512);
      break;
    case Arch::E:
      add_stream("stream", 12, 4, 512 * 4 * 4);
      m.fc2.build(512, 512);
      break;
    case Arch::F:
      add_stream("stream", 3, 4, 512 * 4 * 4);
      m.fc2.build(4 * 512, 512);
      break;
    case Arch::G:
      add_stream("stream", 3, 4, 512 * 4 * 4);
      m.lstm.build(512, 512);
      m.lstm.reg(m.reg, "lstm");
      m.has_lstm = true;
      m.fc2.build(4 * 512, 512);
      break;
    case Arch::G_BIDIR:
      add_stream("stream", 3, 4, 512 * 4 * 4);
      m.lstm.build(512, 512);
      m.lstm.reg(m.reg, "lstm");
      m.lstm_rev.build(512, 512);
      m.lstm_rev.reg(m.reg, "lstm_rev");
      m.has_lstm = true;
      m.bidir = true;
      m.fc2.build(8 * 512, 512);
      break;
    case Arch::H:
      m.input_size = 512;
      add_stream("stream", 3, 8, 512 * 2 * 2);
      m.fc2.build(512, 512);
      break;
    case Arch::I:
      for (int s = 0; s < 4; ++s)
        add_stream("stream" + std::to_string(s), 3, 4, 512 * 4 * 4);
      m.fc2.build(4 * 512, 512);
      break;
    case Arch::J:
      for (int s = 0; s < 4; ++s)
        add_stream("stream" + std::to_string(s), 3, 4, 512 * 4 * 4);
      m.lstm.build(512, 512);
      m.lstm.reg(m.reg, "lstm");
      m.has_lstm = true;
      m.fc2.build(4 * 512, 512);
      break;
  }
  m.fc2.reg(m.reg, "fc2");
  m.cls.build(512, 4);
  m.cls.reg(m.reg, "cls");
  return m;
}

template <class T>
Model<T> build_and_init(Arch arch, Rng& rng,
                        ScaleOrder order = ScaleOrder::low_to_high) {
  auto m = build_model<T>(arch, order);
  init_params(m.reg, rng);
  return m;
}

// ------------------------------------------------------------- checkpoints

struct CkptMeta {
  uint64_t seed = 0;
  uint32_t epochs_run = 0;
  float best_val_loss = 0.0f;
};

// Binary format: "CSEG" magic, u32 version, u8 arch, u8 scale order, u8
// bn-stats-populated flag, u8 reserved, u64 seed, u32 epochs, f32 best val
// loss, u32 tensor count, then per tensor: u32 name length, name bytes, u32
// rank, u32 extents, raw little-endian f32 payload.  Tensors appear in
// registry order.
void save_checkpoint(const Model<float>& m, const std::string& path,
                     const CkptMeta& meta);
Model<float> load_checkpoint(const std::string& path, CkptMeta* meta = nullptr,
                             const Arch* expect_arch = nullptr);

}  // namespace cseg
