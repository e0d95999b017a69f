#pragma once
// 8-bit RGB raster utilities: PNG I/O, exact box-filter pyramid downsampling,
// crops, the 8 dihedral transforms, and small float-space helpers used by
// alignment diagnostics.

#include <cstdint>
#include <string>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

struct ImageU8 {
  int w = 0, h = 0;
  std::vector<uint8_t> px;  // h*w*3, row-major, interleaved RGB

  ImageU8() = default;
  ImageU8(int width, int height, uint8_t fill = 0)
      : w(width), h(height), px(size_t(width) * size_t(height) * 3, fill) {}

  bool empty() const { return px.empty(); }
  uint8_t& at(int y, int x, int c) {
    return px[(size_t(y) * size_t(w) + size_t(x)) * 3 + size_t(c)];
  }
  uint8_t at(int y, int x, int c) const {
    return px[(size_t(y) * size_t(w) + size_t(x)) * 3 + size_t(c)];
  }
  bool operator==(const ImageU8& o) const {
    return w == o.w && h == o.h && px == o.px;
  }
};

// PNG round trip (RGB8; palette/gray/alpha inputs converted on read).
// Encoding uses fixed settings so identical pixels produce identical bytes.
ImageU8 read_png(const std::string& path);
void write_png(const ImageU8& img, const std::string& path);

// Exact 2x box downsample: out(y,x) = (4 source pixels + 2) >> 2.
inline ImageU8 box_downsample2(const ImageU8& in) {
  if (in.w % 2 || in.h % 2)
    throw ArgumentError("box_downsample2: extents must be even, got " +
                        std::to_string(in.w) + "x" + std::to_string(in.h));
  ImageU8 out(in.w / 2, in.h / 2);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int c = 0; c < 3; ++c) {
        const unsigned s = unsigned(in.at(2 * y, 2 * x, c)) +
                           in.at(2 * y, 2 * x + 1, c) +
                           in.at(2 * y + 1, 2 * x, c) +
                           in.at(2 * y + 1, 2 * x + 1, c);
        out.at(y, x, c) = uint8_t((s + 2) >> 2);
      }
  return out;
}

inline ImageU8 crop(const ImageU8& in, int x0, int y0, int cw, int ch) {
  if (x0 < 0 || y0 < 0 || cw < 1 || ch < 1 || x0 + cw > in.w || y0 + ch > in.h)
    throw ArgumentError("crop: window " + std::to_string(cw) + "x" +
                        std::to_string(ch) + "@(" + std::to_string(x0) + "," +
                        std::to_string(y0) + ") exceeds " +
                        std::to_string(in.w) + "x" + std::to_string(in.h));
  ImageU8 out(cw, ch);
  for (int y = 0; y < ch; ++y)
    std::copy_n(&in.px[(size_t(y0 + y) * size_t(in.w) + size_t(x0)) * 3],
                size_t(cw) * 3, &out.px[size_t(y) * size_t(cw) * 3]);
  return out;
}

// The 8 square symmetries. t in [0,8): low 2 bits rotate by 90° steps
// clockwise (top-left corner moves toward top-right), bit 2 mirrors
// horizontally first. t=0 is identity; t=4 is a horizontal flip; t=6 is a
// vertical flip.
inline ImageU8 dihedral(const ImageU8& in, int t) {
  if (in.w != in.h) throw ArgumentError("dihedral: image must be square");
  if (t < 0 || t > 7)
    throw ArgumentError("dihedral: transform index " + std::to_string(t) +
                        " outside [0,8)");
  const int n = in.w;
  ImageU8 out(n, n);
  const bool mirror = t & 4;
  const int rot = t & 3;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      int sx = mirror ? n - 1 - x : x, sy = y;
      int rx = sx, ry = sy;
      switch (rot) {
        case 0: break;
        case 1: rx = n - 1 - sy; ry = sx; break;
        case 2: rx = n - 1 - sx; ry = n - 1 - sy; break;
        case 3: rx = sy; ry = n - 1 - sx; break;
      }
      for (int c = 0; c < 3; ++c) out.at(ry, rx, c) = in.at(y, x, c);
    }
  return out;
}

inline std::vector<double> to_gray(const ImageU8& in) {
  std::vector<double> g(size_t(in.w) * size_t(in.h));
  for (size_t i = 0; i < g.size(); ++i)
    g[i] = (double(in.px[3 * i]) + in.px[3 * i + 1] + in.px[3 * i + 2]) / 3.0;
  return g;
}

// Bilinear 2x upsample of a grayscale field (used by alignment diagnostics).
inline std::vector<double> upsample2_bilinear(const std::vector<double>& in,
                                              int w, int h) {
  std::vector<double> out(size_t(2 * w) * size_t(2 * h));
  for (int y = 0; y < 2 * h; ++y)
    for (int x = 0; x < 2 * w; ++x) {
      const double sy = (y + 0.5) / 2.0 - 0.5, sx = (x + 0.5) / 2.0 - 0.5;
      int y0 = int(std::floor(sy)), x0 = int(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      const auto cl = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
      const int y1 = cl(y0 + 1, h), x1 = cl(x0 + 1, w);
      y0 = cl(y0, h);
      x0 = cl(x0, w);
      out[size_t(y) * size_t(2 * w) + size_t(x)] =
          (1 - fy) * ((1 - fx) * in[size_t(y0) * size_t(w) + size_t(x0)] +
                      fx * in[size_t(y0) * size_t(w) + size_t(x1)]) +
          fy * ((1 - fx) * in[size_t(y1) * size_t(w) + size_t(x0)] +
                fx * in[size_t(y1) * size_t(w) + size_t(x1)]);
    }
  return out;
}

inline double pearson(const std::vector<double>& a,
                      const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw ArgumentError("pearson: mismatched or empty inputs");
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= double(a.size());
  mb /= double(b.size());
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace cseg
