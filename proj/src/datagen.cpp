#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

#include "cseg/data.hpp"

namespace cseg {

namespace {

// Separable box blur with edge replication, one horizontal + one vertical
// pass per call.  Three calls approximate a Gaussian well enough for smooth
// region fields.
void box_blur(std::vector<float>& f, int n, int width) {
  if (width < 3 || width % 2 == 0)
    throw ArgumentError("box_blur: width must be odd and >= 3");
  const int r = width / 2;
  std::vector<float> line(static_cast<size_t>(n));
  std::vector<float> acc(static_cast<size_t>(n) + 1, 0.0f);
  // horizontal
  for (int y = 0; y < n; ++y) {
    float* row = f.data() + size_t(y) * size_t(n);
    double s = 0.0;
    for (int x = 0; x < n; ++x) {
      s += row[x];
      acc[size_t(x) + 1] = float(s);
    }
    for (int x = 0; x < n; ++x) {
      const int lo = std::max(0, x - r), hi = std::min(n - 1, x + r);
      // replicate edges: pad by repeating the border value
      float sum = acc[size_t(hi) + 1] - acc[size_t(lo)];
      sum += float(r - (x - lo)) * row[0];
      sum += float(r - (hi - x)) * row[n - 1];
      line[size_t(x)] = sum / float(width);
    }
    std::copy(line.begin(), line.end(), row);
  }
  // vertical
  std::vector<float> col(static_cast<size_t>(n));
  for (int x = 0; x < n; ++x) {
    double s = 0.0;
    for (int y = 0; y < n; ++y) {
      col[size_t(y)] = f[size_t(y) * size_t(n) + size_t(x)];
      s += col[size_t(y)];
      acc[size_t(y) + 1] = float(s);
    }
    for (int y = 0; y < n; ++y) {
      const int lo = std::max(0, y - r), hi = std::min(n - 1, y + r);
      float sum = acc[size_t(hi) + 1] - acc[size_t(lo)];
      sum += float(r - (y - lo)) * col[0];
      sum += float(r - (hi - y)) * col[size_t(n) - 1];
      f[size_t(y) * size_t(n) + size_t(x)] = sum / float(width);
    }
  }
}

std::vector<float> noise_field(Rng& rng, int n) {
  std::vector<float> f(size_t(n) * size_t(n));
  for (auto& v : f) v = float(rng.normal());
  return f;
}

void zscore(std::vector<float>& f) {
  double m = 0.0;
  for (float v : f) m += v;
  m /= double(f.size());
  double s2 = 0.0;
  for (float v : f) s2 += (v - m) * (v - m);
  const double sd = std::sqrt(s2 / double(f.size()));
  const float inv = sd > 0 ? float(1.0 / sd) : 0.0f;
  for (auto& v : f) v = (v - float(m)) * inv;
}

float quantile_of(std::vector<float> vals, double q) {
  const size_t k = size_t(q * double(vals.size() - 1));
  std::nth_element(vals.begin(), vals.begin() + long(k), vals.end());
  return vals[k];
}

struct Component {
  int cls = 0;                 // 2 or 3
  int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
  bool lattice_hex = false;    // latent coarse attribute
  float orient = 1.0f;         // +1 = 45°, -1 = 135° stripes
  float phase = 0.0f;
  float ax = 0.0f, ay = 0.0f;  // lattice anchor
};

}  // namespace

SyntheticSlide generate_slide(uint64_t seed, int slide_index,
                              const GenParams& p) {
  if (p.base_size < 1024)
    throw ArgumentError("generate_slide: base size must be >= 1024, got " +
                        std::to_string(p.base_size));
  if (p.base_size % 8 != 0)
    throw ArgumentError("generate_slide: base size must be a multiple of 8");

  const int n = p.base_size;
  const size_t npx = size_t(n) * size_t(n);

  char idbuf[32];
  std::snprintf(idbuf, sizeof idbuf, "slide%02d", slide_index);
  SyntheticSlide slide;
  slide.slide_id = idbuf;
  slide.seed = seed;
  slide.base_size = n;

  Rng rng = Rng(seed).stream(std::string("slide/") + idbuf);

  // --- scalar fields (draw order is part of the determinism contract) ---
  std::vector<float> wn = noise_field(rng, n);  // fine white noise, reused raw
  std::vector<float> u = noise_field(rng, n);   // region field
  std::vector<float> v = noise_field(rng, n);   // benign/tumour split field
  std::vector<float> mottle = noise_field(rng, n);
  std::vector<float> stex = noise_field(rng, n);
  std::vector<float> etex = noise_field(rng, n);
  for (int i = 0; i < 3; ++i) box_blur(u, n, p.region_blur);
  for (int i = 0; i < 3; ++i) box_blur(v, n, p.pair_blur);
  for (int i = 0; i < 3; ++i) box_blur(mottle, n, p.mottle_blur);
  for (int i = 0; i < 3; ++i) box_blur(stex, n, p.stroma_tex_blur);
  for (int i = 0; i < 3; ++i) box_blur(etex, n, p.epi_tex_blur);
  zscore(u);
  zscore(v);
  zscore(mottle);
  zscore(stex);
  zscore(etex);

  // --- label map from per-slide quantile thresholds ---
  slide.label_map.assign(npx, 0);
  const float t_lumen = quantile_of(u, p.lumen_frac);
  const float t_stroma = quantile_of(u, p.lumen_frac + p.stroma_frac);
  std::vector<float> v_epi;
  v_epi.reserve(npx / 2);
  for (size_t i = 0; i < npx; ++i)
    if (u[i] >= t_stroma) v_epi.push_back(v[i]);
  const float t_pair = quantile_of(std::move(v_epi), 0.5);
  for (size_t i = 0; i < npx; ++i) {
    if (u[i] < t_lumen)
      slide.label_map[i] = 0;
    else if (u[i] < t_stroma)
      slide.label_map[i] = 1;
    else
      slide.label_map[i] = v[i] < t_pair ? 2 : 3;
  }

  // --- connected components of the two epithelial classes ---
  std::vector<int32_t> comp(npx, -1);
  std::vector<Component> comps;
  {
    std::vector<int32_t> stack;
    for (size_t start = 0; start < npx; ++start) {
      if (slide.label_map[start] < 2 || comp[start] != -1) continue;
      const int cls = slide.label_map[start];
      const int32_t id = int32_t(comps.size());
      comps.push_back(Component{});
      comps.back().cls = cls;
      stack.assign(1, int32_t(start));
      comp[start] = id;
      while (!stack.empty()) {
        const int32_t cur = stack.back();
        stack.pop_back();
        const int y = int(cur / n), x = int(cur % n);
        Component& c = comps.back();
        c.x0 = std::min(c.x0, x);
        c.y0 = std::min(c.y0, y);
        c.x1 = std::max(c.x1, x);
        c.y1 = std::max(c.y1, y);
        const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
        for (int d = 0; d < 4; ++d) {
          const int nx = x + dx[d], ny = y + dy[d];
          if (nx < 0 || ny < 0 || nx >= n || ny >= n) continue;
          const size_t ni = size_t(ny) * size_t(n) + size_t(nx);
          if (comp[ni] == -1 && slide.label_map[ni] == cls) {
            comp[ni] = id;
            stack.push_back(int32_t(ni));
          }
        }
      }
    }
  }

  // Latent attributes: the lattice bit is 50/50 per region; the stripe
  // orientation is tied to it through the class so that each attribute's
  // marginal is identical for classes 2 and 3.
  constexpr float kTau = 2.0f * std::numbers::pi_v<float>;
  for (auto& c : comps) {
    c.lattice_hex = rng.bernoulli(0.5);
    const bool stripe_135 = c.lattice_hex != (c.cls == 3);
    c.orient = stripe_135 ? -1.0f : 1.0f;
    c.phase = float(rng.uniform()) * kTau;
    c.ax = float(rng.uniform()) * float(p.ring_period_square);
    c.ay = float(rng.uniform()) * float(p.ring_period_square);
  }

  // --- ring inclusions on the per-region lattice ---
  std::vector<uint8_t> ring(npx, 0);
  const double a_sq = p.ring_period_square;
  const double a_hex = a_sq * std::sqrt(2.0 / std::sqrt(3.0));
  const int ro = p.ring_outer, rh = p.ring_hole;
  for (size_t ci = 0; ci < comps.size(); ++ci) {
    const Component& c = comps[ci];
    if (c.x1 < 0) continue;
    const double ax = double(c.ax), ay = double(c.ay);
    const double step_x = c.lattice_hex ? a_hex : a_sq;
    const double step_y = c.lattice_hex ? a_hex * std::sqrt(3.0) / 2.0 : a_sq;
    const int j0 = int(std::floor((c.y0 - ay) / step_y)) - 1;
    const int j1 = int(std::ceil((c.y1 - ay) / step_y)) + 1;
    for (int j = j0; j <= j1; ++j) {
      const double row_shift =
          (c.lattice_hex && (j & 1)) ? a_hex / 2.0 : 0.0;
      const int i0 = int(std::floor((c.x0 - ax - row_shift) / step_x)) - 1;
      const int i1 = int(std::ceil((c.x1 - ax - row_shift) / step_x)) + 1;
      for (int i = i0; i <= i1; ++i) {
        const double jx = (rng.uniform() * 2.0 - 1.0) * p.ring_jitter;
        const double jy = (rng.uniform() * 2.0 - 1.0) * p.ring_jitter;
        const int sx = int(std::lround(ax + i * step_x + row_shift + jx));
        const int sy = int(std::lround(ay + j * step_y + jy));
        if (sx < 0 || sy < 0 || sx >= n || sy >= n) continue;
        const size_t si = size_t(sy) * size_t(n) + size_t(sx);
        if (comp[si] != int32_t(ci)) continue;
        for (int yy = std::max(0, sy - ro); yy <= std::min(n - 1, sy + ro); ++yy)
          for (int xx = std::max(0, sx - ro); xx <= std::min(n - 1, sx + ro);
               ++xx) {
            const int d2 = (yy - sy) * (yy - sy) + (xx - sx) * (xx - sx);
            if (d2 <= ro * ro && d2 > rh * rh) {
              const size_t pi = size_t(yy) * size_t(n) + size_t(xx);
              if (comp[pi] == int32_t(ci)) ring[pi] = 1;
            }
          }
      }
    }
  }

  // --- compose the base image ---
  ImageU8 base(n, n);
  const float half_pi = std::numbers::pi_v<float> / 2.0f;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const size_t i = size_t(y) * size_t(n) + size_t(x);
      const int cls = slide.label_map[i];
      float r, g, b;
      if (ring[i]) {
        r = p.lumen_color[0];
        g = p.lumen_color[1];
        b = p.lumen_color[2];
        const float fine = 2.0f * wn[i];
        r += fine;
        g += fine;
        b += fine;
      } else if (cls == 0) {
        r = p.lumen_color[0];
        g = p.lumen_color[1];
        b = p.lumen_color[2];
        const float fine = float(p.lumen_noise) * wn[i];
        r += fine;
        g += fine;
        b += fine;
      } else if (cls == 1) {
        r = p.stroma_color[0];
        g = p.stroma_color[1];
        b = p.stroma_color[2];
        const float fine = float(p.stroma_tex_amp) * stex[i];
        r += fine;
        g += fine;
        b += fine;
      } else {
        const Component& c = comps[size_t(comp[i])];
        const float stripe =
            float(p.grating_amp) *
                std::cos(half_pi * (float(x) + c.orient * float(y)) + c.phase) +
            float(p.epi_tex_amp) * etex[i];
        r = p.epi_color[0] + stripe;
        g = p.epi_color[1] + stripe;
        b = p.epi_color[2] + stripe;
      }
      const float lum = float(p.mottle_amp) * mottle[i];
      r += lum;
      g += lum;
      b += lum;
      const auto clamp_u8 = [](float v) {
        return uint8_t(v < 0.0f ? 0 : (v > 255.0f ? 255 : int(v + 0.5f)));
      };
      base.at(y, x, 0) = clamp_u8(r);
      base.at(y, x, 1) = clamp_u8(g);
      base.at(y, x, 2) = clamp_u8(b);
    }
  }
  for (size_t i = 0; i < npx; ++i)
    if (ring[i]) slide.label_map[i] = 0;

  // --- pyramid, built by repeated exact box halving ---
  slide.levels[3] = std::move(base);
  slide.levels[2] = box_downsample2(slide.levels[3]);
  slide.levels[1] = box_downsample2(slide.levels[2]);
  slide.levels[0] = box_downsample2(slide.levels[1]);
  return slide;
}

std::vector<SyntheticSlide> generate_slides(int n_slides, int size,
                                            uint64_t seed) {
  if (n_slides < 1) throw ArgumentError("generate_slides: need n_slides >= 1");
  GenParams p;
  p.base_size = size;
  std::vector<SyntheticSlide> out;
  out.reserve(size_t(n_slides));
  for (int i = 0; i < n_slides; ++i) out.push_back(generate_slide(seed, i, p));
  return out;
}

}  // namespace cseg
