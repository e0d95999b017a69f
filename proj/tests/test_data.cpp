// Synthetic slide generation, pyramid consistency, patch extraction,
// augmentation, corruption, dataset persistence/ingestion, and batching.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "cseg/data.hpp"

using namespace cseg;
namespace fs = std::filesystem;

namespace {

constexpr int kTestSlideSize = 1024;
constexpr uint64_t kCorpusSeed = 2024;

// One shared batch of generated slides; built once, reused across cases.
const std::vector<SyntheticSlide>& corpus() {
  static const std::vector<SyntheticSlide> slides =
      generate_slides(28, kTestSlideSize, kCorpusSeed);
  return slides;
}

ImageU8 noisy_image(int n, uint64_t seed) {
  Rng rng(seed);
  ImageU8 img(n, n);
  for (auto& p : img.px) p = uint8_t(rng.bounded(256));
  return img;
}

// Slide with a hand-written label map and a pyramid built from `base`.
SyntheticSlide manual_slide(ImageU8 base, std::vector<uint8_t> labels,
                            const std::string& id = "manual") {
  SyntheticSlide s;
  s.slide_id = id;
  s.base_size = base.w;
  s.label_map = std::move(labels);
  s.levels[3] = std::move(base);
  for (int k = 2; k >= 0; --k)
    s.levels[size_t(k)] = box_downsample2(s.levels[size_t(k + 1)]);
  return s;
}

struct WindowStats {
  double mean = 0, sd = 0, lag1 = 0;
};

WindowStats window_stats(const std::vector<double>& g, int w, int x0, int y0,
                         int n) {
  std::vector<double> a, b;
  a.reserve(size_t(n) * size_t(n));
  double sum = 0, sum2 = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double v = g[size_t(y0 + y) * size_t(w) + size_t(x0 + x)];
      sum += v;
      sum2 += v * v;
      if (x + 1 < n) {
        a.push_back(v);
        b.push_back(g[size_t(y0 + y) * size_t(w) + size_t(x0 + x + 1)]);
      }
    }
  WindowStats st;
  const double cnt = double(n) * double(n);
  st.mean = sum / cnt;
  st.sd = std::sqrt(std::max(0.0, sum2 / cnt - st.mean * st.mean));
  st.lag1 = pearson(a, b);
  return st;
}

double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

std::string fresh_dir(const char* tag) {
  const fs::path p = fs::temp_directory_path() / tag;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

PatchGroup solid_group(const std::string& slide_id, int cx, int cy, int label,
                       bool with_hires, uint64_t seed) {
  PatchGroup g;
  g.slide_id = slide_id;
  g.cx = cx;
  g.cy = cy;
  g.label = label;
  for (int k = 0; k < kNumScales; ++k)
    g.scales[size_t(k)] = noisy_image(kPatchSize, seed + uint64_t(k));
  if (with_hires) g.hires = noisy_image(kHiresSize, seed + 99);
  return g;
}

}  // namespace

// --------------------------------------------------------------- utilities

TEST_CASE("box downsample averages 2x2 blocks with round-half-up") {
  ImageU8 img(4, 2);
  // channel 0 of the first block: 1,2,4,8 -> (15+2)>>2 = 4
  // second block: 0,0,0,1 -> (1+2)>>2 = 0;  255 everywhere on channel 2.
  const uint8_t c0[8] = {1, 2, 0, 0, 4, 8, 0, 1};
  for (int i = 0; i < 8; ++i) {
    img.px[size_t(i) * 3 + 0] = c0[i];
    img.px[size_t(i) * 3 + 1] = uint8_t(10 * (i + 1));
    img.px[size_t(i) * 3 + 2] = 255;
  }
  const ImageU8 out = box_downsample2(img);
  REQUIRE(out.w == 2);
  REQUIRE(out.h == 1);
  CHECK(out.at(0, 0, 0) == 4);
  CHECK(out.at(0, 1, 0) == 0);
  // channel 1 block 1: 10+20+50+60 = 140 -> 35 ; block 2: 30+40+70+80 -> 55
  CHECK(out.at(0, 0, 1) == 35);
  CHECK(out.at(0, 1, 1) == 55);
  CHECK(out.at(0, 0, 2) == 255);
  CHECK_THROWS_AS(box_downsample2(ImageU8(3, 4)), ArgumentError);
}

TEST_CASE("crop extracts the exact window and rejects out-of-bounds") {
  const ImageU8 img = noisy_image(16, 7);
  const ImageU8 c = crop(img, 3, 5, 6, 4);
  REQUIRE(c.w == 6);
  REQUIRE(c.h == 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x)
      for (int ch = 0; ch < 3; ++ch)
        CHECK(c.at(y, x, ch) == img.at(5 + y, 3 + x, ch));
  CHECK_THROWS_AS(crop(img, 12, 0, 6, 4), ArgumentError);
  CHECK_THROWS_AS(crop(img, -1, 0, 4, 4), ArgumentError);
  CHECK_THROWS_AS(crop(img, 0, 14, 4, 4), ArgumentError);
}

TEST_CASE("dihedral transforms form the 8 square symmetries") {
  const ImageU8 img = noisy_image(8, 11);

  CHECK(dihedral(img, 0) == img);                    // identity
  CHECK(dihedral(dihedral(img, 6), 6) == img);       // vertical flip twice
  CHECK(dihedral(dihedral(img, 4), 4) == img);       // horizontal flip twice
  CHECK(dihedral(dihedral(img, 1), 3) == img);       // 90 CCW then 90 CW

  // all 8 produce distinct images on an asymmetric input
  std::vector<ImageU8> outs;
  for (int t = 0; t < 8; ++t) outs.push_back(dihedral(img, t));
  for (int a = 0; a < 8; ++a)
    for (int b = a + 1; b < 8; ++b) CHECK_FALSE(outs[size_t(a)] == outs[size_t(b)]);

  // spot-check geometry: one rotation step sends top-left to top-right
  ImageU8 two(2, 2);
  for (int i = 0; i < 12; ++i) two.px[size_t(i)] = uint8_t(i);
  const ImageU8 r = dihedral(two, 1);
  for (int ch = 0; ch < 3; ++ch) {
    CHECK(r.at(0, 1, ch) == two.at(0, 0, ch));
    CHECK(r.at(0, 0, ch) == two.at(1, 0, ch));
  }

  CHECK_THROWS_AS(dihedral(img, 8), ArgumentError);
  CHECK_THROWS_AS(dihedral(img, -1), ArgumentError);
  CHECK_THROWS_AS(dihedral(ImageU8(4, 6), 0), ArgumentError);
}

TEST_CASE("pearson correlation reference values") {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const std::vector<double> y = {2, 4, 6, 8, 10};
  std::vector<double> neg = y;
  std::reverse(neg.begin(), neg.end());
  CHECK(pearson(x, y) == doctest::Approx(1.0));
  CHECK(pearson(x, neg) == doctest::Approx(-1.0));
  CHECK(pearson(x, {3, 3, 3, 3, 3}) == 0.0);  // zero variance -> 0
  CHECK_THROWS_AS(pearson(x, {1.0, 2.0}), ArgumentError);
}

TEST_CASE("png write/read round trip is lossless and byte-deterministic") {
  const std::string dir = fresh_dir("cseg_png_test");
  const ImageU8 img = noisy_image(37, 5);  // odd size: exercises row handling
  write_png(img, dir + "/a.png");
  write_png(img, dir + "/b.png");
  const ImageU8 back = read_png(dir + "/a.png");
  CHECK(back == img);

  std::ifstream fa(dir + "/a.png", std::ios::binary);
  std::ifstream fb(dir + "/b.png", std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(fa)), {});
  const std::string bb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(ba == bb);
  CHECK_FALSE(ba.empty());

  std::ofstream junk(dir + "/c.png", std::ios::binary);
  junk << "not a png at all";
  junk.close();
  CHECK_THROWS_AS(read_png(dir + "/c.png"), FormatError);
  CHECK_THROWS_AS(read_png(dir + "/absent.png"), IoError);
  fs::remove_all(dir);
}

// --------------------------------------------------------------- generator

TEST_CASE("slide generation is deterministic per (seed, slide index)") {
  GenParams p;
  p.base_size = kTestSlideSize;
  const SyntheticSlide a = generate_slide(kCorpusSeed, 0, p);
  CHECK(a.slide_id == "slide00");
  CHECK(a.seed == kCorpusSeed);
  CHECK(a.base_size == kTestSlideSize);

  // identical to the batch-generated slide of the same index
  const SyntheticSlide& b = corpus()[0];
  CHECK(a.label_map == b.label_map);
  for (int k = 0; k < kNumScales; ++k)
    CHECK(a.levels[size_t(k)] == b.levels[size_t(k)]);

  // a different seed changes the content
  const SyntheticSlide c = generate_slide(kCorpusSeed + 1, 0, p);
  CHECK_FALSE(c.levels[3] == a.levels[3]);

  GenParams tiny;
  tiny.base_size = 512;
  CHECK_THROWS_AS(generate_slide(1, 0, tiny), ArgumentError);
}

TEST_CASE("pyramid levels are exact 2x box downsamples of each other") {
  const SyntheticSlide& s = corpus()[1];
  for (int k = 2; k >= 0; --k)
    CHECK(box_downsample2(s.levels[size_t(k + 1)]) == s.levels[size_t(k)]);
  const int n = kTestSlideSize;
  CHECK(s.levels[3].w == n);
  CHECK(s.levels[0].w == n / 8);
  CHECK(s.label_map.size() == size_t(n) * size_t(n));
}

TEST_CASE("every class occupies at least 10% of total area across 28 slides") {
  double counts[kNumClasses] = {0, 0, 0, 0};
  double total = 0;
  for (const auto& s : corpus()) {
    for (const uint8_t c : s.label_map) {
      REQUIRE(c < kNumClasses);
      counts[c] += 1.0;
    }
    total += double(s.label_map.size());
  }
  for (int c = 0; c < kNumClasses; ++c) {
    INFO("class ", c, " area fraction ", counts[c] / total);
    CHECK(counts[c] / total >= 0.10);
  }
}

TEST_CASE("classes 2 and 3 share fine-scale texture statistics within 5%") {
  // Collect 64x64 base-resolution windows lying fully inside one epithelial
  // class (ring inclusions are class 0, so sampled windows avoid them in
  // both classes alike).
  std::vector<WindowStats> stats[2];
  for (const auto& s : corpus()) {
    const std::vector<double> gray = to_gray(s.levels[3]);
    for (int y0 = 0; y0 + 64 <= s.base_size; y0 += 96)
      for (int x0 = 0; x0 + 64 <= s.base_size; x0 += 96) {
        int cls = s.label_at(y0, x0);
        if (cls != 2 && cls != 3) continue;
        bool pure = true;
        for (int y = y0; pure && y < y0 + 64; ++y)
          for (int x = x0; x < x0 + 64; ++x)
            if (s.label_at(y, x) != cls) {
              pure = false;
              break;
            }
        if (!pure) continue;
        stats[cls - 2].push_back(window_stats(gray, s.base_size, x0, y0, 64));
      }
  }
  REQUIRE(stats[0].size() >= 100);
  REQUIRE(stats[1].size() >= 100);
  WindowStats avg[2];
  for (int c = 0; c < 2; ++c) {
    for (const auto& st : stats[c]) {
      avg[c].mean += st.mean;
      avg[c].sd += st.sd;
      avg[c].lag1 += st.lag1;
    }
    const double n = double(stats[c].size());
    avg[c].mean /= n;
    avg[c].sd /= n;
    avg[c].lag1 /= n;
  }
  INFO("benign  mean/sd/lag1: ", avg[0].mean, " ", avg[0].sd, " ", avg[0].lag1);
  INFO("tumour  mean/sd/lag1: ", avg[1].mean, " ", avg[1].sd, " ", avg[1].lag1);
  CHECK(rel_diff(avg[0].mean, avg[1].mean) <= 0.05);
  CHECK(rel_diff(avg[0].sd, avg[1].sd) <= 0.05);
  CHECK(rel_diff(avg[0].lag1, avg[1].lag1) <= 0.05);
}

TEST_CASE("lumen and stroma have visibly different fine textures") {
  const SyntheticSlide& s = corpus()[2];
  const std::vector<double> gray = to_gray(s.levels[3]);
  double sd[2] = {0, 0};
  int n[2] = {0, 0};
  for (int y0 = 0; y0 + 32 <= s.base_size; y0 += 64)
    for (int x0 = 0; x0 + 32 <= s.base_size; x0 += 64) {
      const int cls = s.label_at(y0 + 16, x0 + 16);
      if (cls > 1) continue;
      bool pure = true;
      for (int y = y0; pure && y < y0 + 32; ++y)
        for (int x = x0; x < x0 + 32; ++x)
          if (s.label_at(y, x) != cls) {
            pure = false;
            break;
          }
      if (!pure) continue;
      sd[cls] += window_stats(gray, s.base_size, x0, y0, 32).sd;
      ++n[cls];
    }
  REQUIRE(n[0] >= 5);
  REQUIRE(n[1] >= 5);
  sd[0] /= n[0];
  sd[1] /= n[1];
  INFO("lumen sd ", sd[0], " stroma sd ", sd[1]);
  CHECK(rel_diff(sd[0], sd[1]) > 0.15);
}

// -------------------------------------------------------------- extraction

TEST_CASE("uniform single-class slide yields only that label at purity 1") {
  SyntheticSlide s = manual_slide(
      noisy_image(kTestSlideSize, 21),
      std::vector<uint8_t>(size_t(kTestSlideSize) * kTestSlideSize, 1));
  const auto groups = extract_patches(s, 192, /*min_purity=*/1.0);
  CHECK(groups.size() >= 4);
  for (const auto& g : groups) {
    CHECK(g.label == 1);
    CHECK(g.slide_id == "manual");
    CHECK(g.cx % 8 == 0);
    CHECK(g.cy % 8 == 0);
    for (const auto& sc : g.scales) {
      CHECK(sc.w == kPatchSize);
      CHECK(sc.h == kPatchSize);
    }
    CHECK(g.hires.w == kHiresSize);
    CHECK(g.transform == 0);
  }
}

TEST_CASE("stride equal to the slide size yields at most one group") {
  SyntheticSlide s = manual_slide(
      noisy_image(kTestSlideSize, 22),
      std::vector<uint8_t>(size_t(kTestSlideSize) * kTestSlideSize, 2));
  CHECK(extract_patches(s, kTestSlideSize).size() <= 1);
}

TEST_CASE("extraction rejects slides smaller than the widest field of view") {
  SyntheticSlide s = manual_slide(noisy_image(256, 23),
                                  std::vector<uint8_t>(256 * 256, 0));
  CHECK_THROWS_WITH_AS(extract_patches(s, 64),
                       doctest::Contains("field of view"), ArgumentError);
}

TEST_CASE("budget caps the number of accepted groups in grid order") {
  SyntheticSlide s = manual_slide(
      noisy_image(kTestSlideSize, 24),
      std::vector<uint8_t>(size_t(kTestSlideSize) * kTestSlideSize, 3));
  const auto all = extract_patches(s, 96);
  REQUIRE(all.size() > 5);
  const auto few = extract_patches(s, 96, 0.75, 5);
  REQUIRE(few.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(few[size_t(i)].cx == all[size_t(i)].cx);
    CHECK(few[size_t(i)].cy == all[size_t(i)].cy);
  }
}

TEST_CASE("purity filter drops mixed-label windows") {
  // left half class 1, right half class 2, sharp vertical boundary
  const int n = kTestSlideSize;
  std::vector<uint8_t> labels(size_t(n) * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) labels[size_t(y) * n + x] = x < n / 2 ? 1 : 2;
  SyntheticSlide s = manual_slide(noisy_image(n, 25), std::move(labels));

  const auto strict = extract_patches(s, 64, 1.0);
  const auto lax = extract_patches(s, 64, 0.5);
  CHECK(lax.size() > strict.size());
  for (const auto& g : strict) {
    // no strict group's 32-window may touch the boundary column
    CHECK((g.cx + kLabelWindow / 2 <= n / 2 || g.cx - kLabelWindow / 2 >= n / 2));
    CHECK(g.label == (g.cx < n / 2 ? 1 : 2));
  }
  // the boundary-centered column survives at 0.5 with the majority label
  const bool has_boundary = std::any_of(
      lax.begin(), lax.end(), [&](const PatchGroup& g) { return g.cx == n / 2; });
  CHECK(has_boundary);
}

TEST_CASE("patch groups are co-centered: exact cross-scale identities") {
  const SyntheticSlide& s = corpus()[3];
  const auto groups = extract_patches(s, 160);
  REQUIRE(groups.size() >= 3);
  for (size_t i = 0; i < std::min<size_t>(groups.size(), 8); ++i) {
    const PatchGroup& g = groups[i];
    // box-downsampling the finer patch reproduces the center of the coarser
    for (int k = 0; k < 3; ++k) {
      const ImageU8 down = box_downsample2(g.scales[size_t(k + 1)]);
      const ImageU8 center = crop(g.scales[size_t(k)], 16, 16, 32, 32);
      CHECK(down == center);
    }
    // the 512 patch, box-downsampled 3 times, IS the lowest-scale patch
    ImageU8 d = g.hires;
    for (int r = 0; r < 3; ++r) d = box_downsample2(d);
    CHECK(d == g.scales[0]);
  }
}

TEST_CASE("upsampled patches correlate > 0.9 with the next magnification") {
  double sum[3] = {0, 0, 0};
  int cnt[3] = {0, 0, 0};
  for (int si = 4; si < 7; ++si) {
    const auto groups = extract_patches(corpus()[size_t(si)], 224);
    for (const auto& g : groups) {
      for (int k = 0; k < 3; ++k) {
        const std::vector<double> lo = to_gray(g.scales[size_t(k)]);
        const std::vector<double> up = upsample2_bilinear(lo, 64, 64);
        std::vector<double> cc(64 * 64);
        for (int y = 0; y < 64; ++y)
          for (int x = 0; x < 64; ++x)
            cc[size_t(y) * 64 + x] = up[size_t(y + 32) * 128 + size_t(x + 32)];
        sum[k] += pearson(cc, to_gray(g.scales[size_t(k + 1)]));
        ++cnt[k];
      }
    }
  }
  double all = 0;
  int n = 0;
  for (int k = 0; k < 3; ++k) {
    REQUIRE(cnt[k] >= 20);
    INFO("transition ", k, "->", k + 1, " mean correlation ", sum[k] / cnt[k]);
    CHECK(sum[k] / cnt[k] > 0.8);
    all += sum[k];
    n += cnt[k];
  }
  CHECK(all / n > 0.9);
}

// ------------------------------------------------- augmentation/corruption

TEST_CASE("augmentation applies one shared dihedral transform per group") {
  const PatchGroup base = solid_group("s", 256, 256, 2, true, 31);
  Rng rng(77);
  std::array<bool, 8> seen{};
  for (int trial = 0; trial < 200; ++trial) {
    const PatchGroup out = augment(base, rng);
    REQUIRE(out.transform >= 0);
    REQUIRE(out.transform < 8);
    seen[size_t(out.transform)] = true;
    CHECK(out.label == base.label);
    CHECK(out.slide_id == base.slide_id);
    for (int k = 0; k < kNumScales; ++k)
      CHECK(out.scales[size_t(k)] ==
            dihedral(base.scales[size_t(k)], out.transform));
    CHECK(out.hires == dihedral(base.hires, out.transform));
  }
  for (int t = 0; t < 8; ++t) CHECK(seen[size_t(t)]);
}

TEST_CASE("corruption: p=0 is the identity") {
  const PatchGroup base = solid_group("s", 256, 256, 1, true, 41);
  Rng rng(5);
  const PatchGroup out = corrupt_scales(base, 0.0, rng);
  for (int k = 0; k < kNumScales; ++k)
    CHECK(out.scales[size_t(k)] == base.scales[size_t(k)]);
  CHECK(out.hires == base.hires);
  CHECK(out.label == base.label);
}

TEST_CASE("corruption: p=1 replaces every scale with near-constant gray") {
  const PatchGroup base = solid_group("s", 256, 256, 3, false, 42);
  Rng rng(6);
  const PatchGroup out = corrupt_scales(base, 1.0, rng);
  CHECK(out.label == 3);
  for (int k = 0; k < kNumScales; ++k) {
    const ImageU8& im = out.scales[size_t(k)];
    CHECK_FALSE(im == base.scales[size_t(k)]);
    double sum = 0, sum2 = 0;
    for (const uint8_t v : im.px) {
      sum += v;
      sum2 += double(v) * v;
    }
    const double n = double(im.px.size());
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(0.0, sum2 / n - mean * mean));
    CHECK(mean == doctest::Approx(127.0).epsilon(0.01));
    CHECK(sd <= 1.5);
  }
}

TEST_CASE("corruption: replacement frequency concentrates around p") {
  PatchGroup base;
  base.slide_id = "s";
  base.label = 0;
  for (int k = 0; k < kNumScales; ++k)
    base.scales[size_t(k)] = ImageU8(8, 8, 200);  // constant, far from gray
  Rng rng(7);
  int replaced = 0;
  const int n_groups = 10000;
  for (int i = 0; i < n_groups; ++i) {
    const PatchGroup out = corrupt_scales(base, 0.3, rng);
    for (int k = 0; k < kNumScales; ++k)
      if (!(out.scales[size_t(k)] == base.scales[size_t(k)])) ++replaced;
  }
  const double frac = double(replaced) / (4.0 * n_groups);
  INFO("replaced fraction ", frac);
  CHECK(frac >= 0.28);
  CHECK(frac <= 0.32);
  CHECK_THROWS_AS(corrupt_scales(base, -0.1, rng), ArgumentError);
  CHECK_THROWS_AS(corrupt_scales(base, 1.2, rng), ArgumentError);
}

// -------------------------------------------------------------- persistence

TEST_CASE("dataset round trip: write, ingest, load") {
  const std::string root = fresh_dir("cseg_ds_test");

  std::vector<PatchGroup> groups;
  uint64_t seed = 100;
  for (const char* sid : {"slideA", "slideB"})
    for (int loc = 0; loc < 3; ++loc)
      groups.push_back(solid_group(sid, 256 + 64 * loc, 512, loc % kNumClasses,
                                   /*with_hires=*/loc == 0, seed++));
  for (const auto& g : groups) write_group(g, root);
  append_labels_csv(groups, root);

  const DatasetManifest m = ingest(root);
  REQUIRE(m.records.size() == 6);
  REQUIRE(m.slide_ids.size() == 2);
  CHECK(m.root == root);
  for (size_t i = 0; i < 6; ++i) {
    const DatasetRecord& r = m.records[i];
    CHECK(r.slide_id == groups[i].slide_id);
    CHECK(r.cx == groups[i].cx);
    CHECK(r.cy == groups[i].cy);
    CHECK(r.label == groups[i].label);
    CHECK(r.has_hires == !groups[i].hires.empty());

    const PatchGroup back = load_group(r, r.has_hires);
    for (int k = 0; k < kNumScales; ++k)
      CHECK(back.scales[size_t(k)] == groups[i].scales[size_t(k)]);
    if (r.has_hires) CHECK(back.hires == groups[i].hires);
  }

  // hires requested where none exists
  REQUIRE_FALSE(m.records[1].has_hires);
  PatchGroup g1 = load_group(m.records[1]);
  CHECK_THROWS_AS(load_hires(m.records[1], g1), InputError);

  // appending again extends the csv without duplicating the header
  append_labels_csv({groups[0]}, root);
  std::ifstream f(root + "/labels.csv");
  std::string line;
  int headers = 0, rows = 0;
  while (std::getline(f, line)) {
    if (line == "slide_id,cx,cy,label")
      ++headers;
    else if (!line.empty())
      ++rows;
  }
  CHECK(headers == 1);
  CHECK(rows == 7);
  fs::remove_all(root);
}

TEST_CASE("ingest validation failures name the offending paths") {
  const std::string root = fresh_dir("cseg_ds_bad");
  std::vector<PatchGroup> groups = {solid_group("s0", 256, 256, 1, false, 7),
                                    solid_group("s0", 512, 256, 2, false, 8)};
  for (const auto& g : groups) write_group(g, root);
  append_labels_csv(groups, root);

  SUBCASE("missing scale file") {
    const std::string victim = root + "/s0/512_256/scale2.png";
    fs::remove(victim);
    CHECK_THROWS_WITH_AS(ingest(root), doctest::Contains(victim.c_str()), IngestError);
  }
  SUBCASE("unreadable image") {
    const std::string victim = root + "/s0/256_256/scale0.png";
    std::ofstream(victim, std::ios::binary) << "garbage";
    CHECK_THROWS_WITH_AS(ingest(root), doctest::Contains(victim.c_str()), IngestError);
  }
  SUBCASE("label outside the class table") {
    std::ofstream(root + "/labels.csv", std::ios::app) << "s0,256,256,9\n";
    CHECK_THROWS_AS(ingest(root), IngestError);
  }
  SUBCASE("wrong header") {
    std::ofstream(root + "/labels.csv") << "a,b,c\n";
    CHECK_THROWS_AS(ingest(root), IngestError);
  }
  fs::remove_all(root);
}

TEST_CASE("ingesting an empty root yields an empty manifest") {
  const std::string root = fresh_dir("cseg_ds_empty");
  const DatasetManifest m = ingest(root);
  CHECK(m.records.empty());
  CHECK(m.slide_ids.empty());
  fs::remove_all(root);
}

// ----------------------------------------------------------------- batching

TEST_CASE("batches are normalized to [-1,1] in CHW layout") {
  std::vector<PatchGroup> groups;
  for (int i = 0; i < 2; ++i) {
    PatchGroup g;
    g.slide_id = "s";
    g.label = 2 + i;
    for (int k = 0; k < kNumScales; ++k)
      g.scales[size_t(k)] = ImageU8(kPatchSize, kPatchSize,
                                    uint8_t(10 + 40 * k + 100 * i));
    g.hires = ImageU8(kHiresSize, kHiresSize, uint8_t(210 + i));
    groups.push_back(std::move(g));
  }

  const Batch b = make_batch(groups, {1, 0}, /*with_hires=*/true);
  REQUIRE(b.scales[0].shape() == std::vector<int>({2, 3, 64, 64}));
  REQUIRE(b.hires.shape() == std::vector<int>({2, 3, 512, 512}));
  REQUIRE(b.labels.size() == 2);
  CHECK(b.labels[0] == 3);  // indices reordered the groups
  CHECK(b.labels[1] == 2);
  for (int k = 0; k < kNumScales; ++k) {
    const float* d = b.scales[size_t(k)].data();
    const float v_g1 = float(10 + 40 * k + 100) / 127.5f - 1.0f;
    const float v_g0 = float(10 + 40 * k) / 127.5f - 1.0f;
    CHECK(d[0] == v_g1);                      // sample 0 = group 1
    CHECK(d[3 * 64 * 64 - 1] == v_g1);        // last channel value
    CHECK(d[3 * 64 * 64] == v_g0);            // sample 1 = group 0
  }
  CHECK(b.hires.data()[0] == float(211) / 127.5f - 1.0f);

  CHECK_THROWS_AS(make_batch(groups, {}, false), ArgumentError);
  CHECK_THROWS_AS(make_batch(groups, {5}, false), ArgumentError);

  groups[0].hires = ImageU8();
  CHECK_THROWS_AS(make_batch(groups, {0}, true), InputError);
  const Batch no_hires = make_batch(groups, {0}, false);
  CHECK_FALSE(no_hires.hires.defined());
}
