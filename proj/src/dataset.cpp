#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cseg/data.hpp"

namespace fs = std::filesystem;

namespace cseg {

PatchGroup group_at(const SyntheticSlide& slide, int cx, int cy) {
  if ((cx & 7) || (cy & 7))
    throw ArgumentError("group_at: center (" + std::to_string(cx) + "," +
                        std::to_string(cy) +
                        ") is not on the 8-px alignment grid");
  const int margin = kHiresSize / 2;
  if (cx < margin || cy < margin || cx + margin > slide.base_size ||
      cy + margin > slide.base_size)
    throw ArgumentError("group_at: field of view around (" +
                        std::to_string(cx) + "," + std::to_string(cy) +
                        ") leaves the slide");
  PatchGroup g;
  g.slide_id = slide.slide_id;
  g.cx = cx;
  g.cy = cy;
  for (int k = 0; k < kNumScales; ++k) {
    const int ck = 1 << (3 - k);  // base pixels per level-k pixel
    g.scales[size_t(k)] =
        crop(slide.levels[size_t(k)], cx / ck - kPatchSize / 2,
             cy / ck - kPatchSize / 2, kPatchSize, kPatchSize);
  }
  g.hires = crop(slide.levels[3], cx - kHiresSize / 2, cy - kHiresSize / 2,
                 kHiresSize, kHiresSize);
  return g;
}

std::vector<PatchGroup> extract_patches(const SyntheticSlide& slide, int stride,
                                        double min_purity, int budget) {
  if (stride < 1) throw ArgumentError("extract_patches: stride must be >= 1");
  if (min_purity < 0.0 || min_purity > 1.0)
    throw ArgumentError("extract_patches: min_purity outside [0,1]");
  const int n = slide.base_size;
  const int margin = kHiresSize / 2;  // widest field of view: ±256 base px
  if (n < kHiresSize)
    throw ArgumentError(
        "extract_patches: slide (" + std::to_string(n) +
        " px) is smaller than the widest patch field of view (" +
        std::to_string(kHiresSize) + " px)");

  std::vector<PatchGroup> out;
  int last_cx = -1, last_cy = -1;
  for (int cy = margin; cy + margin <= n; cy += stride) {
    const int cy8 = cy & ~7;  // pyramid alignment: centers on multiples of 8
    for (int cx = margin; cx + margin <= n; cx += stride) {
      const int cx8 = cx & ~7;
      if (cx8 == last_cx && cy8 == last_cy) continue;
      last_cx = cx8;
      last_cy = cy8;

      // label = majority class of the central 32x32 base window
      int counts[kNumClasses] = {0, 0, 0, 0};
      for (int y = cy8 - kLabelWindow / 2; y < cy8 + kLabelWindow / 2; ++y)
        for (int x = cx8 - kLabelWindow / 2; x < cx8 + kLabelWindow / 2; ++x)
          ++counts[slide.label_at(y, x)];
      int best = 0;
      for (int c = 1; c < kNumClasses; ++c)
        if (counts[c] > counts[best]) best = c;
      const double purity =
          double(counts[best]) / double(kLabelWindow * kLabelWindow);
      if (purity < min_purity) continue;

      PatchGroup g = group_at(slide, cx8, cy8);
      g.label = best;
      out.push_back(std::move(g));
      if (budget > 0 && int(out.size()) >= budget) return out;
    }
  }
  return out;
}

PatchGroup augment(const PatchGroup& g, Rng& rng) {
  const int t = int(rng.bounded(8));
  PatchGroup out = g;
  out.transform = t;
  for (auto& s : out.scales) s = dihedral(s, t);
  if (!out.hires.empty()) out.hires = dihedral(out.hires, t);
  return out;
}

PatchGroup corrupt_scales(const PatchGroup& g, double p, Rng& rng) {
  if (p < 0.0 || p > 1.0)
    throw ArgumentError("corrupt_scales: probability outside [0,1]");
  PatchGroup out = g;
  for (auto& s : out.scales) {
    if (rng.uniform() >= p) continue;
    for (auto& px : s.px) {
      const double v = 127.0 + rng.normal();
      px = uint8_t(v < 0.0 ? 0 : (v > 255.0 ? 255 : int(std::lround(v))));
    }
  }
  return out;
}

// ------------------------------------------------------------- persistence

namespace {
std::string group_dir(const std::string& root, const PatchGroup& g) {
  return root + "/" + g.slide_id + "/" + std::to_string(g.cx) + "_" +
         std::to_string(g.cy);
}
}  // namespace

void write_group(const PatchGroup& g, const std::string& root) {
  const std::string dir = group_dir(root, g);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  for (int k = 0; k < kNumScales; ++k)
    write_png(g.scales[size_t(k)], dir + "/scale" + std::to_string(k) + ".png");
  if (!g.hires.empty()) write_png(g.hires, dir + "/hires.png");
}

void append_labels_csv(const std::vector<PatchGroup>& groups,
                       const std::string& root) {
  const std::string path = root + "/labels.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("cannot open '" + path + "' for append");
  if (fresh) f << "slide_id,cx,cy,label\n";
  for (const auto& g : groups)
    f << g.slide_id << ',' << g.cx << ',' << g.cy << ',' << g.label << '\n';
  if (!f.good()) throw IoError("short write to '" + path + "'");
}

namespace {
bool has_png_magic(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) return false;
  unsigned char sig[8];
  const size_t got = std::fread(sig, 1, 8, f);
  std::fclose(f);
  static const unsigned char kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a,
                                        '\n'};
  return got == 8 && std::equal(sig, sig + 8, kSig);
}
}  // namespace

DatasetManifest ingest(const std::string& root) {
  DatasetManifest m;
  m.root = root;
  const std::string csv = root + "/labels.csv";
  std::ifstream f(csv);
  if (!f) {
    std::fprintf(stderr, "warning: no labels.csv under '%s' — empty dataset\n",
                 root.c_str());
    return m;
  }
  std::string line;
  if (!std::getline(f, line) || line != "slide_id,cx,cy,label")
    throw IngestError("'" + csv + "' must start with header slide_id,cx,cy,label");

  std::vector<std::string> problems;
  size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    DatasetRecord rec;
    std::string cxs, cys, lbl;
    if (!std::getline(ss, rec.slide_id, ',') || !std::getline(ss, cxs, ',') ||
        !std::getline(ss, cys, ',') || !std::getline(ss, lbl)) {
      problems.push_back(csv + ":" + std::to_string(lineno) +
                         ": malformed row '" + line + "'");
      continue;
    }
    try {
      rec.cx = std::stoi(cxs);
      rec.cy = std::stoi(cys);
      rec.label = std::stoi(lbl);
    } catch (const std::exception&) {
      problems.push_back(csv + ":" + std::to_string(lineno) +
                         ": non-numeric field in '" + line + "'");
      continue;
    }
    if (rec.label < 0 || rec.label >= kNumClasses) {
      problems.push_back(csv + ":" + std::to_string(lineno) + ": label " +
                         std::to_string(rec.label) + " outside the class table");
      continue;
    }
    rec.dir = root + "/" + rec.slide_id + "/" + std::to_string(rec.cx) + "_" +
              std::to_string(rec.cy);
    for (int k = 0; k < kNumScales; ++k) {
      const std::string p = rec.dir + "/scale" + std::to_string(k) + ".png";
      if (!fs::exists(p))
        problems.push_back("missing scale file " + p);
      else if (!has_png_magic(p))
        problems.push_back("unreadable image " + p);
    }
    rec.has_hires = fs::exists(rec.dir + "/hires.png");
    if (rec.has_hires && !has_png_magic(rec.dir + "/hires.png"))
      problems.push_back("unreadable image " + rec.dir + "/hires.png");
    if (std::find(m.slide_ids.begin(), m.slide_ids.end(), rec.slide_id) ==
        m.slide_ids.end())
      m.slide_ids.push_back(rec.slide_id);
    m.records.push_back(std::move(rec));
  }
  if (!problems.empty()) {
    std::string msg = "dataset under '" + root + "' has " +
                      std::to_string(problems.size()) + " problem(s):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw IngestError(msg);
  }
  return m;
}

PatchGroup load_group(const DatasetRecord& rec, bool with_hires) {
  PatchGroup g;
  g.slide_id = rec.slide_id;
  g.cx = rec.cx;
  g.cy = rec.cy;
  g.label = rec.label;
  for (int k = 0; k < kNumScales; ++k) {
    const std::string p = rec.dir + "/scale" + std::to_string(k) + ".png";
    g.scales[size_t(k)] = read_png(p);
    if (g.scales[size_t(k)].w != kPatchSize ||
        g.scales[size_t(k)].h != kPatchSize)
      throw FormatError("'" + p + "' is not " + std::to_string(kPatchSize) +
                        "x" + std::to_string(kPatchSize));
  }
  if (with_hires) load_hires(rec, g);
  return g;
}

void load_hires(const DatasetRecord& rec, PatchGroup& g) {
  const std::string p = rec.dir + "/hires.png";
  if (!rec.has_hires)
    throw InputError("group " + rec.dir + " has no high-resolution patch");
  g.hires = read_png(p);
  if (g.hires.w != kHiresSize || g.hires.h != kHiresSize)
    throw FormatError("'" + p + "' is not " + std::to_string(kHiresSize) + "x" +
                      std::to_string(kHiresSize));
}

// ------------------------------------------------------------- batching

namespace {
void blit_chw(const ImageU8& img, Tensor<float>& dst, int sample) {
  const int s = img.w;
  float* base = dst.data() + int64_t(sample) * 3 * s * s;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        base[(int64_t(c) * s + y) * s + x] = normalize_px(img.at(y, x, c));
}
}  // namespace

Batch make_batch(const std::vector<PatchGroup>& groups,
                 const std::vector<int>& indices, bool with_hires) {
  if (indices.empty()) throw ArgumentError("make_batch: empty index list");
  const int n = int(indices.size());
  Batch b;
  for (int k = 0; k < kNumScales; ++k)
    b.scales[size_t(k)] = Tensor<float>::zeros({n, 3, kPatchSize, kPatchSize});
  if (with_hires)
    b.hires = Tensor<float>::zeros({n, 3, kHiresSize, kHiresSize});
  b.labels.resize(size_t(n));
  for (int i = 0; i < n; ++i) {
    const int idx = indices[size_t(i)];
    if (idx < 0 || idx >= int(groups.size()))
      throw ArgumentError("make_batch: index " + std::to_string(idx) +
                          " outside dataset of " +
                          std::to_string(groups.size()));
    const PatchGroup& g = groups[size_t(idx)];
    for (int k = 0; k < kNumScales; ++k) {
      if (g.scales[size_t(k)].w != kPatchSize ||
          g.scales[size_t(k)].h != kPatchSize)
        throw InputError("make_batch: group " + g.slide_id + "/" +
                         std::to_string(g.cx) + "_" + std::to_string(g.cy) +
                         " scale" + std::to_string(k) + " is not 64x64");
      blit_chw(g.scales[size_t(k)], b.scales[size_t(k)], i);
    }
    if (with_hires) {
      if (g.hires.w != kHiresSize || g.hires.h != kHiresSize)
        throw InputError("make_batch: group " + g.slide_id + "/" +
                         std::to_string(g.cx) + "_" + std::to_string(g.cy) +
                         " lacks a 512x512 high-resolution patch");
      blit_chw(g.hires, b.hires, i);
    }
    b.labels[size_t(i)] = g.label;
  }
  return b;
}

}  // namespace cseg
