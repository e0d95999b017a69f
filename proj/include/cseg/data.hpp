#pragma once
// Synthetic multi-scale slide generation, co-centered patch extraction,
// dihedral augmentation, scale corruption, and dataset-directory ingestion.
//
// Scale convention: pyramid level k covers the full slide at 1/2^(3-k) of
// base resolution — level 3 is the base (highest magnification), level 0 the
// widest view.  A patch group holds one 64x64 crop per level, all centered
// at the same base-pixel location, so the level-k crop spans 64*2^(3-k) base
// pixels; the optional 512x512 high-resolution crop spans the same field as
// the level-0 crop.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cseg/image.hpp"
#include "cseg/rng.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

inline constexpr int kNumClasses = 4;   // 0 lumen, 1 stroma, 2 benign, 3 tumour
inline constexpr int kNumScales = 4;
inline constexpr int kPatchSize = 64;
inline constexpr int kHiresSize = 512;  // widest field of view in base pixels
inline constexpr int kLabelWindow = 32;

inline const char* class_name(int c) {
  switch (c) {
    case 0: return "lumen";
    case 1: return "stroma";
    case 2: return "benign";
    case 3: return "tumour";
  }
  return "?";
}

struct SyntheticSlide {
  std::string slide_id;
  uint64_t seed = 0;
  int base_size = 0;
  std::vector<uint8_t> label_map;     // base_size^2 class ids at base res
  std::array<ImageU8, kNumScales> levels;  // levels[3] = base image

  uint8_t label_at(int y, int x) const {
    return label_map[size_t(y) * size_t(base_size) + size_t(x)];
  }
};

// All generator knobs in one place so calibration touches a single struct.
struct GenParams {
  int base_size = 2048;
  // label field geometry
  int region_blur = 221;      // box width, 3 passes: region-scale smoothing
  int pair_blur = 281;        // blur for the class-2/3 partition field
  double lumen_frac = 0.13;
  double stroma_frac = 0.35;  // classes 2/3 split the rest equally
  // shared epithelial texture
  double grating_amp = 11.0;  // diagonal grating, period 4 px, orientation ±45°
  double mottle_amp = 14.0;   // class-neutral luminance mottle
  int mottle_blur = 121;
  double epi_tex_amp = 10.0;  // class-neutral cell-scale texture (both classes)
  int epi_tex_blur = 7;
  double stroma_tex_amp = 13.0;
  int stroma_tex_blur = 9;
  double lumen_noise = 2.5;
  // ring inclusions (both epithelial classes, lattice geometry per region)
  double ring_period_square = 132.0;  // square lattice period
  int ring_outer = 11, ring_hole = 5;
  double ring_jitter = 8.0;
  // base material colors (RGB)
  std::array<uint8_t, 3> lumen_color{238, 235, 230};
  std::array<uint8_t, 3> stroma_color{205, 155, 190};
  std::array<uint8_t, 3> epi_color{148, 100, 160};
};

SyntheticSlide generate_slide(uint64_t seed, int slide_index,
                              const GenParams& p = {});
std::vector<SyntheticSlide> generate_slides(int n_slides, int size,
                                            uint64_t seed);

struct PatchGroup {
  std::string slide_id;
  int cx = 0, cy = 0;  // base-resolution center
  int label = -1;
  std::array<ImageU8, kNumScales> scales;  // 64x64 each
  ImageU8 hires;                           // 512x512; may be empty if deferred
  int transform = 0;  // dihedral index applied by augment (0 = original)
};

// Assemble the four aligned scale crops and the high-resolution field
// centered at (cx, cy). The center must sit on the 8-px alignment grid with
// the full 512-px field of view inside the slide; the label is left unset.
PatchGroup group_at(const SyntheticSlide& slide, int cx, int cy);

// Grid extraction with purity filtering.  budget > 0 caps the number of
// accepted groups (first-come in deterministic grid order).
std::vector<PatchGroup> extract_patches(const SyntheticSlide& slide, int stride,
                                        double min_purity = 0.75,
                                        int budget = 0);

// One random dihedral transform, the same for every scale of the group.
PatchGroup augment(const PatchGroup& g, Rng& rng);

// Independently per scale with probability p, replace the patch with
// near-constant gray noise: round(clamp(N(127, 1))) per pixel.
PatchGroup corrupt_scales(const PatchGroup& g, double p, Rng& rng);

// ------------------------------------------------------------- persistence
// Directory layout: <root>/<slide_id>/<cx>_<cy>/scale<k>.png (+ hires.png),
// plus <root>/labels.csv with header slide_id,cx,cy,label.

struct DatasetRecord {
  std::string slide_id;
  int cx = 0, cy = 0;
  int label = -1;
  std::string dir;  // absolute or root-relative patch directory
  bool has_hires = false;
};

struct DatasetManifest {
  std::string root;
  std::vector<DatasetRecord> records;
  std::vector<std::string> slide_ids;  // distinct, in first-seen order
};

void write_group(const PatchGroup& g, const std::string& root);
void append_labels_csv(const std::vector<PatchGroup>& groups,
                       const std::string& root);

DatasetManifest ingest(const std::string& root);

// Pixel loading; hires load is separate because it is ~16x the bytes.
PatchGroup load_group(const DatasetRecord& rec, bool with_hires = false);
void load_hires(const DatasetRecord& rec, PatchGroup& g);

// ------------------------------------------------------------- batching

inline float normalize_px(uint8_t v) { return float(v) / 127.5f - 1.0f; }

// Stacks |groups[idx]| for idx in indices into per-scale [N,3,64,64] tensors
// (and optionally [N,3,512,512] from hires). Missing hires -> InputError.
struct Batch {
  std::array<Tensor<float>, kNumScales> scales;
  Tensor<float> hires;  // undefined unless requested
  std::vector<int> labels;
};

Batch make_batch(const std::vector<PatchGroup>& groups,
                 const std::vector<int>& indices, bool with_hires = false);

}  // namespace cseg
