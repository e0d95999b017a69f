#pragma once
// Tiled whole-slide inference: a class raster at stride resolution plus a
// rendered segmentation overlay.

#include <string>
#include <vector>

#include "cseg/train.hpp"

namespace cseg {

inline constexpr int8_t kSentinelCell = -1;  // field of view left the slide

// One RGB color per class id; render() indexes it by cell value.
using Palette = std::vector<std::array<uint8_t, 3>>;

// lumen green, stroma purple, benign orange, tumour yellow.
inline Palette default_palette() {
  return {{{46, 204, 113}}, {{142, 68, 173}}, {{230, 126, 34}},
          {{241, 196, 15}}};
}

inline constexpr std::array<uint8_t, 3> kSentinelColor{128, 128, 128};

// Class ids on a stride grid covering the slide. Cell (r, c) covers base
// pixels [c*stride, (c+1)*stride) x [r*stride, (r+1)*stride) relative to
// the origin and is labeled by the model's prediction for the patch group
// anchored at (c*stride + 32, r*stride + 32) — the cell center at the
// default stride. The anchor does not depend on the stride, so halving the
// stride re-samples every coarse anchor exactly.
struct SlideRaster {
  int rows = 0, cols = 0;
  int stride = 0;                 // base pixels per cell
  int origin_x = 0, origin_y = 0;  // base-pixel position of cell (0,0)
  std::vector<int8_t> cells;       // class id, or kSentinelCell

  int8_t at(int r, int c) const {
    return cells[size_t(r) * size_t(cols) + size_t(c)];
  }
};

// Default stride: one patch field of view at the finest scale
// (non-overlapping tiling); smaller strides overlap.
inline constexpr int kDefaultSegmentStride = kPatchSize;

// Grid dimensions are ceil(extent / stride) per axis. Cells whose anchor
// cannot carry the full 512-px field of view are sentinel; the rest hold
// the eval-mode argmax class, evaluated in batches.
SlideRaster segment_slide(Model<float>& model, const SyntheticSlide& slide,
                          int stride = kDefaultSegmentStride,
                          int batch_size = 64);

// Nearest-neighbor upscale of the raster: each cell becomes an
// upscale x upscale block of its class color; sentinel cells mid-gray.
ImageU8 render(const SlideRaster& raster, const Palette& palette,
               int upscale = 8);

// CSV with header `row,col,class_id` (sentinel written as -1).
void write_raster_csv(const SlideRaster& raster, const std::string& path);

}  // namespace cseg
