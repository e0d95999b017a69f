#include "cseg/wsi.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "cseg/ops.hpp"

namespace cseg {

SlideRaster segment_slide(Model<float>& model, const SyntheticSlide& slide,
                          int stride, int batch_size) {
  if (stride < 8 || stride % 8 != 0)
    throw ArgumentError(
        "segment_slide: stride must be a positive multiple of 8 (pyramid "
        "alignment), got " +
        std::to_string(stride));
  if (batch_size < 1)
    throw ArgumentError("segment_slide: batch_size must be >= 1");
  const int n = slide.base_size;
  if (n < kHiresSize)
    throw InputError("segment_slide: slide (" + std::to_string(n) +
                     " px) is smaller than the widest patch field of view (" +
                     std::to_string(kHiresSize) + " px)");
  for (int k = 0; k < kNumScales; ++k) {
    const int want = n >> (3 - k);
    if (slide.levels[size_t(k)].w != want ||
        slide.levels[size_t(k)].h != want)
      throw InputError(
          "segment_slide: pyramid level " + std::to_string(k) + " is " +
          std::to_string(slide.levels[size_t(k)].w) + "x" +
          std::to_string(slide.levels[size_t(k)].h) + ", expected " +
          std::to_string(want) + "x" + std::to_string(want) +
          "; the slide does not provide the magnifications the model "
          "consumes");
  }

  SlideRaster r;
  r.stride = stride;
  r.rows = r.cols = (n + stride - 1) / stride;
  r.cells.assign(size_t(r.rows) * size_t(r.cols), kSentinelCell);

  constexpr int kMargin = kHiresSize / 2;
  constexpr int kAnchor = kPatchSize / 2;
  struct Cell {
    int row, col, cx, cy;
  };
  std::vector<Cell> todo;
  for (int i = 0; i < r.rows; ++i) {
    const int cy = i * stride + kAnchor;
    if (cy < kMargin || cy + kMargin > n) continue;
    for (int j = 0; j < r.cols; ++j) {
      const int cx = j * stride + kAnchor;
      if (cx < kMargin || cx + kMargin > n) continue;
      todo.push_back({i, j, cx, cy});
    }
  }

  const bool with_hires = model.uses_hires();
  const int step = micro_cap(model, batch_size, /*training=*/false);
  Ctx<float> cx_eval{nullptr, Mode::eval, nullptr};
  for (size_t b0 = 0; b0 < todo.size(); b0 += size_t(step)) {
    const size_t bend = std::min(todo.size(), b0 + size_t(step));
    std::vector<PatchGroup> groups;
    groups.reserve(bend - b0);
    for (size_t k = b0; k < bend; ++k)
      groups.push_back(group_at(slide, todo[k].cx, todo[k].cy));
    std::vector<int> idx(groups.size());
    std::iota(idx.begin(), idx.end(), 0);
    const Batch batch = make_batch(groups, idx, with_hires);
    Tensor<float> logits =
        model.forward(cx_eval, batch.scales, with_hires ? &batch.hires : nullptr);
    const std::vector<int> pred = argmax_rows(logits);
    for (size_t k = b0; k < bend; ++k)
      r.cells[size_t(todo[k].row) * size_t(r.cols) + size_t(todo[k].col)] =
          int8_t(pred[k - b0]);
  }
  return r;
}

ImageU8 render(const SlideRaster& raster, const Palette& palette,
               int upscale) {
  if (upscale < 1) throw ArgumentError("render: upscale must be >= 1");
  if (raster.rows < 1 || raster.cols < 1 ||
      raster.cells.size() != size_t(raster.rows) * size_t(raster.cols))
    throw ArgumentError("render: malformed raster");
  for (const int8_t v : raster.cells)
    if (v != kSentinelCell && (v < 0 || size_t(v) >= palette.size()))
      throw ArgumentError("render: class id " + std::to_string(int(v)) +
                          " has no palette entry");
  ImageU8 img(raster.cols * upscale, raster.rows * upscale);
  for (int i = 0; i < raster.rows; ++i)
    for (int j = 0; j < raster.cols; ++j) {
      const int8_t v = raster.at(i, j);
      const std::array<uint8_t, 3>& color =
          v == kSentinelCell ? kSentinelColor : palette[size_t(v)];
      for (int y = i * upscale; y < (i + 1) * upscale; ++y)
        for (int x = j * upscale; x < (j + 1) * upscale; ++x)
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[size_t(c)];
    }
  return img;
}

void write_raster_csv(const SlideRaster& raster, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "row,col,class_id\n";
  for (int i = 0; i < raster.rows; ++i)
    for (int j = 0; j < raster.cols; ++j)
      f << i << ',' << j << ',' << int(raster.at(i, j)) << '\n';
  if (!f) throw IoError("failed writing '" + path + "'");
}

}  // namespace cseg
