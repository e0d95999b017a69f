#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

#include "cseg/model.hpp"

namespace cseg {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'E', 'G'};
constexpr uint32_t kVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put(std::FILE* f, const void* p, size_t n, const std::string& path) {
  if (std::fwrite(p, 1, n, f) != n)
    throw IoError("short write to checkpoint '" + path + "'");
}
void put_u8(std::FILE* f, uint8_t v, const std::string& p) { put(f, &v, 1, p); }
void put_u32(std::FILE* f, uint32_t v, const std::string& p) {
  put(f, &v, 4, p);
}
void put_u64(std::FILE* f, uint64_t v, const std::string& p) {
  put(f, &v, 8, p);
}
void put_f32(std::FILE* f, float v, const std::string& p) { put(f, &v, 4, p); }

void get(std::FILE* f, void* p, size_t n, const std::string& path) {
  if (std::fread(p, 1, n, f) != n)
    throw FormatError("checkpoint '" + path + "' is truncated or corrupt");
}
uint8_t get_u8(std::FILE* f, const std::string& p) {
  uint8_t v;
  get(f, &v, 1, p);
  return v;
}
uint32_t get_u32(std::FILE* f, const std::string& p) {
  uint32_t v;
  get(f, &v, 4, p);
  return v;
}
uint64_t get_u64(std::FILE* f, const std::string& p) {
  uint64_t v;
  get(f, &v, 8, p);
  return v;
}
float get_f32(std::FILE* f, const std::string& p) {
  float v;
  get(f, &v, 4, p);
  return v;
}

}  // namespace

void save_checkpoint(const Model<float>& m, const std::string& path,
                     const CkptMeta& meta) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open checkpoint '" + path + "' for writing");
  std::FILE* f = fp.get();

  bool bn_populated = true;
  for (const auto& s : m.streams)
    for (const auto& b : s) bn_populated = bn_populated && b.bn.has_stats;

  put(f, kMagic, 4, path);
  put_u32(f, kVersion, path);
  put_u8(f, uint8_t(m.arch), path);
  put_u8(f, uint8_t(m.order), path);
  put_u8(f, bn_populated ? 1 : 0, path);
  put_u8(f, 0, path);
  put_u64(f, meta.seed, path);
  put_u32(f, meta.epochs_run, path);
  put_f32(f, meta.best_val_loss, path);
  put_u32(f, uint32_t(m.reg.items.size()), path);

  for (const auto& e : m.reg.items) {
    put_u32(f, uint32_t(e.name.size()), path);
    put(f, e.name.data(), e.name.size(), path);
    put_u32(f, uint32_t(e.t.rank()), path);
    for (int d = 0; d < e.t.rank(); ++d)
      put_u32(f, uint32_t(e.t.dim(d)), path);
    put(f, e.t.data(), sizeof(float) * size_t(e.t.numel()), path);
  }
  if (std::fflush(f) != 0)
    throw IoError("cannot flush checkpoint '" + path + "'");
}

Model<float> load_checkpoint(const std::string& path, CkptMeta* meta,
                             const Arch* expect_arch) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open checkpoint '" + path + "'");
  std::FILE* f = fp.get();

  char magic[4];
  get(f, magic, 4, path);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  const uint32_t version = get_u32(f, path);
  if (version != kVersion)
    throw FormatError("checkpoint '" + path + "' has unsupported version " +
                      std::to_string(version));
  const uint8_t arch_id = get_u8(f, path);
  if (arch_id > uint8_t(Arch::G_BIDIR))
    throw FormatError("checkpoint '" + path + "' names an unknown architecture");
  const Arch arch = Arch(arch_id);
  if (expect_arch && arch != *expect_arch)
    throw FormatError("checkpoint '" + path + "' holds architecture " +
                      arch_name(arch) + ", expected " +
                      arch_name(*expect_arch));
  const uint8_t order_id = get_u8(f, path);
  if (order_id > uint8_t(ScaleOrder::random_fixed))
    throw FormatError("checkpoint '" + path + "' names an unknown scale order");
  const bool bn_populated = get_u8(f, path) != 0;
  (void)get_u8(f, path);  // reserved

  CkptMeta md;
  md.seed = get_u64(f, path);
  md.epochs_run = get_u32(f, path);
  md.best_val_loss = get_f32(f, path);
  if (meta) *meta = md;

  auto m = build_model<float>(arch, ScaleOrder(order_id));
  const uint32_t n_tensors = get_u32(f, path);
  if (n_tensors != m.reg.items.size())
    throw FormatError("checkpoint '" + path + "' holds " +
                      std::to_string(n_tensors) + " tensors, architecture " +
                      arch_name(arch) + " expects " +
                      std::to_string(m.reg.items.size()));

  for (auto& e : m.reg.items) {
    const uint32_t name_len = get_u32(f, path);
    if (name_len > 4096)
      throw FormatError("checkpoint '" + path + "' has an oversized name field");
    std::string name(name_len, '\0');
    get(f, name.data(), name_len, path);
    if (name != e.name)
      throw FormatError("checkpoint '" + path + "' tensor '" + name +
                        "' does not match expected '" + e.name + "'");
    const uint32_t rank = get_u32(f, path);
    if (int(rank) != e.t.rank())
      throw FormatError("checkpoint '" + path + "' tensor '" + name +
                        "' has unexpected rank");
    for (int d = 0; d < e.t.rank(); ++d) {
      const uint32_t ext = get_u32(f, path);
      if (int(ext) != e.t.dim(d))
        throw FormatError("checkpoint '" + path + "' tensor '" + name +
                          "' has unexpected shape");
    }
    get(f, e.t.data(), sizeof(float) * size_t(e.t.numel()), path);
  }

  // Trailing garbage means the file is not what it claims to be.
  uint8_t probe;
  if (std::fread(&probe, 1, 1, f) == 1)
    throw FormatError("checkpoint '" + path + "' has trailing data");

  m.set_bn_populated(bn_populated);
  return m;
}

}  // namespace cseg
