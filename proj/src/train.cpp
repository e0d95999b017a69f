#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "cseg/ops.hpp"
#include "cseg/train.hpp"

namespace fs = std::filesystem;

namespace cseg {

void validate(const TrainConfig& cfg) {
  if (cfg.learning_rate <= 0.0)
    throw ArgumentError("TrainConfig: learning_rate must be > 0");
  if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
    throw ArgumentError("TrainConfig: betas must lie in [0,1)");
  if (cfg.eps_adam <= 0.0) throw ArgumentError("TrainConfig: eps_adam must be > 0");
  if (cfg.batch_size < 1) throw ArgumentError("TrainConfig: batch_size must be >= 1");
  if (cfg.max_epochs < 0) throw ArgumentError("TrainConfig: max_epochs must be >= 0");
  if (cfg.patience < 1) throw ArgumentError("TrainConfig: patience must be >= 1");
  if (cfg.min_improvement < 0.0)
    throw ArgumentError("TrainConfig: min_improvement must be >= 0");
  const double sum = cfg.fractions[0] + cfg.fractions[1] + cfg.fractions[2];
  if (cfg.fractions[0] <= 0.0 || cfg.fractions[1] <= 0.0 ||
      cfg.fractions[2] <= 0.0 || std::abs(sum - 1.0) > 1e-9)
    throw ArgumentError("TrainConfig: fractions must be positive and sum to 1");
}

// ------------------------------------------------------------------- adam

AdamState adam_init(const ParamRegistry<float>& reg) {
  AdamState st;
  for (const auto& e : reg.items) {
    if (!e.trainable) continue;
    AdamState::Slot s;
    s.m.assign(size_t(e.t.numel()), 0.0f);
    s.v.assign(size_t(e.t.numel()), 0.0f);
    st.slots.push_back(std::move(s));
  }
  return st;
}

void adam_step(ParamRegistry<float>& reg, AdamState& st,
               const TrainConfig& cfg) {
  size_t slot = 0;
  for (const auto& e : reg.items)
    if (e.trainable) ++slot;
  if (slot != st.slots.size())
    throw ArgumentError("adam_step: optimizer state built for a different model");

  ++st.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(st.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(st.t));
  slot = 0;
  for (auto& e : reg.items) {
    if (!e.trainable) continue;
    AdamState::Slot& s = st.slots[slot++];
    Tensor<float>& p = e.t;
    std::vector<float>& g = p.gradvec();
    if (g.empty()) continue;  // no backward pass touched it: gradient is zero
    float* pv = p.data();
    for (size_t i = 0; i < g.size(); ++i) {
      const double gi = double(g[i]);
      if (!std::isfinite(gi))
        throw StateError("adam_step: non-finite gradient in '" + e.name +
                         "' at element " + std::to_string(i));
      const double m = cfg.beta1 * double(s.m[i]) + (1.0 - cfg.beta1) * gi;
      const double v = cfg.beta2 * double(s.v[i]) + (1.0 - cfg.beta2) * gi * gi;
      s.m[i] = float(m);
      s.v[i] = float(v);
      pv[i] = float(double(pv[i]) -
                    cfg.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg.eps_adam));
      g[i] = 0.0f;
    }
  }
}

// ------------------------------------------------------------------ splits

SlideSplit split_by_slide(const std::vector<PatchGroup>& groups,
                          const std::array<double, 3>& fractions, Rng& rng) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (fractions[0] <= 0.0 || fractions[1] <= 0.0 || fractions[2] <= 0.0 ||
      std::abs(sum - 1.0) > 1e-9)
    throw ArgumentError("split_by_slide: fractions must be positive and sum to 1");

  std::unordered_map<std::string, size_t> pos;
  std::vector<std::string> ids;
  std::vector<std::vector<int>> members;
  for (size_t i = 0; i < groups.size(); ++i) {
    const std::string& sid = groups[i].slide_id;
    auto it = pos.find(sid);
    if (it == pos.end()) {
      it = pos.emplace(sid, ids.size()).first;
      ids.push_back(sid);
      members.emplace_back();
    }
    members[it->second].push_back(int(i));
  }
  if (ids.size() < 3)
    throw ArgumentError("split_by_slide: need at least 3 slides, got " +
                        std::to_string(ids.size()));

  std::vector<size_t> order(ids.size());
  std::iota(order.begin(), order.end(), size_t(0));
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[size_t(rng.bounded(uint64_t(i)))]);

  const double total = double(groups.size());
  const double budget0 = fractions[0] * total, budget1 = fractions[1] * total;
  SlideSplit out;
  int phase = 0;
  double count[2] = {0.0, 0.0};
  for (size_t k = 0; k < order.size(); ++k) {
    const size_t remaining = order.size() - k;  // slides left, this one included
    if (phase == 0 && (count[0] >= budget0 - 1e-9 || remaining <= 2)) phase = 1;
    if (phase == 1 && (count[1] >= budget1 - 1e-9 || remaining <= 1)) phase = 2;
    out.slides[size_t(phase)].push_back(ids[order[k]]);
    const auto& m = members[order[k]];
    out.indices[size_t(phase)].insert(out.indices[size_t(phase)].end(),
                                      m.begin(), m.end());
    if (phase < 2) count[phase] += double(m.size());
  }
  return out;
}

void write_split_csv(const SlideSplit& split, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "slide_id,part\n";
  static const char* kPart[3] = {"train", "val", "test"};
  for (int part = 0; part < 3; ++part)
    for (const auto& sid : split.slides[size_t(part)])
      f << sid << ',' << kPart[part] << '\n';
  if (!f.good()) throw IoError("short write to '" + path + "'");
}

// ---------------------------------------------------------------- trainlog

void write_train_log(const TrainLog& log, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "epoch,train_loss,val_loss,f1_c0,f1_c1,f1_c2,f1_c3\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  r.epoch, r.train_loss, r.val_loss, r.f1[0], r.f1[1], r.f1[2],
                  r.f1[3]);
    f << buf;
  }
  if (!f.good()) throw IoError("short write to '" + path + "'");
}

TrainLog read_train_log(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line) ||
      line != "epoch,train_loss,val_loss,f1_c0,f1_c1,f1_c2,f1_c3")
    throw FormatError("'" + path + "' is not a training log (bad header)");
  TrainLog log;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    TrainLogRow r;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf", &r.epoch,
                    &r.train_loss, &r.val_loss, &r.f1[0], &r.f1[1], &r.f1[2],
                    &r.f1[3]) != 7)
      throw FormatError("'" + path + "': malformed row '" + line + "'");
    log.push_back(r);
  }
  return log;
}

// -------------------------------------------------------------- evaluation

// Activation memory governs how many samples one forward pass may hold.
int micro_cap(const Model<float>& m, int batch, bool training) {
  if (m.uses_hires()) return training ? 2 : 4;
  if (m.uses_all_scales()) return std::min(batch, training ? 32 : 64);
  return batch;
}

namespace {

void tally(EvalCounts& c, const std::vector<int>& preds,
           const std::vector<int>& labels) {
  for (size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == labels[i]) {
      ++c.tp[size_t(labels[i])];
    } else {
      ++c.fp[size_t(preds[i])];
      ++c.fn[size_t(labels[i])];
    }
  }
}

}  // namespace

EvalCounts evaluate(Model<float>& model, const std::vector<PatchGroup>& groups,
                    const std::vector<int>& indices, int batch_size) {
  if (batch_size < 1) throw ArgumentError("evaluate: batch_size must be >= 1");
  const bool with_hires = model.uses_hires();
  const int step = micro_cap(model, batch_size, /*training=*/false);
  EvalCounts counts;
  Ctx<float> cx{nullptr, Mode::eval, nullptr};
  for (size_t b0 = 0; b0 < indices.size(); b0 += size_t(step)) {
    const size_t bsz = std::min(indices.size() - b0, size_t(step));
    const std::vector<int> chunk(indices.begin() + long(b0),
                                 indices.begin() + long(b0 + bsz));
    Batch batch = make_batch(groups, chunk, with_hires);
    Tensor<float> logits =
        model.forward(cx, batch.scales, with_hires ? &batch.hires : nullptr);
    Tensor<float> loss = softmax_cross_entropy(cx, logits, batch.labels);
    counts.loss_sum += double(loss.data()[0]) * double(bsz);
    counts.n += int64_t(bsz);
    tally(counts, argmax_rows(logits), batch.labels);
  }
  return counts;
}

// ---------------------------------------------------------------- training

namespace {

std::vector<std::vector<float>> snapshot_params(const ParamRegistry<float>& reg) {
  std::vector<std::vector<float>> out;
  out.reserve(reg.items.size());
  for (const auto& e : reg.items) out.push_back(e.t.vec());
  return out;
}

void restore_params(ParamRegistry<float>& reg,
                    const std::vector<std::vector<float>>& snap) {
  for (size_t i = 0; i < reg.items.size(); ++i) reg.items[i].t.vec() = snap[i];
}

}  // namespace

TrainResult train(Arch arch, ScaleOrder order,
                  const std::vector<PatchGroup>& groups,
                  const SlideSplit& split, const TrainConfig& cfg,
                  uint64_t seed) {
  validate(cfg);
  if (split.indices[0].empty())
    throw ArgumentError("train: empty training split");

  Rng init_rng = Rng(seed).stream("init");
  TrainResult res{build_and_init<float>(arch, init_rng, order), CkptMeta{}, {}};
  res.meta.seed = seed;
  res.meta.best_val_loss = std::numeric_limits<float>::infinity();
  if (cfg.max_epochs == 0) return res;
  if (split.indices[1].empty())
    throw ArgumentError("train: empty validation split");

  AdamState adam = adam_init(res.model.reg);
  const bool with_hires = res.model.uses_hires();
  const int micro = micro_cap(res.model, cfg.batch_size, /*training=*/true);

  std::vector<std::vector<float>> best = snapshot_params(res.model.reg);
  double best_ckpt_val = std::numeric_limits<double>::infinity();
  double best_signif_val = std::numeric_limits<double>::infinity();
  int epochs_without_improvement = 0;

  std::vector<int> train_idx = split.indices[0];
  const double n_train = double(train_idx.size());

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng erng = Rng(seed).stream("epoch/" + std::to_string(epoch));
    for (size_t i = train_idx.size(); i > 1; --i)
      std::swap(train_idx[i - 1], train_idx[size_t(erng.bounded(uint64_t(i)))]);

    double loss_sum = 0.0;
    for (size_t b0 = 0; b0 < train_idx.size(); b0 += size_t(cfg.batch_size)) {
      const int bsz =
          int(std::min(train_idx.size() - b0, size_t(cfg.batch_size)));
      for (int m0 = 0; m0 < bsz; m0 += micro) {
        const int msz = std::min(micro, bsz - m0);
        std::vector<PatchGroup> aug;
        aug.reserve(size_t(msz));
        std::vector<int> iota_idx(static_cast<size_t>(msz));
        for (int k = 0; k < msz; ++k) {
          const PatchGroup& src = groups[size_t(train_idx[b0 + size_t(m0 + k)])];
          const int t = int(erng.bounded(8));
          PatchGroup g;
          g.slide_id = src.slide_id;
          g.cx = src.cx;
          g.cy = src.cy;
          g.label = src.label;
          g.transform = t;
          for (int s = 0; s < kNumScales; ++s)
            g.scales[size_t(s)] = dihedral(src.scales[size_t(s)], t);
          if (with_hires) {
            if (src.hires.empty())
              throw InputError("train: group " + src.slide_id + "/" +
                               std::to_string(src.cx) + "_" +
                               std::to_string(src.cy) +
                               " lacks the high-resolution patch this "
                               "architecture trains on");
            g.hires = dihedral(src.hires, t);
          }
          aug.push_back(std::move(g));
          iota_idx[size_t(k)] = k;
        }
        Batch batch = make_batch(aug, iota_idx, with_hires);
        Graph<float> tape;
        Ctx<float> cx{&tape, Mode::train, &erng};
        Tensor<float> logits = res.model.forward(
            cx, batch.scales, with_hires ? &batch.hires : nullptr);
        Tensor<float> loss = softmax_cross_entropy(cx, logits, batch.labels);
        tape.backward(loss, float(double(msz) / double(bsz)));
        loss_sum += double(loss.data()[0]) * double(msz);
      }
      adam_step(res.model.reg, adam, cfg);
    }
    const double train_loss = loss_sum / n_train;
    if (!std::isfinite(train_loss))
      throw StateError("train: non-finite training loss at epoch " +
                       std::to_string(epoch));

    const EvalCounts vc =
        evaluate(res.model, groups, split.indices[1], cfg.batch_size);
    const double val_loss = vc.mean_loss();
    res.log.push_back(TrainLogRow{epoch, train_loss, val_loss,
                                  {vc.f1(0), vc.f1(1), vc.f1(2), vc.f1(3)}});
    res.meta.epochs_run = uint32_t(epoch);

    if (val_loss < best_ckpt_val) {  // checkpoint tracks the strict minimum
      best_ckpt_val = val_loss;
      best = snapshot_params(res.model.reg);
    }
    if (val_loss <= best_signif_val - cfg.min_improvement) {
      best_signif_val = val_loss;
      epochs_without_improvement = 0;
    } else if (++epochs_without_improvement >= cfg.patience) {
      break;
    }
  }

  restore_params(res.model.reg, best);
  res.meta.best_val_loss = float(best_ckpt_val);
  return res;
}

RunSet train_triplicate(Arch arch, ScaleOrder order,
                        const std::vector<PatchGroup>& groups,
                        const SlideSplit& split, const TrainConfig& cfg,
                        const std::string& run_dir) {
  validate(cfg);
  RunSet rs;
  rs.dir = run_dir;
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create '" + run_dir + "': " + ec.message());
  write_split_csv(split, run_dir + "/splits.csv");
  for (int r = 0; r < 3; ++r) {
    const std::string dir = run_dir + "/run" + std::to_string(r);
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
    TrainResult tr = train(arch, order, groups, split, cfg, cfg.seeds[size_t(r)]);
    rs.ckpt_paths[size_t(r)] = dir + "/model.ckpt";
    rs.log_paths[size_t(r)] = dir + "/log.csv";
    save_checkpoint(tr.model, rs.ckpt_paths[size_t(r)], tr.meta);
    write_train_log(tr.log, rs.log_paths[size_t(r)]);
    rs.metas[size_t(r)] = tr.meta;
    rs.logs[size_t(r)] = std::move(tr.log);
  }
  return rs;
}

RunSet open_run_set(const std::string& dir) {
  RunSet rs;
  rs.dir = dir;
  for (int r = 0; r < 3; ++r) {
    const std::string sub = dir + "/run" + std::to_string(r);
    rs.ckpt_paths[size_t(r)] = sub + "/model.ckpt";
    rs.log_paths[size_t(r)] = sub + "/log.csv";
    if (!fs::exists(rs.ckpt_paths[size_t(r)]))
      throw IngestError("run set '" + dir + "' is missing " +
                        rs.ckpt_paths[size_t(r)]);
    load_checkpoint(rs.ckpt_paths[size_t(r)], &rs.metas[size_t(r)]);
    rs.logs[size_t(r)] = read_train_log(rs.log_paths[size_t(r)]);
  }
  return rs;
}

SlideSplit read_split_csv(const std::string& path,
                          const std::vector<PatchGroup>& groups) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(f, line) || line != "slide_id,part")
    throw IngestError("'" + path + "' does not start with slide_id,part");

  static const char* kPart[3] = {"train", "val", "test"};
  SlideSplit split;
  std::unordered_map<std::string, int> part_of;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw IngestError("'" + path + "': malformed row '" + line + "'");
    const std::string sid = line.substr(0, comma);
    const std::string part = line.substr(comma + 1);
    int p = -1;
    for (int k = 0; k < 3; ++k)
      if (part == kPart[k]) p = k;
    if (p < 0)
      throw IngestError("'" + path + "': unknown part '" + part + "' for slide " +
                        sid);
    if (!part_of.emplace(sid, p).second)
      throw IngestError("'" + path + "': slide " + sid + " listed twice");
    split.slides[size_t(p)].push_back(sid);
  }

  std::unordered_map<std::string, int64_t> groups_seen;
  for (size_t i = 0; i < groups.size(); ++i) {
    const auto it = part_of.find(groups[i].slide_id);
    if (it == part_of.end())
      throw IngestError("'" + path + "' does not mention slide " +
                        groups[i].slide_id);
    split.indices[size_t(it->second)].push_back(int(i));
    ++groups_seen[groups[i].slide_id];
  }
  for (const auto& [sid, part] : part_of) {
    (void)part;
    if (!groups_seen.count(sid))
      throw IngestError("'" + path + "' names slide " + sid +
                        " but the dataset has no patches for it");
  }
  return split;
}

}  // namespace cseg
