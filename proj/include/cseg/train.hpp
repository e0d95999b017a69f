#pragma once
// Dataset splitting, Adam optimization, early stopping, and the
// three-seed training protocol.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cseg/data.hpp"
#include "cseg/model.hpp"

namespace cseg {

struct TrainConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  int batch_size = 64;
  int max_epochs = 100;
  int patience = 10;              // epochs without a significant new best
  double min_improvement = 1e-5;  // absolute val-loss improvement threshold
  std::array<uint64_t, 3> seeds{1, 2, 3};
  std::array<double, 3> fractions{0.56, 0.14, 0.30};
};

// Throws ArgumentError on out-of-range fields (fractions must sum to 1).
void validate(const TrainConfig& cfg);

// First/second moment buffers, one slot per trainable registry entry.
struct AdamState {
  struct Slot {
    std::vector<float> m, v;
  };
  std::vector<Slot> slots;
  int64_t t = 0;  // completed optimizer steps
};

AdamState adam_init(const ParamRegistry<float>& reg);

// One optimizer step over all trainable parameters: standard bias-corrected
// Adam, reading and then zeroing each parameter's accumulated gradient.
// A non-finite gradient aborts with a StateError naming the parameter.
void adam_step(ParamRegistry<float>& reg, AdamState& st,
               const TrainConfig& cfg);

// Slide-level partition: no slide contributes patches to two parts.
struct SlideSplit {
  std::array<std::vector<std::string>, 3> slides;  // train / val / test ids
  std::array<std::vector<int>, 3> indices;         // group indices per part
};

SlideSplit split_by_slide(const std::vector<PatchGroup>& groups,
                          const std::array<double, 3>& fractions, Rng& rng);

void write_split_csv(const SlideSplit& split, const std::string& path);

struct TrainLogRow {
  int epoch = 0;
  double train_loss = 0.0, val_loss = 0.0;
  std::array<double, 4> f1{};  // per-class validation F1
};
using TrainLog = std::vector<TrainLogRow>;

// CSV with header `epoch,train_loss,val_loss,f1_c0,f1_c1,f1_c2,f1_c3`.
void write_train_log(const TrainLog& log, const std::string& path);
TrainLog read_train_log(const std::string& path);

// Per-class confusion counts plus summed loss over one evaluation pass.
struct EvalCounts {
  std::array<int64_t, kNumClasses> tp{}, fp{}, fn{};
  int64_t n = 0;
  double loss_sum = 0.0;

  double mean_loss() const { return n ? loss_sum / double(n) : 0.0; }
  double f1(int c) const {
    const double denom = double(2 * tp[size_t(c)] + fp[size_t(c)] + fn[size_t(c)]);
    return denom > 0.0 ? 2.0 * double(tp[size_t(c)]) / denom : 0.0;
  }
};

// Activation memory governs how many samples one forward pass may hold on
// this machine; forward passes subdivide nominal batches to this cap.
int micro_cap(const Model<float>& m, int batch, bool training);

// Eval-mode pass (batchnorm running stats, no dropout, no autodiff) over the
// indexed groups.  Requires populated batchnorm statistics.
EvalCounts evaluate(Model<float>& model, const std::vector<PatchGroup>& groups,
                    const std::vector<int>& indices, int batch_size);

struct TrainResult {
  Model<float> model;  // weights of the best-validation epoch
  CkptMeta meta;
  TrainLog log;
};

// Full training loop: seeded shuffling, train-only dihedral augmentation,
// per-epoch validation, best-checkpoint tracking, early stopping.
TrainResult train(Arch arch, ScaleOrder order,
                  const std::vector<PatchGroup>& groups,
                  const SlideSplit& split, const TrainConfig& cfg,
                  uint64_t seed);

struct RunSet {
  std::string dir;
  std::array<std::string, 3> ckpt_paths, log_paths;
  std::array<CkptMeta, 3> metas;
  std::array<TrainLog, 3> logs;
};

// Trains the same architecture once per configured seed on one shared split,
// persisting run<k>/model.ckpt, run<k>/log.csv and splits.csv under run_dir.
RunSet train_triplicate(Arch arch, ScaleOrder order,
                        const std::vector<PatchGroup>& groups,
                        const SlideSplit& split, const TrainConfig& cfg,
                        const std::string& run_dir);

// Reopens a persisted triplicate directory: run0..run2 must each hold
// model.ckpt and log.csv.  Metadata and logs are loaded; the checkpoints
// themselves stay on disk until a consumer asks for the weights.
RunSet open_run_set(const std::string& dir);

// Inverse of write_split_csv over a concrete group list: reassembles the
// three slide lists and the per-part group indices.  A slide named in the
// file but absent from the groups, a group whose slide the file omits, or
// an unknown part token is an ingest error.
SlideSplit read_split_csv(const std::string& path,
                          const std::vector<PatchGroup>& groups);

}  // namespace cseg
