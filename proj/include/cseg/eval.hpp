#pragma once
// Pooled-run F1 scoring, relative-performance ranking with rank-sums,
// report emission (CSV + markdown), the input-corruption and scale-order
// experiments, and inference timing.

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cseg/train.hpp"

namespace cseg {

// Per-class confusion counts. Fractional, because averaging across runs is
// part of the scoring protocol.
struct ConfusionCounts {
  std::array<double, kNumClasses> tp{}, fp{}, fn{};
};

ConfusionCounts to_confusion(const EvalCounts& counts);

// Arithmetic-mean the counts across runs, then per class
// F1 = 2*TP / (2*TP + FP + FN), or 0 when the denominator is 0.
// Requires at least one run and non-negative counts.
std::array<double, kNumClasses> f1_from_runs(
    const std::vector<ConfusionCounts>& runs);

// Rank one row of scores relative to its best value: the best entry gets
// rank 1 (ties broken toward the earliest entry); any other value v gets
// rank 2/3/4/5 for the tightest satisfied threshold
// v >= best * {0.975, 0.95, 0.90, 0.85}, and rank 6 below all of them.
// Comparisons use >= on the values exactly as given. Values must be >= 0.
std::vector<int> color_rank(const std::vector<double>& row);

struct MetricsTable {
  std::vector<std::string> methods;     // column labels
  std::vector<std::string> classes;     // row labels
  std::vector<std::vector<double>> f1;  // [class][method]
};

struct RankTable {
  std::vector<std::string> methods;
  std::vector<std::string> classes;
  std::vector<std::vector<int>> ranks;  // [class][method]
  std::vector<int> sums;                // per-method rank-sum over classes
};

// Apply color_rank to every class row and accumulate per-method rank-sums.
RankTable rank_table(const MetricsTable& metrics);

// Per-method totals across several rank tables (one per dataset). The
// method lists must match across tables.
std::vector<int> total_rank_sum(const std::vector<RankTable>& tables);

// ------------------------------------------------------------------ reports

struct DatasetReport {
  std::string name;
  MetricsTable metrics;
  RankTable ranks;
};

// CSV with header `method,class,f1,rank`, one row per (method, class) cell.
void write_report_csv(const DatasetReport& report, const std::string& path);

// Parse a file written by write_report_csv. The returned report's name is
// empty (the schema does not carry one); methods and classes come back in
// first-appearance order.
DatasetReport read_report_csv(const std::string& path);

// Markdown table: one F1 row per class with the rank in brackets and the
// best method bold, a rank-sum row per dataset, and a grand-total row when
// more than one dataset is given.
void write_report_md(const std::vector<DatasetReport>& datasets,
                     const std::string& path);

// Inverse of write_report_md: reads the table back into one report per
// dataset, F1 cells at their printed 3-decimal precision and ranks from the
// bracketed annotations.  The rank-sum rows must agree with the parsed
// ranks; a malformed or inconsistent table is a format error.
std::vector<DatasetReport> read_report_md(const std::string& path);

// Round to the 3-decimal precision tabulated reports use.  The report
// pipeline rounds F1 this way before ranking, so the ranks always match
// what a reader computes from the printed numbers.
inline double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

// --------------------------------------------- input-corruption experiment

// 100 * (f1_p - f1_baseline) / f1_baseline. The baseline must be > 0.
double delta_f1_percent(double f1_p, double f1_baseline);

struct NoiseSpec {
  std::vector<double> p_levels{0.1, 0.3, 0.5};
  int batch_size = 64;
};

struct NoiseCell {
  double p = 0.0;
  std::array<double, kNumClasses> f1{};         // pooled across runs
  std::array<double, kNumClasses> delta_pct{};  // vs the p = 0 baseline
};

struct NoiseResult {
  std::vector<std::string> models;
  std::vector<double> p_levels;               // baseline 0 first, then spec's
  std::vector<std::vector<NoiseCell>> cells;  // [model][level]
};

// For each corruption level, corrupt the four pyramid scales of the test
// groups once (shared across models and runs, so every comparison sees
// identical inputs; draws come from a per-level stream of `rng`, making the
// experiment replayable), evaluate every run of every model, pool the
// confusion counts into per-class F1, and report the relative change
// against the uncorrupted baseline. Every class must have a positive
// baseline F1 for every model.
NoiseResult noise_experiment(
    const std::vector<std::pair<std::string, const RunSet*>>& models,
    const std::vector<PatchGroup>& groups, const std::vector<int>& test_indices,
    const NoiseSpec& spec, Rng& rng);

// CSV with header `model,p,class,f1,delta_pct`.
void write_noise_csv(const NoiseResult& result, const std::string& path);

// ------------------------------------------------- scale-order experiment

struct OrderResult {
  std::vector<std::string> conditions;              // the four fixed setups
  std::vector<std::array<double, kNumClasses>> f1;  // [condition][class]
};

// Trains the recurrent four-scale model in triplicate under each scale
// order — low_to_high, high_to_low, random_fixed — plus its bidirectional
// variant, then pools test-split F1 per condition. Artifacts land under
// `<run_root>/<condition>/`.
OrderResult order_experiment(const std::vector<PatchGroup>& groups,
                             const SlideSplit& split, const TrainConfig& cfg,
                             const std::string& run_root);

// CSV with header `condition,class,f1`.
void write_order_csv(const OrderResult& result, const std::string& path);

// ------------------------------------------------------------------ timing

// Wall-clock seconds per model for one eval-mode pass over the given
// groups: single worker, the same nominal batch size for every model (the
// evaluation loop may subdivide a batch internally to bound memory; the
// subdivision is deterministic per model). One discarded warm-up pass runs
// per model before its timed pass.
std::vector<double> time_models(const std::vector<Model<float>*>& models,
                                const std::vector<PatchGroup>& groups,
                                const std::vector<int>& indices,
                                int batch_size);

}  // namespace cseg
