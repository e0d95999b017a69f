#include "cseg/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <tuple>

namespace cseg {

namespace {

constexpr std::array<double, 4> kRankFractions{0.975, 0.95, 0.90, 0.85};

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  return f;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

void check_table(const MetricsTable& t) {
  if (t.methods.empty() || t.classes.empty())
    throw ArgumentError("metrics table needs at least one method and class");
  if (t.f1.size() != t.classes.size())
    throw ArgumentError("metrics table has " + std::to_string(t.f1.size()) +
                        " rows for " + std::to_string(t.classes.size()) +
                        " classes");
  for (const auto& row : t.f1)
    if (row.size() != t.methods.size())
      throw ArgumentError("metrics table row width " +
                          std::to_string(row.size()) + " does not match " +
                          std::to_string(t.methods.size()) + " methods");
}

}  // namespace

ConfusionCounts to_confusion(const EvalCounts& counts) {
  ConfusionCounts out;
  for (int c = 0; c < kNumClasses; ++c) {
    out.tp[size_t(c)] = double(counts.tp[size_t(c)]);
    out.fp[size_t(c)] = double(counts.fp[size_t(c)]);
    out.fn[size_t(c)] = double(counts.fn[size_t(c)]);
  }
  return out;
}

std::array<double, kNumClasses> f1_from_runs(
    const std::vector<ConfusionCounts>& runs) {
  if (runs.empty()) throw ArgumentError("f1_from_runs: need at least one run");
  std::array<double, kNumClasses> out{};
  for (int c = 0; c < kNumClasses; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (const ConfusionCounts& r : runs) {
      if (r.tp[size_t(c)] < 0 || r.fp[size_t(c)] < 0 || r.fn[size_t(c)] < 0)
        throw ArgumentError("f1_from_runs: negative count for class " +
                            std::to_string(c));
      tp += r.tp[size_t(c)];
      fp += r.fp[size_t(c)];
      fn += r.fn[size_t(c)];
    }
    tp /= double(runs.size());
    fp /= double(runs.size());
    fn /= double(runs.size());
    const double denom = 2.0 * tp + fp + fn;
    out[size_t(c)] = denom > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  return out;
}

std::vector<int> color_rank(const std::vector<double>& row) {
  if (row.empty()) throw ArgumentError("color_rank: empty row");
  for (const double v : row)
    if (!(v >= 0.0))
      throw ArgumentError("color_rank: values must be non-negative");
  const double best = *std::max_element(row.begin(), row.end());
  std::vector<int> ranks(row.size(), 6);
  bool best_taken = false;
  for (size_t i = 0; i < row.size(); ++i) {
    if (row[i] == best && !best_taken) {
      ranks[i] = 1;
      best_taken = true;
      continue;
    }
    for (size_t r = 0; r < kRankFractions.size(); ++r)
      if (row[i] >= best * kRankFractions[r]) {
        ranks[i] = int(r) + 2;
        break;
      }
  }
  return ranks;
}

RankTable rank_table(const MetricsTable& metrics) {
  check_table(metrics);
  RankTable out;
  out.methods = metrics.methods;
  out.classes = metrics.classes;
  out.sums.assign(metrics.methods.size(), 0);
  for (const auto& row : metrics.f1) {
    out.ranks.push_back(color_rank(row));
    for (size_t m = 0; m < row.size(); ++m)
      out.sums[m] += out.ranks.back()[m];
  }
  return out;
}

std::vector<int> total_rank_sum(const std::vector<RankTable>& tables) {
  if (tables.empty())
    throw ArgumentError("total_rank_sum: need at least one table");
  std::vector<int> out(tables.front().methods.size(), 0);
  for (const RankTable& t : tables) {
    if (t.methods != tables.front().methods)
      throw ArgumentError(
          "total_rank_sum: tables rank different method lists");
    if (t.sums.size() != out.size())
      throw ArgumentError("total_rank_sum: malformed rank table");
    for (size_t m = 0; m < out.size(); ++m) out[m] += t.sums[m];
  }
  return out;
}

// ------------------------------------------------------------------ reports

void write_report_csv(const DatasetReport& report, const std::string& path) {
  check_table(report.metrics);
  if (report.ranks.ranks.size() != report.metrics.classes.size())
    throw ArgumentError("report rank rows do not match its classes");
  std::ofstream f = open_out(path);
  f << "method,class,f1,rank\n";
  for (size_t m = 0; m < report.metrics.methods.size(); ++m)
    for (size_t c = 0; c < report.metrics.classes.size(); ++c)
      f << report.metrics.methods[m] << ',' << report.metrics.classes[c]
        << ',' << fmt("%.17g", report.metrics.f1[c][m]) << ','
        << report.ranks.ranks[c][m] << '\n';
  if (!f) throw IoError("failed writing '" + path + "'");
}

DatasetReport read_report_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line) ||
      split_csv_line(line) != std::vector<std::string>{"method", "class",
                                                       "f1", "rank"})
    throw FormatError("'" + path +
                      "': expected header method,class,f1,rank");
  DatasetReport out;
  std::vector<std::tuple<std::string, std::string, double, int>> rows;
  size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != 4)
      throw FormatError("'" + path + "' line " + std::to_string(line_no) +
                        ": expected 4 fields, got " +
                        std::to_string(cells.size()));
    double f1 = 0;
    int rank = 0;
    try {
      size_t used = 0;
      f1 = std::stod(cells[2], &used);
      if (used != cells[2].size()) throw std::invalid_argument("trailing");
      used = 0;
      rank = std::stoi(cells[3], &used);
      if (used != cells[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError("'" + path + "' line " + std::to_string(line_no) +
                        ": unparseable f1/rank");
    }
    if (rank < 1 || rank > 6)
      throw FormatError("'" + path + "' line " + std::to_string(line_no) +
                        ": rank " + std::to_string(rank) +
                        " outside 1..6");
    rows.emplace_back(cells[0], cells[1], f1, rank);
  }
  if (rows.empty()) throw FormatError("'" + path + "': no data rows");

  auto index_of = [](std::vector<std::string>& names,
                     const std::string& name) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it != names.end()) return size_t(it - names.begin());
    names.push_back(name);
    return names.size() - 1;
  };
  for (const auto& [method, cls, f1, rank] : rows) {
    index_of(out.metrics.methods, method);
    index_of(out.metrics.classes, cls);
  }
  const size_t n_m = out.metrics.methods.size();
  const size_t n_c = out.metrics.classes.size();
  out.metrics.f1.assign(n_c, std::vector<double>(n_m, -1.0));
  out.ranks.methods = out.metrics.methods;
  out.ranks.classes = out.metrics.classes;
  out.ranks.ranks.assign(n_c, std::vector<int>(n_m, 0));
  for (const auto& [method, cls, f1, rank] : rows) {
    const size_t m = index_of(out.metrics.methods, method);
    const size_t c = index_of(out.metrics.classes, cls);
    if (out.metrics.f1[c][m] >= 0.0)
      throw FormatError("'" + path + "': duplicate cell " + method + "/" +
                        cls);
    out.metrics.f1[c][m] = f1;
    out.ranks.ranks[c][m] = rank;
  }
  for (size_t c = 0; c < n_c; ++c)
    for (size_t m = 0; m < n_m; ++m)
      if (out.metrics.f1[c][m] < 0.0)
        throw FormatError("'" + path + "': missing cell " +
                          out.metrics.methods[m] + "/" +
                          out.metrics.classes[c]);
  out.ranks.sums.assign(n_m, 0);
  for (size_t c = 0; c < n_c; ++c)
    for (size_t m = 0; m < n_m; ++m) out.ranks.sums[m] += out.ranks.ranks[c][m];
  return out;
}

void write_report_md(const std::vector<DatasetReport>& datasets,
                     const std::string& path) {
  if (datasets.empty())
    throw ArgumentError("markdown report needs at least one dataset");
  for (const DatasetReport& d : datasets) {
    check_table(d.metrics);
    if (d.metrics.methods != datasets.front().metrics.methods)
      throw ArgumentError("markdown report: datasets list different methods");
  }
  const std::vector<std::string>& methods = datasets.front().metrics.methods;
  std::ofstream f = open_out(path);

  f << "| Dataset | Class |";
  for (const std::string& m : methods) f << ' ' << m << " |";
  f << "\n|---|---|";
  for (size_t i = 0; i < methods.size(); ++i) f << "---|";
  f << '\n';
  for (const DatasetReport& d : datasets) {
    for (size_t c = 0; c < d.metrics.classes.size(); ++c) {
      f << "| " << (c == 0 ? d.name : "") << " | " << d.metrics.classes[c]
        << " |";
      for (size_t m = 0; m < methods.size(); ++m) {
        const std::string cell =
            fmt("%.3f", d.metrics.f1[c][m]) + " [" +
            std::to_string(d.ranks.ranks[c][m]) + "]";
        if (d.ranks.ranks[c][m] == 1)
          f << " **" << cell << "** |";
        else
          f << ' ' << cell << " |";
      }
      f << '\n';
    }
    f << "| Rank-sum (" << d.name << ") | |";
    for (const int s : d.ranks.sums) f << ' ' << s << " |";
    f << '\n';
  }
  if (datasets.size() > 1) {
    std::vector<RankTable> tables;
    for (const DatasetReport& d : datasets) tables.push_back(d.ranks);
    f << "| Total rank-sum | |";
    for (const int s : total_rank_sum(tables)) f << ' ' << s << " |";
    f << '\n';
  }
  if (!f) throw IoError("failed writing '" + path + "'");
}

namespace {

// interior cells of a `| a | b | c |` row, whitespace-trimmed
std::vector<std::string> split_md_row(const std::string& line) {
  std::vector<std::string> cells;
  size_t pos = line.find('|');
  if (pos == std::string::npos) return cells;
  while (true) {
    const size_t next = line.find('|', pos + 1);
    if (next == std::string::npos) break;
    std::string cell = line.substr(pos + 1, next - pos - 1);
    const size_t b = cell.find_first_not_of(" \t");
    const size_t e = cell.find_last_not_of(" \t");
    cells.push_back(b == std::string::npos ? std::string()
                                           : cell.substr(b, e - b + 1));
    pos = next;
  }
  return cells;
}

}  // namespace

std::vector<DatasetReport> read_report_md(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for reading");

  std::string line;
  if (!std::getline(f, line))
    throw FormatError("'" + path + "' is empty");
  std::vector<std::string> header = split_md_row(line);
  if (header.size() < 3 || header[0] != "Dataset" || header[1] != "Class")
    throw FormatError("'" + path + "' does not start with a | Dataset | Class | header");
  const std::vector<std::string> methods(header.begin() + 2, header.end());
  if (!std::getline(f, line) || line.find("---") == std::string::npos)
    throw FormatError("'" + path + "' is missing the separator row");

  std::vector<DatasetReport> out;
  DatasetReport cur;
  bool open = false;
  auto flush_without_sums = [&] {
    if (open)
      throw FormatError("'" + path + "': dataset '" + cur.name +
                        "' has no rank-sum row");
  };

  while (std::getline(f, line)) {
    std::vector<std::string> cells = split_md_row(line);
    if (cells.empty()) continue;
    if (cells.size() != methods.size() + 2)
      throw FormatError("'" + path + "': row with " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(methods.size() + 2));
    if (cells[0].rfind("Total rank-sum", 0) == 0 ||
        cells[0].rfind("No. of parameters", 0) == 0 ||
        cells[0].rfind("Running time", 0) == 0) {
      flush_without_sums();
      continue;  // summary rows, derivable or out of the F1 schema
    }
    if (cells[0].rfind("Rank-sum (", 0) == 0) {
      if (!open)
        throw FormatError("'" + path + "': rank-sum row before any F1 rows");
      const size_t close = cells[0].rfind(')');
      if (close == std::string::npos || close < 10)
        throw FormatError("'" + path + "': bad rank-sum label '" + cells[0] + "'");
      cur.name = cells[0].substr(10, close - 10);
      for (size_t m = 0; m < methods.size(); ++m) {
        int s = 0;
        if (std::sscanf(cells[m + 2].c_str(), "%d", &s) != 1)
          throw FormatError("'" + path + "': bad rank-sum cell '" +
                            cells[m + 2] + "'");
        cur.ranks.sums.push_back(s);
      }
      RankTable recomputed = rank_table(cur.metrics);
      if (recomputed.ranks != cur.ranks.ranks || recomputed.sums != cur.ranks.sums)
        throw FormatError("'" + path + "': dataset '" + cur.name +
                          "' ranks disagree with its F1 values");
      out.push_back(std::move(cur));
      cur = DatasetReport{};
      open = false;
      continue;
    }
    // ordinary F1 row: dataset label (first row only), class, then cells
    if (!open) {
      cur.metrics.methods = methods;
      cur.ranks.methods = methods;
    }
    open = true;
    cur.metrics.classes.push_back(cells[1]);
    cur.ranks.classes.push_back(cells[1]);
    std::vector<double> frow;
    std::vector<int> rrow;
    for (size_t m = 0; m < methods.size(); ++m) {
      std::string cell = cells[m + 2];
      if (cell.size() > 4 && cell.rfind("**", 0) == 0 &&
          cell.compare(cell.size() - 2, 2, "**") == 0)
        cell = cell.substr(2, cell.size() - 4);
      double v = 0;
      int r = 0;
      if (std::sscanf(cell.c_str(), "%lf [%d]", &v, &r) != 2)
        throw FormatError("'" + path + "': bad F1 cell '" + cells[m + 2] + "'");
      frow.push_back(v);
      rrow.push_back(r);
    }
    cur.metrics.f1.push_back(std::move(frow));
    cur.ranks.ranks.push_back(std::move(rrow));
  }
  flush_without_sums();
  if (out.empty()) throw FormatError("'" + path + "' holds no datasets");
  return out;
}

// --------------------------------------------- input-corruption experiment

double delta_f1_percent(double f1_p, double f1_baseline) {
  if (!(f1_baseline > 0.0))
    throw StateError(
        "relative F1 change needs a positive baseline, got " +
        fmt("%.17g", f1_baseline));
  return 100.0 * (f1_p - f1_baseline) / f1_baseline;
}

namespace {

// Pool one model's runs on a fixed set of groups.
std::array<double, kNumClasses> pooled_f1(std::vector<Model<float>>& runs,
                                          const std::vector<PatchGroup>& groups,
                                          const std::vector<int>& indices,
                                          int batch_size) {
  std::vector<ConfusionCounts> counts;
  for (Model<float>& m : runs)
    counts.push_back(to_confusion(evaluate(m, groups, indices, batch_size)));
  return f1_from_runs(counts);
}

}  // namespace

NoiseResult noise_experiment(
    const std::vector<std::pair<std::string, const RunSet*>>& models,
    const std::vector<PatchGroup>& groups, const std::vector<int>& test_indices,
    const NoiseSpec& spec, Rng& rng) {
  if (models.empty())
    throw ArgumentError("noise_experiment: no models given");
  if (test_indices.empty())
    throw ArgumentError("noise_experiment: empty test set");
  if (spec.batch_size < 1)
    throw ArgumentError("noise_experiment: batch_size must be >= 1");
  for (const double p : spec.p_levels)
    if (!(p >= 0.0 && p <= 1.0))
      throw ArgumentError("noise_experiment: corruption level " +
                          fmt("%.17g", p) + " outside [0,1]");

  std::vector<PatchGroup> test;
  test.reserve(test_indices.size());
  for (const int gi : test_indices) {
    if (gi < 0 || size_t(gi) >= groups.size())
      throw ArgumentError("noise_experiment: group index " +
                          std::to_string(gi) + " out of range");
    test.push_back(groups[size_t(gi)]);
  }
  std::vector<int> local(test.size());
  std::iota(local.begin(), local.end(), 0);

  NoiseResult out;
  out.p_levels.push_back(0.0);
  for (const double p : spec.p_levels) out.p_levels.push_back(p);

  // Load every run of every model once, then reuse across levels.
  std::vector<std::vector<Model<float>>> loaded;
  for (const auto& [name, rs] : models) {
    if (rs == nullptr)
      throw ArgumentError("noise_experiment: null run set for '" + name +
                          "'");
    out.models.push_back(name);
    std::vector<Model<float>> runs;
    for (const std::string& ckpt : rs->ckpt_paths)
      runs.push_back(load_checkpoint(ckpt));
    loaded.push_back(std::move(runs));
  }

  out.cells.assign(models.size(), {});
  for (size_t mi = 0; mi < models.size(); ++mi) {
    NoiseCell base;
    base.p = 0.0;
    base.f1 = pooled_f1(loaded[mi], test, local, spec.batch_size);
    for (int c = 0; c < kNumClasses; ++c)
      if (!(base.f1[size_t(c)] > 0.0))
        throw StateError("noise_experiment: baseline F1 for model '" +
                         out.models[mi] + "' class " + std::to_string(c) +
                         " is 0; relative change is undefined");
    out.cells[mi].push_back(base);
  }

  for (size_t li = 0; li < spec.p_levels.size(); ++li) {
    const double p = spec.p_levels[li];
    Rng level_rng = rng.stream("noise/level" + std::to_string(li));
    std::vector<PatchGroup> corrupted;
    corrupted.reserve(test.size());
    for (const PatchGroup& g : test)
      corrupted.push_back(corrupt_scales(g, p, level_rng));
    for (size_t mi = 0; mi < models.size(); ++mi) {
      NoiseCell cell;
      cell.p = p;
      cell.f1 = pooled_f1(loaded[mi], corrupted, local, spec.batch_size);
      for (int c = 0; c < kNumClasses; ++c)
        cell.delta_pct[size_t(c)] = delta_f1_percent(
            cell.f1[size_t(c)], out.cells[mi][0].f1[size_t(c)]);
      out.cells[mi].push_back(cell);
    }
  }
  return out;
}

void write_noise_csv(const NoiseResult& result, const std::string& path) {
  std::ofstream f = open_out(path);
  f << "model,p,class,f1,delta_pct\n";
  for (size_t mi = 0; mi < result.models.size(); ++mi)
    for (const NoiseCell& cell : result.cells[mi])
      for (int c = 0; c < kNumClasses; ++c)
        f << result.models[mi] << ',' << fmt("%.9g", cell.p) << ',' << c
          << ',' << fmt("%.9g", cell.f1[size_t(c)]) << ','
          << fmt("%.9g", cell.delta_pct[size_t(c)]) << '\n';
  if (!f) throw IoError("failed writing '" + path + "'");
}

// ------------------------------------------------- scale-order experiment

OrderResult order_experiment(const std::vector<PatchGroup>& groups,
                             const SlideSplit& split, const TrainConfig& cfg,
                             const std::string& run_root) {
  if (split.indices[2].empty())
    throw ArgumentError("scale-order experiment needs a non-empty test split");
  struct Condition {
    const char* name;
    Arch arch;
    ScaleOrder order;
  };
  const std::array<Condition, 4> conditions{{
      {"low_to_high", Arch::G, ScaleOrder::low_to_high},
      {"high_to_low", Arch::G, ScaleOrder::high_to_low},
      {"random_fixed", Arch::G, ScaleOrder::random_fixed},
      {"bidirectional", Arch::G_BIDIR, ScaleOrder::low_to_high},
  }};
  OrderResult out;
  for (const Condition& cond : conditions) {
    const RunSet rs = train_triplicate(cond.arch, cond.order, groups, split,
                                       cfg, run_root + "/" + cond.name);
    std::vector<ConfusionCounts> counts;
    for (const std::string& ckpt : rs.ckpt_paths) {
      Model<float> m = load_checkpoint(ckpt);
      counts.push_back(to_confusion(
          evaluate(m, groups, split.indices[2], cfg.batch_size)));
    }
    out.conditions.push_back(cond.name);
    out.f1.push_back(f1_from_runs(counts));
  }
  return out;
}

void write_order_csv(const OrderResult& result, const std::string& path) {
  std::ofstream f = open_out(path);
  f << "condition,class,f1\n";
  for (size_t i = 0; i < result.conditions.size(); ++i)
    for (int c = 0; c < kNumClasses; ++c)
      f << result.conditions[i] << ',' << c << ','
        << fmt("%.9g", result.f1[i][size_t(c)]) << '\n';
  if (!f) throw IoError("failed writing '" + path + "'");
}

// ------------------------------------------------------------------ timing

std::vector<double> time_models(const std::vector<Model<float>*>& models,
                                const std::vector<PatchGroup>& groups,
                                const std::vector<int>& indices,
                                int batch_size) {
  if (models.empty()) throw ArgumentError("time_models: no models given");
  if (indices.empty()) throw ArgumentError("time_models: empty test set");
  if (batch_size < 1)
    throw ArgumentError("time_models: batch_size must be >= 1");
  std::vector<double> out;
  for (Model<float>* m : models) {
    if (m == nullptr) throw ArgumentError("time_models: null model");
    evaluate(*m, groups, indices, batch_size);  // warm-up, discarded
    const auto t0 = std::chrono::steady_clock::now();
    evaluate(*m, groups, indices, batch_size);
    const auto t1 = std::chrono::steady_clock::now();
    out.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  return out;
}

}  // namespace cseg
