// Command-line front end: dataset generation, training, report aggregation,
// verification suites, the corruption and scale-order experiments,
// whole-slide segmentation, and model timing — one executable, text configs,
// all randomness derived from a single --seed through named streams.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cseg/data.hpp"
#include "cseg/eval.hpp"
#include "cseg/image.hpp"
#include "cseg/model.hpp"
#include "cseg/selfcheck.hpp"
#include "cseg/train.hpp"
#include "cseg/wsi.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cseg;

namespace {

constexpr const char* kVersion = "1.0.0";

// A problem in flags or config values: reported as exit code 2, unlike
// failures during the actual work (exit code 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string now_utc() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ------------------------------------------------------------ config files

// flat `key = value` lines; '#' starts a comment; blank lines ignored
std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config file '" + path + "'");
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return std::string();
    const size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config '" + path + "' line " + std::to_string(lineno) +
                       ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw UsageError("config '" + path + "' line " + std::to_string(lineno) +
                       ": empty key");
    out.emplace_back(std::move(key), std::move(val));
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': '" + v + "' is not a number");
  }
}

int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': '" + v + "' is not an integer");
  }
}

// One overridable setting: CLI flag count decides whether a config-file
// value still applies (flags win over the file, the file over defaults).
struct Binding {
  std::string key;
  CLI::Option* opt = nullptr;  // may be null for config-only keys
  std::function<void(const std::string&)> apply;
};

void apply_config(const std::string& path, const std::vector<Binding>& binds) {
  if (path.empty()) return;
  for (const auto& [key, val] : read_config_file(path)) {
    const Binding* hit = nullptr;
    for (const auto& b : binds)
      if (b.key == key) hit = &b;
    if (!hit) throw UsageError("config key '" + key + "' is not recognized");
    if (hit->opt && hit->opt->count() > 0) continue;  // flag overrides file
    hit->apply(val);
  }
}

// --------------------------------------------------------------- manifests

struct Manifest {
  json j;
  std::string path;

  Manifest(const std::string& command, uint64_t seed, int jobs,
           const std::string& manifest_path) {
    path = manifest_path;
    j["command"] = command;
    j["version"] = kVersion;
    j["seed"] = seed;
    j["jobs"] = jobs;
    j["started_at"] = now_utc();
    j["config"] = json::object();
    j["artifacts"] = json::array();
  }

  void write() const {
    const fs::path p(path);
    if (p.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest '" + path + "'");
    f << j.dump(2) << '\n';
  }

  void finish() {
    j["finished_at"] = now_utc();
    write();
  }
};

std::string millions(int64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fM", double(n) / 1e6);
  return buf;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos <= s.size()) {
    const size_t comma = s.find(',', pos);
    const std::string tok = s.substr(
        pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!tok.empty()) out.push_back(tok);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

// Loads every labeled group of a dataset, with the high-resolution field
// only when some consumer needs it.
std::vector<PatchGroup> load_groups(const DatasetManifest& dm,
                                    bool with_hires) {
  std::vector<PatchGroup> groups;
  groups.reserve(dm.records.size());
  for (const auto& rec : dm.records)
    groups.push_back(load_group(rec, with_hires));
  return groups;
}

// The split every run of a comparison must share: read from the first
// directory, then require the others to carry byte-identical splits.csv.
std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string s((std::istreambuf_iterator<char>(f)),
                std::istreambuf_iterator<char>());
  return s;
}

SlideSplit shared_split(const std::vector<std::string>& run_dirs,
                        const std::vector<PatchGroup>& groups) {
  const std::string first = run_dirs.front() + "/splits.csv";
  const std::string bytes = read_file_bytes(first);
  for (size_t i = 1; i < run_dirs.size(); ++i) {
    const std::string other = run_dirs[i] + "/splits.csv";
    if (read_file_bytes(other) != bytes)
      throw IngestError("run directories disagree on the slide split: '" +
                        first + "' vs '" + other +
                        "' — results trained on different splits cannot be "
                        "aggregated");
  }
  return read_split_csv(first, groups);
}

// triplicate run seeds, derived from the master seed by named streams
std::array<uint64_t, 3> run_seeds(uint64_t master) {
  std::array<uint64_t, 3> s{};
  for (int k = 0; k < 3; ++k)
    s[size_t(k)] =
        Rng(master).stream("run" + std::to_string(k)).next_u64();
  return s;
}

json config_json(const TrainConfig& cfg) {
  json c;
  c["learning_rate"] = cfg.learning_rate;
  c["beta1"] = cfg.beta1;
  c["beta2"] = cfg.beta2;
  c["eps_adam"] = cfg.eps_adam;
  c["batch_size"] = cfg.batch_size;
  c["max_epochs"] = cfg.max_epochs;
  c["patience"] = cfg.patience;
  c["min_improvement"] = cfg.min_improvement;
  c["run_seeds"] = cfg.seeds;
  return c;
}

// Bindings for the training-protocol keys shared by `train` and `order-exp`.
std::vector<Binding> train_bindings(TrainConfig& cfg) {
  return {
      {"learning_rate", nullptr,
       [&cfg](const std::string& v) {
         cfg.learning_rate = to_double("learning_rate", v);
       }},
      {"beta1", nullptr,
       [&cfg](const std::string& v) { cfg.beta1 = to_double("beta1", v); }},
      {"beta2", nullptr,
       [&cfg](const std::string& v) { cfg.beta2 = to_double("beta2", v); }},
      {"eps_adam", nullptr,
       [&cfg](const std::string& v) { cfg.eps_adam = to_double("eps_adam", v); }},
      {"batch_size", nullptr,
       [&cfg](const std::string& v) {
         cfg.batch_size = int(to_int("batch_size", v));
       }},
      {"max_epochs", nullptr,
       [&cfg](const std::string& v) {
         cfg.max_epochs = int(to_int("max_epochs", v));
       }},
      {"patience", nullptr,
       [&cfg](const std::string& v) {
         cfg.patience = int(to_int("patience", v));
       }},
      {"min_improvement", nullptr,
       [&cfg](const std::string& v) {
         cfg.min_improvement = to_double("min_improvement", v);
       }},
  };
}

// ----------------------------------------------------------------- gen-data

struct GenDataArgs {
  int slides = 28;
  int size = 2048;
  uint64_t seed = 1;
  std::string out;
  int stride = 64;
  double min_purity = 0.75;
  int patch_budget = 0;  // per slide; 0 = unlimited
  std::string config;
  int jobs = 1;
};

int run_gen_data(const GenDataArgs& a) {
  Manifest man("gen-data", a.seed, a.jobs, a.out + "/manifest.json");
  man.j["config"] = {{"slides", a.slides},     {"size", a.size},
                     {"seed", a.seed},         {"out", a.out},
                     {"stride", a.stride},     {"min_purity", a.min_purity},
                     {"patch_budget", a.patch_budget}};
  man.j["artifacts"] = {a.out + "/labels.csv"};
  man.write();

  std::error_code ec;
  fs::remove(a.out + "/labels.csv", ec);  // reruns rebuild it from scratch

  std::array<int64_t, kNumClasses> per_class{};
  int64_t total = 0;
  for (int i = 0; i < a.slides; ++i) {
    GenParams p;
    p.base_size = a.size;
    SyntheticSlide slide = generate_slide(a.seed, i, p);
    std::vector<PatchGroup> groups =
        extract_patches(slide, a.stride, a.min_purity, a.patch_budget);
    for (const auto& g : groups) {
      write_group(g, a.out);
      ++per_class[size_t(g.label)];
      ++total;
    }
    append_labels_csv(groups, a.out);
    std::printf("slide %s: %zu patch groups\n", slide.slide_id.c_str(),
                groups.size());
  }

  std::printf("wrote %lld patch groups across %d slides to %s\n",
              (long long)total, a.slides, a.out.c_str());
  std::printf("class balance:");
  for (int c = 0; c < kNumClasses; ++c)
    std::printf("  %s %.1f%%", class_name(c),
                total ? 100.0 * double(per_class[size_t(c)]) / double(total)
                      : 0.0);
  std::printf("\n");
  man.finish();
  return 0;
}

// -------------------------------------------------------------------- train

struct TrainArgs {
  std::string arch;
  std::string data;
  std::string out;
  std::string config;
  std::string order = "low_to_high";
  uint64_t seed = 1;
  int jobs = 1;
  TrainConfig cfg;
};

int run_train(const TrainArgs& a) {
  const Arch arch = parse_arch(a.arch);  // flags were validated before work
  const ScaleOrder order = parse_order(a.order);
  TrainConfig cfg = a.cfg;
  cfg.seeds = run_seeds(a.seed);
  validate(cfg);

  Manifest man("train", a.seed, a.jobs, a.out + "/manifest.json");
  man.j["config"] = config_json(cfg);
  man.j["config"]["arch"] = a.arch;
  man.j["config"]["order"] = a.order;
  man.j["config"]["data"] = a.data;
  man.j["config"]["out"] = a.out;
  for (int r = 0; r < 3; ++r) {
    man.j["artifacts"].push_back(a.out + "/run" + std::to_string(r) +
                                 "/model.ckpt");
    man.j["artifacts"].push_back(a.out + "/run" + std::to_string(r) +
                                 "/log.csv");
  }
  man.j["artifacts"].push_back(a.out + "/splits.csv");
  man.write();

  DatasetManifest dm = ingest(a.data);
  Model<float> probe = build_model<float>(arch);
  std::vector<PatchGroup> groups = load_groups(dm, probe.uses_hires());
  Rng split_rng = Rng(a.seed).stream("split");
  SlideSplit split = split_by_slide(groups, cfg.fractions, split_rng);
  std::printf("dataset %s: %zu groups, %zu slides (%zu train / %zu val / %zu "
              "test)\n",
              a.data.c_str(), groups.size(), dm.slide_ids.size(),
              split.slides[0].size(), split.slides[1].size(),
              split.slides[2].size());

  RunSet rs = train_triplicate(arch, order, groups, split, cfg, a.out);
  for (int r = 0; r < 3; ++r)
    std::printf("run%d: %u epochs, best val loss %.6f\n", r,
                rs.metas[size_t(r)].epochs_run,
                double(rs.metas[size_t(r)].best_val_loss));
  man.finish();
  return 0;
}

// ------------------------------------------------------------------- report

struct ReportArgs {
  std::vector<std::string> runs;
  std::string data;
  std::string out;
  std::string from_csv;
  std::string name = "synthetic";
  int batch = 64;
  uint64_t seed = 1;
  int jobs = 1;
  bool no_timing = false;
};

std::string csv_sibling(const std::string& md_path) {
  fs::path p(md_path);
  p.replace_extension(".csv");
  return p.string();
}

int run_report(const ReportArgs& a) {
  Manifest man("report", a.seed, a.jobs, a.out + ".manifest.json");
  man.j["config"] = {{"runs", a.runs},         {"data", a.data},
                     {"out", a.out},           {"from_csv", a.from_csv},
                     {"name", a.name},         {"batch", a.batch},
                     {"no_timing", a.no_timing}};
  man.j["artifacts"] = {a.out, csv_sibling(a.out)};
  man.write();

  DatasetReport report;
  report.name = a.name;
  std::vector<int64_t> param_counts;
  std::vector<double> seconds;

  if (!a.from_csv.empty()) {
    // published-values mode: ranks recomputed from the tabulated F1 numbers
    report.metrics = read_report_csv(a.from_csv).metrics;
    report.ranks = rank_table(report.metrics);
  } else {
    if (a.runs.empty())
      throw UsageError("report needs --runs directories or --from-csv");
    DatasetManifest dm = ingest(a.data);

    // one column per run directory; test split shared by construction
    std::vector<RunSet> sets;
    std::vector<Model<float>> first_models;
    bool any_hires = false;
    for (const auto& dir : a.runs) {
      sets.push_back(open_run_set(dir));
      first_models.push_back(load_checkpoint(sets.back().ckpt_paths[0]));
      any_hires = any_hires || first_models.back().uses_hires();
    }
    std::vector<PatchGroup> groups = load_groups(dm, any_hires);
    SlideSplit split = shared_split(a.runs, groups);

    report.metrics.classes.assign(
        {class_name(0), class_name(1), class_name(2), class_name(3)});
    std::vector<std::vector<double>> by_method;
    for (size_t mi = 0; mi < sets.size(); ++mi) {
      const Arch arch = first_models[mi].arch;
      report.metrics.methods.push_back(arch_name(arch));
      param_counts.push_back(first_models[mi].count_params());
      std::vector<ConfusionCounts> runs;
      for (const auto& ckpt : sets[mi].ckpt_paths) {
        Model<float> m = load_checkpoint(ckpt);
        runs.push_back(
            to_confusion(evaluate(m, groups, split.indices[2], a.batch)));
      }
      auto f1 = f1_from_runs(runs);
      std::vector<double> col(f1.begin(), f1.end());
      for (double& v : col) v = round3(v);  // rank what the table prints
      by_method.push_back(std::move(col));
      std::printf("%s: pooled test F1", arch_name(arch));
      for (double v : by_method.back()) std::printf(" %.3f", v);
      std::printf("\n");
    }
    report.metrics.f1.resize(report.metrics.classes.size());
    for (size_t c = 0; c < report.metrics.classes.size(); ++c)
      for (size_t m = 0; m < by_method.size(); ++m)
        report.metrics.f1[c].push_back(by_method[m][c]);
    report.ranks = rank_table(report.metrics);

    if (!a.no_timing) {
      std::vector<Model<float>*> ptrs;
      for (auto& m : first_models) ptrs.push_back(&m);
      seconds = time_models(ptrs, groups, split.indices[2], a.batch);
    }
  }

  write_report_csv(report, csv_sibling(a.out));
  write_report_md({report}, a.out);
  if (!param_counts.empty()) {
    std::ofstream f(a.out, std::ios::app);
    f << "| No. of parameters | |";
    for (int64_t n : param_counts) f << ' ' << millions(n) << " |";
    f << '\n';
    if (!seconds.empty()) {
      f << "| Running time (s) | |";
      char buf[32];
      for (double s : seconds) {
        std::snprintf(buf, sizeof buf, "%.2f", s);
        f << ' ' << buf << " |";
      }
      f << '\n';
    }
  }

  std::printf("rank-sum (%s):", report.name.c_str());
  for (int s : report.ranks.sums) std::printf(" %d", s);
  std::printf("\n");
  man.finish();
  return 0;
}

// ------------------------------------------------------------------- verify

struct VerifyArgs {
  std::vector<std::string> suites;  // default: all
  int model_coords = 5;
  int cases = 100;
};

int run_verify(const VerifyArgs& a) {
  std::vector<std::string> suites = a.suites;
  if (suites.empty()) suites = {"params", "grad", "oracle"};
  std::vector<CheckLine> lines;
  for (const auto& s : suites) {
    std::vector<CheckLine> got;
    if (s == "params")
      got = check_params();
    else if (s == "grad")
      got = check_grads(a.model_coords);
    else if (s == "oracle")
      got = check_oracles(a.cases);
    else
      throw UsageError("unknown suite '" + s +
                       "' (expected grad, params or oracle)");
    lines.insert(lines.end(), got.begin(), got.end());
  }
  for (const auto& l : lines)
    std::printf("%s %-28s %s\n", l.pass ? "PASS" : "FAIL", l.name.c_str(),
                l.detail.c_str());
  const bool ok = all_passed(lines);
  std::printf("%zu checks, %s\n", lines.size(), ok ? "all passed" : "FAILURES");
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------- noise-exp

struct NoiseArgs {
  std::vector<std::string> runs;
  std::string data;
  std::string out;
  std::string levels = "0.1,0.3,0.5";
  int batch = 64;
  uint64_t seed = 1;
  int jobs = 1;
};

int run_noise(const NoiseArgs& a) {
  Manifest man("noise-exp", a.seed, a.jobs, a.out + ".manifest.json");
  man.j["config"] = {{"runs", a.runs},
                     {"data", a.data},
                     {"out", a.out},
                     {"levels", a.levels},
                     {"batch", a.batch}};
  man.j["artifacts"] = {a.out};
  man.write();

  NoiseSpec spec;
  spec.batch_size = a.batch;
  spec.p_levels.clear();
  for (const auto& tok : split_commas(a.levels))
    spec.p_levels.push_back(to_double("levels", tok));

  DatasetManifest dm = ingest(a.data);
  std::vector<RunSet> sets;
  std::vector<std::string> names;
  bool any_hires = false;
  for (const auto& dir : a.runs) {
    sets.push_back(open_run_set(dir));
    Model<float> m = load_checkpoint(sets.back().ckpt_paths[0]);
    names.push_back(arch_name(m.arch));
    any_hires = any_hires || m.uses_hires();
  }
  std::vector<PatchGroup> groups = load_groups(dm, any_hires);
  SlideSplit split = shared_split(a.runs, groups);

  std::vector<std::pair<std::string, const RunSet*>> models;
  for (size_t i = 0; i < sets.size(); ++i)
    models.emplace_back(names[i], &sets[i]);
  Rng rng = Rng(a.seed).stream("noise");
  NoiseResult res =
      noise_experiment(models, groups, split.indices[2], spec, rng);
  write_noise_csv(res, a.out);

  for (size_t m = 0; m < res.models.size(); ++m) {
    for (size_t l = 0; l < res.p_levels.size(); ++l) {
      double mean_abs = 0;
      for (int c = 0; c < kNumClasses; ++c)
        mean_abs += std::abs(res.cells[m][l].delta_pct[size_t(c)]);
      mean_abs /= kNumClasses;
      std::printf("%s p=%.2f: mean |dF1| %.2f%%\n", res.models[m].c_str(),
                  res.p_levels[l], mean_abs);
    }
  }
  man.finish();
  return 0;
}

// ---------------------------------------------------------------- order-exp

struct OrderArgs {
  std::string data;
  std::string out;
  std::string config;
  uint64_t seed = 1;
  int jobs = 1;
  TrainConfig cfg;
};

int run_order(const OrderArgs& a) {
  TrainConfig cfg = a.cfg;
  cfg.seeds = run_seeds(a.seed);
  validate(cfg);

  Manifest man("order-exp", a.seed, a.jobs, a.out + "/manifest.json");
  man.j["config"] = config_json(cfg);
  man.j["config"]["data"] = a.data;
  man.j["config"]["out"] = a.out;
  man.j["artifacts"] = {a.out + "/order.csv"};
  man.write();

  DatasetManifest dm = ingest(a.data);
  std::vector<PatchGroup> groups = load_groups(dm, false);
  Rng split_rng = Rng(a.seed).stream("split");
  SlideSplit split = split_by_slide(groups, cfg.fractions, split_rng);

  OrderResult res = order_experiment(groups, split, cfg, a.out);
  write_order_csv(res, a.out + "/order.csv");

  for (int c = 0; c < kNumClasses; ++c) {
    double lo = 1e9, hi = -1e9;
    for (size_t k = 0; k < res.conditions.size(); ++k) {
      lo = std::min(lo, res.f1[k][size_t(c)]);
      hi = std::max(hi, res.f1[k][size_t(c)]);
    }
    std::printf("%s: F1 spread across orders %.3f\n", class_name(c), hi - lo);
  }
  man.finish();
  return 0;
}

// ------------------------------------------------------------------ segment

struct SegmentArgs {
  std::string ckpt;
  std::string out;
  int slide_index = 0;
  int size = 2048;
  uint64_t seed = 1;
  int stride = kDefaultSegmentStride;
  int batch = 64;
  int jobs = 1;
};

int run_segment(const SegmentArgs& a) {
  Manifest man("segment", a.seed, a.jobs, a.out + "/manifest.json");
  man.j["config"] = {{"ckpt", a.ckpt},   {"slide_index", a.slide_index},
                     {"size", a.size},   {"seed", a.seed},
                     {"stride", a.stride}, {"batch", a.batch}};
  man.j["artifacts"] = {a.out + "/segmentation.png", a.out + "/raster.csv"};
  man.write();

  GenParams p;
  p.base_size = a.size;
  SyntheticSlide slide = generate_slide(a.seed, a.slide_index, p);
  Model<float> model = load_checkpoint(a.ckpt);
  SlideRaster raster = segment_slide(model, slide, a.stride, a.batch);

  std::error_code ec;
  fs::create_directories(a.out, ec);
  write_png(render(raster, default_palette(), 8), a.out + "/segmentation.png");
  write_raster_csv(raster, a.out + "/raster.csv");

  std::array<int64_t, kNumClasses> cells{};
  int64_t skipped = 0;
  for (int8_t v : raster.cells)
    if (v == kSentinelCell)
      ++skipped;
    else
      ++cells[size_t(v)];
  std::printf("raster %dx%d, stride %d:", raster.rows, raster.cols, a.stride);
  for (int c = 0; c < kNumClasses; ++c)
    std::printf("  %s %lld", class_name(c), (long long)cells[size_t(c)]);
  std::printf("  (border cells without full context: %lld)\n",
              (long long)skipped);
  man.finish();
  return 0;
}

// --------------------------------------------------------------------- time

struct TimeArgs {
  std::string archs = "A,B,C,D,E,F,G,H,I,J,G_BIDIR";
  std::string data;
  std::string out;  // optional CSV
  int batch = 64;
  int limit = 0;  // cap on timed groups; 0 = all
  uint64_t seed = 1;
  int jobs = 1;
};

int run_time(const TimeArgs& a) {
  std::vector<Arch> archs;
  for (const auto& tok : split_commas(a.archs)) archs.push_back(parse_arch(tok));
  if (archs.empty()) throw UsageError("--archs lists no architectures");

  DatasetManifest dm = ingest(a.data);
  bool any_hires = false;
  for (Arch arch : archs) any_hires = any_hires || arch == Arch::H;
  std::vector<PatchGroup> groups = load_groups(dm, any_hires);
  std::vector<int> indices;
  const int n = a.limit > 0 ? std::min<int>(a.limit, int(groups.size()))
                            : int(groups.size());
  for (int i = 0; i < n; ++i) indices.push_back(i);

  // timing depends on the graph, not the weights: fresh initialized models
  std::vector<Model<float>> models;
  for (Arch arch : archs) {
    Rng rng = Rng(a.seed).stream("init");
    models.push_back(build_and_init<float>(arch, rng));
    models.back().set_bn_populated(true);  // unit statistics suffice to time
  }
  std::vector<Model<float>*> ptrs;
  for (auto& m : models) ptrs.push_back(&m);
  std::vector<double> seconds = time_models(ptrs, groups, indices, a.batch);

  for (size_t i = 0; i < archs.size(); ++i)
    std::printf("%-8s %8.3f s  (%d groups, batch %d)\n", arch_name(archs[i]),
                seconds[i], n, a.batch);
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    if (!f) throw IoError("cannot write '" + a.out + "'");
    f << "model,seconds\n";
    char buf[64];
    for (size_t i = 0; i < archs.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s,%.17g\n", arch_name(archs[i]),
                    seconds[i]);
      f << buf;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Multi-scale patch classification toolkit: synthetic slide datasets, "
      "eleven architectures, training, evaluation, experiments, whole-slide "
      "segmentation and self-verification.\n\n"
      "Randomness derives from --seed through named streams: 'split' (slide "
      "partition), 'run0..run2' (triplicate training), 'noise' (corruption "
      "draws), 'init' (model initialization for timing); slide generation "
      "keys each slide on (seed, slide index)."};
  app.require_subcommand(1);

  GenDataArgs gd;
  TrainArgs tr;
  ReportArgs rp;
  VerifyArgs vf;
  NoiseArgs no;
  OrderArgs od;
  SegmentArgs sg;
  TimeArgs tm;

  // gen-data ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  auto* gd_slides = gen->add_option("--slides", gd.slides, "Number of slides");
  auto* gd_size = gen->add_option("--size", gd.size, "Slide extent in pixels");
  auto* gd_seed = gen->add_option("--seed", gd.seed, "Master seed");
  gen->add_option("--out", gd.out, "Output dataset directory")->required();
  auto* gd_stride = gen->add_option("--stride", gd.stride, "Extraction stride");
  auto* gd_purity =
      gen->add_option("--min-purity", gd.min_purity, "Label window purity");
  auto* gd_budget = gen->add_option("--patch-budget", gd.patch_budget,
                                    "Per-slide cap on patch groups (0 = all)");
  gen->add_option("--config", gd.config, "key = value config file");
  gen->add_option("--jobs", gd.jobs, "Worker cap");

  // train ------------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train one architecture in "
                                                "triplicate");
  train_cmd->add_option("--arch", tr.arch, "Architecture id (A..J, G_BIDIR)")
      ->required();
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_option("--config", tr.config, "key = value config file");
  auto* tr_order =
      train_cmd->add_option("--order", tr.order, "Scale presentation order");
  auto* tr_seed = train_cmd->add_option("--seed", tr.seed, "Master seed");
  train_cmd->add_option("--jobs", tr.jobs, "Worker cap");
  auto* tr_lr = train_cmd->add_option("--learning-rate", tr.cfg.learning_rate,
                                      "Adam learning rate");
  auto* tr_batch =
      train_cmd->add_option("--batch-size", tr.cfg.batch_size, "Batch size");
  auto* tr_epochs =
      train_cmd->add_option("--max-epochs", tr.cfg.max_epochs, "Epoch cap");
  auto* tr_patience = train_cmd->add_option("--patience", tr.cfg.patience,
                                            "Early-stopping patience");

  // report -----------------------------------------------------------------
  auto* rep = app.add_subcommand("report", "Aggregate runs into the F1/rank "
                                           "table");
  rep->add_option("--runs", rp.runs, "Triplicate run directories")
      ->take_all();
  rep->add_option("--data", rp.data, "Dataset directory");
  rep->add_option("--out", rp.out, "Markdown output path")->required();
  rep->add_option("--from-csv", rp.from_csv,
                  "Tabulate a method,class,f1,rank CSV instead of runs");
  rep->add_option("--name", rp.name, "Dataset label");
  rep->add_option("--batch", rp.batch, "Evaluation batch size");
  rep->add_option("--seed", rp.seed, "Master seed");
  rep->add_flag("--no-timing", rp.no_timing, "Skip the running-time row");
  rep->add_option("--jobs", rp.jobs, "Worker cap");

  // verify -----------------------------------------------------------------
  auto* ver = app.add_subcommand("verify", "Run self-verification suites");
  ver->add_option("--suite", vf.suites,
                  "grad, params or oracle (repeatable; default all)")
      ->take_all();
  ver->add_option("--model-coords", vf.model_coords,
                  "Sampled coordinates per tensor in whole-model checks");
  ver->add_option("--cases", vf.cases, "Randomized cases per oracle");

  // noise-exp --------------------------------------------------------------
  auto* noi = app.add_subcommand("noise-exp", "Scale-corruption resilience "
                                              "experiment");
  noi->add_option("--runs", no.runs, "Triplicate run directories, one per "
                                     "model")
      ->required()
      ->take_all();
  noi->add_option("--data", no.data, "Dataset directory")->required();
  noi->add_option("--out", no.out, "Output CSV path")->required();
  noi->add_option("--levels", no.levels, "Comma-separated corruption levels");
  noi->add_option("--batch", no.batch, "Evaluation batch size");
  noi->add_option("--seed", no.seed, "Master seed");
  noi->add_option("--jobs", no.jobs, "Worker cap");

  // order-exp --------------------------------------------------------------
  auto* ord = app.add_subcommand("order-exp", "Scale-presentation-order "
                                              "experiment");
  ord->add_option("--data", od.data, "Dataset directory")->required();
  ord->add_option("--out", od.out, "Output directory")->required();
  ord->add_option("--config", od.config, "key = value config file");
  auto* od_seed = ord->add_option("--seed", od.seed, "Master seed");
  ord->add_option("--jobs", od.jobs, "Worker cap");

  // segment ----------------------------------------------------------------
  auto* seg = app.add_subcommand("segment", "Segment a regenerated slide "
                                            "with a trained checkpoint");
  seg->add_option("--ckpt", sg.ckpt, "Checkpoint path")->required();
  seg->add_option("--out", sg.out, "Output directory")->required();
  seg->add_option("--slide-index", sg.slide_index, "Slide index");
  seg->add_option("--size", sg.size, "Slide extent in pixels");
  seg->add_option("--seed", sg.seed, "Generation seed");
  seg->add_option("--stride", sg.stride, "Raster stride in pixels");
  seg->add_option("--batch", sg.batch, "Inference batch size");
  seg->add_option("--jobs", sg.jobs, "Worker cap");

  // time -------------------------------------------------------------------
  auto* tim = app.add_subcommand("time", "Time one evaluation pass per "
                                         "architecture");
  tim->add_option("--archs", tm.archs, "Comma-separated architecture ids");
  tim->add_option("--data", tm.data, "Dataset directory")->required();
  tim->add_option("--out", tm.out, "Optional CSV output path");
  tim->add_option("--batch", tm.batch, "Batch size");
  tim->add_option("--limit", tm.limit, "Cap on timed groups (0 = all)");
  tim->add_option("--seed", tm.seed, "Master seed");
  tim->add_option("--jobs", tm.jobs, "Worker cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit 0; any flag trouble is 2
  }

  try {
    // config files before dispatch so bad keys/values exit 2, like bad flags
    if (gen->parsed()) {
      apply_config(
          gd.config,
          {{"slides", gd_slides,
            [&](const std::string& v) { gd.slides = int(to_int("slides", v)); }},
           {"size", gd_size,
            [&](const std::string& v) { gd.size = int(to_int("size", v)); }},
           {"seed", gd_seed,
            [&](const std::string& v) {
              gd.seed = uint64_t(to_int("seed", v));
            }},
           {"stride", gd_stride,
            [&](const std::string& v) { gd.stride = int(to_int("stride", v)); }},
           {"min_purity", gd_purity,
            [&](const std::string& v) {
              gd.min_purity = to_double("min_purity", v);
            }},
           {"patch_budget", gd_budget, [&](const std::string& v) {
              gd.patch_budget = int(to_int("patch_budget", v));
            }}});
    } else if (train_cmd->parsed()) {
      std::vector<Binding> binds = train_bindings(tr.cfg);
      binds[0].opt = tr_lr;
      binds[4].opt = tr_batch;
      binds[5].opt = tr_epochs;
      binds[6].opt = tr_patience;
      binds.push_back({"order", tr_order,
                       [&](const std::string& v) { tr.order = v; }});
      binds.push_back({"seed", tr_seed, [&](const std::string& v) {
                         tr.seed = uint64_t(to_int("seed", v));
                       }});
      apply_config(tr.config, binds);
      parse_arch(tr.arch);   // validate in the usage phase
      parse_order(tr.order);
      try {
        TrainConfig probe = tr.cfg;
        probe.seeds = run_seeds(tr.seed);
        validate(probe);
      } catch (const ArgumentError& e) {
        throw UsageError(e.what());
      }
    } else if (ord->parsed()) {
      std::vector<Binding> binds = train_bindings(od.cfg);
      binds.push_back({"seed", od_seed, [&](const std::string& v) {
                         od.seed = uint64_t(to_int("seed", v));
                       }});
      apply_config(od.config, binds);
      try {
        TrainConfig probe = od.cfg;
        probe.seeds = run_seeds(od.seed);
        validate(probe);
      } catch (const ArgumentError& e) {
        throw UsageError(e.what());
      }
    } else if (tim->parsed()) {
      for (const auto& tok : split_commas(tm.archs)) parse_arch(tok);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(gd);
    if (train_cmd->parsed()) return run_train(tr);
    if (rep->parsed()) return run_report(rp);
    if (ver->parsed()) return run_verify(vf);
    if (noi->parsed()) return run_noise(no);
    if (ord->parsed()) return run_order(od);
    if (seg->parsed()) return run_segment(sg);
    if (tim->parsed()) return run_time(tm);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
