#pragma once

#include <fnmatch.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "rho/approx_lab.hpp"
#include "rho/cli/config.hpp"
#include "rho/csv.hpp"
#include "rho/dataset.hpp"
#include "rho/dataset_io.hpp"
#include "rho/fitting.hpp"
#include "rho/il_model.hpp"
#include "rho/record_io.hpp"
#include "rho/trainer.hpp"

// Subcommand implementations. Artifacts under the output directory:
//   data/{train,holdout,test}.csv    prepared splits
//   il/il_table.csv, il/checkpoints*.csv
//   runs/<policy>-s<seed>.*.csv       run records
//   reports/*.csv                     summaries
//   ladder/ladder.csv
//   sweep/cells.csv, sweep/cell-NNN/{config.json,runs/}

namespace rho::cli {

namespace fs = std::filesystem;

struct CommandOptions {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed_override;
  std::size_t jobs = 1;
  bool resume = false;
  bool quiet = false;
};

/// --out, then the config's output_dir, then $RHO_OUT_DIR, then ./rho_out.
inline fs::path resolve_output_dir(const CommandOptions& opts, const ExperimentConfig& cfg) {
  if (opts.out && !opts.out->empty()) return *opts.out;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv("RHO_OUT_DIR"); env && *env) return env;
  return "rho_out";
}

/// Replaces run seeds and the ladder seed; the stored document is patched so
/// the config hash reflects the override.
inline void apply_seed_override(ExperimentConfig& cfg, std::optional<std::uint64_t> seed) {
  if (!seed) return;
  cfg.run.seeds = {*seed};
  cfg.ladder.seed = *seed;
  cfg.source["run"]["seeds"] = json::array({*seed});
  cfg.source["ladder"]["seed"] = *seed;
}

namespace detail {

inline constexpr std::uint64_t kRelevanceSeed = 0x72656c;
inline constexpr std::uint64_t kTestSplitSeed = 0x74657374;
inline constexpr std::uint64_t kNoiseSeed = 0x6e6f6973;
inline constexpr std::uint64_t kHoldoutSeed = 0x686f6c64;
inline constexpr std::uint64_t kSubsetSeed = 0x73756273;
inline constexpr std::uint64_t kConfusionSeed = 0x636f6e66;
inline constexpr std::uint64_t kHalvesSeed = 0x68616c76;
inline constexpr std::uint64_t kInitSeed = 0x696e6974;
inline constexpr std::uint64_t kProxySeed = 0x70726f78;

inline std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + csv::format_double(v[i]);
  return s;
}

inline std::vector<double> parse_doubles(const std::string& s, const std::string& context) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const auto& part : csv::split(s, ';')) out.push_back(csv::parse_double(part, context));
  return out;
}

template <typename T>
std::string join_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
  return s;
}

inline void log(const CommandOptions& opts, const std::string& msg) {
  if (!opts.quiet) std::cerr << msg << '\n';
}

/// Runs fn(0..count-1) on up to `jobs` threads. The first exception stops
/// further dispatch and is rethrown after all workers finish.
inline void run_parallel(std::size_t jobs, std::size_t count, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (!failed) {
      const std::size_t i = next++;
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  LabeledDataset train;
  LabeledDataset holdout;  // empty under the two-halves scheme
  LabeledDataset test;
};

/// Keys the prepared data: the dataset section plus the IL scheme, which
/// decides whether a holdout split exists.
inline std::string prepared_hash(const ExperimentConfig& cfg) {
  return hash_text(cfg.source.value("dataset", json::object()).dump() + "|" + to_string(cfg.il.scheme));
}

inline std::string il_hash(const ExperimentConfig& cfg) {
  return hash_text(prepared_hash(cfg) + "|" + cfg.source.value("il", json::object()).dump());
}

inline LabeledDataset load_base_dataset(const DatasetConfig& d) {
  if (d.kind == "synthetic") {
    const auto& s = d.synthetic;
    return gen_synthetic(s.classes, s.per_class, s.dim, s.spread, s.seed, s.modes);
  }
  LabeledDataset base = d.kind == "idx" ? load_idx(d.images, d.labels) : load_dataset_csv(d.path);
  if (d.subset > 0 && d.subset < base.size()) {
    auto perm = seeded_permutation(base.size(), mix_seed(d.split.seed, detail::kSubsetSeed));
    perm.resize(d.subset);
    std::sort(perm.begin(), perm.end());
    base = base.subset(perm);
  }
  return base;
}

/// Confusion matrix of a small classifier fitted to the pool; drives
/// structured noise toward class pairs a model actually confuses.
inline ConfusionMatrix pool_confusion(const LabeledDataset& pool, std::uint64_t seed) {
  const auto arch = architecture(pool.dim(), {64}, pool.num_classes);
  Learner learner{MlpModel::init(arch, seed), Optimizer(OptimizerConfig{})};
  for (std::size_t e = 0; e < 5; ++e) fit_epoch(learner, pool, 32, mix_seed(seed, e));
  const auto predicted = predict_classes(learner.model, pool);
  return confusion_matrix(pool, predicted);
}

/// base -> relevance skew -> clean test split -> label noise on the rest ->
/// holdout split (holdout scheme only) -> duplication of the training pool.
inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  const DatasetConfig& d = cfg.dataset;
  const std::uint64_t seed = d.split.seed;
  LabeledDataset data = load_base_dataset(d);
  if (d.relevance) {
    data = make_relevance_skew(data, d.relevance->high_frac, d.relevance->keep_frac,
                               mix_seed(seed, detail::kRelevanceSeed))
               .data;
  }
  auto [pool, test] =
      split(data, SplitSpec{d.split.test_fraction, mix_seed(seed, detail::kTestSplitSeed), SplitMode::holdout});
  if (d.noise.kind == "uniform") {
    pool = inject_uniform_noise(pool, d.noise.p, mix_seed(seed, detail::kNoiseSeed));
  } else if (d.noise.kind == "structured") {
    const auto confusion = pool_confusion(pool, mix_seed(seed, detail::kConfusionSeed));
    pool = inject_structured_noise(pool, confusion, d.noise.pairs, d.noise.p, mix_seed(seed, detail::kNoiseSeed));
  }
  PreparedData out;
  out.test = std::move(test);
  if (cfg.il.scheme == IlScheme::holdout) {
    auto [train, holdout] =
        split(pool, SplitSpec{d.split.holdout_fraction, mix_seed(seed, detail::kHoldoutSeed), SplitMode::holdout});
    out.train = std::move(train);
    out.holdout = std::move(holdout);
  } else {
    out.train = std::move(pool);
  }
  if (d.duplicate_factor > 1) {
    // Fresh ids for the copies must not collide with holdout or test ids.
    const std::size_t n = out.train.size();
    ExampleId global_max = 0;
    for (const auto* part : {&out.train, &out.holdout, &out.test})
      for (ExampleId id : part->ids) global_max = std::max(global_max, id);
    LabeledDataset dup = duplicate(out.train, d.duplicate_factor);
    const ExampleId local_next = *std::max_element(out.train.ids.begin(), out.train.ids.end()) + 1;
    for (std::size_t i = n; i < dup.size(); ++i) dup.ids[i] += global_max + 1 - local_next;
    dup.check_invariants();
    out.train = std::move(dup);
  }
  return out;
}

struct DataFiles {
  fs::path train, holdout, test;
};

inline DataFiles data_files(const fs::path& out) {
  return {out / "data" / "train.csv", out / "data" / "holdout.csv", out / "data" / "test.csv"};
}

inline PreparedData cmd_prepare(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const fs::path out = resolve_output_dir(opts, cfg);
  const DataFiles files = data_files(out);
  PreparedData data = prepare_data(cfg);
  fs::create_directories(files.train.parent_path());
  csv::Metadata meta{{"config_hash", prepared_hash(cfg)}, {"seed", std::to_string(cfg.dataset.split.seed)}};
  auto save = [&](const LabeledDataset& part, const fs::path& path, const char* name) {
    csv::Metadata m = meta;
    m["part"] = name;
    save_dataset_csv(part, path.string(), m);
  };
  save(data.train, files.train, "train");
  save(data.test, files.test, "test");
  if (cfg.il.scheme == IlScheme::holdout) {
    save(data.holdout, files.holdout, "holdout");
  } else {
    fs::remove(files.holdout);
  }
  detail::log(opts, "prepared " + std::to_string(data.train.size()) + " train, " +
                        std::to_string(data.holdout.size()) + " holdout, " + std::to_string(data.test.size()) +
                        " test examples in " + (out / "data").string());
  return data;
}

/// Loads prepared data when it matches the config, prepares it when absent,
/// and refuses data prepared from a different dataset configuration.
inline PreparedData load_or_prepare(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const fs::path out = resolve_output_dir(opts, cfg);
  const DataFiles files = data_files(out);
  if (!fs::exists(files.train)) return cmd_prepare(cfg, opts);
  const std::string expected = prepared_hash(cfg);
  auto load = [&](const fs::path& path) {
    csv::Metadata meta;
    LabeledDataset d = load_dataset_csv(path.string(), &meta);
    if (meta["config_hash"] != expected) {
      throw SetupError(path.string() + " was prepared from a different dataset configuration; rerun prepare");
    }
    return d;
  };
  PreparedData data;
  data.train = load(files.train);
  data.test = load(files.test);
  if (cfg.il.scheme == IlScheme::holdout) {
    if (!fs::exists(files.holdout)) throw SetupError(files.holdout.string() + " is missing; rerun prepare");
    data.holdout = load(files.holdout);
  }
  return data;
}

// ---------------------------------------------------------------------------
// Irreducible loss

struct IlArtifacts {
  IrreducibleLossTable table;
  std::vector<IlTrainingResult> models;  // one (holdout) or two (two-halves)
};

inline MlpArchitecture il_architecture(const ExperimentConfig& cfg, const LabeledDataset& train) {
  return architecture(train.dim(), cfg.il.hidden, train.num_classes);
}

inline IlTrainingConfig il_training_config(const ExperimentConfig& cfg, const LabeledDataset& train) {
  return {il_architecture(cfg, train), cfg.il.epochs, cfg.il.optimizer, cfg.il.batch_size, cfg.il.seed};
}

inline IlArtifacts train_il(const ExperimentConfig& cfg, const PreparedData& data) {
  const IlTrainingConfig tc = il_training_config(cfg, data.train);
  if (cfg.il.scheme == IlScheme::holdout) {
    IlTrainingResult r = train_il_model(data.holdout, data.train, tc);
    IrreducibleLossTable table = compute_il_table(r.model, data.train);
    return {std::move(table), {std::move(r)}};
  }
  auto [a, b] = split(data.train, SplitSpec{0.5, mix_seed(cfg.il.seed, detail::kHalvesSeed), SplitMode::two_halves});
  TwoHalvesResult r = compute_il_table_two_halves(a, b, tc);
  return {std::move(r.table), {std::move(r.model_a), std::move(r.model_b)}};
}

inline fs::path il_table_path(const fs::path& out) { return out / "il" / "il_table.csv"; }

inline IlArtifacts cmd_train_il(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const fs::path out = resolve_output_dir(opts, cfg);
  const PreparedData data = load_or_prepare(cfg, opts);
  IlArtifacts il = train_il(cfg, data);
  fs::create_directories(out / "il");
  const csv::Metadata meta{{"config_hash", il_hash(cfg)}, {"seed", std::to_string(cfg.il.seed)}};
  save_il_table(il.table, il_table_path(out).string(), meta);
  if (il.models.size() == 1) {
    save_checkpoint_log(il.models[0].log, (out / "il" / "checkpoints.csv").string(), meta);
  } else {
    save_checkpoint_log(il.models[0].log, (out / "il" / "checkpoints_a.csv").string(), meta);
    save_checkpoint_log(il.models[1].log, (out / "il" / "checkpoints_b.csv").string(), meta);
  }
  detail::log(opts, "IL table for " + std::to_string(il.table.size()) + " examples in " + il_table_path(out).string());
  return il;
}

inline IrreducibleLossTable load_or_train_il_table(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const fs::path path = il_table_path(resolve_output_dir(opts, cfg));
  if (!fs::exists(path)) return cmd_train_il(cfg, opts).table;
  csv::Metadata meta;
  IrreducibleLossTable table = load_il_table(path.string(), &meta);
  if (meta["config_hash"] != il_hash(cfg)) {
    throw SetupError(path.string() + " was trained under a different configuration; rerun train-il");
  }
  return table;
}

// ---------------------------------------------------------------------------
// Runs

inline std::string run_id(PolicyKind kind, std::uint64_t seed) { return to_string(kind) + "-s" + std::to_string(seed); }

/// Configured policies, plus uniform whenever targets are requested.
inline std::vector<PolicyKind> run_policies(const RunSection& r) {
  std::vector<PolicyKind> out = r.policies;
  if (!r.targets.empty() && std::find(out.begin(), out.end(), PolicyKind::uniform) == out.end()) {
    out.push_back(PolicyKind::uniform);
  }
  return out;
}

inline MlpArchitecture target_architecture(const RunSection& r, const LabeledDataset& train) {
  return architecture(train.dim(), r.hidden, train.num_classes, r.dropout, r.batchnorm);
}

/// Everything a run job reads; shared read-only across worker threads.
struct RunContext {
  const ExperimentConfig* cfg = nullptr;
  const PreparedData* data = nullptr;
  std::optional<IrreducibleLossTable> table;
  std::optional<MlpModel> il_model;  // original-mode starting point
};

inline RunRecord execute_run(const RunContext& ctx, PolicyKind kind, std::uint64_t seed) {
  const ExperimentConfig& cfg = *ctx.cfg;
  const LabeledDataset& train = ctx.data->train;
  const LabeledDataset& test = ctx.data->test;
  const RunConfig rc = make_run_config(cfg.run, kind, seed);
  const MlpModel init = MlpModel::init(target_architecture(cfg.run, train), mix_seed(seed, detail::kInitSeed));
  RunRecord rec;
  if (kind == PolicyKind::svp_entropy) {
    Learner proxy{MlpModel::init(il_architecture(cfg, train), mix_seed(seed, detail::kProxySeed)),
                  Optimizer(cfg.il.optimizer)};
    for (std::size_t e = 0; e < cfg.il.epochs; ++e)
      fit_epoch(proxy, train, cfg.il.batch_size, mix_seed(seed, detail::kProxySeed, e));
    rec = run_svp(train, test, proxy.model, rc, init);
  } else if (rc.il_update == IlUpdateMode::original && needs_il_table(kind)) {
    rec = run_original_selection(train, test, *ctx.il_model, rc, init);
  } else {
    RunConfig frozen = rc;
    frozen.il_update = IlUpdateMode::frozen;
    rec = run_training(train, test, ctx.table ? &*ctx.table : nullptr, frozen, init);
  }
  rec.run_id = run_id(kind, seed);
  rec.meta["config_hash"] = cfg.hash();
  rec.meta["targets"] = detail::join_doubles(cfg.run.targets);
  rec.meta["data_hash"] = prepared_hash(cfg);
  if (needs_il_table(kind)) rec.meta["il_hash"] = il_hash(cfg);
  return rec;
}

struct RunJob {
  PolicyKind kind;
  std::uint64_t seed;
  fs::path dir;
};

/// Drops complete records under --resume, refuses partial ones, and clears
/// stale files otherwise, all before any job starts.
inline std::vector<RunJob> plan_jobs(const std::vector<RunJob>& all, bool resume) {
  std::vector<RunJob> todo;
  for (const auto& job : all) {
    const std::string id = run_id(job.kind, job.seed);
    if (resume) {
      if (run_record_partial(job.dir, id)) {
        throw SetupError("resume: run " + (job.dir / id).string() + " has partial output; remove it and rerun");
      }
      if (run_record_complete(job.dir, id)) continue;
    } else {
      const RunFiles f = run_files(job.dir, id);
      for (const auto& p : {f.steps, f.evals, f.composition, f.scores}) fs::remove(p);
    }
    todo.push_back(job);
  }
  return todo;
}

/// Loads data and IL state once, then runs every (policy, seed) job of every
/// cell, writing records as each finishes.
inline void execute_jobs(const std::vector<std::pair<ExperimentConfig, std::vector<RunJob>>>& cells,
                         const ExperimentConfig& base, const CommandOptions& opts) {
  const PreparedData data = load_or_prepare(base, opts);
  bool need_table = false, need_model = false;
  for (const auto& [cfg, jobs] : cells) {
    for (const auto& job : jobs) {
      if (!needs_il_table(job.kind)) continue;
      if (cfg.run.il_update == IlUpdateMode::original) {
        need_model = true;
      } else {
        need_table = true;
      }
    }
  }
  if (need_model && base.il.scheme != IlScheme::holdout) {
    throw ConfigError("run.il_update: original mode needs the holdout IL scheme");
  }
  std::vector<RunContext> contexts(cells.size());
  std::optional<IrreducibleLossTable> table;
  std::optional<MlpModel> il_model;
  if (need_table) table = load_or_train_il_table(base, opts);
  if (need_model) il_model = train_il(base, data).models.front().model;
  struct Item {
    std::size_t cell;
    RunJob job;
  };
  std::vector<Item> items;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    contexts[c] = RunContext{&cells[c].first, &data, table, il_model};
    for (const auto& job : cells[c].second) items.push_back({c, job});
  }
  std::mutex log_mutex;
  detail::run_parallel(opts.jobs, items.size(), [&](std::size_t i) {
    const Item& it = items[i];
    RunRecord rec = execute_run(contexts[it.cell], it.job.kind, it.job.seed);
    save_run_record(rec, it.job.dir);
    std::lock_guard lock(log_mutex);
    detail::log(opts, "finished " + (it.job.dir / rec.run_id).string() +
                          " final accuracy " + csv::format_double(rec.final_accuracy()));
  });
}

inline fs::path runs_dir(const fs::path& out) { return out / "runs"; }

/// Returns the run ids this invocation is responsible for (including any
/// skipped under --resume).
inline std::vector<std::string> cmd_run(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const fs::path dir = runs_dir(resolve_output_dir(opts, cfg));
  std::vector<RunJob> all;
  std::vector<std::string> ids;
  for (PolicyKind kind : run_policies(cfg.run)) {
    for (std::uint64_t seed : cfg.run.seeds) {
      all.push_back({kind, seed, dir});
      ids.push_back(run_id(kind, seed));
    }
  }
  std::vector<RunJob> todo = plan_jobs(all, opts.resume);
  fs::create_directories(dir);
  {
    std::ofstream echo(dir / "config.json");
    echo << cfg.source.dump(2) << '\n';
  }
  execute_jobs({{cfg, std::move(todo)}}, cfg, opts);
  return ids;
}

// ---------------------------------------------------------------------------
// Reports

/// Run ids whose records match a path glob such as "out/runs/rho-loss-*".
/// A directory selects every run in it.
inline std::pair<fs::path, std::vector<std::string>> match_runs(const std::string& glob) {
  fs::path dir = glob, pattern = "*";
  if (!fs::is_directory(dir)) {
    pattern = dir.filename();
    dir = dir.parent_path();
    if (dir.empty()) dir = ".";
  }
  if (!fs::is_directory(dir)) throw SetupError("report: no such directory " + dir.string());
  const std::string suffix = ".evals.csv";
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() <= suffix.size() || !name.ends_with(suffix)) continue;
    const std::string id = name.substr(0, name.size() - suffix.size());
    if (fnmatch(pattern.c_str(), id.c_str(), 0) == 0) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  return {dir, ids};
}

struct TargetSummary {
  std::string policy;
  double target = 0.0;
  std::size_t seeds = 0;
  std::size_t reached = 0;
  std::optional<double> mean_epochs;    // nullopt (NR) unless every seed reached
  std::optional<double> median_epochs;  // unreached counts as infinite
  double final_accuracy = 0.0;          // mean of each run's last eval row
};

/// Median with unreached seeds as +infinity; nullopt when the median itself
/// is infinite.
inline std::optional<double> median_epochs(std::vector<std::optional<std::size_t>> epochs) {
  if (epochs.empty()) return std::nullopt;
  std::vector<double> v;
  for (const auto& e : epochs)
    v.push_back(e ? static_cast<double>(*e) : std::numeric_limits<double>::infinity());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double m = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  if (!std::isfinite(m)) return std::nullopt;
  return m;
}

inline TargetSummary summarize_target(const std::string& policy, const std::vector<RunRecord>& runs, double target) {
  TargetSummary s{policy, target, runs.size()};
  std::vector<std::optional<std::size_t>> epochs;
  double sum = 0.0;
  for (const auto& r : runs) {
    epochs.push_back(epochs_to_target(r, target));
    if (epochs.back()) {
      ++s.reached;
      sum += static_cast<double>(*epochs.back());
    }
    s.final_accuracy += r.final_accuracy();
  }
  if (!runs.empty()) s.final_accuracy /= static_cast<double>(runs.size());
  if (s.reached == runs.size() && !runs.empty()) s.mean_epochs = sum / static_cast<double>(runs.size());
  s.median_epochs = median_epochs(epochs);
  return s;
}

struct ReportResult {
  fs::path dir;
  std::vector<TargetSummary> targets;
  std::size_t runs = 0;
};

/// Summaries over the matched run records: epochs_to_target.csv,
/// composition.csv, accuracy.csv and redundancy.csv, plus ladder_summary.csv
/// when a ladder result exists beside the runs.
inline ReportResult cmd_report(const std::string& glob, const fs::path& report_dir, const CommandOptions& opts = {}) {
  const auto [dir, ids] = match_runs(glob);
  if (ids.empty()) throw SetupError("report: no run records match " + glob);
  std::map<std::string, std::vector<RunRecord>> by_policy;
  std::set<std::string> hashes;
  std::set<std::uint64_t> seeds;
  std::string targets_text;
  for (const auto& id : ids) {
    if (!run_record_complete(dir, id)) throw SetupError("report: run " + (dir / id).string() + " is incomplete");
    RunRecord rec = load_run_record(dir, id);
    hashes.insert(rec.meta["config_hash"]);
    seeds.insert(static_cast<std::uint64_t>(csv::parse_int(rec.meta["seed"], id)));
    targets_text = rec.meta["targets"];
    by_policy[rec.meta["policy"]].push_back(std::move(rec));
  }
  if (hashes.size() != 1) {
    std::string list;
    for (const auto& h : hashes) list += " " + (h.empty() ? std::string("<none>") : h);
    throw SetupError("report: run records come from different configurations (config hashes:" + list + ")");
  }
  const std::vector<double> targets = detail::parse_doubles(targets_text, "targets");
  fs::create_directories(report_dir);
  csv::Metadata meta{{"config_hash", *hashes.begin()},
                     {"seed", detail::join_list(std::vector<std::uint64_t>(seeds.begin(), seeds.end()))},
                     {"runs", std::to_string(ids.size())}};
  auto open = [&](const char* name, const char* header) {
    std::ofstream out(report_dir / name);
    if (!out) throw FormatError("report: cannot write " + (report_dir / name).string());
    out << csv::metadata_line(meta) << '\n' << csv::timestamp_line() << '\n' << header << '\n';
    return out;
  };
  auto fmt = [](const std::optional<double>& v, const char* missing) {
    return v ? csv::format_double(*v) : std::string(missing);
  };

  ReportResult result{report_dir, {}, ids.size()};
  {
    auto out = open("epochs_to_target.csv",
                    "policy,target,seeds,reached,mean_epochs,median_epochs,speedup,final_accuracy");
    for (double t : targets) {
      std::optional<double> uniform_median;
      if (auto it = by_policy.find(to_string(PolicyKind::uniform)); it != by_policy.end())
        uniform_median = summarize_target(it->first, it->second, t).median_epochs;
      for (const auto& [policy, runs] : by_policy) {
        TargetSummary s = summarize_target(policy, runs, t);
        std::string speedup = "NR";
        if (s.median_epochs) speedup = uniform_median ? csv::format_double(*uniform_median / *s.median_epochs) : "undefined";
        out << policy << ',' << csv::format_double(t) << ',' << s.seeds << ',' << s.reached << ','
            << fmt(s.mean_epochs, "NR") << ',' << fmt(s.median_epochs, "NR") << ',' << speedup << ','
            << csv::format_double(s.final_accuracy) << '\n';
        result.targets.push_back(std::move(s));
      }
    }
  }
  {
    auto out = open("composition.csv", "policy,epoch,seeds,frac_corrupted,frac_low_relevance,frac_already_correct");
    for (const auto& [policy, runs] : by_policy) {
      std::map<std::size_t, std::vector<const CompositionRecord*>> by_epoch;
      for (const auto& r : runs)
        for (const auto& c : r.compositions) by_epoch[c.epoch].push_back(&c);
      for (const auto& [epoch, rows] : by_epoch) {
        double cor = 0, low = 0, ac = 0;
        for (const auto* c : rows) {
          cor += c->fractions.corrupted;
          low += c->fractions.low_relevance;
          ac += c->fractions.already_correct;
        }
        const double n = static_cast<double>(rows.size());
        out << policy << ',' << epoch << ',' << rows.size() << ',' << csv::format_double(cor / n) << ','
            << csv::format_double(low / n) << ',' << csv::format_double(ac / n) << '\n';
      }
    }
  }
  {
    auto out = open("accuracy.csv", "policy,step,epoch,seeds,accuracy,loss");
    for (const auto& [policy, runs] : by_policy) {
      std::size_t rows = std::numeric_limits<std::size_t>::max();
      for (const auto& r : runs) rows = std::min(rows, r.evals.size());
      for (std::size_t i = 0; i < rows; ++i) {
        double acc = 0, loss = 0;
        for (const auto& r : runs) {
          acc += r.evals[i].accuracy;
          loss += r.evals[i].loss;
        }
        const double n = static_cast<double>(runs.size());
        out << policy << ',' << runs.front().evals[i].step << ',' << runs.front().evals[i].epoch << ',' << runs.size()
            << ',' << csv::format_double(acc / n) << ',' << csv::format_double(loss / n) << '\n';
      }
    }
  }
  {
    auto out = open("redundancy.csv", "policy,filtered_already_correct");
    for (const auto& [policy, value] : redundancy_epoch_filter(by_policy))
      out << policy << ',' << fmt(value, "undefined") << '\n';
  }
  const fs::path ladder = dir.parent_path() / "ladder" / "ladder.csv";
  if (fs::exists(ladder)) {
    const csv::Table t = csv::read_table(ladder.string());
    csv::Metadata lmeta = t.meta;
    lmeta.erase("created");
    std::ofstream out(report_dir / "ladder_summary.csv");
    out << csv::metadata_line(lmeta) << '\n' << csv::timestamp_line() << '\n' << "rung,statistic,value\n";
    const std::size_t rc = t.column("rung"), sc = t.column("step"), vc = t.column("rho");
    for (const auto& row : t.rows)
      if (row[sc] == "mean" || row[sc] == "positive_fraction" || row[sc] == "reference")
        out << row[rc] << ',' << row[sc] << ',' << row[vc] << '\n';
  }
  detail::log(opts, "report over " + std::to_string(ids.size()) + " runs in " + report_dir.string());
  return result;
}

// ---------------------------------------------------------------------------
// Ladder

inline fs::path ladder_path(const fs::path& out) { return out / "ladder" / "ladder.csv"; }

/// Gold-standard and rung traces are independent jobs; the comparison runs
/// once all have finished.
inline LadderResult cmd_ladder(const ExperimentConfig& cfg, const CommandOptions& opts) {
  if (cfg.il.scheme != IlScheme::holdout) throw ConfigError("ladder: needs the holdout IL scheme");
  const fs::path out = resolve_output_dir(opts, cfg);
  const PreparedData data = load_or_prepare(cfg, opts);
  const auto arch = architecture(data.train.dim(), cfg.ladder.hidden, data.train.num_classes);
  const LadderConfig lc = make_ladder_config(cfg.ladder, arch, cfg.run.optimizer);
  std::vector<Rung> todo{Rung::approx0};
  for (Rung r : cfg.ladder.rungs)
    if (r != Rung::approx0) todo.push_back(r);
  std::vector<RungTrace> traces(todo.size());
  detail::run_parallel(opts.jobs, todo.size(),
                       [&](std::size_t i) { traces[i] = run_rung(todo[i], data.train, data.holdout, lc); });
  LadderResult result;
  for (Rung r : cfg.ladder.rungs) {
    const auto it = std::find(todo.begin(), todo.end(), r);
    result.rungs.push_back({r, compare_traces(traces[0], traces[static_cast<std::size_t>(it - todo.begin())])});
  }
  fs::create_directories(out / "ladder");
  save_ladder_csv(result, ladder_path(out).string(),
                  {{"config_hash", cfg.hash()}, {"seed", std::to_string(cfg.ladder.seed)}});
  for (const auto& s : result.rungs) {
    detail::log(opts, "rung " + to_string(s.rung) + " mean rho " +
                          (s.mean() ? csv::format_double(*s.mean()) : std::string("undefined")));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
  std::string name;
  std::size_t n_b = 0, n_B = 0;
  double learning_rate = 0.0, weight_decay = 0.0;
  json config;  // full experiment document for the cell, without the sweep section
};

/// Cells of the sweep. Grid values for batch_size set n_b; n_B keeps the
/// run's n_b/n_B ratio. Unlisted grid axes keep the run's values.
inline std::vector<SweepCell> sweep_cells(const ExperimentConfig& cfg) {
  if (!cfg.sweep) throw ConfigError("sweep: config has no sweep section");
  const SweepSection& s = *cfg.sweep;
  json base = cfg.source;
  base.erase("sweep");
  const double ratio = static_cast<double>(cfg.run.n_b) / static_cast<double>(cfg.run.n_B);
  auto one = [](const auto& v, auto fallback) {
    return v.empty() ? std::vector<decltype(fallback)>{fallback} : v;
  };
  std::vector<SweepCell> cells;
  auto add = [&](std::size_t n_b, std::size_t n_B, double lr, double wd) {
    SweepCell c;
    c.name = "cell-" + std::string(3 - std::min<std::size_t>(3, std::to_string(cells.size()).size()), '0') +
             std::to_string(cells.size());
    c.n_b = n_b;
    c.n_B = n_B;
    c.learning_rate = lr;
    c.weight_decay = wd;
    c.config = base;
    c.config["run"]["n_b"] = n_b;
    c.config["run"]["n_B"] = n_B;
    c.config["run"]["optimizer"]["lr"] = lr;
    c.config["run"]["optimizer"]["weight_decay"] = wd;
    cells.push_back(std::move(c));
  };
  const double lr0 = cfg.run.optimizer.learning_rate, wd0 = cfg.run.optimizer.weight_decay;
  if (!s.n_B.empty()) {
    for (std::size_t n_B : s.n_B) add(cfg.run.n_b, n_B, lr0, wd0);
    return cells;
  }
  for (std::size_t b : one(s.batch_size, cfg.run.n_b)) {
    const auto n_B = std::max<std::size_t>(b, static_cast<std::size_t>(std::llround(static_cast<double>(b) / ratio)));
    for (double lr : one(s.learning_rate, lr0))
      for (double wd : one(s.weight_decay, wd0)) add(b, n_B, lr, wd);
  }
  return cells;
}

inline fs::path sweep_dir(const fs::path& out) { return out / "sweep"; }

/// Writes sweep/cells.csv and each cell's config.json, then runs every
/// (cell, policy, seed) job into sweep/<cell>/runs.
inline std::vector<SweepCell> cmd_sweep(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const fs::path root = sweep_dir(resolve_output_dir(opts, cfg));
  const std::vector<SweepCell> cells = sweep_cells(cfg);
  std::vector<std::pair<ExperimentConfig, std::vector<RunJob>>> work;
  for (const auto& cell : cells) {
    ExperimentConfig cell_cfg = parse_config(cell.config);
    std::vector<RunJob> jobs;
    for (PolicyKind kind : run_policies(cell_cfg.run))
      for (std::uint64_t seed : cell_cfg.run.seeds) jobs.push_back({kind, seed, root / cell.name / "runs"});
    work.emplace_back(std::move(cell_cfg), plan_jobs(jobs, opts.resume));
  }
  fs::create_directories(root);
  {
    std::ofstream index(root / "cells.csv");
    index << csv::metadata_line({{"config_hash", cfg.hash()}, {"seed", detail::join_list(cfg.run.seeds)}}) << '\n'
          << csv::timestamp_line() << '\n'
          << "cell,n_b,n_B,learning_rate,weight_decay,config_hash\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& c = cells[i];
      index << c.name << ',' << c.n_b << ',' << c.n_B << ',' << csv::format_double(c.learning_rate) << ','
            << csv::format_double(c.weight_decay) << ',' << work[i].first.hash() << '\n';
      fs::create_directories(root / c.name / "runs");
      std::ofstream echo(root / c.name / "config.json");
      echo << c.config.dump(2) << '\n';
    }
  }
  execute_jobs(work, cfg, opts);
  return cells;
}

}  // namespace rho::cli
