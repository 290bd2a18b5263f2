#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rho/approx_lab.hpp"
#include "rho/errors.hpp"
#include "rho/hash.hpp"
#include "rho/il_model.hpp"
#include "rho/selection.hpp"
#include "rho/trainer.hpp"

// Experiment configuration: one JSON document, validated against a fixed
// key schema before any work starts. Unknown keys are errors.

namespace rho::cli {

using json = nlohmann::json;

struct SyntheticSpec {
  int classes = 10;
  std::size_t per_class = 500;
  std::size_t dim = 20;
  double spread = 0.25;
  std::size_t modes = 1;
  std::uint64_t seed = 1;
};

struct NoiseSpec {
  std::string kind = "none";  // none | uniform | structured
  double p = 0.0;
  std::size_t pairs = 4;  // structured only
};

struct RelevanceSpec {
  double high_frac = 0.2;
  double keep_frac = 0.06;
};

struct SplitConfig {
  double test_fraction = 0.2;
  double holdout_fraction = 0.3;
  std::uint64_t seed = 1;
};

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | idx | csv
  std::string images, labels;      // idx
  std::string path;                // csv
  std::size_t subset = 0;          // 0: all examples
  SyntheticSpec synthetic;
  NoiseSpec noise;
  std::optional<RelevanceSpec> relevance;
  std::size_t duplicate_factor = 1;
  SplitConfig split;
};

struct IlConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t epochs = 20;
  IlScheme scheme = IlScheme::holdout;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer;
  std::uint64_t seed = 1;
};

struct RunSection {
  std::vector<PolicyKind> policies{PolicyKind::rho_loss, PolicyKind::uniform};
  std::size_t n_b = 10;
  std::size_t n_B = 100;
  std::size_t epochs = 20;
  std::vector<std::size_t> hidden{64, 64};
  double dropout = 0.0;
  bool batchnorm = false;
  OptimizerConfig optimizer;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<double> targets;
  IlUpdateMode il_update = IlUpdateMode::frozen;
  double il_lr_scale = 0.01;
  std::size_t eval_every_steps = 0;
  std::size_t mc_samples = 10;
  double is_temperature = 1.0;
  GradNormKind grad_norm = GradNormKind::exact;
  double svp_keep_fraction = 0.5;
  bool record_scores = false;
};

struct LadderSection {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t n_b = 10;
  std::size_t n_B = 100;
  std::size_t ensemble_size = 5;
  std::size_t budget = 5;
  double tolerance = 1e-3;
  std::size_t dup_factor = 5;
  double il_lr_scale = 1.0;
  std::size_t il_epochs = 20;
  std::size_t max_steps = 0;
  std::vector<Rung> rungs{Rung::approx1a, Rung::approx1b, Rung::approx2, Rung::approx3};
  std::uint64_t seed = 1;
};

/// Either an n_B list at fixed n_b, or a grid over selected batch size,
/// learning rate and weight decay (n_B follows n_b at the run's ratio).
struct SweepSection {
  std::vector<std::size_t> n_B;
  std::vector<std::size_t> batch_size;
  std::vector<double> learning_rate;
  std::vector<double> weight_decay;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  IlConfig il;
  RunSection run;
  LadderSection ladder;
  std::optional<SweepSection> sweep;
  std::string output_dir;
  json source;  // the validated document, for hashing and echoing

  std::string hash() const { return hash_text(source.dump()); }
  /// Hash of the dataset section alone; keys the prepared data artifacts.
  std::string dataset_hash() const { return hash_text(source.value("dataset", json::object()).dump()); }
};

namespace detail {

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline void read_optimizer(const json& j, OptimizerConfig& o, const std::string& where) {
  check_keys(j, where, {"kind", "lr", "beta1", "beta2", "epsilon", "weight_decay"});
  std::string kind = to_string(o.kind);
  read(j, "kind", kind, where);
  if (kind == "sgd") {
    o = OptimizerConfig::sgd(o.learning_rate);
  } else if (kind != "adamw") {
    throw ConfigError(where + ".kind: expected 'sgd' or 'adamw'");
  }
  read(j, "lr", o.learning_rate, where);
  read(j, "beta1", o.beta1, where);
  read(j, "beta2", o.beta2, where);
  read(j, "epsilon", o.epsilon, where);
  read(j, "weight_decay", o.weight_decay, where);
  if (!(o.learning_rate > 0.0)) throw ConfigError(where + ".lr: must be positive");
  if (!(o.weight_decay >= 0.0)) throw ConfigError(where + ".weight_decay: must be nonnegative");
}

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& doc) {
  using detail::check_keys;
  using detail::read;
  using detail::require;
  ExperimentConfig c;
  check_keys(doc, "config", {"dataset", "il", "run", "ladder", "sweep", "output_dir"});
  read(doc, "output_dir", c.output_dir, "config");

  if (doc.contains("dataset")) {
    const json& d = doc["dataset"];
    check_keys(d, "dataset",
               {"kind", "images", "labels", "path", "subset", "synthetic", "noise", "relevance", "duplicate_factor",
                "split"});
    auto& ds = c.dataset;
    read(d, "kind", ds.kind, "dataset");
    read(d, "images", ds.images, "dataset");
    read(d, "labels", ds.labels, "dataset");
    read(d, "path", ds.path, "dataset");
    read(d, "subset", ds.subset, "dataset");
    read(d, "duplicate_factor", ds.duplicate_factor, "dataset");
    require(ds.kind == "synthetic" || ds.kind == "idx" || ds.kind == "csv",
            "dataset.kind: expected synthetic, idx or csv");
    require(ds.kind != "idx" || (!ds.images.empty() && !ds.labels.empty()),
            "dataset: idx needs 'images' and 'labels' paths");
    require(ds.kind != "csv" || !ds.path.empty(), "dataset: csv needs 'path'");
    require(ds.duplicate_factor >= 1, "dataset.duplicate_factor: must be at least 1");
    if (d.contains("synthetic")) {
      const json& s = d["synthetic"];
      check_keys(s, "dataset.synthetic", {"classes", "per_class", "dim", "spread", "modes", "seed"});
      auto& sy = ds.synthetic;
      read(s, "classes", sy.classes, "dataset.synthetic");
      read(s, "per_class", sy.per_class, "dataset.synthetic");
      read(s, "dim", sy.dim, "dataset.synthetic");
      read(s, "spread", sy.spread, "dataset.synthetic");
      read(s, "modes", sy.modes, "dataset.synthetic");
      read(s, "seed", sy.seed, "dataset.synthetic");
      require(sy.classes >= 2, "dataset.synthetic.classes: need at least 2");
      require(sy.per_class >= 1 && sy.dim >= 1 && sy.modes >= 1, "dataset.synthetic: sizes must be positive");
      require(sy.spread > 0.0, "dataset.synthetic.spread: must be positive");
    }
    if (d.contains("noise")) {
      const json& n = d["noise"];
      check_keys(n, "dataset.noise", {"kind", "p", "pairs"});
      read(n, "kind", ds.noise.kind, "dataset.noise");
      read(n, "p", ds.noise.p, "dataset.noise");
      read(n, "pairs", ds.noise.pairs, "dataset.noise");
      require(ds.noise.kind == "none" || ds.noise.kind == "uniform" || ds.noise.kind == "structured",
              "dataset.noise.kind: expected none, uniform or structured");
      require(ds.noise.p >= 0.0 && ds.noise.p <= 1.0, "dataset.noise.p: must lie in [0, 1]");
    }
    if (d.contains("relevance")) {
      const json& r = d["relevance"];
      check_keys(r, "dataset.relevance", {"high_frac", "keep_frac"});
      RelevanceSpec rs;
      read(r, "high_frac", rs.high_frac, "dataset.relevance");
      read(r, "keep_frac", rs.keep_frac, "dataset.relevance");
      require(rs.high_frac > 0.0 && rs.high_frac <= 1.0, "dataset.relevance.high_frac: must lie in (0, 1]");
      require(rs.keep_frac > 0.0 && rs.keep_frac <= 1.0, "dataset.relevance.keep_frac: must lie in (0, 1]");
      ds.relevance = rs;
    }
    if (d.contains("split")) {
      const json& s = d["split"];
      check_keys(s, "dataset.split", {"test_fraction", "holdout_fraction", "seed"});
      read(s, "test_fraction", ds.split.test_fraction, "dataset.split");
      read(s, "holdout_fraction", ds.split.holdout_fraction, "dataset.split");
      read(s, "seed", ds.split.seed, "dataset.split");
      require(ds.split.test_fraction > 0.0 && ds.split.test_fraction < 1.0,
              "dataset.split.test_fraction: must lie in (0, 1)");
      require(ds.split.holdout_fraction > 0.0 && ds.split.holdout_fraction < 1.0,
              "dataset.split.holdout_fraction: must lie in (0, 1)");
    }
  }

  if (doc.contains("il")) {
    const json& j = doc["il"];
    check_keys(j, "il", {"hidden", "epochs", "scheme", "batch_size", "optimizer", "seed"});
    read(j, "hidden", c.il.hidden, "il");
    read(j, "epochs", c.il.epochs, "il");
    read(j, "batch_size", c.il.batch_size, "il");
    read(j, "seed", c.il.seed, "il");
    std::string scheme = to_string(c.il.scheme);
    read(j, "scheme", scheme, "il");
    require(scheme == "holdout" || scheme == "two-halves", "il.scheme: expected holdout or two-halves");
    c.il.scheme = scheme == "holdout" ? IlScheme::holdout : IlScheme::two_halves;
    if (j.contains("optimizer")) detail::read_optimizer(j["optimizer"], c.il.optimizer, "il.optimizer");
    require(c.il.epochs >= 1, "il.epochs: must be at least 1");
    require(c.il.batch_size >= 1, "il.batch_size: must be at least 1");
  }

  if (doc.contains("run")) {
    const json& j = doc["run"];
    check_keys(j, "run",
               {"policies", "n_b", "n_B", "epochs", "hidden", "dropout", "batchnorm", "optimizer", "seeds", "targets",
                "il_update", "il_lr_scale", "eval_every_steps", "mc_samples", "is_temperature", "grad_norm",
                "svp_keep_fraction", "record_scores"});
    auto& r = c.run;
    if (j.contains("policies")) {
      std::vector<std::string> names;
      read(j, "policies", names, "run");
      require(!names.empty(), "run.policies: must not be empty");
      r.policies.clear();
      for (const auto& n : names) {
        try {
          r.policies.push_back(parse_policy_kind(n));
        } catch (const std::exception& e) {
          throw ConfigError(std::string("run.policies: ") + e.what());
        }
      }
    }
    read(j, "n_b", r.n_b, "run");
    read(j, "n_B", r.n_B, "run");
    read(j, "epochs", r.epochs, "run");
    read(j, "hidden", r.hidden, "run");
    read(j, "dropout", r.dropout, "run");
    read(j, "batchnorm", r.batchnorm, "run");
    read(j, "seeds", r.seeds, "run");
    read(j, "targets", r.targets, "run");
    read(j, "il_lr_scale", r.il_lr_scale, "run");
    read(j, "eval_every_steps", r.eval_every_steps, "run");
    read(j, "mc_samples", r.mc_samples, "run");
    read(j, "is_temperature", r.is_temperature, "run");
    read(j, "svp_keep_fraction", r.svp_keep_fraction, "run");
    read(j, "record_scores", r.record_scores, "run");
    std::string mode = to_string(r.il_update);
    read(j, "il_update", mode, "run");
    require(mode == "frozen" || mode == "original", "run.il_update: expected frozen or original");
    r.il_update = mode == "frozen" ? IlUpdateMode::frozen : IlUpdateMode::original;
    std::string gn = r.grad_norm == GradNormKind::exact ? "exact" : "last-layer";
    read(j, "grad_norm", gn, "run");
    require(gn == "exact" || gn == "last-layer", "run.grad_norm: expected exact or last-layer");
    r.grad_norm = gn == "exact" ? GradNormKind::exact : GradNormKind::last_layer;
    if (j.contains("optimizer")) detail::read_optimizer(j["optimizer"], r.optimizer, "run.optimizer");
    require(r.n_b >= 1 && r.n_B >= r.n_b, "run: need 1 <= n_b <= n_B");
    require(r.epochs >= 1, "run.epochs: must be at least 1");
    require(!r.seeds.empty(), "run.seeds: must not be empty");
    require(r.dropout >= 0.0 && r.dropout < 1.0, "run.dropout: must lie in [0, 1)");
    require(r.il_lr_scale >= 0.0, "run.il_lr_scale: must be nonnegative");
    require(r.mc_samples >= 1, "run.mc_samples: must be positive");
    require(r.is_temperature > 0.0, "run.is_temperature: must be positive");
    require(r.svp_keep_fraction > 0.0 && r.svp_keep_fraction <= 1.0, "run.svp_keep_fraction: must lie in (0, 1]");
    for (double t : r.targets) require(t >= 0.0 && t <= 1.0, "run.targets: accuracies must lie in [0, 1]");
  }

  if (doc.contains("ladder")) {
    const json& j = doc["ladder"];
    check_keys(j, "ladder",
               {"hidden", "n_b", "n_B", "ensemble_size", "budget", "tolerance", "dup_factor", "il_lr_scale",
                "il_epochs", "max_steps", "rungs", "seed"});
    auto& l = c.ladder;
    read(j, "hidden", l.hidden, "ladder");
    read(j, "n_b", l.n_b, "ladder");
    read(j, "n_B", l.n_B, "ladder");
    read(j, "ensemble_size", l.ensemble_size, "ladder");
    read(j, "budget", l.budget, "ladder");
    read(j, "tolerance", l.tolerance, "ladder");
    read(j, "dup_factor", l.dup_factor, "ladder");
    read(j, "il_lr_scale", l.il_lr_scale, "ladder");
    read(j, "il_epochs", l.il_epochs, "ladder");
    read(j, "max_steps", l.max_steps, "ladder");
    read(j, "seed", l.seed, "ladder");
    if (j.contains("rungs")) {
      std::vector<std::string> names;
      read(j, "rungs", names, "ladder");
      l.rungs.clear();
      for (const auto& n : names) {
        try {
          l.rungs.push_back(parse_rung(n));
        } catch (const std::exception& e) {
          throw ConfigError(std::string("ladder.rungs: ") + e.what());
        }
      }
    }
    require(l.n_b >= 1 && l.n_B >= l.n_b && l.n_B >= 2, "ladder: need 1 <= n_b <= n_B and n_B >= 2");
    require(l.ensemble_size >= 1 && l.dup_factor >= 1 && l.il_epochs >= 1, "ladder: sizes must be positive");
    require(l.tolerance >= 0.0 && l.il_lr_scale >= 0.0, "ladder: tolerance and il_lr_scale must be nonnegative");
  }

  if (doc.contains("sweep")) {
    const json& j = doc["sweep"];
    check_keys(j, "sweep", {"n_B", "batch_size", "learning_rate", "weight_decay"});
    SweepSection s;
    read(j, "n_B", s.n_B, "sweep");
    read(j, "batch_size", s.batch_size, "sweep");
    read(j, "learning_rate", s.learning_rate, "sweep");
    read(j, "weight_decay", s.weight_decay, "sweep");
    const bool grid = !s.batch_size.empty() || !s.learning_rate.empty() || !s.weight_decay.empty();
    require(!(grid && !s.n_B.empty()), "sweep: give either n_B or a batch_size/learning_rate/weight_decay grid");
    if (!grid && s.n_B.empty()) {
      // Default grid template.
      s.batch_size = {160, 320, 960};
      s.learning_rate = {1e-4, 1e-3, 1e-2};
      s.weight_decay = {1e-3, 1e-2, 1e-1};
    }
    for (auto v : s.n_B) require(v >= c.run.n_b, "sweep.n_B: every value must be at least run.n_b");
    for (auto v : s.batch_size) require(v >= 1, "sweep.batch_size: values must be positive");
    for (auto v : s.learning_rate) require(v > 0.0, "sweep.learning_rate: values must be positive");
    for (auto v : s.weight_decay) require(v >= 0.0, "sweep.weight_decay: values must be nonnegative");
    c.sweep = s;
  }
  c.source = doc;
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return parse_config(doc);
}

// ---------------------------------------------------------------------------
// Derived library configurations

inline MlpArchitecture architecture(std::size_t input, const std::vector<std::size_t>& hidden, int classes,
                                    double dropout = 0.0, bool batchnorm = false) {
  std::vector<std::size_t> sizes{input};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(static_cast<std::size_t>(classes));
  MlpArchitecture a{sizes, dropout, batchnorm};
  a.validate();
  return a;
}

inline SelectionPolicy make_policy(PolicyKind kind, const RunSection& r) {
  SelectionPolicy p = SelectionPolicy::make(kind);
  if (p.mc_samples) p.mc_samples = r.mc_samples;
  if (p.is_temperature) p.is_temperature = r.is_temperature;
  p.grad_norm = r.grad_norm;
  p.svp_keep_fraction = r.svp_keep_fraction;
  p.validate();
  return p;
}

inline RunConfig make_run_config(const RunSection& r, PolicyKind kind, std::uint64_t seed) {
  RunConfig c;
  c.n_b = r.n_b;
  c.n_B = r.n_B;
  c.epochs = r.epochs;
  c.optimizer = r.optimizer;
  c.policy = make_policy(kind, r);
  c.il_update = r.il_update;
  c.il_lr_scale = r.il_lr_scale;
  c.seed = seed;
  c.eval_every_steps = r.eval_every_steps;
  c.targets = r.targets;
  c.record_scores = r.record_scores;
  c.validate();
  return c;
}

inline LadderConfig make_ladder_config(const LadderSection& l, const MlpArchitecture& arch,
                                       const OptimizerConfig& optimizer) {
  LadderConfig c;
  c.target_arch = arch;
  c.il_arch = arch;
  c.optimizer = optimizer;
  c.n_b = l.n_b;
  c.n_B = l.n_B;
  c.ensemble_size = l.ensemble_size;
  c.convergence.budget = l.budget;
  c.convergence.tolerance = l.tolerance;
  c.il_epochs = l.il_epochs;
  c.dup_factor = l.dup_factor;
  c.il_lr_scale = l.il_lr_scale;
  c.max_steps = l.max_steps;
  c.seed = l.seed;
  c.validate();
  return c;
}

}  // namespace rho::cli
