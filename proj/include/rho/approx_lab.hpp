#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rho/csv.hpp"
#include "rho/dataset.hpp"
#include "rho/errors.hpp"
#include "rho/fitting.hpp"
#include "rho/il_model.hpp"
#include "rho/mlp.hpp"
#include "rho/optimizer.hpp"
#include "rho/random.hpp"
#include "rho/selection.hpp"
#include "rho/trainer.hpp"

// Approximation ladder. A gold-standard pipeline (ensembles trained to
// convergence after every acquisition, IL ensemble retrained on holdout plus
// acquired data) and cheaper pipelines score the same candidate batches over
// the first epoch; each rung is summarized by the Spearman correlation of its
// scores with the gold standard's on every batch.

namespace rho {

// ---------------------------------------------------------------------------
// Rank correlation

/// Ranks 1..n; tied values share the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Spearman's rho: Pearson correlation of average ranks. nullopt when either
/// input is constant, where the coefficient is undefined.
inline std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ArgumentError("spearman: inputs differ in length");
  if (xs.size() < 2) throw ArgumentError("spearman: need at least two points");
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (std::isnan(xs[i]) || std::isnan(ys[i])) throw DomainError("spearman: NaN input");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Training to convergence

struct ConvergenceConfig {
  std::size_t budget = 5;  // maximum passes
  double tolerance = 1e-3;  // relative improvement of the mean training loss
  std::size_t batch_size = 32;
};

/// Full passes over `data` until the mean training loss (eval mode, after the
/// pass) improves by less than tolerance relative to the previous pass, or the
/// budget runs out. Returns the number of passes made.
inline std::size_t train_to_convergence(Learner& learner, const LabeledDataset& data, const ConvergenceConfig& cfg,
                                        std::uint64_t seed) {
  if (data.empty() || cfg.budget == 0) return 0;
  double previous = evaluate(learner.model, data).mean_loss;
  for (std::size_t pass = 1; pass <= cfg.budget; ++pass) {
    fit_epoch(learner, data, cfg.batch_size, mix_seed(seed, pass));
    const double loss = evaluate(learner.model, data).mean_loss;
    const double improvement = (previous - loss) / std::max(std::abs(previous), 1e-12);
    if (improvement < cfg.tolerance) return pass;
    previous = loss;
  }
  return cfg.budget;
}

/// Each member converges independently with its own seed stream.
inline void train_to_convergence(std::vector<Learner>& members, const LabeledDataset& data,
                                 const ConvergenceConfig& cfg, std::uint64_t seed) {
  for (std::size_t k = 0; k < members.size(); ++k) train_to_convergence(members[k], data, cfg, mix_seed(seed, k));
}

// ---------------------------------------------------------------------------
// Ladder

enum class Rung { approx0, approx1a, approx1b, approx2, approx3, random };

inline std::string to_string(Rung r) {
  switch (r) {
    case Rung::approx0: return "approx0";
    case Rung::approx1a: return "approx1a";
    case Rung::approx1b: return "approx1b";
    case Rung::approx2: return "approx2";
    case Rung::approx3: return "approx3";
    case Rung::random: return "random";
  }
  return "?";
}

inline Rung parse_rung(const std::string& s) {
  for (Rung r : {Rung::approx0, Rung::approx1a, Rung::approx1b, Rung::approx2, Rung::approx3, Rung::random})
    if (to_string(r) == s) return r;
  throw ArgumentError("unknown ladder rung '" + s + "'");
}

/// Published correlations with the gold standard, kept for side-by-side
/// reporting only.
inline std::optional<double> reference_rho(Rung r) {
  switch (r) {
    case Rung::approx1a: return 0.75;
    case Rung::approx1b: return 0.76;
    case Rung::approx2: return 0.63;
    case Rung::approx3: return 0.51;
    default: return std::nullopt;
  }
}

/// Halves every hidden width (minimum one unit).
inline MlpArchitecture half_width(const MlpArchitecture& arch) {
  MlpArchitecture small = arch;
  for (std::size_t i = 1; i + 1 < small.layer_sizes.size(); ++i)
    small.layer_sizes[i] = std::max<std::size_t>(1, small.layer_sizes[i] / 2);
  return small;
}

struct LadderConfig {
  MlpArchitecture target_arch;
  MlpArchitecture il_arch;
  OptimizerConfig optimizer;
  std::size_t n_b = 10;
  std::size_t n_B = 100;
  std::size_t ensemble_size = 5;
  ConvergenceConfig convergence;
  std::size_t il_epochs = 20;     // initial IL training, lowest-validation-loss checkpoint
  std::size_t dup_factor = 5;     // single-step rungs take this many steps per acquisition
  double il_lr_scale = 1.0;       // single-step IL update (rung 1b)
  std::size_t max_steps = 0;      // 0: the whole first epoch
  std::uint64_t seed = 0;

  void validate() const {
    target_arch.validate();
    il_arch.validate();
    if (n_b < 1 || n_B < n_b) throw ArgumentError("ladder: need 1 <= n_b <= n_B");
    if (n_B < 2) throw ArgumentError("ladder: rank correlation needs n_B >= 2");
    if (ensemble_size < 1) throw ArgumentError("ladder: ensemble size must be positive");
    if (dup_factor < 1) throw ArgumentError("ladder: duplication factor must be at least 1");
    if (il_epochs < 1) throw ArgumentError("ladder: IL epochs must be positive");
    if (!(il_lr_scale >= 0.0)) throw ArgumentError("ladder: IL lr scale must be nonnegative");
  }
};

/// Scores a rung produced on every candidate batch of the shared schedule.
struct RungTrace {
  Rung rung = Rung::approx0;
  std::vector<std::vector<ExampleId>> batches;
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<ExampleId>> selected;
};

namespace detail {

inline constexpr std::uint64_t kLadderTarget = 0x7467;
inline constexpr std::uint64_t kLadderIl = 0x696c;
inline constexpr std::uint64_t kLadderRandom = 0x726e;

struct RungSettings {
  std::size_t members = 1;
  bool converge = false;     // target: to convergence on D_t, else single steps
  enum class IlMode { converge, step, frozen } il = IlMode::frozen;
  bool small_il = false;
};

inline RungSettings settings_for(Rung r, const LadderConfig& cfg) {
  using M = RungSettings::IlMode;
  switch (r) {
    case Rung::approx0: return {cfg.ensemble_size, true, M::converge, false};
    case Rung::approx1a: return {1, true, M::converge, false};
    case Rung::approx1b: return {1, false, M::step, false};
    case Rung::approx2: return {1, false, M::frozen, false};
    case Rung::approx3: return {1, false, M::frozen, true};
    case Rung::random: break;
  }
  throw ArgumentError("ladder: rung has no model settings");
}

inline std::vector<double> ensemble_loss(const std::vector<Learner>& members, const Tensor& x,
                                         std::span<const int> labels) {
  if (members.size() == 1) return cross_entropy(forward(members.front().model, x), labels);
  std::vector<MlpModel> models;
  for (const auto& l : members) models.push_back(l.model);
  return EnsembleModel(std::move(models)).loss(x, labels);
}

}  // namespace detail

/// The shared candidate schedule: chunks of the first-epoch permutation.
inline std::vector<std::vector<std::size_t>> ladder_schedule(std::size_t n, const LadderConfig& cfg) {
  const auto perm = epoch_permutation(n, cfg.seed, 1);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start + cfg.n_B <= n; start += cfg.n_B) {
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                     perm.begin() + static_cast<std::ptrdiff_t>(start + cfg.n_B));
    if (cfg.max_steps && out.size() == cfg.max_steps) break;
  }
  return out;
}

/// Runs one rung over the first epoch of `train`. Member k of every
/// pipeline starts from the same target initialization and the same
/// initial IL model, so rungs differ only in how they fit.
inline RungTrace run_rung(Rung rung, const LabeledDataset& train, const LabeledDataset& holdout,
                          const LadderConfig& cfg) {
  cfg.validate();
  if (train.size() < cfg.n_B) throw SetupError("ladder: training set smaller than one candidate batch");
  const auto schedule = ladder_schedule(train.size(), cfg);
  RungTrace trace;
  trace.rung = rung;

  if (rung == Rung::random) {
    for (std::size_t t = 0; t < schedule.size(); ++t) {
      Rng rng(mix_seed(cfg.seed, detail::kLadderRandom, t));
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::vector<double> s(schedule[t].size());
      for (double& v : s) v = u(rng);
      std::vector<ExampleId> ids;
      for (std::size_t i : schedule[t]) ids.push_back(train.ids[i]);
      trace.batches.push_back(std::move(ids));
      trace.scores.push_back(std::move(s));
      trace.selected.emplace_back();
    }
    return trace;
  }

  const auto st = detail::settings_for(rung, cfg);
  std::vector<Learner> target, il;
  for (std::size_t k = 0; k < st.members; ++k) {
    target.push_back({MlpModel::init(cfg.target_arch, mix_seed(cfg.seed, detail::kLadderTarget, k)),
                      Optimizer(cfg.optimizer)});
    IlTrainingConfig ic{st.small_il ? half_width(cfg.il_arch) : cfg.il_arch, cfg.il_epochs, cfg.optimizer, 32,
                        mix_seed(cfg.seed, detail::kLadderIl, k)};
    il.push_back({train_il_model(holdout, train, ic).model, Optimizer(cfg.optimizer)});
  }

  std::vector<std::size_t> acquired;
  std::vector<int> labels, sel_labels;
  for (std::size_t t = 0; t < schedule.size(); ++t) {
    const auto& cand = schedule[t];
    const Tensor xb = train.features.gather_rows(cand);
    labels.clear();
    std::vector<ExampleId> ids;
    for (std::size_t i : cand) {
      labels.push_back(train.labels[i]);
      ids.push_back(train.ids[i]);
    }
    const auto loss = detail::ensemble_loss(target, xb, labels);
    const auto il_loss = detail::ensemble_loss(il, xb, labels);
    std::vector<double> scores(cand.size());
    for (std::size_t i = 0; i < cand.size(); ++i) scores[i] = loss[i] - il_loss[i];

    auto chosen = select_top_k(scores, cfg.n_b, mix_seed(cfg.seed, seeds::kTies, t + 1));
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::size_t> rows;
    std::vector<ExampleId> sel_ids;
    sel_labels.clear();
    for (std::size_t c : chosen) {
      rows.push_back(cand[c]);
      sel_ids.push_back(train.ids[cand[c]]);
      sel_labels.push_back(train.labels[cand[c]]);
    }
    trace.batches.push_back(std::move(ids));
    trace.scores.push_back(std::move(scores));
    trace.selected.push_back(std::move(sel_ids));

    const std::uint64_t step_seed = mix_seed(cfg.seed, seeds::kDropout, t + 1);
    if (st.converge) {
      acquired.insert(acquired.end(), rows.begin(), rows.end());
      const LabeledDataset d_t = train.subset(acquired);
      train_to_convergence(target, d_t, cfg.convergence, step_seed);
      if (st.il == detail::RungSettings::IlMode::converge)
        train_to_convergence(il, concatenate(holdout, d_t), cfg.convergence, mix_seed(step_seed, 1));
    } else {
      const Tensor xs = train.features.gather_rows(rows);
      for (std::size_t r = 0; r < cfg.dup_factor; ++r) {
        const std::uint64_t s = mix_seed(step_seed, r);
        for (auto& l : target) train_step(l, xs, sel_labels, s);
        if (st.il == detail::RungSettings::IlMode::step)
          for (auto& l : il) update_il_model(l, xs, sel_labels, cfg.il_lr_scale, mix_seed(s, 1));
      }
    }
  }
  return trace;
}

/// Per-step Spearman rho between a rung's scores and the gold standard's.
inline std::vector<std::optional<double>> compare_traces(const RungTrace& gold, const RungTrace& other) {
  if (gold.batches != other.batches) {
    throw SetupError("ladder: " + to_string(other.rung) + " scored a different candidate schedule");
  }
  std::vector<std::optional<double>> out;
  for (std::size_t t = 0; t < gold.scores.size(); ++t) out.push_back(spearman(gold.scores[t], other.scores[t]));
  return out;
}

struct RungSummary {
  Rung rung = Rung::approx0;
  std::vector<std::optional<double>> rho;  // per step

  /// Mean over steps where rho is defined; nullopt when none is.
  std::optional<double> mean() const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : rho)
      if (r) {
        s += *r;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
  }

  /// Share of steps with a defined, strictly positive rho.
  double positive_fraction() const {
    if (rho.empty()) return 0.0;
    std::size_t pos = 0;
    for (const auto& r : rho) pos += r && *r > 0.0;
    return static_cast<double>(pos) / static_cast<double>(rho.size());
  }
};

struct LadderResult {
  std::vector<RungSummary> rungs;

  const RungSummary& at(Rung r) const {
    for (const auto& s : rungs)
      if (s.rung == r) return s;
    throw LookupError("ladder: no result for rung " + to_string(r));
  }
};

/// Runs the gold standard once and every rung in `rungs` against it.
inline LadderResult run_ladder(const LabeledDataset& train, const LabeledDataset& holdout, const LadderConfig& cfg,
                               const std::vector<Rung>& rungs) {
  const RungTrace gold = run_rung(Rung::approx0, train, holdout, cfg);
  LadderResult out;
  for (Rung r : rungs) {
    const RungTrace t = r == Rung::approx0 ? gold : run_rung(r, train, holdout, cfg);
    out.rungs.push_back({r, compare_traces(gold, t)});
  }
  return out;
}

/// rung,step,rho rows, then per-rung summary rows with step set to "mean",
/// "positive_fraction" and (where known) "reference". Undefined values are
/// written as "undefined".
inline void save_ladder_csv(const LadderResult& result, const std::string& path, csv::Metadata meta = {}) {
  std::ofstream out(path);
  if (!out) throw FormatError("ladder: cannot write " + path);
  out << csv::metadata_line(meta) << '\n' << csv::timestamp_line() << '\n' << "rung,step,rho\n";
  auto value = [](const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string("undefined"); };
  for (const auto& s : result.rungs)
    for (std::size_t t = 0; t < s.rho.size(); ++t) out << to_string(s.rung) << ',' << t + 1 << ',' << value(s.rho[t]) << '\n';
  for (const auto& s : result.rungs) {
    out << to_string(s.rung) << ",mean," << value(s.mean()) << '\n';
    out << to_string(s.rung) << ",positive_fraction," << csv::format_double(s.positive_fraction()) << '\n';
    if (auto ref = reference_rho(s.rung)) out << to_string(s.rung) << ",reference," << csv::format_double(*ref) << '\n';
  }
  if (!out) throw FormatError("ladder: write failed for " + path);
}

}  // namespace rho
