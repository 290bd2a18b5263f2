#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
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

// Online batch selection training loop.
//
// Each epoch walks a seeded permutation of the training set in chunks of
// n_B candidates. For every chunk the current model (before its update)
// scores the candidates, the top n_b are kept, and one optimizer step is
// taken on them.

namespace rho {

enum class IlUpdateMode { frozen, original };

inline std::string to_string(IlUpdateMode m) { return m == IlUpdateMode::frozen ? "frozen" : "original"; }

struct RunConfig {
  std::size_t n_b = 32;
  std::size_t n_B = 320;
  std::size_t epochs = 10;
  OptimizerConfig optimizer;
  SelectionPolicy policy;
  IlUpdateMode il_update = IlUpdateMode::frozen;
  double il_lr_scale = 0.01;
  std::uint64_t seed = 0;
  std::size_t eval_every_steps = 0;  // 0: evaluate once per epoch only
  std::vector<double> targets;
  bool record_scores = false;        // keep every candidate's score per step

  double ratio() const { return static_cast<double>(n_b) / static_cast<double>(n_B); }

  void validate() const {
    if (n_b < 1) throw ArgumentError("run config: n_b must be at least 1");
    if (n_B < n_b) throw ArgumentError("run config: n_b must not exceed n_B");
    if (epochs < 1) throw ArgumentError("run config: epochs must be at least 1");
    if (!(optimizer.learning_rate > 0.0)) throw ArgumentError("run config: learning rate must be positive");
    if (!(il_lr_scale >= 0.0)) throw ArgumentError("run config: IL lr scale must be nonnegative");
    for (double t : targets)
      if (!(t >= 0.0 && t <= 1.0)) throw ArgumentError("run config: target accuracies must lie in [0, 1]");
    policy.validate();
  }
};

struct StepRecord {
  std::size_t step = 0;   // 1-based, global across epochs
  std::size_t epoch = 0;  // 1-based
  std::size_t candidates = 0;
  std::vector<ExampleId> selected_ids;
  std::vector<double> selected_scores;
  std::vector<double> weights;  // grad-norm-is only
  double mean_selected_score = 0.0;
  std::size_t corrupted_selected = 0;
  std::size_t low_relevance_selected = 0;
  std::size_t already_correct_selected = 0;
  // Filled when RunConfig::record_scores is set.
  std::vector<ExampleId> candidate_ids;
  std::vector<double> candidate_scores;
};

struct EvalRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;  // 0 for the initial evaluation
  bool end_of_epoch = true;
  double accuracy = 0.0;
  double loss = 0.0;
};

struct Composition {
  std::size_t selected = 0;
  double corrupted = 0.0;
  double low_relevance = 0.0;
  double already_correct = 0.0;
};

struct CompositionRecord {
  std::size_t epoch = 0;
  Composition fractions;
};

struct RunRecord {
  std::string run_id;
  csv::Metadata meta;
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::vector<CompositionRecord> compositions;
  MlpModel final_model;

  /// End-of-epoch accuracies, epochs 1..E in order.
  std::vector<double> epoch_accuracies() const {
    std::vector<double> out;
    for (const auto& e : evals)
      if (e.end_of_epoch && e.epoch > 0) out.push_back(e.accuracy);
    return out;
  }

  double final_accuracy() const { return evals.empty() ? 0.0 : evals.back().accuracy; }

  double best_accuracy() const {
    double best = 0.0;
    for (const auto& e : evals) best = std::max(best, e.accuracy);
    return best;
  }
};

// ---------------------------------------------------------------------------
// Seeds. Every stochastic choice derives from the run seed and the step.

namespace seeds {
inline constexpr std::uint64_t kPermutation = 0x7065726d;
inline constexpr std::uint64_t kDropout = 0x64726f70;
inline constexpr std::uint64_t kTies = 0x74696573;
inline constexpr std::uint64_t kMc = 0x6d63;
inline constexpr std::uint64_t kIs = 0x6973;
inline constexpr std::uint64_t kIlDropout = 0x696c;
}  // namespace seeds

inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t run_seed, std::size_t epoch) {
  return seeded_permutation(n, mix_seed(run_seed, seeds::kPermutation, epoch));
}

inline std::uint64_t step_dropout_seed(std::uint64_t run_seed, std::size_t step) {
  return mix_seed(run_seed, seeds::kDropout, step);
}

/// Number kept from a chunk: n_b for a full chunk, otherwise
/// round(n_b / n_B * size) with a minimum of one.
inline std::size_t selection_count(std::size_t chunk, std::size_t n_b, std::size_t n_B) {
  if (chunk >= n_B) return n_b;
  const auto k = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_b) / static_cast<double>(n_B) * static_cast<double>(chunk)));
  return std::clamp<std::size_t>(k, 1, chunk);
}

/// Fractions of `ids` that are corrupted, low-relevance, and already
/// classified correctly by `model` (eval mode).
inline Composition composition_metrics(std::span<const ExampleId> ids, const LabeledDataset& data,
                                       const MlpModel& model) {
  Composition c;
  c.selected = ids.size();
  if (ids.empty()) return c;
  const auto index = data.index_by_id();
  std::vector<std::size_t> rows;
  for (ExampleId id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw LookupError("composition: unknown example id " + std::to_string(id));
    rows.push_back(it->second);
  }
  const Tensor z = forward(model, data.features.gather_rows(rows));
  std::size_t corrupted = 0, low = 0, correct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    corrupted += data.corrupted[rows[i]] != 0;
    low += data.low_relevance[rows[i]] != 0;
    correct += static_cast<int>(argmax(z.row(i))) == data.labels[rows[i]];
  }
  const double n = static_cast<double>(ids.size());
  c.corrupted = static_cast<double>(corrupted) / n;
  c.low_relevance = static_cast<double>(low) / n;
  c.already_correct = static_cast<double>(correct) / n;
  return c;
}

namespace detail {

struct LiveIl {
  Learner learner;
};

inline RunRecord run_loop(const LabeledDataset& train, const LabeledDataset& test, const IrreducibleLossTable* table,
                          LiveIl* live, const RunConfig& cfg, const MlpModel& init) {
  cfg.validate();
  if (train.empty()) throw SetupError("run: empty training set");
  if (init.input_width() != train.dim() || static_cast<int>(init.num_classes()) != train.num_classes) {
    throw SetupError("run: model does not match the training data");
  }
  const PolicyKind kind = cfg.policy.kind;
  if (kind == PolicyKind::svp_entropy) throw SetupError("run: svp-entropy selects offline; use run_svp");
  if (needs_il_table(kind) && !table && !live) throw SetupError("run: policy " + to_string(kind) + " needs IL values");
  if (table && needs_il_table(kind)) table->check_covers(train);

  Learner target{init, Optimizer(cfg.optimizer)};
  const bool bn = init.arch().batchnorm;
  const ForwardOptions score_opts{Mode::eval, bn ? BnStats::batch : BnStats::running, 0};
  const std::uint64_t policy_seed = mix_seed(cfg.seed, cfg.policy.seed);

  RunRecord rec;
  auto eval_now = [&](std::size_t step, std::size_t epoch, bool end) {
    const Evaluation ev = evaluate(target.model, test);
    rec.evals.push_back({step, epoch, end, ev.accuracy, ev.mean_loss});
  };
  eval_now(0, 0, true);

  const std::size_t n = train.size();
  std::size_t step = 0;
  std::vector<int> labels, sel_labels;
  std::vector<ExampleId> ids;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto perm = epoch_permutation(n, cfg.seed, epoch);
    std::size_t ep_selected = 0, ep_corrupted = 0, ep_low = 0, ep_correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.n_B) {
      ++step;
      const std::size_t stop = std::min(n, start + cfg.n_B);
      const std::span<const std::size_t> cand(perm.data() + start, stop - start);
      const std::size_t k = selection_count(cand.size(), cfg.n_b, cfg.n_B);
      const Tensor xb = train.features.gather_rows(cand);
      labels.clear();
      ids.clear();
      for (std::size_t i : cand) {
        labels.push_back(train.labels[i]);
        ids.push_back(train.ids[i]);
      }

      // Score with the pre-update snapshot.
      const Tensor logits = forward(target.model, xb, score_opts);
      const auto losses = cross_entropy(logits, labels);
      std::vector<double> scores;
      switch (kind) {
        case PolicyKind::rho_loss:
        case PolicyKind::neg_il: {
          std::vector<double> il;
          if (live) {
            il = cross_entropy(forward(live->learner.model, xb, kEvalForward), labels);
          } else {
            for (ExampleId id : ids) il.push_back(table->at(id));
          }
          scores.resize(il.size());
          for (std::size_t i = 0; i < il.size(); ++i)
            scores[i] = kind == PolicyKind::rho_loss ? losses[i] - il[i] : -il[i];
          break;
        }
        case PolicyKind::train_loss: scores = losses; break;
        case PolicyKind::grad_norm:
        case PolicyKind::grad_norm_is: scores = score_grad_norm(target.model, xb, labels, cfg.policy.grad_norm); break;
        case PolicyKind::uniform: scores.assign(cand.size(), 0.0); break;
        default:
          scores = score_al(kind, target.model, xb, labels, *cfg.policy.mc_samples,
                            mix_seed(policy_seed, seeds::kMc, step), score_opts.bn_stats);
      }

      std::vector<std::size_t> chosen;
      std::vector<double> weights;
      if (kind == PolicyKind::grad_norm_is) {
        auto s = sample_grad_norm_is(scores, k, mix_seed(policy_seed, seeds::kIs, step), *cfg.policy.is_temperature);
        chosen = std::move(s.selected);
        weights = std::move(s.weights);
      } else {
        chosen = select_top_k(scores, k, mix_seed(policy_seed, seeds::kTies, step));
      }
      // Train on the chosen rows in candidate order.
      std::vector<std::size_t> order(chosen.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return chosen[a] < chosen[b]; });

      StepRecord sr;
      sr.step = step;
      sr.epoch = epoch;
      sr.candidates = cand.size();
      std::vector<std::size_t> rows;
      std::vector<double> sel_weights;
      sel_labels.clear();
      for (std::size_t o : order) {
        const std::size_t pos = chosen[o];
        const std::size_t row = cand[pos];
        rows.push_back(row);
        sel_labels.push_back(train.labels[row]);
        sr.selected_ids.push_back(train.ids[row]);
        sr.selected_scores.push_back(scores[pos]);
        if (!weights.empty()) sel_weights.push_back(weights[o]);
        sr.corrupted_selected += train.corrupted[row] != 0;
        sr.low_relevance_selected += train.low_relevance[row] != 0;
        sr.already_correct_selected += static_cast<int>(argmax(logits.row(pos))) == train.labels[row];
      }
      sr.weights = sel_weights;
      sr.mean_selected_score =
          std::accumulate(sr.selected_scores.begin(), sr.selected_scores.end(), 0.0) / static_cast<double>(rows.size());
      if (cfg.record_scores) {
        sr.candidate_ids = ids;
        sr.candidate_scores = scores;
      }

      const Tensor xs = train.features.gather_rows(rows);
      train_step(target, xs, sel_labels, step_dropout_seed(cfg.seed, step), sel_weights);
      if (live) {
        update_il_model(live->learner, xs, sel_labels, cfg.il_lr_scale, mix_seed(cfg.seed, seeds::kIlDropout, step));
      }

      ep_selected += rows.size();
      ep_corrupted += sr.corrupted_selected;
      ep_low += sr.low_relevance_selected;
      ep_correct += sr.already_correct_selected;
      rec.steps.push_back(std::move(sr));

      const bool last_in_epoch = stop == n;
      if (cfg.eval_every_steps > 0 && step % cfg.eval_every_steps == 0 && !last_in_epoch) eval_now(step, epoch, false);
    }
    eval_now(step, epoch, true);
    const double sel = static_cast<double>(ep_selected);
    rec.compositions.push_back({epoch,
                                {ep_selected, static_cast<double>(ep_corrupted) / sel,
                                 static_cast<double>(ep_low) / sel, static_cast<double>(ep_correct) / sel}});
  }
  rec.final_model = std::move(target.model);
  rec.meta["policy"] = to_string(kind);
  rec.meta["seed"] = std::to_string(cfg.seed);
  rec.meta["il_update"] = to_string(cfg.il_update);
  return rec;
}

}  // namespace detail

/// Online batch selection with a frozen IL table (the table is only read;
/// it may be null for policies that do not use IL values).
inline RunRecord run_training(const LabeledDataset& train, const LabeledDataset& test, const IrreducibleLossTable* il,
                              const RunConfig& cfg, const MlpModel& init) {
  if (cfg.il_update != IlUpdateMode::frozen) throw SetupError("run_training: use run_original_selection for live IL");
  return detail::run_loop(train, test, il, nullptr, cfg, init);
}

/// As run_training, but IL values come from a live IL model that takes one
/// step on every acquired batch at il_lr_scale times the learning rate.
inline RunRecord run_original_selection(const LabeledDataset& train, const LabeledDataset& test,
                                        const MlpModel& il_model, const RunConfig& cfg, const MlpModel& init) {
  if (il_model.input_width() != train.dim() || static_cast<int>(il_model.num_classes()) != train.num_classes) {
    throw SetupError("run_original_selection: IL model does not match the training data");
  }
  RunConfig c = cfg;
  c.il_update = IlUpdateMode::original;
  detail::LiveIl live{Learner{il_model, Optimizer(cfg.optimizer)}};
  return detail::run_loop(train, test, nullptr, &live, c, init);
}

/// Max-entropy proxy selection: keeps the proxy's highest-entropy fraction of
/// the pool once, then trains with uniform selection on that subset.
inline RunRecord run_svp(const LabeledDataset& train, const LabeledDataset& test, const MlpModel& proxy,
                         const RunConfig& cfg, const MlpModel& init) {
  cfg.validate();
  if (cfg.policy.kind != PolicyKind::svp_entropy) throw SetupError("run_svp: policy must be svp-entropy");
  const auto keep = svp_offline_select(proxy, train, cfg.policy.svp_keep_fraction, mix_seed(cfg.seed, seeds::kTies));
  const auto index = train.index_by_id();
  std::vector<std::size_t> rows;
  for (ExampleId id : keep) rows.push_back(index.at(id));
  std::sort(rows.begin(), rows.end());
  RunConfig c = cfg;
  c.policy = SelectionPolicy::make(PolicyKind::uniform, cfg.policy.seed);
  RunRecord rec = detail::run_loop(train.subset(rows), test, nullptr, nullptr, c, init);
  rec.meta["policy"] = to_string(PolicyKind::svp_entropy);
  rec.meta["svp_kept"] = std::to_string(rows.size());
  return rec;
}

// ---------------------------------------------------------------------------
// Summaries

/// First epoch (1-based) whose end-of-epoch accuracy reaches `target`;
/// nullopt when never reached.
inline std::optional<std::size_t> epochs_to_target(std::span<const double> epoch_accuracies, double target) {
  for (std::size_t e = 0; e < epoch_accuracies.size(); ++e)
    if (epoch_accuracies[e] >= target) return e + 1;
  return std::nullopt;
}

inline std::optional<std::size_t> epochs_to_target(const RunRecord& rec, double target) {
  const auto acc = rec.epoch_accuracies();
  return epochs_to_target(acc, target);
}

/// Mean already-correct fraction over the epochs whose end-of-epoch test
/// accuracy is below `threshold`; nullopt when no epoch qualifies.
inline std::optional<double> filtered_already_correct(std::span<const RunRecord> records, double threshold) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& rec : records) {
    const auto acc = rec.epoch_accuracies();
    for (const auto& c : rec.compositions) {
      if (c.epoch == 0 || c.epoch > acc.size()) continue;
      if (acc[c.epoch - 1] < threshold) {
        sum += c.fractions.already_correct;
        ++count;
      }
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

/// Already-correct fraction per policy, averaged only over epochs in which
/// test accuracy is below the final accuracy of the weakest policy (final
/// accuracy averaged over that policy's runs).
inline std::map<std::string, std::optional<double>> redundancy_epoch_filter(
    const std::map<std::string, std::vector<RunRecord>>& by_policy) {
  double weakest = 1.0;
  bool any = false;
  for (const auto& [_, recs] : by_policy) {
    if (recs.empty()) continue;
    double mean = 0.0;
    for (const auto& r : recs) mean += r.final_accuracy();
    mean /= static_cast<double>(recs.size());
    weakest = any ? std::min(weakest, mean) : mean;
    any = true;
  }
  std::map<std::string, std::optional<double>> out;
  for (const auto& [name, recs] : by_policy) out[name] = filtered_already_correct(recs, weakest);
  return out;
}

}  // namespace rho
