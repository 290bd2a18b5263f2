#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rho/dataset.hpp"
#include "rho/errors.hpp"
#include "rho/fitting.hpp"
#include "rho/il_model.hpp"
#include "rho/mlp.hpp"
#include "rho/random.hpp"

// Selection scores and pickers. Everything here is a pure function of a
// frozen model snapshot, a candidate batch and (where needed) an IL table.

namespace rho {

enum class PolicyKind {
  rho_loss,
  train_loss,
  grad_norm,
  grad_norm_is,
  neg_il,
  uniform,
  svp_entropy,
  bald,
  cond_entropy,
  pred_entropy,
  loss_minus_cond_entropy,
};

inline constexpr PolicyKind kAllPolicyKinds[] = {
    PolicyKind::rho_loss,     PolicyKind::train_loss,   PolicyKind::grad_norm,    PolicyKind::grad_norm_is,
    PolicyKind::neg_il,       PolicyKind::uniform,      PolicyKind::svp_entropy,  PolicyKind::bald,
    PolicyKind::cond_entropy, PolicyKind::pred_entropy, PolicyKind::loss_minus_cond_entropy,
};

inline std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::rho_loss: return "rho-loss";
    case PolicyKind::train_loss: return "train-loss";
    case PolicyKind::grad_norm: return "grad-norm";
    case PolicyKind::grad_norm_is: return "grad-norm-is";
    case PolicyKind::neg_il: return "neg-il";
    case PolicyKind::uniform: return "uniform";
    case PolicyKind::svp_entropy: return "svp-entropy";
    case PolicyKind::bald: return "bald";
    case PolicyKind::cond_entropy: return "cond-entropy";
    case PolicyKind::pred_entropy: return "pred-entropy";
    case PolicyKind::loss_minus_cond_entropy: return "loss-minus-cond-entropy";
  }
  return "?";
}

inline PolicyKind parse_policy_kind(const std::string& name) {
  for (PolicyKind k : kAllPolicyKinds)
    if (to_string(k) == name) return k;
  throw ArgumentError("unknown selection policy '" + name + "'");
}

inline bool needs_il_table(PolicyKind k) { return k == PolicyKind::rho_loss || k == PolicyKind::neg_il; }

inline bool is_acquisition(PolicyKind k) {
  return k == PolicyKind::bald || k == PolicyKind::cond_entropy || k == PolicyKind::pred_entropy ||
         k == PolicyKind::loss_minus_cond_entropy;
}

struct SelectionPolicy {
  PolicyKind kind = PolicyKind::uniform;
  std::optional<std::size_t> mc_samples;    // acquisition kinds only
  std::optional<double> is_temperature;     // grad-norm-is only
  std::uint64_t seed = 0;
  GradNormKind grad_norm = GradNormKind::exact;
  double svp_keep_fraction = 0.5;           // svp-entropy only

  /// A policy of `kind` with its required settings at their defaults.
  static SelectionPolicy make(PolicyKind kind, std::uint64_t seed = 0) {
    SelectionPolicy p;
    p.kind = kind;
    p.seed = seed;
    if (is_acquisition(kind)) p.mc_samples = 10;
    if (kind == PolicyKind::grad_norm_is) p.is_temperature = 1.0;
    return p;
  }

  void validate() const {
    const std::string name = to_string(kind);
    if (is_acquisition(kind) != mc_samples.has_value()) {
      throw ArgumentError("policy " + name + ": MC sample count must be set exactly for acquisition policies");
    }
    if ((kind == PolicyKind::grad_norm_is) != is_temperature.has_value()) {
      throw ArgumentError("policy " + name + ": IS temperature must be set exactly for grad-norm-is");
    }
    if (mc_samples) {
      const std::size_t min_k = kind == PolicyKind::pred_entropy ? 1 : 2;
      if (*mc_samples < min_k) {
        throw ArgumentError("policy " + name + ": needs at least " + std::to_string(min_k) + " MC dropout samples");
      }
    }
    if (is_temperature && !(*is_temperature > 0.0)) throw ArgumentError("policy grad-norm-is: temperature must be positive");
    if (kind == PolicyKind::svp_entropy && !(svp_keep_fraction > 0.0 && svp_keep_fraction <= 1.0)) {
      throw ArgumentError("policy svp-entropy: keep fraction must lie in (0, 1]");
    }
  }
};

/// One step's candidates, their scores and the chosen subset.
struct ScoredBatch {
  std::vector<ExampleId> candidate_ids;
  std::vector<double> scores;
  std::vector<std::size_t> selected;       // positions in candidate_ids, best first
  std::vector<ExampleId> selected_ids;
  std::optional<std::vector<double>> weights;  // grad-norm-is only, aligned with selected
};

// ---------------------------------------------------------------------------
// Scores

/// Reducible holdout loss: training loss minus IL. Never clamped.
inline std::vector<double> score_rho_loss(std::span<const double> losses, std::span<const ExampleId> ids,
                                          const IrreducibleLossTable& il) {
  if (losses.size() != ids.size()) throw DimensionError("score_rho_loss: losses and ids differ in length");
  std::vector<double> out(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) out[i] = losses[i] - il.at(ids[i]);
  return out;
}

inline std::vector<double> score_train_loss(std::span<const double> losses) { return {losses.begin(), losses.end()}; }

inline std::vector<double> score_neg_il(std::span<const ExampleId> ids, const IrreducibleLossTable& il) {
  std::vector<double> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = -il.at(ids[i]);
  return out;
}

/// Per-candidate gradient norms. BatchNorm (if any) uses running statistics,
/// so each candidate's gradient depends on that candidate alone.
inline std::vector<double> score_grad_norm(const MlpModel& model, const Tensor& x, std::span<const int> labels,
                                           GradNormKind kind = GradNormKind::exact) {
  if (x.rows() != labels.size()) throw DimensionError("score_grad_norm: labels do not match candidates");
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = per_example_grad_norm(model, x.row(i), labels[i], kind);
  return out;
}

/// Entropy in nats; 0 log 0 = 0.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

struct AcquisitionTerms {
  std::vector<double> predictive_entropy;   // H[mean_k p_k]
  std::vector<double> expected_entropy;     // mean_k H[p_k]
};

/// Entropy decomposition from K softmax samples (each n x C).
inline AcquisitionTerms acquisition_terms(const std::vector<Tensor>& samples) {
  if (samples.empty()) throw ArgumentError("acquisition: no MC samples");
  const std::size_t n = samples.front().rows(), c = samples.front().cols();
  const double inv_k = 1.0 / static_cast<double>(samples.size());
  AcquisitionTerms t;
  t.predictive_entropy.resize(n);
  t.expected_entropy.resize(n);
  std::vector<double> mean(c);
  for (std::size_t r = 0; r < n; ++r) {
    std::fill(mean.begin(), mean.end(), 0.0);
    double eh = 0.0;
    for (const auto& s : samples) {
      if (s.rows() != n || s.cols() != c) throw DimensionError("acquisition: MC samples differ in shape");
      const auto row = s.row(r);
      for (std::size_t j = 0; j < c; ++j) mean[j] += row[j] * inv_k;
      eh += entropy(row) * inv_k;
    }
    t.predictive_entropy[r] = entropy(mean);
    t.expected_entropy[r] = eh;
  }
  return t;
}

/// Acquisition scores from MC dropout samples.
///   bald:                    H[mean p] - mean H[p]
///   cond-entropy:            mean H[p]
///   pred-entropy:            H[mean p]
///   loss-minus-cond-entropy: loss - mean H[p], with `losses` the model's
///                            training loss of each candidate
inline std::vector<double> acquisition_scores(PolicyKind kind, const std::vector<Tensor>& samples,
                                              std::span<const double> losses = {}) {
  if (!is_acquisition(kind)) throw ArgumentError("acquisition_scores: " + to_string(kind) + " is not an acquisition");
  if (kind != PolicyKind::pred_entropy && samples.size() < 2) {
    throw ArgumentError(to_string(kind) + ": needs at least two MC dropout samples");
  }
  const auto t = acquisition_terms(samples);
  const std::size_t n = t.predictive_entropy.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (kind) {
      case PolicyKind::bald: out[i] = t.predictive_entropy[i] - t.expected_entropy[i]; break;
      case PolicyKind::cond_entropy: out[i] = t.expected_entropy[i]; break;
      case PolicyKind::pred_entropy: out[i] = t.predictive_entropy[i]; break;
      default:
        if (losses.size() != n) throw DimensionError("loss-minus-cond-entropy: losses do not match candidates");
        out[i] = losses[i] - t.expected_entropy[i];
    }
  }
  return out;
}

/// MC-dropout acquisition scores for candidates `x`. Sample k uses dropout
/// seed `seed + k`; the label-aware variant uses the eval-mode loss.
inline std::vector<double> score_al(PolicyKind kind, const MlpModel& model, const Tensor& x,
                                    std::span<const int> labels, std::size_t samples, std::uint64_t seed,
                                    BnStats bn_stats = BnStats::running) {
  if (kind != PolicyKind::pred_entropy && samples < 2) {
    throw ArgumentError(to_string(kind) + ": needs at least two MC dropout samples");
  }
  const auto draws = mc_dropout_predict(model, x, samples, seed, bn_stats);
  std::vector<double> losses;
  if (kind == PolicyKind::loss_minus_cond_entropy) {
    losses = cross_entropy(forward(model, x, {Mode::eval, bn_stats, 0}), labels);
  }
  return acquisition_scores(kind, draws, losses);
}

// ---------------------------------------------------------------------------
// Pickers

/// Positions of the n_b largest scores, best first. Ties are broken by a
/// seeded shuffle applied before a stable sort, so equal scores give a
/// uniformly random subset.
inline std::vector<std::size_t> select_top_k(std::span<const double> scores, std::size_t n_b, std::uint64_t tie_seed) {
  if (n_b == 0 || n_b > scores.size()) {
    throw ArgumentError("select_top_k: cannot pick " + std::to_string(n_b) + " of " + std::to_string(scores.size()));
  }
  for (double s : scores)
    if (std::isnan(s)) throw DomainError("select_top_k: NaN score");
  auto order = seeded_permutation(scores.size(), tie_seed);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(n_b);
  return order;
}

struct IsSample {
  std::vector<std::size_t> selected;
  std::vector<double> weights;
};

/// Importance sampling proportional to score^(1/temperature).
///
/// n_b positions are drawn sequentially without replacement, renormalising
/// over the remaining candidates after each draw. Weights follow the ordered
/// (Des Raj) estimator: the k-th draw (1-based) gets
///   w_k = ((1 - P_k) / p_k + n_b - k) / N,
/// with p_k its first-draw probability and P_k the first-draw mass taken by
/// earlier draws, so (1/n_b) sum_k w_k g_k is an unbiased estimate of the
/// candidate mean of g for every n_b. For n_b = 1 this is 1 / (N p).
/// All-zero scores fall back to a uniform subset with unit weights.
inline IsSample sample_grad_norm_is(std::span<const double> scores, std::size_t n_b, std::uint64_t seed,
                                    double temperature = 1.0) {
  const std::size_t n = scores.size();
  if (n_b == 0 || n_b > n) throw ArgumentError("grad-norm-is: cannot pick " + std::to_string(n_b) + " of " + std::to_string(n));
  if (!(temperature > 0.0)) throw ArgumentError("grad-norm-is: temperature must be positive");
  std::vector<double> mass(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(scores[i] >= 0.0) || !std::isfinite(scores[i])) throw DomainError("grad-norm-is: scores must be finite and >= 0");
    mass[i] = temperature == 1.0 ? scores[i] : std::pow(scores[i], 1.0 / temperature);
    total += mass[i];
  }
  IsSample out;
  if (total == 0.0) {
    auto perm = seeded_permutation(n, seed);
    out.selected.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_b));
    out.weights.assign(n_b, 1.0);
    return out;
  }
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> remaining = mass;
  double remaining_total = total;
  std::vector<bool> taken(n, false);
  for (std::size_t draw = 0; draw < n_b; ++draw) {
    std::size_t pick = n;
    if (remaining_total > 0.0) {
      const double u = unif(rng) * remaining_total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i] || remaining[i] == 0.0) continue;
        acc += remaining[i];
        pick = i;
        if (u < acc) break;
      }
    }
    if (pick == n) {
      // Only zero-mass candidates are left; their gradients are zero, so they
      // enter with zero weight.
      for (std::size_t i = 0; i < n && pick == n; ++i)
        if (!taken[i]) pick = i;
    }
    const double first_term = mass[pick] > 0.0 ? remaining_total / mass[pick] : 0.0;
    out.weights.push_back((first_term + static_cast<double>(n_b - 1 - draw)) / static_cast<double>(n));
    taken[pick] = true;
    remaining_total -= remaining[pick];
    remaining[pick] = 0.0;
    out.selected.push_back(pick);
  }
  return out;
}

/// Max-entropy proxy selection: ids of the round(keep_fraction * n) pool
/// examples (at least one) with the highest eval-mode predictive entropy
/// under `proxy`, best first.
inline std::vector<ExampleId> svp_offline_select(const MlpModel& proxy, const LabeledDataset& pool,
                                                 double keep_fraction, std::uint64_t tie_seed) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ArgumentError("svp: keep fraction must lie in (0, 1]");
  if (pool.empty()) throw ArgumentError("svp: empty pool");
  const Tensor p = softmax_rows(predict_logits(proxy, pool));
  std::vector<double> h(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) h[i] = entropy(p.row(i));
  auto keep = static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(pool.size())));
  keep = std::clamp<std::size_t>(keep, 1, pool.size());
  std::vector<ExampleId> out;
  for (std::size_t i : select_top_k(h, keep, tie_seed)) out.push_back(pool.ids[i]);
  return out;
}

}  // namespace rho
