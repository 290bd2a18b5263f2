#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "rho/csv.hpp"
#include "rho/dataset.hpp"
#include "rho/errors.hpp"
#include "rho/fitting.hpp"
#include "rho/hash.hpp"
#include "rho/mlp.hpp"
#include "rho/optimizer.hpp"

// Irreducible-loss (IL) models: small models trained on held-out data whose
// per-example loss on the training pool is subtracted from the training loss
// during selection.

namespace rho {

struct IlTrainingConfig {
  MlpArchitecture arch;
  std::size_t epochs = 10;
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct CheckpointEntry {
  std::size_t epoch = 0;  // 1-based
  double validation_loss = 0.0;
  double validation_accuracy = 0.0;
};

/// Per-epoch validation metrics and the chosen epoch (lowest validation loss,
/// earliest on ties).
struct CheckpointLog {
  std::vector<CheckpointEntry> entries;
  std::size_t selected_epoch = 0;
};

struct IlTrainingResult {
  MlpModel model;
  CheckpointLog log;
};

/// Trains on `holdout` with uniform mini-batches. After every epoch the mean
/// loss on `validation` (the pool whose IL will be computed) is logged; the
/// returned model is the checkpoint with the lowest such loss.
inline IlTrainingResult train_il_model(const LabeledDataset& holdout, const LabeledDataset& validation,
                                       const IlTrainingConfig& cfg) {
  if (cfg.epochs == 0) throw ArgumentError("train_il_model: epochs must be positive");
  if (holdout.empty()) throw ArgumentError("train_il_model: holdout set is empty");
  if (cfg.batch_size == 0) throw ArgumentError("train_il_model: batch size must be positive");
  if (cfg.arch.input_width() != holdout.dim() || static_cast<int>(cfg.arch.num_classes()) != holdout.num_classes) {
    throw DimensionError("train_il_model: architecture does not match the data");
  }
  Learner learner{MlpModel::init(cfg.arch, cfg.seed), Optimizer(cfg.optimizer)};
  IlTrainingResult best;
  double best_loss = 0.0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    fit_epoch(learner, holdout, cfg.batch_size, mix_seed(cfg.seed, epoch));
    const Evaluation ev = evaluate(learner.model, validation);
    best.log.entries.push_back({epoch, ev.mean_loss, ev.accuracy});
    if (epoch == 1 || ev.mean_loss < best_loss) {
      best_loss = ev.mean_loss;
      best.model = learner.model;
      best.log.selected_epoch = epoch;
    }
  }
  return best;
}

enum class IlScheme { holdout, two_halves };

inline std::string to_string(IlScheme s) { return s == IlScheme::holdout ? "holdout" : "two-halves"; }

/// A model that contributed IL values, and the ids it was trained on.
struct IlProducer {
  std::string model_id;
  std::vector<ExampleId> trained_on;
};

/// Per-example irreducible holdout loss keyed by example id.
class IrreducibleLossTable {
 public:
  IrreducibleLossTable() = default;
  explicit IrreducibleLossTable(IlScheme scheme) : scheme_(scheme) {}

  IlScheme scheme() const { return scheme_; }
  std::size_t size() const { return values_.size(); }
  bool contains(ExampleId id) const { return values_.count(id) != 0; }

  double at(ExampleId id) const {
    auto it = values_.find(id);
    if (it == values_.end()) throw LookupError("IL table: no entry for example id " + std::to_string(id));
    return it->second;
  }

  const std::map<ExampleId, double>& values() const { return values_; }
  const std::vector<IlProducer>& producers() const { return producers_; }

  /// Index into producers() of the model that scored `id`, if known.
  std::optional<std::size_t> producer_of(ExampleId id) const {
    auto it = producer_of_.find(id);
    if (it == producer_of_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t add_producer(IlProducer p) {
    producers_.push_back(std::move(p));
    return producers_.size() - 1;
  }

  void set(ExampleId id, double value, std::optional<std::size_t> producer = std::nullopt) {
    if (!std::isfinite(value)) throw DomainError("IL table: non-finite value for id " + std::to_string(id));
    if (!values_.emplace(id, value).second) throw DomainError("IL table: duplicate id " + std::to_string(id));
    if (producer) producer_of_[id] = *producer;
  }

  /// True when no entry was produced by a model that trained on that example.
  bool never_self_scored() const {
    std::vector<std::set<ExampleId>> trained(producers_.size());
    for (std::size_t p = 0; p < producers_.size(); ++p)
      trained[p].insert(producers_[p].trained_on.begin(), producers_[p].trained_on.end());
    for (const auto& [id, p] : producer_of_)
      if (trained[p].count(id)) return false;
    return true;
  }

  /// Hash of the producer models and the scheme.
  std::string provenance() const {
    Fnv1a h;
    h.update(to_string(scheme_));
    for (const auto& p : producers_) h.update(p.model_id);
    return h.hex();
  }

  /// Hash of the (id, value) pairs.
  std::string content_hash() const {
    Fnv1a h;
    for (const auto& [id, v] : values_) {
      h.update(id);
      h.update(v);
    }
    return h.hex();
  }

  void check_covers(const LabeledDataset& data) const {
    for (ExampleId id : data.ids)
      if (!contains(id)) throw SetupError("IL table does not cover example id " + std::to_string(id));
  }

 private:
  IlScheme scheme_ = IlScheme::holdout;
  std::map<ExampleId, double> values_;
  std::map<ExampleId, std::size_t> producer_of_;
  std::vector<IlProducer> producers_;
};

/// IL[i] = eval-mode cross-entropy of the IL model on pool example i (no
/// dropout, running BN statistics, raw features).
inline IrreducibleLossTable compute_il_table(const MlpModel& il_model, const LabeledDataset& pool,
                                             IlProducer producer = {}, IlScheme scheme = IlScheme::holdout) {
  if (producer.model_id.empty()) producer.model_id = il_model.fingerprint();
  IrreducibleLossTable table(scheme);
  const std::size_t p = table.add_producer(std::move(producer));
  const auto losses = per_example_loss(il_model, pool);
  for (std::size_t i = 0; i < pool.size(); ++i) table.set(pool.ids[i], losses[i], p);
  return table;
}

struct TwoHalvesResult {
  IrreducibleLossTable table;
  IlTrainingResult model_a;  // trained on half A, scores half B
  IlTrainingResult model_b;  // trained on half B, scores half A
};

/// Trains one IL model per half; each scores the half it did not see. The
/// checkpoint of each model is chosen on the half it scores.
inline TwoHalvesResult compute_il_table_two_halves(const LabeledDataset& half_a, const LabeledDataset& half_b,
                                                   const IlTrainingConfig& cfg) {
  std::set<ExampleId> a_ids(half_a.ids.begin(), half_a.ids.end());
  for (ExampleId id : half_b.ids)
    if (a_ids.count(id)) throw ArgumentError("two-halves: example id " + std::to_string(id) + " is in both halves");

  IlTrainingConfig cfg_a = cfg, cfg_b = cfg;
  cfg_a.seed = mix_seed(cfg.seed, 0xa);
  cfg_b.seed = mix_seed(cfg.seed, 0xb);
  TwoHalvesResult out{IrreducibleLossTable(IlScheme::two_halves), train_il_model(half_a, half_b, cfg_a),
                      train_il_model(half_b, half_a, cfg_b)};
  const std::size_t pa = out.table.add_producer({"A:" + out.model_a.model.fingerprint(), half_a.ids});
  const std::size_t pb = out.table.add_producer({"B:" + out.model_b.model.fingerprint(), half_b.ids});
  const auto loss_b = per_example_loss(out.model_a.model, half_b);
  const auto loss_a = per_example_loss(out.model_b.model, half_a);
  for (std::size_t i = 0; i < half_b.size(); ++i) out.table.set(half_b.ids[i], loss_b[i], pa);
  for (std::size_t i = 0; i < half_a.size(); ++i) out.table.set(half_a.ids[i], loss_a[i], pb);
  return out;
}

/// One optimizer step of the IL model on an acquired batch at
/// lr_scale times its configured learning rate. A zero scale is a no-op, so
/// running BatchNorm statistics stay untouched as well.
inline void update_il_model(Learner& il, const Tensor& x, std::span<const int> labels, double lr_scale,
                            std::uint64_t dropout_seed = 0) {
  if (lr_scale == 0.0) return;
  train_step(il, x, labels, dropout_seed, {}, lr_scale);
}

// ---------------------------------------------------------------------------
// Files

/// "# provenance=<hash> scheme=<scheme> ..." then id,il_value rows in id order.
inline void save_il_table(const IrreducibleLossTable& table, const std::string& path, csv::Metadata meta = {}) {
  std::ofstream out(path);
  if (!out) throw FormatError("IL table: cannot write " + path);
  meta["provenance"] = table.provenance();
  meta["scheme"] = to_string(table.scheme());
  meta["content_hash"] = table.content_hash();
  out << csv::metadata_line(meta) << '\n' << csv::timestamp_line() << '\n' << "id,il_value\n";
  for (const auto& [id, v] : table.values()) out << id << ',' << csv::format_double(v) << '\n';
  if (!out) throw FormatError("IL table: write failed for " + path);
}

inline IrreducibleLossTable load_il_table(const std::string& path, csv::Metadata* meta_out = nullptr) {
  const csv::Table t = csv::read_table(path);
  const auto scheme_it = t.meta.find("scheme");
  IlScheme scheme = IlScheme::holdout;
  if (scheme_it != t.meta.end()) {
    if (scheme_it->second == "two-halves") {
      scheme = IlScheme::two_halves;
    } else if (scheme_it->second != "holdout") {
      throw FormatError("IL table: unknown scheme '" + scheme_it->second + "'");
    }
  }
  IrreducibleLossTable table(scheme);
  const std::size_t id_col = t.column("id"), v_col = t.column("il_value");
  for (const auto& row : t.rows) table.set(csv::parse_int(row[id_col], path), csv::parse_double(row[v_col], path));
  if (auto it = t.meta.find("content_hash"); it != t.meta.end() && it->second != table.content_hash()) {
    throw FormatError("IL table: content hash mismatch in " + path);
  }
  if (meta_out) *meta_out = t.meta;
  return table;
}

inline void save_checkpoint_log(const CheckpointLog& log, const std::string& path, csv::Metadata meta = {}) {
  std::ofstream out(path);
  if (!out) throw FormatError("checkpoint log: cannot write " + path);
  meta["selected_epoch"] = std::to_string(log.selected_epoch);
  out << csv::metadata_line(meta) << '\n' << csv::timestamp_line() << '\n'
      << "epoch,validation_loss,validation_accuracy,selected\n";
  for (const auto& e : log.entries) {
    out << e.epoch << ',' << csv::format_double(e.validation_loss) << ',' << csv::format_double(e.validation_accuracy)
        << ',' << (e.epoch == log.selected_epoch ? 1 : 0) << '\n';
  }
}

}  // namespace rho
