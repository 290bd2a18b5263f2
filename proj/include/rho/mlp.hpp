#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rho/autodiff.hpp"
#include "rho/errors.hpp"
#include "rho/hash.hpp"
#include "rho/random.hpp"
#include "rho/tensor.hpp"

namespace rho {

/// Gradients and parameters share this layout: one tensor per parameter, in
/// MlpModel::parameters() order.
using ParameterList = std::vector<Tensor>;

struct MlpArchitecture {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., classes
  double dropout = 0.0;
  bool batchnorm = false;

  std::size_t input_width() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }
  std::size_t num_linear() const { return layer_sizes.size() - 1; }

  void validate() const {
    if (layer_sizes.size() < 2) throw ArgumentError("mlp: need at least input and output widths");
    for (std::size_t w : layer_sizes)
      if (w == 0) throw ArgumentError("mlp: zero-width layer");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ArgumentError("mlp: dropout rate must lie in [0, 1)");
  }

  friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

inline std::string describe(const MlpArchitecture& arch) {
  std::string out = "mlp[";
  for (std::size_t i = 0; i < arch.layer_sizes.size(); ++i) {
    if (i) out += "-";
    out += std::to_string(arch.layer_sizes[i]);
  }
  out += "]";
  if (arch.dropout > 0.0) out += "+dropout" + std::to_string(arch.dropout);
  if (arch.batchnorm) out += "+bn";
  return out;
}

enum class Mode { train, eval };
enum class BnStats { batch, running };

struct ForwardOptions {
  Mode mode = Mode::eval;
  BnStats bn_stats = BnStats::running;
  std::uint64_t dropout_seed = 0;  // only read in train mode with dropout > 0
};

inline constexpr ForwardOptions kEvalForward{};

/// Multilayer perceptron: Linear -> [BatchNorm] -> ReLU -> [Dropout] per
/// hidden layer, then a final Linear producing logits.
class MlpModel {
 public:
  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.1;

  MlpModel() = default;

  /// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static MlpModel init(const MlpArchitecture& arch, std::uint64_t seed) {
    arch.validate();
    MlpModel m;
    m.arch_ = arch;
    Rng rng(seed);
    for (std::size_t l = 0; l < arch.num_linear(); ++l) {
      const std::size_t fan_in = arch.layer_sizes[l], fan_out = arch.layer_sizes[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      Tensor w = Tensor::matrix(fan_in, fan_out);
      for (double& v : w.values()) v = dist(rng);
      Tensor b({fan_out});
      for (double& v : b.values()) v = dist(rng);
      m.params_.push_back(std::move(w));
      m.params_.push_back(std::move(b));
      if (arch.batchnorm && l + 1 < arch.num_linear()) {
        m.params_.push_back(Tensor({fan_out}, 1.0));
        m.params_.push_back(Tensor({fan_out}, 0.0));
        m.running_mean_.emplace_back(fan_out, 0.0);
        m.running_var_.emplace_back(fan_out, 1.0);
      }
    }
    return m;
  }

  /// All-zero parameters (predicts the uniform distribution).
  static MlpModel zeros(const MlpArchitecture& arch) {
    MlpModel m = init(arch, 0);
    for (auto& p : m.params_) p.fill(0.0);
    return m;
  }

  const MlpArchitecture& arch() const { return arch_; }
  std::size_t input_width() const { return arch_.input_width(); }
  std::size_t num_classes() const { return arch_.num_classes(); }

  ParameterList& parameters() { return params_; }
  const ParameterList& parameters() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  Tensor& weight(std::size_t layer) { return params_[param_offset(layer)]; }
  const Tensor& weight(std::size_t layer) const { return params_[param_offset(layer)]; }
  Tensor& bias(std::size_t layer) { return params_[param_offset(layer) + 1]; }
  const Tensor& bias(std::size_t layer) const { return params_[param_offset(layer) + 1]; }

  const std::vector<std::vector<double>>& running_mean() const { return running_mean_; }
  const std::vector<std::vector<double>>& running_var() const { return running_var_; }

  /// Exponential update of the running BatchNorm statistics from one batch.
  /// The variance uses the unbiased estimate, as torch.nn.BatchNorm1d does.
  void absorb_batch_moments(const std::vector<ad::BatchMoments>& moments, std::size_t batch_size) {
    if (moments.size() != running_mean_.size()) throw DimensionError("mlp: batch moments do not match BN layers");
    const double unbias = batch_size > 1 ? static_cast<double>(batch_size) / static_cast<double>(batch_size - 1) : 1.0;
    for (std::size_t l = 0; l < moments.size(); ++l) {
      for (std::size_t j = 0; j < running_mean_[l].size(); ++j) {
        running_mean_[l][j] = (1.0 - kBnMomentum) * running_mean_[l][j] + kBnMomentum * moments[l].mean[j];
        running_var_[l][j] =
            (1.0 - kBnMomentum) * running_var_[l][j] + kBnMomentum * moments[l].variance[j] * unbias;
      }
    }
  }

  /// Content hash over architecture, parameters and running statistics.
  std::string fingerprint() const {
    Fnv1a h;
    h.update(describe(arch_));
    for (const auto& p : params_) h.update(p.values());
    for (const auto& v : running_mean_) h.update(std::span<const double>(v));
    for (const auto& v : running_var_) h.update(std::span<const double>(v));
    return h.hex();
  }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;

 private:
  std::size_t param_offset(std::size_t layer) const {
    const std::size_t per_hidden = arch_.batchnorm ? 4 : 2;
    return layer * per_hidden;
  }

  MlpArchitecture arch_;
  ParameterList params_;
  std::vector<std::vector<double>> running_mean_;
  std::vector<std::vector<double>> running_var_;
};

/// Inverted-dropout keep mask scaled by 1/(1-p).
inline Tensor dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  Tensor mask = Tensor::matrix(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (double& v : mask.values()) v = keep(rng) ? scale : 0.0;
  return mask;
}

namespace detail {

struct ForwardGraph {
  ad::Var logits;
  ad::Var last_hidden;  // input of the final linear layer
  std::vector<ad::Var> params;
  std::vector<ad::BatchMoments> moments;
};

inline ForwardGraph build_forward(ad::Tape& tape, const MlpModel& model, const Tensor& x, const ForwardOptions& opts) {
  const auto& arch = model.arch();
  if (x.rank() != 2 || x.cols() != arch.input_width()) {
    throw DimensionError("forward: input has shape " + shape_string(x.shape()) + ", model expects " +
                         std::to_string(arch.input_width()) + " columns");
  }
  ForwardGraph g;
  for (const auto& p : model.parameters()) g.params.push_back(tape.parameter(p));
  const bool dropout_active = opts.mode == Mode::train && arch.dropout > 0.0;
  Rng rng(opts.dropout_seed);
  ad::Var h = tape.constant(x);
  std::size_t pi = 0, bn_layer = 0;
  for (std::size_t l = 0; l < arch.num_linear(); ++l) {
    if (l + 1 == arch.num_linear()) g.last_hidden = h;
    h = ad::add_row_vector(ad::matmul(h, g.params[pi]), g.params[pi + 1]);
    pi += 2;
    if (l + 1 == arch.num_linear()) break;
    if (arch.batchnorm) {
      if (opts.bn_stats == BnStats::batch) {
        ad::BatchMoments m;
        h = ad::batch_norm_batch_stats(h, g.params[pi], g.params[pi + 1], MlpModel::kBnEps, &m);
        g.moments.push_back(std::move(m));
      } else {
        h = ad::batch_norm_fixed_stats(h, g.params[pi], g.params[pi + 1], model.running_mean()[bn_layer],
                                       model.running_var()[bn_layer], MlpModel::kBnEps);
      }
      pi += 2;
      ++bn_layer;
    }
    h = ad::relu(h);
    if (dropout_active) {
      h = ad::multiply_mask(h, dropout_mask(h.value().rows(), h.value().cols(), arch.dropout, rng));
    }
  }
  g.logits = h;
  return g;
}

}  // namespace detail

/// Logits (batch x classes). Read-only on the model.
inline Tensor forward(const MlpModel& model, const Tensor& x, const ForwardOptions& opts = kEvalForward) {
  ad::Tape tape;
  return detail::build_forward(tape, model, x, opts).logits.value();
}

/// Per-example -log softmax(logits)[label].
inline std::vector<double> cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || labels.size() != logits.rows()) {
    throw DimensionError("cross_entropy: label count does not match batch size");
  }
  const std::size_t c = logits.cols();
  std::vector<double> out(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw DomainError("cross_entropy: label out of range");
    // (max - z_y) + log1p(rest) avoids cancelling two large numbers.
    const auto row = logits.row(r);
    std::size_t top = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (row[j] > row[top]) top = j;
    double rest = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      if (j != top) rest += std::exp(row[j] - row[top]);
    out[r] = (row[top] - row[static_cast<std::size_t>(y)]) + std::log1p(rest);
  }
  return out;
}

struct BackwardResult {
  ParameterList gradient;
  double loss = 0.0;                       // weighted mean loss of the batch
  std::vector<ad::BatchMoments> moments;   // filled when BN used batch statistics
};

/// Gradient of the (optionally weighted) mean cross-entropy over the batch
/// with respect to every parameter.
inline BackwardResult backward(const MlpModel& model, const Tensor& x, std::span<const int> labels,
                               const ForwardOptions& opts = kEvalForward, std::span<const double> weights = {}) {
  ad::Tape tape;
  auto graph = detail::build_forward(tape, model, x, opts);
  ad::Var loss = ad::mean_cross_entropy(graph.logits, labels, weights);
  tape.backward(loss);
  BackwardResult result;
  result.loss = loss.value()[0];
  result.gradient.reserve(graph.params.size());
  for (const auto& p : graph.params) result.gradient.push_back(p.grad());
  result.moments = std::move(graph.moments);
  return result;
}

inline double squared_norm(const ParameterList& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double v : p.values()) s += v * v;
  return s;
}

inline double l2_norm(const ParameterList& params) { return std::sqrt(squared_norm(params)); }

enum class GradNormKind { exact, last_layer };

/// Euclidean norm of one example's loss gradient.
///
/// `exact` differentiates through every parameter. `last_layer` only covers
/// the output layer's weight and bias, where the gradient factorises as
/// |softmax - onehot| * sqrt(|h|^2 + 1).
inline double per_example_grad_norm(const MlpModel& model, std::span<const double> features, int label,
                                    GradNormKind kind = GradNormKind::exact,
                                    const ForwardOptions& opts = kEvalForward) {
  Tensor x({1, features.size()}, std::vector<double>(features.begin(), features.end()));
  const int labels[1] = {label};
  if (kind == GradNormKind::exact) return l2_norm(backward(model, x, labels, opts).gradient);

  ad::Tape tape;
  auto graph = detail::build_forward(tape, model, x, opts);
  const Tensor& z = graph.logits.value();
  if (label < 0 || static_cast<std::size_t>(label) >= z.cols()) throw DomainError("grad norm: label out of range");
  Tensor p = softmax_rows(z);
  double err2 = 0.0;
  for (std::size_t j = 0; j < z.cols(); ++j) {
    const double d = p[j] - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0);
    err2 += d * d;
  }
  const Tensor& h = graph.last_hidden.value();
  double h2 = 1.0;
  for (double v : h.values()) h2 += v * v;
  return std::sqrt(err2 * h2);
}

/// K stochastic forward passes with dropout active; sample k uses mask seed
/// `seed + k`. Returns one softmax tensor per sample.
inline std::vector<Tensor> mc_dropout_predict(const MlpModel& model, const Tensor& x, std::size_t samples,
                                              std::uint64_t seed, BnStats bn_stats = BnStats::running) {
  if (samples == 0) throw ArgumentError("mc_dropout_predict: need at least one sample");
  std::vector<Tensor> out;
  out.reserve(samples);
  for (std::size_t k = 0; k < samples; ++k) {
    ForwardOptions opts{Mode::train, bn_stats, seed + k};
    out.push_back(softmax_rows(forward(model, x, opts)));
  }
  return out;
}

/// Bag of independently initialised members sharing one architecture.
class EnsembleModel {
 public:
  EnsembleModel() = default;

  static EnsembleModel init(const MlpArchitecture& arch, std::size_t members, std::uint64_t seed) {
    if (members == 0) throw ArgumentError("ensemble: need at least one member");
    EnsembleModel e;
    for (std::size_t k = 0; k < members; ++k) e.members_.push_back(MlpModel::init(arch, mix_seed(seed, k)));
    return e;
  }

  explicit EnsembleModel(std::vector<MlpModel> members) : members_(std::move(members)) {
    if (members_.empty()) throw ArgumentError("ensemble: need at least one member");
    for (const auto& m : members_)
      if (!(m.arch() == members_.front().arch())) throw DimensionError("ensemble: members differ in architecture");
  }

  std::size_t size() const { return members_.size(); }
  std::vector<MlpModel>& members() { return members_; }
  const std::vector<MlpModel>& members() const { return members_; }
  const MlpArchitecture& arch() const { return members_.front().arch(); }

  /// Arithmetic mean of member softmax outputs.
  Tensor predictive(const Tensor& x, const ForwardOptions& opts = kEvalForward) const {
    Tensor mean;
    for (const auto& m : members_) {
      Tensor p = softmax_rows(forward(m, x, opts));
      if (mean.empty()) {
        mean = std::move(p);
      } else {
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += p[i];
      }
    }
    const double inv = 1.0 / static_cast<double>(members_.size());
    for (double& v : mean.values()) v *= inv;
    return mean;
  }

  /// Per-example -log of the ensemble predictive probability of the label,
  /// evaluated in log space: -log(mean_k exp(-loss_k)).
  std::vector<double> loss(const Tensor& x, std::span<const int> labels,
                           const ForwardOptions& opts = kEvalForward) const {
    std::vector<std::vector<double>> member_losses;
    for (const auto& m : members_) member_losses.push_back(cross_entropy(forward(m, x, opts), labels));
    const double log_k = std::log(static_cast<double>(members_.size()));
    std::vector<double> out(labels.size());
    std::vector<double> neg(members_.size());
    for (std::size_t r = 0; r < labels.size(); ++r) {
      for (std::size_t k = 0; k < members_.size(); ++k) neg[k] = -member_losses[k][r];
      out[r] = log_k - log_sum_exp(neg);
    }
    return out;
  }

 private:
  std::vector<MlpModel> members_;
};

}  // namespace rho
