#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "rho/errors.hpp"
#include "rho/mlp.hpp"

namespace rho {

enum class OptimizerKind { sgd, adamw };

inline std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adamw"; }

/// Defaults follow torch.optim.AdamW.
struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;

  static OptimizerConfig sgd(double lr) {
    OptimizerConfig c;
    c.kind = OptimizerKind::sgd;
    c.learning_rate = lr;
    c.weight_decay = 0.0;
    return c;
  }

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Optimizer state: configuration, AdamW moment buffers and the step counter.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }
  const ParameterList& first_moment() const { return m_; }
  const ParameterList& second_moment() const { return v_; }

  /// SGD:   theta <- theta - lr * g
  /// AdamW: theta <- theta - lr * wd * theta, then the bias-corrected Adam
  ///        update with the decayed parameters.
  /// `lr_scale` multiplies the configured learning rate for this step only.
  void step(ParameterList& params, const ParameterList& grads, double lr_scale = 1.0) {
    if (params.size() != grads.size()) throw DimensionError("optimizer: gradient list does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) require_same_shape(params[i], grads[i], "optimizer");
    const double lr = config_.learning_rate * lr_scale;
    ++steps_;
    if (config_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].values();
        auto g = grads[i].values();
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
      }
      return;
    }
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.shape(), 0.0);
        v_.emplace_back(p.shape(), 0.0);
      }
    } else if (m_.size() != params.size()) {
      throw DimensionError("optimizer: moment buffers do not match parameters");
    }
    const double t = static_cast<double>(steps_);
    const double bc1 = 1.0 - std::pow(config_.beta1, t);
    const double bc2 = 1.0 - std::pow(config_.beta2, t);
    const double decay = 1.0 - lr * config_.weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
      require_same_shape(params[i], m_[i], "optimizer moments");
      auto p = params[i].values();
      auto g = grads[i].values();
      auto m = m_[i].values();
      auto v = v_[i].values();
      for (std::size_t j = 0; j < p.size(); ++j) {
        p[j] *= decay;
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
        const double m_hat = m[j] / bc1;
        const double v_hat = v[j] / bc2;
        p[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }

  void step(MlpModel& model, const ParameterList& grads, double lr_scale = 1.0) {
    step(model.parameters(), grads, lr_scale);
  }

 private:
  OptimizerConfig config_;
  ParameterList m_;
  ParameterList v_;
  std::uint64_t steps_ = 0;
};

/// A model together with its optimizer state.
struct Learner {
  MlpModel model;
  Optimizer optimizer;
};

/// One gradient step on a batch: train-mode forward (dropout active, BN over
/// this batch), weighted mean cross-entropy, optimizer update, running-BN
/// update. Returns the batch loss before the update.
inline double train_step(Learner& learner, const Tensor& x, std::span<const int> labels, std::uint64_t dropout_seed,
                         std::span<const double> weights = {}, double lr_scale = 1.0) {
  ForwardOptions opts{Mode::train, BnStats::batch, dropout_seed};
  auto result = backward(learner.model, x, labels, opts, weights);
  learner.optimizer.step(learner.model, result.gradient, lr_scale);
  if (learner.model.arch().batchnorm) learner.model.absorb_batch_moments(result.moments, labels.size());
  return result.loss;
}

}  // namespace rho
