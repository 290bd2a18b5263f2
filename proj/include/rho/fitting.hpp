#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "rho/dataset.hpp"
#include "rho/mlp.hpp"
#include "rho/optimizer.hpp"
#include "rho/random.hpp"

namespace rho {

/// Eval-mode logits for a whole dataset, computed in chunks. Rows do not
/// interact in eval mode, so chunking does not change any value.
inline Tensor predict_logits(const MlpModel& model, const LabeledDataset& data, std::size_t chunk = 1024) {
  const std::size_t n = data.size(), c = model.num_classes();
  Tensor out = Tensor::matrix(n, c);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t stop = std::min(n, start + chunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor z = forward(model, data.features.gather_rows(idx), kEvalForward);
    std::copy(z.values().begin(), z.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(start * c));
  }
  return out;
}

inline std::vector<int> predict_classes(const MlpModel& model, const LabeledDataset& data) {
  const Tensor z = predict_logits(model, data);
  std::vector<int> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = static_cast<int>(argmax(z.row(i)));
  return out;
}

/// Eval-mode per-example cross-entropy over a dataset.
inline std::vector<double> per_example_loss(const MlpModel& model, const LabeledDataset& data) {
  return cross_entropy(predict_logits(model, data), data.labels);
}

struct Evaluation {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

/// Accuracy (argmax, lowest index wins ties) and mean cross-entropy in eval mode.
inline Evaluation evaluate(const MlpModel& model, const LabeledDataset& data) {
  if (data.empty()) return {};
  const Tensor z = predict_logits(model, data);
  const auto losses = cross_entropy(z, data.labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (static_cast<int>(argmax(z.row(i))) == data.labels[i]) ++correct;
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(correct) / n, std::accumulate(losses.begin(), losses.end(), 0.0) / n};
}

/// One pass of uniformly shuffled mini-batch training.
inline void fit_epoch(Learner& learner, const LabeledDataset& data, std::size_t batch_size, std::uint64_t seed) {
  const auto perm = seeded_permutation(data.size(), seed);
  std::vector<std::size_t> batch;
  std::vector<int> labels;
  std::size_t step = 0;
  for (std::size_t start = 0; start < perm.size(); start += batch_size, ++step) {
    const std::size_t stop = std::min(perm.size(), start + batch_size);
    batch.assign(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(stop));
    labels.clear();
    for (std::size_t i : batch) labels.push_back(data.labels[i]);
    train_step(learner, data.features.gather_rows(batch), labels, mix_seed(seed, step));
  }
}

}  // namespace rho
