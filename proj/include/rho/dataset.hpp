#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rho/errors.hpp"
#include "rho/hash.hpp"
#include "rho/random.hpp"
#include "rho/tensor.hpp"

namespace rho {

using ExampleId = std::int64_t;

/// Features, labels and per-example provenance flags.
///
/// Invariants (see check_invariants): labels in [0, classes); ids unique;
/// corrupted[i] == (labels[i] != original_labels[i]).
struct LabeledDataset {
  Tensor features;  // n x d
  std::vector<int> labels;
  std::vector<ExampleId> ids;
  std::vector<int> original_labels;
  std::vector<std::uint8_t> corrupted;
  std::vector<std::uint8_t> low_relevance;
  std::vector<std::optional<ExampleId>> duplicate_of;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t dim() const { return features.cols(); }

  std::span<const double> row(std::size_t i) const { return features.row(i); }

  /// Builds a clean dataset (no flags set) with ids 0..n-1.
  static LabeledDataset from(Tensor features, std::vector<int> labels, int num_classes) {
    LabeledDataset d;
    const std::size_t n = labels.size();
    d.features = std::move(features);
    d.labels = std::move(labels);
    d.num_classes = num_classes;
    d.ids.resize(n);
    std::iota(d.ids.begin(), d.ids.end(), ExampleId{0});
    d.original_labels = d.labels;
    d.corrupted.assign(n, 0);
    d.low_relevance.assign(n, 0);
    d.duplicate_of.assign(n, std::nullopt);
    d.check_invariants();
    return d;
  }

  /// Rows `indices`, in order, with all per-example fields.
  LabeledDataset subset(std::span<const std::size_t> indices) const {
    LabeledDataset d;
    d.num_classes = num_classes;
    d.features = features.gather_rows(indices);
    for (std::size_t i : indices) {
      d.labels.push_back(labels[i]);
      d.ids.push_back(ids[i]);
      d.original_labels.push_back(original_labels[i]);
      d.corrupted.push_back(corrupted[i]);
      d.low_relevance.push_back(low_relevance[i]);
      d.duplicate_of.push_back(duplicate_of[i]);
    }
    return d;
  }

  std::map<ExampleId, std::size_t> index_by_id() const {
    std::map<ExampleId, std::size_t> out;
    for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], i);
    return out;
  }

  std::size_t corrupted_count() const { return static_cast<std::size_t>(std::count(corrupted.begin(), corrupted.end(), 1)); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }

  void check_invariants() const {
    const std::size_t n = labels.size();
    if (features.rows() != n || ids.size() != n || original_labels.size() != n || corrupted.size() != n ||
        low_relevance.size() != n || duplicate_of.size() != n) {
      throw DimensionError("dataset: per-example fields have inconsistent lengths");
    }
    if (num_classes < 1) throw DomainError("dataset: class count must be positive");
    std::set<ExampleId> seen;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 0 || labels[i] >= num_classes) throw DomainError("dataset: label out of range");
      if (original_labels[i] < 0 || original_labels[i] >= num_classes) {
        throw DomainError("dataset: original label out of range");
      }
      if ((corrupted[i] != 0) != (labels[i] != original_labels[i])) {
        throw DomainError("dataset: corrupted flag disagrees with label/original-label");
      }
      if (!seen.insert(ids[i]).second) throw DomainError("dataset: duplicate example id");
    }
  }

  /// Content hash over every field; equal datasets hash equally.
  std::string content_hash() const {
    Fnv1a h;
    h.update(static_cast<std::int64_t>(num_classes));
    h.update(static_cast<std::uint64_t>(size()));
    h.update(static_cast<std::uint64_t>(dim()));
    h.update(features.values());
    h.update(std::span<const int>(labels));
    h.update(std::span<const ExampleId>(ids));
    h.update(std::span<const int>(original_labels));
    h.update(std::span<const std::uint8_t>(corrupted));
    h.update(std::span<const std::uint8_t>(low_relevance));
    for (const auto& d : duplicate_of) h.update(d.value_or(-1));
    return h.hex();
  }
};

/// Concatenation; ids must stay unique.
inline LabeledDataset concatenate(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.num_classes != b.num_classes || (a.size() && b.size() && a.dim() != b.dim())) {
    throw DimensionError("concatenate: datasets disagree on classes or feature width");
  }
  LabeledDataset d = a;
  const std::size_t dim = a.size() ? a.dim() : b.dim();
  std::vector<double> values = a.features.storage();
  values.insert(values.end(), b.features.storage().begin(), b.features.storage().end());
  d.features = Tensor({a.size() + b.size(), dim}, std::move(values));
  d.labels.insert(d.labels.end(), b.labels.begin(), b.labels.end());
  d.ids.insert(d.ids.end(), b.ids.begin(), b.ids.end());
  d.original_labels.insert(d.original_labels.end(), b.original_labels.begin(), b.original_labels.end());
  d.corrupted.insert(d.corrupted.end(), b.corrupted.begin(), b.corrupted.end());
  d.low_relevance.insert(d.low_relevance.end(), b.low_relevance.begin(), b.low_relevance.end());
  d.duplicate_of.insert(d.duplicate_of.end(), b.duplicate_of.begin(), b.duplicate_of.end());
  d.check_invariants();
  return d;
}

// ---------------------------------------------------------------------------
// IDX loading

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("idx: truncated header in " + path);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an IDX image/label pair (MNIST layout). Pixels are scaled by 1/255.
/// Labels must be < `num_classes`.
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path, int num_classes = 10) {
  std::ifstream images(images_path, std::ios::binary);
  if (!images) throw FormatError("idx: cannot open " + images_path);
  std::ifstream labels(labels_path, std::ios::binary);
  if (!labels) throw FormatError("idx: cannot open " + labels_path);

  if (detail::read_be32(images, images_path) != kIdxImagesMagic) throw FormatError("idx: bad image magic in " + images_path);
  const std::uint32_t n_images = detail::read_be32(images, images_path);
  const std::uint32_t rows = detail::read_be32(images, images_path);
  const std::uint32_t cols = detail::read_be32(images, images_path);
  if (detail::read_be32(labels, labels_path) != kIdxLabelsMagic) throw FormatError("idx: bad label magic in " + labels_path);
  const std::uint32_t n_labels = detail::read_be32(labels, labels_path);
  if (n_images != n_labels) {
    throw FormatError("idx: image count " + std::to_string(n_images) + " != label count " + std::to_string(n_labels));
  }

  const std::size_t d = std::size_t{rows} * cols;
  std::vector<unsigned char> pixels(std::size_t{n_images} * d);
  if (!images.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()))) {
    throw FormatError("idx: truncated pixel data in " + images_path);
  }
  std::vector<unsigned char> raw_labels(n_labels);
  if (!labels.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(raw_labels.size()))) {
    throw FormatError("idx: truncated label data in " + labels_path);
  }

  std::vector<double> values(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) values[i] = static_cast<double>(pixels[i]) / 255.0;
  std::vector<int> ys(raw_labels.begin(), raw_labels.end());
  for (int y : ys)
    if (y >= num_classes) throw FormatError("idx: label " + std::to_string(y) + " exceeds class count");
  return LabeledDataset::from(Tensor({std::size_t{n_images}, d}, std::move(values)), std::move(ys), num_classes);
}

// ---------------------------------------------------------------------------
// Synthetic data

/// `per_class` Gaussian samples (isotropic, std `spread`) around each mean.
/// Class c uses means[c]; output is grouped by class.
inline LabeledDataset gen_gaussian_clusters(const std::vector<std::vector<double>>& means, std::size_t per_class,
                                            double spread, std::uint64_t seed) {
  if (means.size() < 2) throw ArgumentError("gen_synthetic: need at least two classes");
  if (per_class < 1) throw ArgumentError("gen_synthetic: need at least one example per class");
  if (!(spread > 0.0)) throw ArgumentError("gen_synthetic: cluster spread must be positive");
  const std::size_t dim = means.front().size();
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  std::vector<double> values;
  values.reserve(means.size() * per_class * dim);
  std::vector<int> labels;
  for (std::size_t c = 0; c < means.size(); ++c) {
    if (means[c].size() != dim) throw DimensionError("gen_synthetic: means disagree on dimension");
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < dim; ++j) values.push_back(means[c][j] + noise(rng));
      labels.push_back(static_cast<int>(c));
    }
  }
  Tensor features({labels.size(), dim}, std::move(values));
  return LabeledDataset::from(std::move(features), std::move(labels), static_cast<int>(means.size()));
}

/// Class means on the unit sphere in R^dim, seeded. In one dimension the
/// sphere has only two points, so means are spaced evenly on [-1, 1] instead.
inline std::vector<std::vector<double>> sphere_means(int classes, std::size_t dim, std::uint64_t seed) {
  if (classes < 2) throw ArgumentError("gen_synthetic: need at least two classes");
  if (dim < 1) throw ArgumentError("gen_synthetic: dimension must be positive");
  std::vector<std::vector<double>> means(static_cast<std::size_t>(classes), std::vector<double>(dim));
  if (dim == 1) {
    for (int c = 0; c < classes; ++c) means[static_cast<std::size_t>(c)][0] = -1.0 + 2.0 * c / (classes - 1);
    return means;
  }
  Rng rng(mix_seed(seed, 0x6d65616e73ULL));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& m : means) {
    double norm = 0.0;
    while (norm < 1e-12) {
      norm = 0.0;
      for (double& v : m) {
        v = gauss(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    }
    for (double& v : m) v /= norm;
  }
  return means;
}

/// With modes > 1 each class is a mixture of `modes` clusters, each with its
/// own mean on the sphere; the class's examples are spread over its modes as
/// evenly as possible. modes = 1 is a plain one-cluster-per-class task.
inline LabeledDataset gen_synthetic(int classes, std::size_t per_class, std::size_t dim, double spread,
                                    std::uint64_t seed, std::size_t modes = 1) {
  if (!(spread > 0.0)) throw ArgumentError("gen_synthetic: cluster spread must be positive");
  if (modes < 1) throw ArgumentError("gen_synthetic: modes must be positive");
  if (modes == 1) return gen_gaussian_clusters(sphere_means(classes, dim, seed), per_class, spread, seed);
  if (per_class < modes) throw ArgumentError("gen_synthetic: fewer examples per class than modes");
  const auto means = sphere_means(classes * static_cast<int>(modes), dim, seed);
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(classes) * per_class * dim);
  std::vector<int> labels;
  for (int c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto& mean = means[static_cast<std::size_t>(c) * modes + i % modes];
      for (std::size_t j = 0; j < dim; ++j) values.push_back(mean[j] + noise(rng));
      labels.push_back(c);
    }
  }
  Tensor features({labels.size(), dim}, std::move(values));
  return LabeledDataset::from(std::move(features), std::move(labels), classes);
}

// ---------------------------------------------------------------------------
// Splitting

enum class SplitMode { holdout, two_halves };

struct SplitSpec {
  double holdout_fraction = 0.5;  // fraction assigned to the second part; ignored for two_halves
  std::uint64_t seed = 0;
  SplitMode mode = SplitMode::holdout;
};

/// Seeded shuffle, then a cut. holdout mode returns (train, holdout) with
/// round(fraction * n) examples in holdout, clamped to [1, n-1]; two_halves
/// returns halves whose sizes differ by at most one.
inline std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& data, const SplitSpec& spec) {
  const std::size_t n = data.size();
  if (n < 2) throw ArgumentError("split: need at least two examples");
  std::size_t second = 0;
  if (spec.mode == SplitMode::two_halves) {
    second = n / 2;
  } else {
    if (!(spec.holdout_fraction > 0.0 && spec.holdout_fraction < 1.0)) {
      throw ArgumentError("split: holdout fraction must lie in (0, 1)");
    }
    second = static_cast<std::size_t>(std::llround(spec.holdout_fraction * static_cast<double>(n)));
    second = std::clamp<std::size_t>(second, 1, n - 1);
  }
  auto perm = seeded_permutation(n, spec.seed);
  std::vector<std::size_t> first_idx(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(second));
  std::vector<std::size_t> second_idx(perm.end() - static_cast<std::ptrdiff_t>(second), perm.end());
  std::sort(first_idx.begin(), first_idx.end());
  std::sort(second_idx.begin(), second_idx.end());
  return {data.subset(first_idx), data.subset(second_idx)};
}

// ---------------------------------------------------------------------------
// Label noise

/// Each example independently, with probability p, receives a uniformly drawn
/// label different from its current one.
inline LabeledDataset inject_uniform_noise(const LabeledDataset& data, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("inject_uniform_noise: p must lie in [0, 1]");
  if (data.num_classes < 2 && p > 0.0) throw ArgumentError("inject_uniform_noise: need at least two classes");
  LabeledDataset out = data;
  Rng rng(seed);
  std::bernoulli_distribution flip(p);
  std::uniform_int_distribution<int> offset(1, std::max(1, data.num_classes - 1));
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!flip(rng)) continue;
    out.labels[i] = (out.labels[i] + offset(rng)) % data.num_classes;
    out.corrupted[i] = out.labels[i] != out.original_labels[i];
  }
  return out;
}

/// Confusion counts: confusion[true][predicted].
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

struct ClassPair {
  int source = 0;
  int target = 0;
  std::size_t count = 0;
  friend bool operator==(const ClassPair&, const ClassPair&) = default;
};

/// The k ordered (source -> target) off-diagonal pairs with the largest
/// counts; ties go to the lexicographically smaller (source, target).
inline std::vector<ClassPair> most_confused_pairs(const ConfusionMatrix& confusion, std::size_t k) {
  std::vector<ClassPair> pairs;
  for (std::size_t s = 0; s < confusion.size(); ++s) {
    if (confusion[s].size() != confusion.size()) throw DimensionError("confusion matrix must be square");
    for (std::size_t t = 0; t < confusion.size(); ++t)
      if (s != t && confusion[s][t] > 0) pairs.push_back({static_cast<int>(s), static_cast<int>(t), confusion[s][t]});
  }
  if (k > pairs.size()) {
    throw ArgumentError("structured noise: asked for " + std::to_string(k) + " confused pairs but only " +
                        std::to_string(pairs.size()) + " nonzero off-diagonal entries exist");
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const ClassPair& a, const ClassPair& b) { return a.count > b.count; });
  pairs.resize(k);
  return pairs;
}

/// Flips labels along the k most-confused ordered class pairs. An example
/// whose original label is the source of one or more selected pairs tries
/// them in rank order, flipping to the first target whose coin (flip_prob)
/// comes up; at most one flip per example.
inline LabeledDataset inject_structured_noise(const LabeledDataset& data, const ConfusionMatrix& confusion,
                                              std::size_t pairs, double flip_prob, std::uint64_t seed) {
  if (confusion.size() != static_cast<std::size_t>(data.num_classes)) {
    throw DimensionError("structured noise: confusion matrix size does not match class count");
  }
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ArgumentError("structured noise: flip_prob must lie in [0, 1]");
  const auto selected = most_confused_pairs(confusion, pairs);
  LabeledDataset out = data;
  Rng rng(seed);
  std::bernoulli_distribution coin(flip_prob);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (const auto& pair : selected) {
      if (out.original_labels[i] != pair.source || out.labels[i] != pair.source) continue;
      if (coin(rng)) {
        out.labels[i] = pair.target;
        out.corrupted[i] = 1;
        break;
      }
    }
  }
  return out;
}

/// Confusion of a classifier given as per-example predicted classes.
inline ConfusionMatrix confusion_matrix(const LabeledDataset& data, std::span<const int> predicted) {
  ConfusionMatrix m(static_cast<std::size_t>(data.num_classes),
                    std::vector<std::size_t>(static_cast<std::size_t>(data.num_classes), 0));
  if (predicted.size() != data.size()) throw DimensionError("confusion_matrix: prediction count mismatch");
  for (std::size_t i = 0; i < data.size(); ++i)
    ++m[static_cast<std::size_t>(data.labels[i])][static_cast<std::size_t>(predicted[i])];
  return m;
}

// ---------------------------------------------------------------------------
// Relevance skew and duplication

struct RelevanceSkew {
  std::vector<int> high_classes;
  LabeledDataset data;
};

/// Keeps ceil(high_frac * C) randomly chosen classes whole and subsamples
/// every other class to round(keep_frac * count) examples; survivors of the
/// subsampled classes get the low-relevance flag.
inline RelevanceSkew make_relevance_skew(const LabeledDataset& data, double high_frac, double keep_frac,
                                         std::uint64_t seed) {
  const int c = data.num_classes;
  const auto high_count = static_cast<int>(std::ceil(high_frac * c - 1e-9));
  if (high_count < 1) throw ArgumentError("relevance skew: classes * high_frac must be at least one");
  if (high_count > c) throw ArgumentError("relevance skew: high_frac exceeds 1");
  if (!(keep_frac > 0.0 && keep_frac <= 1.0)) throw ArgumentError("relevance skew: keep_frac must lie in (0, 1]");

  Rng rng(seed);
  std::vector<int> classes(static_cast<std::size_t>(c));
  std::iota(classes.begin(), classes.end(), 0);
  std::shuffle(classes.begin(), classes.end(), rng);
  std::vector<int> high(classes.begin(), classes.begin() + high_count);
  std::sort(high.begin(), high.end());
  std::vector<bool> is_high(static_cast<std::size_t>(c), false);
  for (int h : high) is_high[static_cast<std::size_t>(h)] = true;

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

  std::vector<std::size_t> keep;
  std::vector<bool> low_flag(data.size(), false);
  for (int cls = 0; cls < c; ++cls) {
    auto& members = by_class[static_cast<std::size_t>(cls)];
    if (is_high[static_cast<std::size_t>(cls)]) {
      keep.insert(keep.end(), members.begin(), members.end());
      continue;
    }
    if (members.empty()) continue;
    const auto target = static_cast<std::size_t>(std::llround(keep_frac * static_cast<double>(members.size())));
    if (target == 0) {
      throw ArgumentError("relevance skew: class " + std::to_string(cls) + " would be left empty");
    }
    std::shuffle(members.begin(), members.end(), rng);
    members.resize(target);
    for (std::size_t i : members) low_flag[i] = true;
    keep.insert(keep.end(), members.begin(), members.end());
  }
  std::sort(keep.begin(), keep.end());
  LabeledDataset out = data.subset(keep);
  for (std::size_t j = 0; j < keep.size(); ++j) out.low_relevance[j] = low_flag[keep[j]] ? 1 : 0;
  return {std::move(high), std::move(out)};
}

/// Appends factor-1 copies of every example with fresh ids (starting above
/// the current maximum) and duplicate_of pointing at the original's id.
inline LabeledDataset duplicate(const LabeledDataset& data, std::size_t factor) {
  if (factor < 1) throw ArgumentError("duplicate: factor must be at least 1");
  if (factor == 1 || data.empty()) return data;
  const ExampleId base = *std::max_element(data.ids.begin(), data.ids.end()) + 1;
  const std::size_t n = data.size();
  std::vector<std::size_t> order;
  order.reserve(n * factor);
  for (std::size_t copy = 0; copy < factor; ++copy)
    for (std::size_t i = 0; i < n; ++i) order.push_back(i);
  LabeledDataset out = data.subset(order);
  for (std::size_t copy = 1; copy < factor; ++copy) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = copy * n + i;
      out.ids[j] = base + static_cast<ExampleId>((copy - 1) * n + i);
      out.duplicate_of[j] = data.duplicate_of[i].value_or(data.ids[i]);
    }
  }
  return out;
}

}  // namespace rho
