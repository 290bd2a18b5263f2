#pragma once

#include <fstream>
#include <string>

#include "rho/csv.hpp"
#include "rho/dataset.hpp"

namespace rho {

/// Writes the dataset cache:
///   # classes=C content_hash=H [extra metadata]
///   # created=...
///   id,label,original_label,corrupted,low_relevance,duplicate_of,feature_0..feature_{d-1}
/// duplicate_of is empty for originals.
inline void save_dataset_csv(const LabeledDataset& data, const std::string& path, csv::Metadata meta = {}) {
  std::ofstream out(path);
  if (!out) throw FormatError("dataset: cannot write " + path);
  meta["classes"] = std::to_string(data.num_classes);
  meta["content_hash"] = data.content_hash();
  meta["dim"] = std::to_string(data.dim());
  out << csv::metadata_line(meta) << '\n' << csv::timestamp_line() << '\n';
  out << "id,label,original_label,corrupted,low_relevance,duplicate_of";
  for (std::size_t j = 0; j < data.dim(); ++j) out << ",feature_" << j;
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.ids[i] << ',' << data.labels[i] << ',' << data.original_labels[i] << ','
        << int{data.corrupted[i]} << ',' << int{data.low_relevance[i]} << ',';
    if (data.duplicate_of[i]) out << *data.duplicate_of[i];
    for (double v : data.row(i)) out << ',' << csv::format_double(v);
    out << '\n';
  }
  if (!out) throw FormatError("dataset: write failed for " + path);
}

inline LabeledDataset load_dataset_csv(const std::string& path, csv::Metadata* meta_out = nullptr) {
  const csv::Table t = csv::read_table(path);
  const auto classes_it = t.meta.find("classes");
  if (classes_it == t.meta.end()) throw FormatError("dataset: missing classes= metadata in " + path);
  static const char* kFixed[] = {"id", "label", "original_label", "corrupted", "low_relevance", "duplicate_of"};
  if (t.header.size() < 6) throw FormatError("dataset: too few columns in " + path);
  for (std::size_t i = 0; i < 6; ++i)
    if (t.header[i] != kFixed[i]) throw FormatError("dataset: unexpected column '" + t.header[i] + "' in " + path);
  const std::size_t dim = t.header.size() - 6;
  LabeledDataset d;
  d.num_classes = static_cast<int>(csv::parse_int(classes_it->second, path));
  std::vector<double> values;
  values.reserve(t.rows.size() * dim);
  for (const auto& row : t.rows) {
    d.ids.push_back(csv::parse_int(row[0], path));
    d.labels.push_back(static_cast<int>(csv::parse_int(row[1], path)));
    d.original_labels.push_back(static_cast<int>(csv::parse_int(row[2], path)));
    d.corrupted.push_back(static_cast<std::uint8_t>(csv::parse_int(row[3], path)));
    d.low_relevance.push_back(static_cast<std::uint8_t>(csv::parse_int(row[4], path)));
    if (row[5].empty()) {
      d.duplicate_of.emplace_back(std::nullopt);
    } else {
      d.duplicate_of.emplace_back(csv::parse_int(row[5], path));
    }
    for (std::size_t j = 0; j < dim; ++j) values.push_back(csv::parse_double(row[6 + j], path));
  }
  d.features = Tensor({t.rows.size(), dim}, std::move(values));
  d.check_invariants();
  if (auto it = t.meta.find("content_hash"); it != t.meta.end() && it->second != d.content_hash()) {
    throw FormatError("dataset: content hash mismatch in " + path);
  }
  if (meta_out) *meta_out = t.meta;
  return d;
}

}  // namespace rho
