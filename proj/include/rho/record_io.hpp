#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "rho/csv.hpp"
#include "rho/errors.hpp"
#include "rho/trainer.hpp"

// A run is stored as three CSV files sharing the run id:
//   <run_id>.steps.csv        one row per optimizer step
//   <run_id>.evals.csv        one row per evaluation
//   <run_id>.composition.csv  one row per epoch
// and, when candidate scores were recorded, <run_id>.scores.csv.
// Every file starts with the run metadata line and a timestamp line.

namespace rho {

struct RunFiles {
  std::string steps, evals, composition, scores;
};

inline RunFiles run_files(const std::filesystem::path& dir, const std::string& run_id) {
  return {(dir / (run_id + ".steps.csv")).string(), (dir / (run_id + ".evals.csv")).string(),
          (dir / (run_id + ".composition.csv")).string(), (dir / (run_id + ".scores.csv")).string()};
}

namespace detail {

inline std::ofstream open_record_file(const std::string& path, const csv::Metadata& meta, const char* header) {
  std::ofstream out(path);
  if (!out) throw FormatError("record: cannot write " + path);
  out << csv::metadata_line(meta) << '\n' << csv::timestamp_line() << '\n' << header << '\n';
  return out;
}

inline std::string join_ids(const std::vector<ExampleId>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(ids[i]);
  }
  return s;
}

}  // namespace detail

inline void save_run_record(const RunRecord& rec, const std::filesystem::path& dir) {
  if (rec.run_id.empty()) throw ArgumentError("record: run id is empty");
  std::filesystem::create_directories(dir);
  const RunFiles f = run_files(dir, rec.run_id);
  csv::Metadata meta = rec.meta;
  meta["run_id"] = rec.run_id;
  {
    auto out = detail::open_record_file(f.steps, meta,
                                        "step,epoch,candidates,selected,mean_selected_score,corrupted_selected,"
                                        "low_relevance_selected,already_correct_selected,selected_ids");
    for (const auto& s : rec.steps) {
      out << s.step << ',' << s.epoch << ',' << s.candidates << ',' << s.selected_ids.size() << ','
          << csv::format_double(s.mean_selected_score) << ',' << s.corrupted_selected << ','
          << s.low_relevance_selected << ',' << s.already_correct_selected << ',' << detail::join_ids(s.selected_ids)
          << '\n';
    }
  }
  {
    auto out = detail::open_record_file(f.evals, meta, "step,epoch,end_of_epoch,accuracy,loss");
    for (const auto& e : rec.evals) {
      out << e.step << ',' << e.epoch << ',' << (e.end_of_epoch ? 1 : 0) << ',' << csv::format_double(e.accuracy)
          << ',' << csv::format_double(e.loss) << '\n';
    }
  }
  {
    auto out = detail::open_record_file(f.composition, meta,
                                        "epoch,selected,frac_corrupted,frac_low_relevance,frac_already_correct");
    for (const auto& c : rec.compositions) {
      out << c.epoch << ',' << c.fractions.selected << ',' << csv::format_double(c.fractions.corrupted) << ','
          << csv::format_double(c.fractions.low_relevance) << ',' << csv::format_double(c.fractions.already_correct)
          << '\n';
    }
  }
  bool any_scores = false;
  for (const auto& s : rec.steps) any_scores = any_scores || !s.candidate_ids.empty();
  if (any_scores) {
    auto out = detail::open_record_file(f.scores, meta, "step,id,score,selected");
    for (const auto& s : rec.steps) {
      const std::set<ExampleId> chosen(s.selected_ids.begin(), s.selected_ids.end());
      for (std::size_t i = 0; i < s.candidate_ids.size(); ++i) {
        out << s.step << ',' << s.candidate_ids[i] << ',' << csv::format_double(s.candidate_scores[i]) << ','
            << (chosen.count(s.candidate_ids[i]) ? 1 : 0) << '\n';
      }
    }
  }
}

/// True when all three mandatory files of the run exist.
inline bool run_record_complete(const std::filesystem::path& dir, const std::string& run_id) {
  const RunFiles f = run_files(dir, run_id);
  return std::filesystem::exists(f.steps) && std::filesystem::exists(f.evals) &&
         std::filesystem::exists(f.composition);
}

/// True when some but not all of the run's files exist.
inline bool run_record_partial(const std::filesystem::path& dir, const std::string& run_id) {
  const RunFiles f = run_files(dir, run_id);
  const int present = std::filesystem::exists(f.steps) + std::filesystem::exists(f.evals) +
                      std::filesystem::exists(f.composition);
  return present > 0 && present < 3;
}

/// Reads the steps, evals and composition files back (candidate scores and
/// the model are not restored).
inline RunRecord load_run_record(const std::filesystem::path& dir, const std::string& run_id) {
  const RunFiles f = run_files(dir, run_id);
  RunRecord rec;
  rec.run_id = run_id;
  {
    const csv::Table t = csv::read_table(f.steps);
    rec.meta = t.meta;
    for (const auto& row : t.rows) {
      StepRecord s;
      s.step = static_cast<std::size_t>(csv::parse_int(row[t.column("step")], f.steps));
      s.epoch = static_cast<std::size_t>(csv::parse_int(row[t.column("epoch")], f.steps));
      s.candidates = static_cast<std::size_t>(csv::parse_int(row[t.column("candidates")], f.steps));
      s.mean_selected_score = csv::parse_double(row[t.column("mean_selected_score")], f.steps);
      s.corrupted_selected = static_cast<std::size_t>(csv::parse_int(row[t.column("corrupted_selected")], f.steps));
      s.low_relevance_selected =
          static_cast<std::size_t>(csv::parse_int(row[t.column("low_relevance_selected")], f.steps));
      s.already_correct_selected =
          static_cast<std::size_t>(csv::parse_int(row[t.column("already_correct_selected")], f.steps));
      const std::string& ids = row[t.column("selected_ids")];
      if (!ids.empty())
        for (const auto& id : csv::split(ids, ';')) s.selected_ids.push_back(csv::parse_int(id, f.steps));
      rec.steps.push_back(std::move(s));
    }
  }
  {
    const csv::Table t = csv::read_table(f.evals);
    for (const auto& row : t.rows) {
      EvalRecord e;
      e.step = static_cast<std::size_t>(csv::parse_int(row[t.column("step")], f.evals));
      e.epoch = static_cast<std::size_t>(csv::parse_int(row[t.column("epoch")], f.evals));
      e.end_of_epoch = csv::parse_int(row[t.column("end_of_epoch")], f.evals) != 0;
      e.accuracy = csv::parse_double(row[t.column("accuracy")], f.evals);
      e.loss = csv::parse_double(row[t.column("loss")], f.evals);
      rec.evals.push_back(e);
    }
  }
  {
    const csv::Table t = csv::read_table(f.composition);
    for (const auto& row : t.rows) {
      CompositionRecord c;
      c.epoch = static_cast<std::size_t>(csv::parse_int(row[t.column("epoch")], f.composition));
      c.fractions.selected = static_cast<std::size_t>(csv::parse_int(row[t.column("selected")], f.composition));
      c.fractions.corrupted = csv::parse_double(row[t.column("frac_corrupted")], f.composition);
      c.fractions.low_relevance = csv::parse_double(row[t.column("frac_low_relevance")], f.composition);
      c.fractions.already_correct = csv::parse_double(row[t.column("frac_already_correct")], f.composition);
      rec.compositions.push_back(c);
    }
  }
  return rec;
}

}  // namespace rho
