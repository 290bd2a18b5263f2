#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

#include "rho/cli/commands.hpp"

// Exit codes: 0 success, 2 invalid config or arguments, 3 inconsistent
// artifacts on disk, 4 unreadable or malformed files, 1 anything else.

namespace {

int fail(int code, const std::string& what) {
  std::cerr << "rho: error: " << what << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace rho;
  using namespace rho::cli;

  CLI::App app{"Online batch selection experiments: data preparation, IL training, runs, reports, ladder, sweeps"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  std::uint64_t seed_override = 0;
  std::size_t jobs = 1;
  bool resume = false;
  bool quiet = false;
  std::string glob;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config_path, "experiment config (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (default: config output_dir, then $RHO_OUT_DIR, then ./rho_out)");
    sub->add_flag("--quiet", quiet, "suppress progress messages");
  };

  auto* prepare = app.add_subcommand("prepare", "build train/holdout/test splits");
  add_common(prepare, true);
  auto* train_il = app.add_subcommand("train-il", "train the IL model(s) and write the IL table");
  add_common(train_il, true);
  auto* run = app.add_subcommand("run", "one run per (policy, seed)");
  add_common(run, true);
  auto* report = app.add_subcommand("report", "summary CSVs over run records");
  add_common(report, false);
  report->add_option("runs", glob, "run record glob, e.g. out/runs/rho-loss-* (default: <out>/runs)");
  auto* ladder = app.add_subcommand("ladder", "score-approximation ladder against the ensemble gold standard");
  add_common(ladder, true);
  auto* sweep = app.add_subcommand("sweep", "runs over a grid of n_B or batch size / learning rate / weight decay");
  add_common(sweep, true);

  for (auto* sub : {run, ladder, sweep, prepare, train_il}) {
    sub->add_option("--seed-override", seed_override, "replace run seeds and the ladder seed with N");
  }
  for (auto* sub : {run, ladder, sweep}) {
    sub->add_option("--jobs", jobs, "concurrent jobs")->check(CLI::PositiveNumber);
  }
  for (auto* sub : {run, sweep}) {
    sub->add_flag("--resume", resume, "skip complete records; refuse partial ones");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    CommandOptions opts;
    if (!out.empty()) opts.out = out;
    opts.jobs = jobs;
    opts.resume = resume;
    opts.quiet = quiet;

    if (report->parsed()) {
      ExperimentConfig cfg;
      if (!config_path.empty()) cfg = load_config(config_path);
      const auto root = resolve_output_dir(opts, cfg);
      cmd_report(glob.empty() ? runs_dir(root).string() : glob, root / "reports", opts);
      return 0;
    }

    ExperimentConfig cfg = load_config(config_path);
    for (auto* sub : {run, ladder, sweep, prepare, train_il}) {
      if (sub->parsed() && sub->count("--seed-override")) apply_seed_override(cfg, seed_override);
    }
    if (prepare->parsed()) cmd_prepare(cfg, opts);
    if (train_il->parsed()) cmd_train_il(cfg, opts);
    if (run->parsed()) cmd_run(cfg, opts);
    if (ladder->parsed()) cmd_ladder(cfg, opts);
    if (sweep->parsed()) cmd_sweep(cfg, opts);
    return 0;
  } catch (const ConfigError& e) {
    return fail(2, e.what());
  } catch (const ArgumentError& e) {
    return fail(2, e.what());
  } catch (const SetupError& e) {
    return fail(3, e.what());
  } catch (const FormatError& e) {
    return fail(4, e.what());
  } catch (const std::exception& e) {
    return fail(1, e.what());
  }
}
