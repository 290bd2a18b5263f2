// Acceptance run: every criterion prints one PASS/FAIL line. Exit status is
// nonzero when any criterion fails. Optional arguments select criteria by
// number, e.g. `acceptance 7 8 10`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "oracles.hpp"
#include "rho/rho.hpp"

using namespace rho;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string fmt3(double v) { return fmt("%.3f", v); }

double mean(const std::vector<double>& v) {
  return v.empty() ? NAN : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string list3(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "/" : "") + fmt3(v[i]);
  return s;
}

/// Seed-paired one-sided t statistic for mean(high - low) > 0.
double paired_t(const std::vector<double>& high, const std::vector<double>& low) {
  std::vector<double> d;
  for (std::size_t i = 0; i < high.size(); ++i) d.push_back(high[i] - low[i]);
  const double m = mean(d);
  double ss = 0.0;
  for (double x : d) ss += (x - m) * (x - m);
  const double se = std::sqrt(ss / static_cast<double>(d.size() - 1) / static_cast<double>(d.size()));
  if (se == 0.0) return m > 0.0 ? INFINITY : (m < 0.0 ? -INFINITY : 0.0);
  return m / se;
}

// One-sided 5% critical value of Student's t with 2 degrees of freedom.
constexpr double kTCrit2 = 2.919986;

// ---------------------------------------------------------------------------
// Noisy desk task: 10 Gaussian classes in 20 dimensions, 500 per class, 20%
// clean test split, label noise on the rest, 30% holdout.

constexpr std::size_t kEpochs = 20;
constexpr std::uint64_t kSeeds[] = {1, 2, 3};

struct Task {
  LabeledDataset train, holdout, test;
};

Task noisy_task(std::uint64_t seed, double p, bool two_halves = false) {
  const auto all = gen_synthetic(10, 500, 20, 0.25, 100 + seed);
  auto [pool, test] = split(all, {0.2, seed, SplitMode::holdout});
  auto noisy = inject_uniform_noise(pool, p, seed);
  if (two_halves) return {std::move(noisy), {}, std::move(test)};
  auto [train, holdout] = split(noisy, {0.3, seed + 7, SplitMode::holdout});
  return {std::move(train), std::move(holdout), std::move(test)};
}

MlpArchitecture mlp(std::size_t dim, std::size_t hidden, std::size_t classes = 10) {
  return MlpArchitecture{{dim, hidden, hidden, classes}};
}

IlTrainingConfig il_config(std::size_t dim, std::size_t hidden, std::uint64_t seed) {
  IlTrainingConfig c;
  c.arch = mlp(dim, hidden);
  c.epochs = kEpochs;
  c.seed = seed;
  return c;
}

RunConfig run_config(PolicyKind kind, std::uint64_t seed) {
  RunConfig c;
  c.n_B = 100;
  c.n_b = 10;
  c.epochs = kEpochs;
  c.seed = seed;
  c.policy = SelectionPolicy::make(kind);
  return c;
}

MlpModel target_init(std::size_t dim, std::uint64_t seed) { return MlpModel::init(mlp(dim, 64), seed * 31); }

using PolicyRuns = std::map<PolicyKind, std::vector<RunRecord>>;

/// Three seeds of the given policies on the noisy task with a frozen IL table.
PolicyRuns noisy_runs(const std::vector<PolicyKind>& policies, double p, std::size_t il_hidden, bool two_halves) {
  PolicyRuns out;
  for (std::uint64_t seed : kSeeds) {
    const Task t = noisy_task(seed, p, two_halves);
    IrreducibleLossTable table;
    if (two_halves) {
      auto [a, b] = split(t.train, {0.5, seed + 11, SplitMode::two_halves});
      table = compute_il_table_two_halves(a, b, il_config(t.train.dim(), il_hidden, seed)).table;
    } else {
      table = compute_il_table(train_il_model(t.holdout, t.train, il_config(t.train.dim(), il_hidden, seed)).model,
                               t.train);
    }
    for (PolicyKind k : policies)
      out[k].push_back(run_training(t.train, t.test, &table, run_config(k, seed), target_init(t.train.dim(), seed)));
  }
  return out;
}

const PolicyRuns& main_noisy_runs() {
  static const PolicyRuns runs =
      noisy_runs({PolicyKind::rho_loss, PolicyKind::uniform, PolicyKind::train_loss}, 0.1, 64, false);
  return runs;
}

double epoch_mean(const RunRecord& r, double Composition::*field) {
  double s = 0.0;
  for (const auto& c : r.compositions) s += c.fractions.*field;
  return s / static_cast<double>(r.compositions.size());
}

std::vector<double> per_seed(const std::vector<RunRecord>& runs, double Composition::*field) {
  std::vector<double> v;
  for (const auto& r : runs) v.push_back(epoch_mean(r, field));
  return v;
}

double median_epochs_inf(const std::vector<RunRecord>& runs, double target) {
  std::vector<double> e;
  for (const auto& r : runs) {
    const auto hit = epochs_to_target(r, target);
    e.push_back(hit ? static_cast<double>(*hit) : INFINITY);
  }
  std::sort(e.begin(), e.end());
  return e[e.size() / 2];
}

/// Target = 90% of uniform's best end-of-epoch accuracy (mean over seeds);
/// rho-loss median epochs <= 0.8x uniform's, final accuracy within 0.5 points.
Outcome speedup_check(const PolicyRuns& runs) {
  const auto& rho = runs.at(PolicyKind::rho_loss);
  const auto& uni = runs.at(PolicyKind::uniform);
  std::vector<double> best, final_rho, final_uni;
  for (const auto& r : uni) {
    const auto acc = r.epoch_accuracies();
    best.push_back(*std::max_element(acc.begin(), acc.end()));
    final_uni.push_back(r.final_accuracy());
  }
  for (const auto& r : rho) final_rho.push_back(r.final_accuracy());
  const double target = 0.9 * mean(best);
  const double m_rho = median_epochs_inf(rho, target), m_uni = median_epochs_inf(uni, target);
  const bool fast = std::isfinite(m_rho) && m_rho <= 0.8 * m_uni;
  const bool accurate = mean(final_rho) >= mean(final_uni) - 0.005;
  return {fast && accurate, "target " + fmt3(target) + ", median epochs rho-loss " + fmt("%g", m_rho) +
                                " vs uniform " + fmt("%g", m_uni) + " (bound " + fmt("%g", 0.8 * m_uni) +
                                "), final accuracy " + fmt3(mean(final_rho)) + " vs " + fmt3(mean(final_uni))};
}

// ---------------------------------------------------------------------------
// Criteria

Outcome c1_gradients() {
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<std::size_t> width(2, 6), depth(0, 2), batch(1, 6);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> sizes{width(rng)};
    for (std::size_t h = depth(rng) + 1; h > 0; --h) sizes.push_back(width(rng));
    sizes.push_back(std::max<std::size_t>(2, width(rng) - 1));
    const bool bn = trial % 4 == 1;
    const double drop = trial % 4 == 2 ? 0.25 : 0.0;
    const MlpModel m = MlpModel::init({sizes, drop, bn}, 5000 + static_cast<std::uint64_t>(trial));
    const std::size_t n = batch(rng) + (bn ? 1 : 0);
    Tensor x = Tensor::matrix(n, sizes.front());
    for (double& v : x.values()) v = gauss(rng);
    std::vector<int> y(n);
    std::uniform_int_distribution<int> label(0, static_cast<int>(sizes.back()) - 1);
    for (int& v : y) v = label(rng);
    const ForwardOptions opts{Mode::train, bn ? BnStats::batch : BnStats::running, static_cast<std::uint64_t>(trial)};
    worst = std::max(worst, oracle::max_fd_relative_error(m, x, y, opts));
  }
  return {worst < 1e-4, "max relative error " + fmt("%.2e", worst) + " over 100 models"};
}

Outcome c2_optimizers() {
  bool ok = true;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterList p = {Tensor::vector({g(rng), g(rng), g(rng)})}, grad = {Tensor::vector({g(rng), g(rng), g(rng)})};
    const ParameterList before = p;
    const double lr = 0.01 * (trial + 1);
    Optimizer sgd(OptimizerConfig::sgd(lr));
    sgd.step(p, grad);
    for (std::size_t i = 0; i < 3; ++i) ok = ok && p[0][i] == before[0][i] - lr * grad[0][i];
  }
  const bool sgd_ok = ok;
  struct Case {
    double theta, grad, lr, wd;
  };
  double worst = 0.0;
  for (Case c : {Case{1.0, 2.0, 1e-3, 0.01}, Case{-0.5, 0.1, 1e-2, 0.1}, Case{3.0, -4.0, 1e-3, 0.0},
                 Case{0.0, 1e-3, 1e-4, 0.5}, Case{-2.0, -0.75, 3e-2, 1e-3}}) {
    OptimizerConfig cfg;
    cfg.learning_rate = c.lr;
    cfg.weight_decay = c.wd;
    Optimizer opt(cfg);
    ParameterList p = {Tensor::vector({c.theta})}, grad = {Tensor::vector({c.grad})};
    opt.step(p, grad);
    const double mh = ((1 - 0.9) * c.grad) / (1 - 0.9);
    const double vh = ((1 - 0.999) * c.grad * c.grad) / (1 - 0.999);
    const double expected = c.theta * (1 - c.lr * c.wd) - c.lr * mh / (std::sqrt(vh) + 1e-8);
    worst = std::max(worst, std::abs(p[0][0] - expected));
  }
  return {sgd_ok && worst <= 1e-12,
          std::string("SGD exact ") + (sgd_ok ? "yes" : "no") + ", AdamW max deviation " + fmt("%.1e", worst)};
}

Outcome c3_loss() {
  double worst = 0.0;
  for (std::size_t c : {2, 10, 100}) {
    const Tensor logits = Tensor::matrix(1, c, 0.37);
    const std::vector<int> label{static_cast<int>(c / 2)};
    worst = std::max(worst, std::abs(cross_entropy(logits, label)[0] - std::log(static_cast<double>(c))));
  }
  return {worst <= 1e-12, "max |CE - ln C| " + fmt("%.1e", worst)};
}

Outcome c4_top_k() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> coarse(0, 6);
  std::normal_distribution<double> fine(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> size(1, 60);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = size(rng);
    std::vector<double> s(n);
    for (auto& v : s) v = trial % 2 ? coarse(rng) * 0.5 : fine(rng);
    const std::size_t k = 1 + static_cast<std::size_t>(trial) % n;
    const auto seed = static_cast<std::uint64_t>(trial);
    if (select_top_k(s, k, seed) != oracle::top_k(s, k, seeded_permutation(n, seed))) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 1000 vectors (half with ties)"};
}

Outcome c5_spearman() {
  std::mt19937_64 rng(505);
  std::uniform_int_distribution<int> coarse(0, 4);
  std::normal_distribution<double> fine(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> size(3, 50);
  double worst = 0.0;
  std::size_t compared = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = size(rng);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = trial % 2 ? coarse(rng) : fine(rng);
      b[i] = trial % 3 ? coarse(rng) : fine(rng);
    }
    const auto got = spearman(a, b);
    if (!got) continue;  // a constant vector has no defined correlation
    worst = std::max(worst, std::abs(*got - oracle::spearman(a, b)));
    ++compared;
  }
  std::vector<double> x(40);
  std::iota(x.begin(), x.end(), 0.0);
  std::vector<double> reversed(x.rbegin(), x.rend());
  const bool ends = spearman(x, x) == 1.0 && spearman(x, reversed) == -1.0;
  return {worst <= 1e-12 && ends && compared > 900,
          "max deviation " + fmt("%.1e", worst) + " over " + std::to_string(compared) +
              " vectors; identical/reversed " + (ends ? "1/-1" : "wrong")};
}

Outcome c6_is_debias() {
  const MlpModel model = MlpModel::init({{4, 8, 3}, 0.0, false}, 66);
  const std::size_t n = 32, n_b = 4;
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  const auto pool = gen_synthetic(3, 11, 4, 0.5, 606).subset(rows);
  const Tensor& x = pool.features;
  const std::vector<int>& y = pool.labels;
  std::vector<std::vector<double>> grads(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t row[] = {i};
    const auto res = backward(model, x.gather_rows(row), std::vector<int>{y[i]});
    for (const auto& t : res.gradient) grads[i].insert(grads[i].end(), t.values().begin(), t.values().end());
  }
  const std::size_t dim = grads[0].size();
  std::vector<double> exact(dim, 0.0), estimate(dim, 0.0);
  for (const auto& gi : grads)
    for (std::size_t j = 0; j < dim; ++j) exact[j] += gi[j] / static_cast<double>(n);
  const auto scores = score_grad_norm(model, x, y);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    const auto s = sample_grad_norm_is(scores, n_b, static_cast<std::uint64_t>(d));
    for (std::size_t k = 0; k < s.selected.size(); ++k)
      for (std::size_t j = 0; j < dim; ++j)
        estimate[j] += s.weights[k] * grads[s.selected[k]][j] / static_cast<double>(n_b * draws);
  }
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    num += (estimate[j] - exact[j]) * (estimate[j] - exact[j]);
    den += exact[j] * exact[j];
  }
  const double rel = std::sqrt(num / den);
  return {rel < 0.05, "relative error " + fmt("%.4f", rel) + " (n_b=4 of 32, 10000 draws)"};
}

Outcome c7_noise() {
  const auto& runs = main_noisy_runs();
  const auto rho = per_seed(runs.at(PolicyKind::rho_loss), &Composition::corrupted);
  const auto uni = per_seed(runs.at(PolicyKind::uniform), &Composition::corrupted);
  const auto tl = per_seed(runs.at(PolicyKind::train_loss), &Composition::corrupted);
  const double t1 = paired_t(uni, rho), t2 = paired_t(tl, uni);
  return {t1 > kTCrit2 && t2 > kTCrit2, "corrupted fraction rho-loss " + list3(rho) + " < uniform " + list3(uni) +
                                            " < train-loss " + list3(tl) + "; paired t " + fmt("%.2f", t1) + ", " +
                                            fmt("%.2f", t2) + " (crit 2.92)"};
}

Outcome c8_redundancy() {
  const auto& runs = main_noisy_runs();
  std::map<std::string, std::vector<RunRecord>> by_name;
  for (const auto& [k, v] : runs) by_name[to_string(k)] = v;
  const auto filtered = redundancy_epoch_filter(by_name);
  const auto rho = filtered.at("rho-loss"), uni = filtered.at("uniform");
  if (!rho || !uni) return {false, "epoch filter left no epochs"};
  return {*rho < *uni, "filtered already-correct fraction rho-loss " + fmt3(*rho) + " vs uniform " + fmt3(*uni)};
}

Outcome c9_relevance() {
  std::map<PolicyKind, std::vector<double>> low;
  for (std::uint64_t seed : kSeeds) {
    const auto base = gen_synthetic(10, 1000, 50, 0.25, 100 + seed, 16);
    const auto skewed = make_relevance_skew(base, 0.2, 0.06, seed).data;
    auto [pool, test] = split(skewed, {0.2, seed, SplitMode::holdout});
    auto [train, holdout] = split(pool, {0.3, seed + 7, SplitMode::holdout});
    const auto table = compute_il_table(train_il_model(holdout, train, il_config(50, 64, seed)).model, train);
    for (PolicyKind k : {PolicyKind::rho_loss, PolicyKind::uniform, PolicyKind::train_loss}) {
      const auto rec = run_training(train, test, &table, run_config(k, seed), target_init(50, seed));
      low[k].push_back(epoch_mean(rec, &Composition::low_relevance));
    }
  }
  const double rho = mean(low[PolicyKind::rho_loss]), uni = mean(low[PolicyKind::uniform]),
               tl = mean(low[PolicyKind::train_loss]);
  return {rho <= uni && tl >= uni, "low-relevance fraction rho-loss " + list3(low[PolicyKind::rho_loss]) +
                                       " (mean " + fmt3(rho) + "), uniform " + list3(low[PolicyKind::uniform]) +
                                       " (" + fmt3(uni) + "), train-loss " + list3(low[PolicyKind::train_loss]) +
                                       " (" + fmt3(tl) + ")"};
}

Outcome c10_speedup() { return speedup_check(main_noisy_runs()); }

Outcome c11_small_il() {
  return speedup_check(noisy_runs({PolicyKind::rho_loss, PolicyKind::uniform}, 0.1, 32, false));
}

Outcome c12_two_halves() {
  return speedup_check(noisy_runs({PolicyKind::rho_loss, PolicyKind::uniform}, 0.1, 64, true));
}

Outcome c13_ladder() {
  const auto base = gen_synthetic(10, 150, 20, 0.3, 7);
  auto [pool, holdout] = split(base, {0.3, 7, SplitMode::holdout});
  const auto train = duplicate(inject_uniform_noise(pool, 0.1, 7), 2);
  LadderConfig cfg;
  cfg.target_arch = mlp(20, 64);
  cfg.il_arch = cfg.target_arch;
  cfg.n_B = 100;
  cfg.n_b = 10;
  cfg.seed = 1;
  const auto result = run_ladder(train, holdout, cfg,
                                 {Rung::approx1a, Rung::approx1b, Rung::approx2, Rung::approx3, Rung::random});
  bool ok = true;
  std::string detail;
  for (const auto& s : result.rungs) {
    const auto m = s.mean();
    const auto ref = reference_rho(s.rung);
    detail += to_string(s.rung) + " " + (m ? fmt3(*m) : std::string("undefined")) + " (pos " +
              fmt("%.2f", s.positive_fraction()) + (ref ? ", ref " + fmt("%.2f", *ref) : std::string()) + ") ";
    if (s.rung != Rung::random) ok = ok && m && *m > 0.3 && s.positive_fraction() >= 0.9;
  }
  return {ok, detail + "over " + std::to_string(result.rungs.front().rho.size()) + " steps"};
}

Outcome c14_ablation() {
  // Exact equality at lr-scale 0.
  {
    const Task t = noisy_task(1, 0.1);
    const auto il = train_il_model(t.holdout, t.train, il_config(20, 64, 1));
    const auto table = compute_il_table(il.model, t.train);
    const auto frozen = run_training(t.train, t.test, &table, run_config(PolicyKind::rho_loss, 1), target_init(20, 1));
    RunConfig c = run_config(PolicyKind::rho_loss, 1);
    c.il_lr_scale = 0.0;
    const auto original = run_original_selection(t.train, t.test, il.model, c, target_init(20, 1));
    bool same = frozen.steps.size() == original.steps.size();
    for (std::size_t i = 0; same && i < frozen.steps.size(); ++i)
      same = frozen.steps[i].selected_ids == original.steps[i].selected_ids;
    if (!same) return {false, "lr-scale 0 original selections differ from frozen"};
  }
  // Direction at lr-scale 0.01 with 20% noise, final quarter of training.
  std::size_t frozen_corrupted = 0, original_corrupted = 0;
  std::vector<double> per_seed_frozen, per_seed_original;
  for (std::uint64_t seed : kSeeds) {
    const Task t = noisy_task(seed, 0.2);
    const auto il = train_il_model(t.holdout, t.train, il_config(20, 64, seed));
    const auto table = compute_il_table(il.model, t.train);
    const auto frozen =
        run_training(t.train, t.test, &table, run_config(PolicyKind::rho_loss, seed), target_init(20, seed));
    RunConfig c = run_config(PolicyKind::rho_loss, seed);
    c.il_lr_scale = 0.01;
    const auto original = run_original_selection(t.train, t.test, il.model, c, target_init(20, seed));
    std::size_t f = 0, o = 0;
    for (const auto& s : frozen.steps)
      if (s.epoch > kEpochs * 3 / 4) f += s.corrupted_selected;
    for (const auto& s : original.steps)
      if (s.epoch > kEpochs * 3 / 4) o += s.corrupted_selected;
    frozen_corrupted += f;
    original_corrupted += o;
    per_seed_frozen.push_back(static_cast<double>(f));
    per_seed_original.push_back(static_cast<double>(o));
  }
  return {original_corrupted >= frozen_corrupted,
          "lr-scale 0 identical; final-quarter corrupted selections original " + std::to_string(original_corrupted) +
              " vs frozen " + std::to_string(frozen_corrupted) + " (per seed " + fmt("%g", per_seed_original[0]) +
              "/" + fmt("%g", per_seed_original[1]) + "/" + fmt("%g", per_seed_original[2]) + " vs " +
              fmt("%g", per_seed_frozen[0]) + "/" + fmt("%g", per_seed_frozen[1]) + "/" +
              fmt("%g", per_seed_frozen[2]) + ")"};
}

Outcome c15_determinism() {
  using namespace rho::cli;
  const auto doc = json::parse(R"({
    "dataset": {"kind": "synthetic", "synthetic": {"classes": 4, "per_class": 80, "dim": 8, "spread": 0.3},
                "noise": {"kind": "uniform", "p": 0.1}, "duplicate_factor": 2},
    "il": {"hidden": [16], "epochs": 5},
    "run": {"policies": ["rho-loss", "train-loss", "grad-norm-is", "bald", "svp-entropy", "uniform"],
            "n_b": 4, "n_B": 20, "epochs": 3, "hidden": [16], "dropout": 0.1, "seeds": [1, 2],
            "eval_every_steps": 5, "record_scores": true}
  })");
  const auto cfg = parse_config(doc);
  const fs::path root = fs::temp_directory_path() / ("rho_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  CommandOptions a, b;
  a.out = (root / "a").string();
  b.out = (root / "b").string();
  a.quiet = b.quiet = true;
  b.jobs = 3;
  const auto ids = cmd_run(cfg, a);
  cmd_run(cfg, b);
  std::size_t files = 0, differing = 0;
  for (const auto& entry : fs::directory_iterator(root / "a" / "runs")) {
    const auto name = entry.path().filename();
    if (name.extension() != ".csv") continue;
    ++files;
    if (!fs::exists(root / "b" / "runs" / name) ||
        csv::comparable_lines(entry.path().string()) != csv::comparable_lines((root / "b" / "runs" / name).string()))
      ++differing;
  }
  fs::remove_all(root);
  return {differing == 0 && files >= ids.size() * 3,
          std::to_string(files) + " record files from " + std::to_string(ids.size()) + " runs, " +
              std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, c1_gradients},     {2, c2_optimizers}, {3, c3_loss},         {4, c4_top_k},       {5, c5_spearman},
      {6, c6_is_debias},     {7, c7_noise},      {8, c8_redundancy},   {9, c9_relevance},   {10, c10_speedup},
      {11, c11_small_il},    {12, c12_two_halves}, {13, c13_ladder},   {14, c14_ablation},  {15, c15_determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %2d %s  %s  [%.1fs]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
