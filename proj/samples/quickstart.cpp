// Library walk-through: noisy synthetic task, IL model on a holdout split,
// then rho-loss and uniform selection side by side.

#include <cstdio>

#include "rho/rho.hpp"

int main() {
  using namespace rho;

  const auto all = gen_synthetic(10, 300, 20, 0.25, 11);
  auto [pool, test] = split(all, {0.2, 1, SplitMode::holdout});
  const auto noisy = inject_uniform_noise(pool, 0.1, 2);
  auto [train, holdout] = split(noisy, {0.3, 3, SplitMode::holdout});

  const MlpArchitecture arch{{20, 64, 64, 10}};
  IlTrainingConfig il_cfg;
  il_cfg.arch = arch;
  il_cfg.epochs = 10;
  il_cfg.seed = 4;
  const auto il = train_il_model(holdout, train, il_cfg);
  const auto table = compute_il_table(il.model, train);
  std::printf("IL model: checkpoint epoch %zu, test accuracy %.3f\n", il.log.selected_epoch,
              evaluate(il.model, test).accuracy);

  const MlpModel init = MlpModel::init(arch, 5);
  for (PolicyKind kind : {PolicyKind::rho_loss, PolicyKind::uniform}) {
    RunConfig cfg;
    cfg.n_b = 10;
    cfg.n_B = 100;
    cfg.epochs = 8;
    cfg.seed = 6;
    cfg.policy = SelectionPolicy::make(kind);
    const RunRecord rec = run_training(train, test, &table, cfg, init);
    std::printf("%-8s accuracy by epoch:", to_string(kind).c_str());
    for (double a : rec.epoch_accuracies()) std::printf(" %.3f", a);
    double corrupted = 0.0;
    for (const auto& c : rec.compositions) corrupted += c.fractions.corrupted;
    std::printf("  | corrupted selected %.3f\n", corrupted / static_cast<double>(rec.compositions.size()));
  }
}
