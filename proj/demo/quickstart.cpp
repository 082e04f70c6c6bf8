// Fits a PR tree, a PR forest and a boosted PR ensemble on the bundled
// diabetes table and prints their hold-out RMSE.
//
//   prtree_demo [path/to/diabetes.csv]

#include "prtree/prtree.hpp"

#include <cstdio>

int main(int argc, char** argv) {
  using namespace prtree;
  const std::string path = argc > 1 ? argv[1] : "data/diabetes.csv";
  try {
    const Dataset raw = load_csv(path, "y");
    const CVPlan plan = make_cv_plan(raw.target, 5, RngSpec{42, 0});
    const FoldSplit fold = make_fold(raw, plan, 0, RngSpec{42, 1});

    const auto tuned = tune_tree_sigma(fold.train, fold.valid, StoppingRule{});
    std::printf("sigma multiplier %.2f, %zu leaves\n", tuned.multiplier, tuned.model.leaf_count());
    std::printf("PR tree   RMSE %.3f\n", rmse(fold.test.target, tuned.model.predict(fold.test)));

    const Forest forest = fit_prrf(fold.rest, 100, tuned.sigma, StoppingRule{}, RngSpec{42, 2});
    std::printf("PR-RF     RMSE %.3f\n", rmse(fold.test.target, forest.predict(fold.test)));

    const BoostedEnsemble gbt = fit_prgbt(fold.train, 50, tuned.sigma, StoppingRule{}, RngSpec{42, 3}, 0.1);
    std::printf("PR-GBT    RMSE %.3f\n", rmse(fold.test.target, gbt.predict(fold.test)));
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
