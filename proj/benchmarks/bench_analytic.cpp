#include <benchmark/benchmark.h>

#include <memory>

#include "misshift/analytic.hpp"
#include "misshift/datagen.hpp"
#include "misshift/missingness.hpp"

using namespace misshift;

namespace {

void BM_bayes_predict_rows(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(d, 0.7, 5000, 11));
  Rng rng(12);
  const MaskedDataset md = apply_mcar(ds, 0.5, rng);
  AnalyticEngine engine(*ds->gaussian, ds->outcome);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(engine.bayes_mar(masked_row(md, i)));
    i = (i + 1) % md.rows();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()));
}
BENCHMARK(BM_bayes_predict_rows)->Arg(10)->Arg(20)->Arg(50);

void BM_selfmask_predict_rows(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(d, 0.7, 5000, 13));
  const MechanismSpec spec = draw_selfmask_spec(*ds, 0.5, 2.0);
  Rng rng(14);
  const MaskedDataset md = apply_mechanism(spec, ds, rng);
  AnalyticEngine engine(*ds->gaussian, ds->outcome, spec.selfmask);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(engine.bayes_selfmask(masked_row(md, i)));
    i = (i + 1) % md.rows();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()));
}
BENCHMARK(BM_selfmask_predict_rows)->Arg(10)->Arg(20);

}  // namespace

BENCHMARK_MAIN();
