#include <benchmark/benchmark.h>

#include <memory>

#include "misshift/datagen.hpp"
#include "misshift/imputers.hpp"
#include "misshift/missingness.hpp"

using namespace misshift;

namespace {

void BM_ice_fit(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(10, 0.7, n, 21));
  Rng rng(22);
  const MaskedDataset md = apply_mcar(ds, 0.3, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ice_fit(md, IceFlags{}, 10));
  }
}
BENCHMARK(BM_ice_fit)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_ice_transform(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(10, 0.7, n, 23));
  Rng rng(24);
  const MaskedDataset md = apply_mcar(ds, 0.3, rng);
  const IceModel model = ice_fit(md, IceFlags{}, 10);
  Rng draw_rng(25);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ice_transform(model, md, draw_rng, 1));
  }
}
BENCHMARK(BM_ice_transform)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_mice_transform(benchmark::State& state) {
  const auto ds = std::make_shared<Dataset>(make_simulated_dataset(10, 0.7, 2000, 26));
  Rng rng(27);
  const MaskedDataset md = apply_mcar(ds, 0.3, rng);
  IceFlags flags;
  flags.probabilistic = true;
  const IceModel model = ice_fit(md, flags, 10);
  Rng draw_rng(28);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ice_transform(model, md, draw_rng, 5));
  }
}
BENCHMARK(BM_mice_transform)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
