#include <benchmark/benchmark.h>

#include "misshift/adam.hpp"
#include "misshift/autodiff.hpp"
#include "misshift/linalg.hpp"
#include "misshift/neural.hpp"
#include "misshift/rng.hpp"

using namespace misshift;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.normal();
  return m;
}

void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Matrix a = random_matrix(100, n, rng);
  const Matrix b = random_matrix(n, n, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 100 * n * n);
}
BENCHMARK(BM_matmul)->Arg(10)->Arg(50)->Arg(250);

void BM_cholesky_solve(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Matrix b = random_matrix(n, n, rng);
  Matrix a = matmul_nt(b, b);
  for (std::size_t i = 0; i < n; ++i) a(i, i) += 1.0;
  const Matrix rhs = random_matrix(n, 1, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cholesky_solve(a, rhs));
  }
}
BENCHMARK(BM_cholesky_solve)->Arg(10)->Arg(50);

void BM_forward_backward_mlp(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  NeuralNet net = make_network(ArchKind::kMlp, 10, width, 1, 0, true, rng);
  const Matrix x = random_matrix(100, 10, rng);
  const Matrix y = random_matrix(100, 1, rng);
  for (auto _ : state) {
    Tape tape;
    ForwardBindings fb = network_forward(tape, net, x, Matrix(), true);
    Value loss = tape.mse_loss(fb.output, tape.constant(y));
    benchmark::DoNotOptimize(forward_backward(tape, loss, fb.params));
  }
}
BENCHMARK(BM_forward_backward_mlp)->Arg(50)->Arg(250);

void BM_forward_backward_neumiss(benchmark::State& state) {
  const auto blocks = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  NeuralNet net = make_network(ArchKind::kNeumiss, 10, 64, 1, blocks, true, rng);
  Matrix x = random_matrix(100, 10, rng);
  Matrix mask(100, 10, 0.0);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i * 2654435761u) % 2 == 0 ? 1.0 : 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (mask[i] == 1.0) x[i] = 0.0;
  const Matrix y = random_matrix(100, 1, rng);
  for (auto _ : state) {
    Tape tape;
    ForwardBindings fb = network_forward(tape, net, x, mask, true);
    Value loss = tape.mse_loss(fb.output, tape.constant(y));
    benchmark::DoNotOptimize(forward_backward(tape, loss, fb.params));
  }
}
BENCHMARK(BM_forward_backward_neumiss)->Arg(5)->Arg(20);

}  // namespace

BENCHMARK_MAIN();
