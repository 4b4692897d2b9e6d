// Serial vs OpenMP matrix products at the shapes a training step produces:
// a minibatch of rows times a hidden layer, and the weight-gradient product.

#include <benchmark/benchmark.h>

#include <vector>

#include "ssmtl/kernels.hpp"
#include "ssmtl/rng.hpp"

using namespace ssmtl;
using kernels::Transpose;

namespace {

struct Operands {
  std::vector<double> a, b, c;
};

Operands make(std::size_t m, std::size_t n, std::size_t k) {
  Rng rng(1);
  return {rng.normals(m * k), rng.normals(k * n), std::vector<double>(m * n)};
}

template <auto Kernel>
void forward(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto w = static_cast<std::size_t>(state.range(1));
  auto ops = make(m, w, w);
  for (auto _ : state) {
    Kernel(Transpose::No, Transpose::No, {m, w, w}, ops.a.data(), ops.b.data(), ops.c.data(),
           false);
    benchmark::DoNotOptimize(ops.c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * w * w));
}

// dW = X^T dY with X [m x w], dY [m x w].
template <auto Kernel>
void weight_grad(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto w = static_cast<std::size_t>(state.range(1));
  auto ops = make(w, w, m);
  for (auto _ : state) {
    Kernel(Transpose::Yes, Transpose::No, {w, w, m}, ops.a.data(), ops.b.data(), ops.c.data(),
           true);
    benchmark::DoNotOptimize(ops.c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * w * w));
}

void shapes(benchmark::internal::Benchmark* b) {
  for (int rows : {64, 512, 4096}) {
    for (int width : {64, 200}) b->Args({rows, width});
  }
}

}  // namespace

BENCHMARK(forward<kernels::gemm_serial>)->Name("forward/serial")->Apply(shapes);
BENCHMARK(forward<kernels::gemm_parallel>)->Name("forward/parallel")->Apply(shapes)->UseRealTime();
BENCHMARK(weight_grad<kernels::gemm_serial>)->Name("weight_grad/serial")->Apply(shapes);
BENCHMARK(weight_grad<kernels::gemm_parallel>)
    ->Name("weight_grad/parallel")
    ->Apply(shapes)
    ->UseRealTime();

BENCHMARK_MAIN();
