// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <array>

#include "mixt/mixt_operator.hpp"
#include "mixt/random.hpp"
#include "mixt/tensor.hpp"

namespace {

mixt::Tensor filled(mixt::Shape s, std::uint64_t seed) {
  mixt::Rng rng(seed);
  mixt::Tensor t(std::move(s));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Square width 2^bonds, batch 32.
void BM_MixtForward(benchmark::State& state) {
  const auto width = std::size_t{1} << state.range(0);
  const auto spec = mixt::MixtSpec::for_dims(width, width, static_cast<std::size_t>(state.range(1)));
  std::vector<mixt::Tensor> branches;
  for (std::size_t k = 0; k < spec.n_t; ++k) branches.push_back(filled(spec.branch_shape(), k + 1));
  const mixt::MixtOperator op(spec, branches);
  const auto x = filled({32, width}, 99);
  for (auto _ : state) benchmark::DoNotOptimize(mixt::forward(op, x));
  state.counters["params"] = static_cast<double>(op.param_count());
}
BENCHMARK(BM_MixtForward)->ArgsProduct({{8, 10, 12}, {2, 4}});

void BM_DenseForward(benchmark::State& state) {
  const auto width = std::size_t{1} << state.range(0);
  const auto w = filled({width, width}, 1);
  const auto x = filled({32, width}, 2);
  const std::array<std::size_t, 1> ax{1}, aw{1};
  for (auto _ : state) benchmark::DoNotOptimize(mixt::contract(x, w, ax, aw));
  state.counters["params"] = static_cast<double>(width * width);
}
BENCHMARK(BM_DenseForward)->DenseRange(8, 12, 2);

void BM_Contract(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled({n, 8, n}, 3);
  const auto b = filled({n, 8, 4}, 4);
  const std::array<std::size_t, 2> ax{0, 1}, bx{0, 1};
  for (auto _ : state) benchmark::DoNotOptimize(mixt::contract(a, b, ax, bx));
}
BENCHMARK(BM_Contract)->RangeMultiplier(2)->Range(8, 64);

}  // namespace

BENCHMARK_MAIN();
