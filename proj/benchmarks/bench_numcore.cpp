#include <benchmark/benchmark.h>

#include <vector>

#include "sphere_ssm/rng.hpp"
#include "sphere_ssm/vexp.hpp"

namespace {

void BM_vexp(benchmark::State& state) {
    const std::size_t n = std::size_t(state.range(0));
    sphere_ssm::Rng rng(1);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = rng.uniform(-20.0, 20.0);
    for (auto _ : state) {
        sphere_ssm::vexp(x.data(), y.data(), n);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(std::int64_t(state.iterations()) * std::int64_t(n));
}
BENCHMARK(BM_vexp)->Arg(1024)->Arg(65536);

} // namespace

BENCHMARK_MAIN();
