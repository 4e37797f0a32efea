// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <random>

#include "bdg/bdm.hpp"
#include "bdg/kernels.hpp"
#include "support.hpp"

using namespace bdg;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

template <bool Reference>
void BM_Gemm(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto a = random_floats(std::size_t(n) * n, 1), b = random_floats(std::size_t(n) * n, 2);
    std::vector<float> c(std::size_t(n) * n);
    for (auto _ : state) {
        if constexpr (Reference) {
            kernels::reference::gemm(n, n, n, a.data(), b.data(), c.data(), false);
        } else {
            kernels::gemm(n, n, n, a.data(), b.data(), c.data(), false);
        }
        benchmark::DoNotOptimize(c.data());
    }
    state.counters["GFLOP/s"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                   benchmark::Counter::kIs1000);
}

template <bool Reference>
void BM_Conv3x3(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0)), ch = 32;
    std::mt19937_64 rng(3);
    const Tensor<float> x = testing::random_tensor<float>(Shape{1, ch, size, size}, rng);
    const Tensor<float> w = testing::random_tensor<float>(Shape{ch, ch, 3, 3}, rng);
    const ConvGeometry g = ConvGeometry::square(3);
    for (auto _ : state) {
        Tensor<float> y = Reference ? kernels::reference::conv2d_forward(x, w, static_cast<const float*>(nullptr), g)
                                    : kernels::conv2d_forward(x, w, static_cast<const float*>(nullptr), g);
        benchmark::DoNotOptimize(y.data());
    }
    state.counters["GFLOP/s"] = benchmark::Counter(2.0 * ch * ch * 9 * size * size, benchmark::Counter::kIsIterationInvariantRate,
                                                   benchmark::Counter::kIs1000);
}

template <bool Reference>
void BM_Bilinear(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    std::mt19937_64 rng(4);
    const Tensor<float> x = testing::random_tensor<float>(Shape{1, 32, size, size}, rng);
    for (auto _ : state) {
        Tensor<float> y = Reference ? kernels::reference::resize_bilinear_forward(x, 8 * size, 8 * size)
                                    : kernels::resize_bilinear_forward(x, 8 * size, 8 * size);
        benchmark::DoNotOptimize(y.data());
    }
}

void BM_DistanceTransform(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    std::mt19937_64 rng(5);
    const BinaryMask boundary = extract_boundary(testing::blob_mask(size, size, rng, 4));
    for (auto _ : state) benchmark::DoNotOptimize(distance_transform(boundary).values.data());
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/parallel")->Arg(128)->Arg(512);
BENCHMARK(BM_Gemm<true>)->Name("gemm/reference")->Arg(128)->Arg(512);
BENCHMARK(BM_Conv3x3<false>)->Name("conv3x3/parallel")->Arg(44)->Arg(88);
BENCHMARK(BM_Conv3x3<true>)->Name("conv3x3/reference")->Arg(44)->Arg(88);
BENCHMARK(BM_Bilinear<false>)->Name("bilinear_x8/parallel")->Arg(44);
BENCHMARK(BM_Bilinear<true>)->Name("bilinear_x8/reference")->Arg(44);
BENCHMARK(BM_DistanceTransform)->Name("distance_transform")->Arg(352);

BENCHMARK_MAIN();
