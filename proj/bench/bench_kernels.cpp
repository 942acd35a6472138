// Serial reference vs OpenMP kernels on the shapes of the desk encoder.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "smog/kernels.hpp"

namespace {

namespace k = smog::kernels;

std::vector<double> random_values(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

// Layer index selects one of the three stride-2 conv stages at 32px input.
k::ConvGeometry desk_layer(std::int64_t layer, std::int64_t batch) {
    static constexpr std::size_t chans[] = {3, 16, 32, 64};
    const std::size_t size = 32 >> layer;
    return {static_cast<std::size_t>(batch), chans[layer], size, size, chans[layer + 1], 3, 3, 2, 1};
}

template <bool Serial>
void conv_forward(benchmark::State& state) {
    const auto g = desk_layer(state.range(0), state.range(1));
    const auto in = random_values(g.input_size(), 1), kw = random_values(g.kernel_size(), 2);
    std::vector<double> out(g.output_size());
    for (auto _ : state) {
        if constexpr (Serial) k::serial::conv2d_forward(g, in, kw, out);
        else k::conv2d_forward(g, in, kw, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.counters["MAC/s"] = benchmark::Counter(
        static_cast<double>(g.output_size() * g.in_channels * 9), benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Serial>
void conv_backward_input(benchmark::State& state) {
    const auto g = desk_layer(state.range(0), state.range(1));
    const auto gout = random_values(g.output_size(), 1), kw = random_values(g.kernel_size(), 2);
    std::vector<double> gin(g.input_size());
    for (auto _ : state) {
        if constexpr (Serial) k::serial::conv2d_backward_input(g, gout, kw, gin);
        else k::conv2d_backward_input(g, gout, kw, gin);
        benchmark::DoNotOptimize(gin.data());
    }
}

template <bool Serial>
void conv_backward_kernel(benchmark::State& state) {
    const auto g = desk_layer(state.range(0), state.range(1));
    const auto in = random_values(g.input_size(), 1), gout = random_values(g.output_size(), 2);
    std::vector<double> gk(g.kernel_size());
    for (auto _ : state) {
        if constexpr (Serial) k::serial::conv2d_backward_kernel(g, in, gout, gk);
        else k::conv2d_backward_kernel(g, in, gout, gk);
        benchmark::DoNotOptimize(gk.data());
    }
}

template <bool Serial>
void matmul(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0)), kk = static_cast<std::size_t>(state.range(1)),
               n = static_cast<std::size_t>(state.range(2));
    const auto a = random_values(m * kk, 1), b = random_values(kk * n, 2);
    std::vector<double> c(m * n);
    for (auto _ : state) {
        if constexpr (Serial) k::serial::matmul(a, b, c, m, kk, n);
        else k::matmul(a, b, c, m, kk, n);
        benchmark::DoNotOptimize(c.data());
    }
}

void conv_args(benchmark::internal::Benchmark* b) {
    for (std::int64_t layer = 0; layer < 3; ++layer) b->Args({layer, 128});
}

void matmul_args(benchmark::internal::Benchmark* b) {
    b->Args({256, 64, 256});
    b->Args({256, 256, 32});
}

}  // namespace

BENCHMARK(conv_forward<true>)->Name("conv_forward/serial")->Apply(conv_args);
BENCHMARK(conv_forward<false>)->Name("conv_forward/omp")->Apply(conv_args);
BENCHMARK(conv_backward_input<true>)->Name("conv_backward_input/serial")->Apply(conv_args);
BENCHMARK(conv_backward_input<false>)->Name("conv_backward_input/omp")->Apply(conv_args);
BENCHMARK(conv_backward_kernel<true>)->Name("conv_backward_kernel/serial")->Apply(conv_args);
BENCHMARK(conv_backward_kernel<false>)->Name("conv_backward_kernel/omp")->Apply(conv_args);
BENCHMARK(matmul<true>)->Name("matmul/serial")->Apply(matmul_args);
BENCHMARK(matmul<false>)->Name("matmul/omp")->Apply(matmul_args);

BENCHMARK_MAIN();
