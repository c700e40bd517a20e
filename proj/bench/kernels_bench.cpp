// Parallel im2col/GEMM kernels against the serial reference loops, on the
// layer shapes of the discriminator.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "sclld/kernels.hpp"

namespace k = sclld::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// args: batch, in_channels, side, out_channels, stride
k::ConvGeometry geometry(const benchmark::State& s) {
  k::ConvGeometry g;
  g.batch = static_cast<std::size_t>(s.range(0));
  g.in_channels = static_cast<std::size_t>(s.range(1));
  g.in_h = g.in_w = static_cast<std::size_t>(s.range(2));
  g.out_channels = static_cast<std::size_t>(s.range(3));
  g.stride = static_cast<std::size_t>(s.range(4));
  return g;
}

template <bool Fast>
void conv_forward(benchmark::State& s) {
  const auto g = geometry(s);
  const auto in = random_vector(g.input_size(), 1);
  const auto w = random_vector(g.weight_size(), 2);
  const auto b = random_vector(g.out_channels, 3);
  std::vector<double> out(g.output_size());
  for (auto _ : s) {
    if constexpr (Fast) k::conv2d_forward(g, in, w, b, out);
    else k::reference::conv2d_forward(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Fast>
void conv_backward(benchmark::State& s) {
  const auto g = geometry(s);
  const auto in = random_vector(g.input_size(), 1);
  const auto w = random_vector(g.weight_size(), 2);
  const auto go = random_vector(g.output_size(), 3);
  std::vector<double> gi(g.input_size()), gw(g.weight_size()), gb(g.out_channels);
  for (auto _ : s) {
    if constexpr (Fast) {
      k::conv2d_backward_input(g, go, w, gi);
      k::conv2d_backward_weight(g, in, go, gw, gb);
    } else {
      k::reference::conv2d_backward_input(g, go, w, gi);
      k::reference::conv2d_backward_weight(g, in, go, gw, gb);
    }
    benchmark::DoNotOptimize(gi.data());
    benchmark::DoNotOptimize(gw.data());
  }
}

template <bool Fast>
void dense(benchmark::State& s) {
  k::DenseGeometry g{static_cast<std::size_t>(s.range(0)), static_cast<std::size_t>(s.range(1)),
                     static_cast<std::size_t>(s.range(2))};
  const auto in = random_vector(g.batch * g.in_features, 1);
  const auto w = random_vector(g.out_features * g.in_features, 2);
  const auto b = random_vector(g.out_features, 3);
  const auto go = random_vector(g.batch * g.out_features, 4);
  std::vector<double> out(g.batch * g.out_features), gi(in.size()), gw(w.size()), gb(b.size());
  for (auto _ : s) {
    if constexpr (Fast) {
      k::dense_forward(g, in, w, b, out);
      k::dense_backward_input(g, go, w, gi);
      k::dense_backward_weight(g, in, go, gw, gb);
    } else {
      k::reference::dense_forward(g, in, w, b, out);
      k::reference::dense_backward_input(g, go, w, gi);
      k::reference::dense_backward_weight(g, in, go, gw, gb);
    }
    benchmark::DoNotOptimize(out.data());
    benchmark::DoNotOptimize(gw.data());
  }
}

void conv_shapes(benchmark::internal::Benchmark* b) {
  b->Args({32, 1, 100, 32, 2})->Args({32, 32, 50, 64, 2})->Args({8, 64, 25, 32, 1});
  b->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(conv_forward<true>)->Name("conv_forward/parallel")->Apply(conv_shapes);
BENCHMARK(conv_forward<false>)->Name("conv_forward/reference")->Apply(conv_shapes);
BENCHMARK(conv_backward<true>)->Name("conv_backward/parallel")->Apply(conv_shapes);
BENCHMARK(conv_backward<false>)->Name("conv_backward/reference")->Apply(conv_shapes);
BENCHMARK(dense<true>)->Name("dense/parallel")->Args({32, 64 * 13 * 13, 1});
BENCHMARK(dense<false>)->Name("dense/reference")->Args({32, 64 * 13 * 13, 1});

BENCHMARK_MAIN();
