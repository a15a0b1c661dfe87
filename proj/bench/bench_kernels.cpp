// Serial reference kernels against the im2col + OpenMP versions, at the
// shapes a SmallCNN training step sees with batch 128.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <random>
#include <vector>

#include "slat/kernels.hpp"

namespace k = slat::kernels;

namespace {

std::vector<double> filled(std::size_t n, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(gen);
  return v;
}

// conv1: 1 -> 16 channels on 28x28, conv2: 16 -> 32 channels on 14x14.
k::ConvDims conv_dims(int layer) {
  return layer == 1 ? k::ConvDims{128, 1, 16, 28, 28, 3} : k::ConvDims{128, 16, 32, 14, 14, 3};
}

template <bool Parallel>
void BM_conv_forward(benchmark::State& state) {
  const k::ConvDims d = conv_dims(static_cast<int>(state.range(0)));
  const auto x = filled(d.batch * d.in_channels * d.plane(), 1);
  const auto w = filled(d.out_channels * d.patch(), 2);
  const auto b = filled(d.out_channels, 3);
  std::vector<double> y(d.batch * d.out_channels * d.plane());
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv2d_forward(x, w, b, y, d);
    else
      k::reference::conv2d_forward(x, w, b, y, d);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.batch));
}

template <bool Parallel>
void BM_conv_backward(benchmark::State& state) {
  const k::ConvDims d = conv_dims(static_cast<int>(state.range(0)));
  const auto x = filled(d.batch * d.in_channels * d.plane(), 1);
  const auto w = filled(d.out_channels * d.patch(), 2);
  const auto gy = filled(d.batch * d.out_channels * d.plane(), 4);
  std::vector<double> gx(x.size()), gw(w.size()), gb(d.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::conv2d_backward_input(gy, w, gx, d);
      k::conv2d_backward_params(gy, x, gw, gb, d);
    } else {
      k::reference::conv2d_backward_input(gy, w, gx, d);
      k::reference::conv2d_backward_params(gy, x, gw, gb, d);
    }
    benchmark::DoNotOptimize(gx.data());
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.batch));
}

template <bool Parallel>
void BM_dense(benchmark::State& state) {
  const std::size_t batch = 128, in = 1568, out = 10;
  const auto x = filled(batch * in, 1);
  const auto w = filled(out * in, 2);
  const auto b = filled(out, 3);
  std::vector<double> y(batch * out);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::dense_forward(x, w, b, y, batch, in, out);
    else
      k::reference::dense_forward(x, w, b, y, batch, in, out);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n * n, 1);
  const auto b = filled(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::matmul_nn(a, b, c, n, n, n);
    else
      k::reference::matmul_nn(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_maxpool(benchmark::State& state) {
  const k::PoolDims d{128 * 16, 28, 28};
  const auto x = filled(d.planes * d.height * d.width, 1);
  std::vector<double> y(d.planes * d.out_height() * d.out_width());
  std::vector<std::uint32_t> arg(y.size());
  for (auto _ : state) {
    if constexpr (Parallel)
      k::maxpool2x2_forward(x, y, arg, d);
    else
      k::reference::maxpool2x2_forward(x, y, arg, d);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_conv_forward<false>)->Name("conv_forward/serial")->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_forward<true>)->Name("conv_forward/openmp")->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_backward<false>)->Name("conv_backward/serial")->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_backward<true>)->Name("conv_backward/openmp")->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_dense<false>)->Name("dense/serial")->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_dense<true>)->Name("dense/openmp")->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_matmul<false>)->Name("matmul/serial")->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_matmul<true>)->Name("matmul/openmp")->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_maxpool<false>)->Name("maxpool/serial")->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_maxpool<true>)->Name("maxpool/openmp")->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
