#include <doctest.h>

#include <cstdint>
#include <vector>

#include "oracles.hpp"
#include "slat/kernels.hpp"

using namespace slat;
namespace k = slat::kernels;

namespace {

std::vector<double> rand_vec(std::size_t n, std::uint64_t seed) {
  const Tensor t = oracle::random_tensor(Shape{n}, seed);
  return {t.data().begin(), t.data().end()};
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("matmul variants agree with the serial reference") {
  for (auto [m, kk, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 1}, {5, 7, 3}, {17, 33, 19},
                          {64, 10, 128}}) {
    const auto a = rand_vec(m * kk, 1), b = rand_vec(kk * n, 2), bt = rand_vec(n * kk, 3), at = rand_vec(kk * m, 4);
    std::vector<double> c(m * n), r(m * n);
    k::matmul_nn(a, b, c, m, kk, n);
    k::reference::matmul_nn(a, b, r, m, kk, n);
    CHECK(max_diff(c, r) <= 1e-12);
    k::matmul_nt(a, bt, c, m, kk, n);
    k::reference::matmul_nt(a, bt, r, m, kk, n);
    CHECK(max_diff(c, r) <= 1e-12);
    k::matmul_tn(at, b, c, m, kk, n);
    k::reference::matmul_tn(at, b, r, m, kk, n);
    CHECK(max_diff(c, r) <= 1e-12);
  }
}

TEST_CASE("matmul by hand") {
  const std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
  std::vector<double> c(4);
  k::matmul_nn(a, b, c, 2, 2, 2);
  CHECK(c == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("dense forward matches reference") {
  const std::size_t B = 9, in = 13, out = 6;
  const auto x = rand_vec(B * in, 5), w = rand_vec(out * in, 6), bias = rand_vec(out, 7);
  std::vector<double> y(B * out), r(B * out);
  k::dense_forward(x, w, bias, y, B, in, out);
  k::reference::dense_forward(x, w, bias, r, B, in, out);
  CHECK(max_diff(y, r) <= 1e-12);
}

TEST_CASE("conv2d kernels match the serial reference") {
  for (const k::ConvDims d : {k::ConvDims{3, 2, 4, 7, 5, 3}, k::ConvDims{10, 1, 16, 8, 8, 3}, k::ConvDims{2, 3, 2, 6, 6, 5},
                              k::ConvDims{1, 1, 1, 1, 1, 1}}) {
    const std::size_t xs = d.batch * d.in_channels * d.plane(), ys = d.batch * d.out_channels * d.plane();
    const std::size_t ws = d.out_channels * d.patch();
    const auto x = rand_vec(xs, 11), w = rand_vec(ws, 12), bias = rand_vec(d.out_channels, 13), gy = rand_vec(ys, 14);
    std::vector<double> y(ys), ry(ys);
    k::conv2d_forward(x, w, bias, y, d);
    k::reference::conv2d_forward(x, w, bias, ry, d);
    CHECK(max_diff(y, ry) <= 1e-12);

    std::vector<double> gx(xs), rgx(xs);
    k::conv2d_backward_input(gy, w, gx, d);
    k::reference::conv2d_backward_input(gy, w, rgx, d);
    CHECK(max_diff(gx, rgx) <= 1e-12);

    std::vector<double> gw(ws), rgw(ws), gb(d.out_channels), rgb(d.out_channels);
    k::conv2d_backward_params(gy, x, gw, gb, d);
    k::reference::conv2d_backward_params(gy, x, rgw, rgb, d);
    CHECK(max_diff(gw, rgw) <= 1e-12);
    CHECK(max_diff(gb, rgb) <= 1e-12);
  }
}

TEST_CASE("conv2d of ones with a ones kernel counts the window") {
  const k::ConvDims d{1, 1, 1, 3, 3, 3};
  const std::vector<double> x(9, 1.0), w(9, 1.0), bias{0.0};
  std::vector<double> y(9);
  k::conv2d_forward(x, w, bias, y, d);
  CHECK(y[4] == 9.0);
  CHECK(y[0] == 4.0);
  CHECK(y[1] == 6.0);
}

TEST_CASE("maxpool picks the first maximum and routes gradients to it") {
  const k::PoolDims d{1, 3, 4};
  const std::vector<double> x{1, 5, 2, 2,  //
                              3, 5, 0, 1,  //
                              9, 9, 9, 9};
  std::vector<double> y(2);
  std::vector<std::uint32_t> arg(2);
  k::maxpool2x2_forward(x, y, arg, d);
  CHECK(y == std::vector<double>{5, 2});
  CHECK(arg == std::vector<std::uint32_t>{1, 2});
  std::vector<double> gx(12, -1.0);
  k::maxpool2x2_backward(std::vector<double>{0.5, 2.0}, arg, gx);
  CHECK(gx[1] == 0.5);
  CHECK(gx[2] == 2.0);
  CHECK(gx[5] == 0.0);
  CHECK(gx[11] == 0.0);

  std::vector<double> ry(2);
  std::vector<std::uint32_t> rarg(2);
  k::reference::maxpool2x2_forward(x, ry, rarg, d);
  CHECK(ry == y);
  CHECK(rarg == arg);
}

TEST_CASE("maxpool matches reference on random planes") {
  const k::PoolDims d{12, 9, 10};
  const auto x = rand_vec(d.planes * d.height * d.width, 21);
  const std::size_t n = d.planes * d.out_height() * d.out_width();
  std::vector<double> y(n), ry(n);
  std::vector<std::uint32_t> a(n), ra(n);
  k::maxpool2x2_forward(x, y, a, d);
  k::reference::maxpool2x2_forward(x, ry, ra, d);
  CHECK(y == ry);
  CHECK(a == ra);
}

TEST_CASE("thread count is positive") { CHECK(k::max_threads() >= 1); }
