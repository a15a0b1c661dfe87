#include <omp.h>

#include <algorithm>
#include <vector>

#include "slat/kernels.hpp"

namespace slat::kernels {

namespace {

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 16;
// Images per partial-sum slot in the weight-gradient reduction. Fixed so the
// summation order is independent of the thread count.
constexpr std::size_t kGradChunk = 8;

// C[m x n] (+)= A[m x k] * B[k x n], row-major with explicit leading dims.
// Register-blocked kMr x kNr; the inner loop is left to the auto-vectorizer.
void gemm_nn(const double* A, std::size_t lda, const double* B, std::size_t ldb, double* C, std::size_t ldc,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i0 = 0; i0 < m; i0 += kMr) {
    const std::size_t mr = std::min(kMr, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kNr) {
      const std::size_t nr = std::min(kNr, n - j0);
      alignas(64) double acc[kMr][kNr] = {};
      if (mr == kMr && nr == kNr) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* b = B + p * ldb + j0;
          const double a0 = A[(i0 + 0) * lda + p];
          const double a1 = A[(i0 + 1) * lda + p];
          const double a2 = A[(i0 + 2) * lda + p];
          const double a3 = A[(i0 + 3) * lda + p];
#pragma omp simd
          for (std::size_t j = 0; j < kNr; ++j) {
            acc[0][j] += a0 * b[j];
            acc[1][j] += a1 * b[j];
            acc[2][j] += a2 * b[j];
            acc[3][j] += a3 * b[j];
          }
        }
      } else {
        for (std::size_t p = 0; p < k; ++p) {
          const double* b = B + p * ldb + j0;
          for (std::size_t r = 0; r < mr; ++r) {
            const double a = A[(i0 + r) * lda + p];
            for (std::size_t j = 0; j < nr; ++j) acc[r][j] += a * b[j];
          }
        }
      }
      for (std::size_t r = 0; r < mr; ++r) {
        double* c = C + (i0 + r) * ldc + j0;
        if (accumulate) {
          for (std::size_t j = 0; j < nr; ++j) c[j] += acc[r][j];
        } else {
          for (std::size_t j = 0; j < nr; ++j) c[j] = acc[r][j];
        }
      }
    }
  }
}

void transpose(const double* src, double* dst, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// cols[(ci*K + ky)*K + kx][r*W + c] = x[ci][r + ky - P][c + kx - P] (zero outside)
void im2col(const double* x, double* cols, const ConvDims& d) {
  const std::size_t H = d.height, W = d.width, K = d.ksize;
  const long P = static_cast<long>(d.pad());
  for (std::size_t ci = 0; ci < d.in_channels; ++ci)
    for (std::size_t ky = 0; ky < K; ++ky)
      for (std::size_t kx = 0; kx < K; ++kx) {
        double* row = cols + ((ci * K + ky) * K + kx) * H * W;
        const double* plane = x + ci * H * W;
        const long dx = static_cast<long>(kx) - P;
        for (std::size_t r = 0; r < H; ++r) {
          const long yy = static_cast<long>(r) + static_cast<long>(ky) - P;
          double* out = row + r * W;
          if (yy < 0 || yy >= static_cast<long>(H)) {
            std::fill(out, out + W, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(yy) * W;
          for (std::size_t c = 0; c < W; ++c) {
            const long xx = static_cast<long>(c) + dx;
            out[c] = (xx < 0 || xx >= static_cast<long>(W)) ? 0.0 : src[xx];
          }
        }
      }
}

// Adjoint of im2col: scatter-add column rows back into the image.
void col2im(const double* cols, double* x, const ConvDims& d) {
  const std::size_t H = d.height, W = d.width, K = d.ksize;
  const long P = static_cast<long>(d.pad());
  std::fill(x, x + d.in_channels * H * W, 0.0);
  for (std::size_t ci = 0; ci < d.in_channels; ++ci)
    for (std::size_t ky = 0; ky < K; ++ky)
      for (std::size_t kx = 0; kx < K; ++kx) {
        const double* row = cols + ((ci * K + ky) * K + kx) * H * W;
        double* plane = x + ci * H * W;
        const long dx = static_cast<long>(kx) - P;
        for (std::size_t r = 0; r < H; ++r) {
          const long yy = static_cast<long>(r) + static_cast<long>(ky) - P;
          if (yy < 0 || yy >= static_cast<long>(H)) continue;
          double* dst = plane + static_cast<std::size_t>(yy) * W;
          const double* src = row + r * W;
          const std::size_t c_lo = static_cast<std::size_t>(std::max(0L, -dx));
          const std::size_t c_hi = static_cast<std::size_t>(std::min(static_cast<long>(W), static_cast<long>(W) - dx));
          for (std::size_t c = c_lo; c < c_hi; ++c) dst[static_cast<long>(c) + dx] += src[c];
        }
      }
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }

void matmul_nn(In a, In b, Out c, std::size_t m, std::size_t k, std::size_t n) {
  const long rows = static_cast<long>((m + kMr - 1) / kMr);
#pragma omp parallel for schedule(static)
  for (long blk = 0; blk < rows; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * kMr;
    gemm_nn(a.data() + i0 * k, k, b.data(), n, c.data() + i0 * n, n, std::min(kMr, m - i0), k, n, false);
  }
}

void matmul_nt(In a, In b, Out c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> bt(k * n);
  transpose(b.data(), bt.data(), n, k);
  matmul_nn(a, bt, c, m, k, n);
}

void matmul_tn(In a, In b, Out c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> at(m * k);
  transpose(a.data(), at.data(), k, m);
  matmul_nn(at, b, c, m, k, n);
}

void dense_forward(In x, In w, In bias, Out y, std::size_t batch, std::size_t in, std::size_t out) {
  matmul_nt(x, w, y, batch, in, out);
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t o = 0; o < out; ++o) y[r * out + o] += bias[o];
}

void conv2d_forward(In x, In w, In bias, Out y, const ConvDims& d) {
  const std::size_t plane = d.plane(), patch = d.patch();
  const std::size_t in_img = d.in_channels * plane, out_img = d.out_channels * plane;
#pragma omp parallel
  {
    std::vector<double> cols(patch * plane);
#pragma omp for schedule(static)
    for (long b = 0; b < static_cast<long>(d.batch); ++b) {
      im2col(x.data() + static_cast<std::size_t>(b) * in_img, cols.data(), d);
      double* out = y.data() + static_cast<std::size_t>(b) * out_img;
      gemm_nn(w.data(), patch, cols.data(), plane, out, plane, d.out_channels, patch, plane, false);
      for (std::size_t o = 0; o < d.out_channels; ++o) {
        double* row = out + o * plane;
        const double bo = bias[o];
        for (std::size_t j = 0; j < plane; ++j) row[j] += bo;
      }
    }
  }
}

void conv2d_backward_input(In gy, In w, Out gx, const ConvDims& d) {
  const std::size_t plane = d.plane(), patch = d.patch();
  const std::size_t in_img = d.in_channels * plane, out_img = d.out_channels * plane;
  std::vector<double> wt(patch * d.out_channels);
  transpose(w.data(), wt.data(), d.out_channels, patch);
#pragma omp parallel
  {
    std::vector<double> cols(patch * plane);
#pragma omp for schedule(static)
    for (long b = 0; b < static_cast<long>(d.batch); ++b) {
      gemm_nn(wt.data(), d.out_channels, gy.data() + static_cast<std::size_t>(b) * out_img, plane, cols.data(),
              plane, patch, d.out_channels, plane, false);
      col2im(cols.data(), gx.data() + static_cast<std::size_t>(b) * in_img, d);
    }
  }
}

void conv2d_backward_params(In gy, In x, Out gw, Out gbias, const ConvDims& d) {
  const std::size_t plane = d.plane(), patch = d.patch();
  const std::size_t in_img = d.in_channels * plane, out_img = d.out_channels * plane;
  const std::size_t wsize = d.out_channels * patch;
  const std::size_t chunks = (d.batch + kGradChunk - 1) / kGradChunk;
  std::vector<double> partial_w(chunks * wsize, 0.0);
  std::vector<double> partial_b(chunks * d.out_channels, 0.0);
#pragma omp parallel
  {
    std::vector<double> cols(patch * plane), cols_t(plane * patch);
#pragma omp for schedule(static)
    for (long ch = 0; ch < static_cast<long>(chunks); ++ch) {
      const std::size_t c = static_cast<std::size_t>(ch);
      double* pw = partial_w.data() + c * wsize;
      double* pb = partial_b.data() + c * d.out_channels;
      const std::size_t end = std::min(d.batch, (c + 1) * kGradChunk);
      for (std::size_t b = c * kGradChunk; b < end; ++b) {
        im2col(x.data() + b * in_img, cols.data(), d);
        transpose(cols.data(), cols_t.data(), patch, plane);
        const double* g = gy.data() + b * out_img;
        gemm_nn(g, plane, cols_t.data(), patch, pw, patch, d.out_channels, plane, patch, true);
        for (std::size_t o = 0; o < d.out_channels; ++o) {
          double s = 0.0;
          const double* row = g + o * plane;
          for (std::size_t j = 0; j < plane; ++j) s += row[j];
          pb[o] += s;
        }
      }
    }
  }
  std::fill(gw.begin(), gw.end(), 0.0);
  std::fill(gbias.begin(), gbias.end(), 0.0);
  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t i = 0; i < wsize; ++i) gw[i] += partial_w[c * wsize + i];
    for (std::size_t o = 0; o < d.out_channels; ++o) gbias[o] += partial_b[c * d.out_channels + o];
  }
}

void maxpool2x2_forward(In x, Out y, std::span<std::uint32_t> argmax, const PoolDims& d) {
  const std::size_t OH = d.out_height(), OW = d.out_width();
#pragma omp parallel for schedule(static)
  for (long pl = 0; pl < static_cast<long>(d.planes); ++pl) {
    const std::size_t p = static_cast<std::size_t>(pl);
    for (std::size_t r = 0; r < OH; ++r)
      for (std::size_t c = 0; c < OW; ++c) {
        const std::size_t top = (p * d.height + 2 * r) * d.width + 2 * c;
        std::size_t best = top;
        if (x[top + 1] > x[best]) best = top + 1;
        if (x[top + d.width] > x[best]) best = top + d.width;
        if (x[top + d.width + 1] > x[best]) best = top + d.width + 1;
        const std::size_t o = (p * OH + r) * OW + c;
        y[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
  }
}

void maxpool2x2_backward(In gy, std::span<const std::uint32_t> argmax, Out gx) {
  // Pool windows do not overlap, so each input receives at most one value.
  std::fill(gx.begin(), gx.end(), 0.0);
#pragma omp parallel for schedule(static)
  for (long o = 0; o < static_cast<long>(gy.size()); ++o) gx[argmax[static_cast<std::size_t>(o)]] = gy[static_cast<std::size_t>(o)];
}

}  // namespace slat::kernels
