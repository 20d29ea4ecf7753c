#include "catreid/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace catreid::kernels {
namespace {

constexpr int kBlockK = 256;
constexpr int kBlockN = 512;
// Below this many multiply-adds the parallel region costs more than it saves.
constexpr std::int64_t kParallelGemmWork = 1 << 16;

// C[m x n] += A[m x k] * B[k x n]; all operands row-major, non-overlapping.
void gemm_nn_accumulate(int m, int n, int k, const float* __restrict a, int lda,
                        const float* __restrict b, int ldb, float* __restrict c, int ldc) {
  const int row_blocks = (m + 3) / 4;
  const bool parallel = std::int64_t{m} * n * k >= kParallelGemmWork && !omp_in_parallel();
#pragma omp parallel for schedule(static) if (parallel)
  for (int rb = 0; rb < row_blocks; ++rb) {
    const int i0 = rb * 4;
    const int rows = std::min(4, m - i0);
    for (int k0 = 0; k0 < k; k0 += kBlockK) {
      const int kb = std::min(kBlockK, k - k0);
      for (int n0 = 0; n0 < n; n0 += kBlockN) {
        const int nb = std::min(kBlockN, n - n0);
        if (rows == 4) {
          float* __restrict c0 = c + std::int64_t{i0} * ldc + n0;
          float* __restrict c1 = c0 + ldc;
          float* __restrict c2 = c1 + ldc;
          float* __restrict c3 = c2 + ldc;
          const float* arow = a + std::int64_t{i0} * lda + k0;
          for (int kk = 0; kk < kb; ++kk) {
            const float* __restrict brow = b + std::int64_t{k0 + kk} * ldb + n0;
            const float a0 = arow[kk];
            const float a1 = arow[lda + kk];
            const float a2 = arow[2 * lda + kk];
            const float a3 = arow[3 * lda + kk];
#pragma omp simd
            for (int j = 0; j < nb; ++j) {
              const float bv = brow[j];
              c0[j] += a0 * bv;
              c1[j] += a1 * bv;
              c2[j] += a2 * bv;
              c3[j] += a3 * bv;
            }
          }
        } else {
          for (int r = 0; r < rows; ++r) {
            float* __restrict crow = c + std::int64_t{i0 + r} * ldc + n0;
            const float* arow = a + std::int64_t{i0 + r} * lda + k0;
            for (int kk = 0; kk < kb; ++kk) {
              const float* __restrict brow = b + std::int64_t{k0 + kk} * ldb + n0;
              const float av = arow[kk];
#pragma omp simd
              for (int j = 0; j < nb; ++j) crow[j] += av * brow[j];
            }
          }
        }
      }
    }
  }
}

void transpose_into(int rows, int cols, const float* src, int ld, float scale,
                    std::vector<float>& dst) {
  // src is rows x cols with leading dim ld; dst becomes cols x rows.
  dst.resize(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      dst[static_cast<std::size_t>(c) * rows + r] = scale * src[std::int64_t{r} * ld + c];
    }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.pad == 0;
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          std::span<const float> a, int lda, std::span<const float> b, int ldb, float beta,
          std::span<float> c, int ldc) {
  for (int i = 0; i < m; ++i) {
    float* row = c.data() + std::int64_t{i} * ldc;
    if (beta == 0.0f) {
      std::fill(row, row + n, 0.0f);
    } else if (beta != 1.0f) {
      for (int j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0f) return;

  std::vector<float> packed_a;
  const float* a_ptr = a.data();
  int a_ld = lda;
  if (trans_a) {
    // stored k x m
    transpose_into(k, m, a.data(), lda, alpha, packed_a);
    a_ptr = packed_a.data();
    a_ld = k;
  } else if (alpha != 1.0f) {
    packed_a.resize(static_cast<std::size_t>(m) * k);
    for (int i = 0; i < m; ++i)
      for (int kk = 0; kk < k; ++kk)
        packed_a[static_cast<std::size_t>(i) * k + kk] = alpha * a[std::int64_t{i} * lda + kk];
    a_ptr = packed_a.data();
    a_ld = k;
  }

  std::vector<float> packed_b;
  const float* b_ptr = b.data();
  int b_ld = ldb;
  if (trans_b) {
    // stored n x k
    transpose_into(n, k, b.data(), ldb, 1.0f, packed_b);
    b_ptr = packed_b.data();
    b_ld = n;
  }
  gemm_nn_accumulate(m, n, k, a_ptr, a_ld, b_ptr, b_ld, c.data(), ldc);
}

void im2col(const ConvGeometry& g, std::span<const float> image, std::span<float> columns) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int plane = oh * ow;
  for (int ch = 0; ch < g.in_channels; ++ch) {
    const float* src = image.data() + std::int64_t{ch} * g.in_height * g.in_width;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        float* dst = columns.data() +
                     (std::int64_t{ch} * g.kernel * g.kernel + ky * g.kernel + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          float* drow = dst + oy * ow;
          if (iy < 0 || iy >= g.in_height) {
            std::fill(drow, drow + ow, 0.0f);
            continue;
          }
          const float* srow = src + std::int64_t{iy} * g.in_width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            drow[ox] = (ix >= 0 && ix < g.in_width) ? srow[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, std::span<const float> columns, std::span<float> image) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int plane = oh * ow;
  for (int ch = 0; ch < g.in_channels; ++ch) {
    float* dst = image.data() + std::int64_t{ch} * g.in_height * g.in_width;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const float* src = columns.data() +
                           (std::int64_t{ch} * g.kernel * g.kernel + ky * g.kernel + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_height) continue;
          float* drow = dst + std::int64_t{iy} * g.in_width;
          const float* srow = src + oy * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_width) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

void conv2d_forward(const ConvGeometry& g, int batch, std::span<const float> x,
                    std::span<const float> weight, std::span<float> y) {
  const int plane = g.out_height() * g.out_width();
  const int patch = static_cast<int>(g.patch_size());
  const std::int64_t in_size = g.in_size();
  const std::int64_t out_size = g.out_size();
  const bool pointwise = is_pointwise(g);
#pragma omp parallel if (batch > 1)
  {
    std::vector<float> columns(pointwise ? 0 : static_cast<std::size_t>(patch) * plane);
#pragma omp for schedule(static)
    for (int b = 0; b < batch; ++b) {
      auto image = x.subspan(b * in_size, in_size);
      std::span<const float> cols = image;
      if (!pointwise) {
        im2col(g, image, columns);
        cols = columns;
      }
      gemm(false, false, g.out_channels, plane, patch, 1.0f, weight, patch, cols, plane, 0.0f,
           y.subspan(b * out_size, out_size), plane);
    }
  }
}

void conv2d_backward(const ConvGeometry& g, int batch, std::span<const float> x,
                     std::span<const float> weight, std::span<const float> dy,
                     std::span<float> dx, std::span<float> dweight) {
  const int plane = g.out_height() * g.out_width();
  const int patch = static_cast<int>(g.patch_size());
  const std::int64_t in_size = g.in_size();
  const std::int64_t out_size = g.out_size();
  const bool pointwise = is_pointwise(g);
  const int threads = batch > 1 ? omp_get_max_threads() : 1;
  // Per-thread weight-gradient buffers, summed in thread order so the
  // result does not depend on scheduling.
  std::vector<std::vector<float>> partial(threads);
#pragma omp parallel num_threads(threads)
  {
    const int tid = omp_get_thread_num();
    auto& local = partial[tid];
    local.assign(dweight.size(), 0.0f);
    std::vector<float> columns(pointwise ? 0 : static_cast<std::size_t>(patch) * plane);
    std::vector<float> dcolumns(pointwise ? 0 : static_cast<std::size_t>(patch) * plane);
#pragma omp for schedule(static)
    for (int b = 0; b < batch; ++b) {
      auto image = x.subspan(b * in_size, in_size);
      auto grad_out = dy.subspan(b * out_size, out_size);
      auto grad_in = dx.subspan(b * in_size, in_size);
      std::span<const float> cols = image;
      if (!pointwise) {
        im2col(g, image, columns);
        cols = columns;
      }
      gemm(false, true, g.out_channels, patch, plane, 1.0f, grad_out, plane, cols, plane, 1.0f,
           local, patch);
      if (pointwise) {
        gemm(true, false, patch, plane, g.out_channels, 1.0f, weight, patch, grad_out, plane,
             0.0f, grad_in, plane);
      } else {
        gemm(true, false, patch, plane, g.out_channels, 1.0f, weight, patch, grad_out, plane,
             0.0f, dcolumns, plane);
        std::fill(grad_in.begin(), grad_in.end(), 0.0f);
        col2im(g, dcolumns, grad_in);
      }
    }
  }
  for (const auto& local : partial) {
    for (std::size_t i = 0; i < dweight.size(); ++i) dweight[i] += local[i];
  }
}

void maxpool_forward(const PoolGeometry& g, int batch, std::span<const float> x,
                     std::span<float> y, std::span<std::int32_t> argmax) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int planes = batch * g.channels;
  const std::int64_t in_plane = std::int64_t{g.in_height} * g.in_width;
  const std::int64_t out_plane = std::int64_t{oh} * ow;
#pragma omp parallel for schedule(static) if (planes > 1)
  for (int p = 0; p < planes; ++p) {
    const float* src = x.data() + p * in_plane;
    float* dst = y.data() + p * out_plane;
    std::int32_t* arg = argmax.data() + p * out_plane;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t best_at = -1;
        for (int ky = 0; ky < g.kernel; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_height) continue;
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.in_width) continue;
            const float v = src[iy * g.in_width + ix];
            if (v > best || best_at < 0) {
              best = v;
              best_at = iy * g.in_width + ix;
            }
          }
        }
        dst[oy * ow + ox] = best;
        arg[oy * ow + ox] = best_at;
      }
    }
  }
}

void maxpool_backward(const PoolGeometry& g, int batch, std::span<const float> dy,
                      std::span<const std::int32_t> argmax, std::span<float> dx) {
  const int planes = batch * g.channels;
  const std::int64_t in_plane = std::int64_t{g.in_height} * g.in_width;
  const std::int64_t out_plane = std::int64_t{g.out_height()} * g.out_width();
  std::fill(dx.begin(), dx.end(), 0.0f);
#pragma omp parallel for schedule(static) if (planes > 1)
  for (int p = 0; p < planes; ++p) {
    float* dst = dx.data() + p * in_plane;
    const float* src = dy.data() + p * out_plane;
    const std::int32_t* arg = argmax.data() + p * out_plane;
    for (std::int64_t o = 0; o < out_plane; ++o) dst[arg[o]] += src[o];
  }
}

void global_avgpool_forward(int batch, int channels, int spatial, std::span<const float> x,
                            std::span<float> y) {
  const int planes = batch * channels;
  const float inv = 1.0f / static_cast<float>(spatial);
#pragma omp parallel for schedule(static) if (planes > 64)
  for (int p = 0; p < planes; ++p) {
    const float* src = x.data() + std::int64_t{p} * spatial;
    float sum = 0.0f;
    for (int s = 0; s < spatial; ++s) sum += src[s];
    y[p] = sum * inv;
  }
}

void global_avgpool_backward(int batch, int channels, int spatial, std::span<const float> dy,
                             std::span<float> dx) {
  const int planes = batch * channels;
  const float inv = 1.0f / static_cast<float>(spatial);
#pragma omp parallel for schedule(static) if (planes > 64)
  for (int p = 0; p < planes; ++p) {
    float* dst = dx.data() + std::int64_t{p} * spatial;
    const float v = dy[p] * inv;
    std::fill(dst, dst + spatial, v);
  }
}

void batchnorm_forward_train(int batch, int channels, int spatial, float eps,
                             std::span<const float> x, std::span<const float> gamma,
                             std::span<const float> beta, std::span<float> y,
                             std::span<float> mean, std::span<float> inv_std) {
  const std::int64_t count = std::int64_t{batch} * spatial;
  const std::int64_t stride = std::int64_t{channels} * spatial;
#pragma omp parallel for schedule(static) if (channels > 1)
  for (int c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (int b = 0; b < batch; ++b) {
      const float* src = x.data() + b * stride + std::int64_t{c} * spatial;
      for (int s = 0; s < spatial; ++s) sum += src[s];
    }
    const double mu = sum / static_cast<double>(count);
    double sq = 0.0;
    for (int b = 0; b < batch; ++b) {
      const float* src = x.data() + b * stride + std::int64_t{c} * spatial;
      for (int s = 0; s < spatial; ++s) {
        const double d = src[s] - mu;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(count);
    const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
    mean[c] = static_cast<float>(mu);
    inv_std[c] = istd;
    const float scale = gamma[c] * istd;
    const float shift = beta[c] - static_cast<float>(mu) * scale;
    for (int b = 0; b < batch; ++b) {
      const float* src = x.data() + b * stride + std::int64_t{c} * spatial;
      float* dst = y.data() + b * stride + std::int64_t{c} * spatial;
      for (int s = 0; s < spatial; ++s) dst[s] = src[s] * scale + shift;
    }
  }
}

void batchnorm_forward_eval(int batch, int channels, int spatial, float eps,
                            std::span<const float> x, std::span<const float> gamma,
                            std::span<const float> beta, std::span<const float> running_mean,
                            std::span<const float> running_var, std::span<float> y) {
  const std::int64_t stride = std::int64_t{channels} * spatial;
#pragma omp parallel for schedule(static) if (channels > 1)
  for (int c = 0; c < channels; ++c) {
    const float scale = gamma[c] / std::sqrt(running_var[c] + eps);
    const float shift = beta[c] - running_mean[c] * scale;
    for (int b = 0; b < batch; ++b) {
      const float* src = x.data() + b * stride + std::int64_t{c} * spatial;
      float* dst = y.data() + b * stride + std::int64_t{c} * spatial;
      for (int s = 0; s < spatial; ++s) dst[s] = src[s] * scale + shift;
    }
  }
}

void batchnorm_backward(int batch, int channels, int spatial, std::span<const float> x,
                        std::span<const float> gamma, std::span<const float> mean,
                        std::span<const float> inv_std, std::span<const float> dy,
                        std::span<float> dx, std::span<float> dgamma, std::span<float> dbeta) {
  const std::int64_t count = std::int64_t{batch} * spatial;
  const std::int64_t stride = std::int64_t{channels} * spatial;
#pragma omp parallel for schedule(static) if (channels > 1)
  for (int c = 0; c < channels; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int b = 0; b < batch; ++b) {
      const float* src = x.data() + b * stride + std::int64_t{c} * spatial;
      const float* g = dy.data() + b * stride + std::int64_t{c} * spatial;
      for (int s = 0; s < spatial; ++s) {
        sum_dy += g[s];
        sum_dy_xhat += g[s] * (src[s] - mean[c]) * inv_std[c];
      }
    }
    dgamma[c] += static_cast<float>(sum_dy_xhat);
    dbeta[c] += static_cast<float>(sum_dy);
    const double n = static_cast<double>(count);
    const double k = gamma[c] * inv_std[c] / n;
    for (int b = 0; b < batch; ++b) {
      const float* src = x.data() + b * stride + std::int64_t{c} * spatial;
      const float* g = dy.data() + b * stride + std::int64_t{c} * spatial;
      float* dst = dx.data() + b * stride + std::int64_t{c} * spatial;
      for (int s = 0; s < spatial; ++s) {
        const double xhat = (src[s] - mean[c]) * inv_std[c];
        dst[s] = static_cast<float>(k * (n * g[s] - sum_dy - xhat * sum_dy_xhat));
      }
    }
  }
}

void pairwise_sq_distances(std::span<const double> a, int n, std::span<const double> b, int m,
                           int d, std::span<double> out) {
#pragma omp parallel for schedule(static) if (std::int64_t{n} * m * d > (1 << 16))
  for (int i = 0; i < n; ++i) {
    const double* ai = a.data() + std::int64_t{i} * d;
    for (int j = 0; j < m; ++j) {
      const double* bj = b.data() + std::int64_t{j} * d;
      double acc = 0.0;
      for (int t = 0; t < d; ++t) {
        const double diff = ai[t] - bj[t];
        acc += diff * diff;
      }
      out[std::int64_t{i} * m + j] = acc;
    }
  }
}

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          std::span<const float> a, int lda, std::span<const float> b, int ldb, float beta,
          std::span<float> c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) {
        const float av = trans_a ? a[std::int64_t{t} * lda + i] : a[std::int64_t{i} * lda + t];
        const float bv = trans_b ? b[std::int64_t{j} * ldb + t] : b[std::int64_t{t} * ldb + j];
        acc += static_cast<double>(av) * bv;
      }
      float& out = c[std::int64_t{i} * ldc + j];
      out = static_cast<float>(alpha * acc + (beta == 0.0f ? 0.0 : beta * out));
    }
  }
}

void conv2d_forward(const ConvGeometry& g, int batch, std::span<const float> x,
                    std::span<const float> weight, std::span<float> y) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  for (int b = 0; b < batch; ++b) {
    for (int oc = 0; oc < g.out_channels; ++oc) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int ic = 0; ic < g.in_channels; ++ic) {
            for (int ky = 0; ky < g.kernel; ++ky) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.in_height) continue;
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix < 0 || ix >= g.in_width) continue;
                const float xv = x[b * g.in_size() +
                                   (std::int64_t{ic} * g.in_height + iy) * g.in_width + ix];
                const float wv =
                    weight[((std::int64_t{oc} * g.in_channels + ic) * g.kernel + ky) * g.kernel +
                           kx];
                acc += static_cast<double>(xv) * wv;
              }
            }
          }
          y[b * g.out_size() + (std::int64_t{oc} * oh + oy) * ow + ox] = static_cast<float>(acc);
        }
      }
    }
  }
}

void conv2d_backward(const ConvGeometry& g, int batch, std::span<const float> x,
                     std::span<const float> weight, std::span<const float> dy,
                     std::span<float> dx, std::span<float> dweight) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  std::fill(dx.begin(), dx.end(), 0.0f);
  for (int b = 0; b < batch; ++b) {
    for (int oc = 0; oc < g.out_channels; ++oc) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const float go = dy[b * g.out_size() + (std::int64_t{oc} * oh + oy) * ow + ox];
          for (int ic = 0; ic < g.in_channels; ++ic) {
            for (int ky = 0; ky < g.kernel; ++ky) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.in_height) continue;
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix < 0 || ix >= g.in_width) continue;
                const std::int64_t xi =
                    b * g.in_size() + (std::int64_t{ic} * g.in_height + iy) * g.in_width + ix;
                const std::int64_t wi =
                    ((std::int64_t{oc} * g.in_channels + ic) * g.kernel + ky) * g.kernel + kx;
                dweight[wi] += go * x[xi];
                dx[xi] += go * weight[wi];
              }
            }
          }
        }
      }
    }
  }
}

void maxpool_forward(const PoolGeometry& g, int batch, std::span<const float> x,
                     std::span<float> y, std::span<std::int32_t> argmax) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  for (int p = 0; p < batch * g.channels; ++p) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t best_at = -1;
        for (int ky = 0; ky < g.kernel; ++ky) {
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int iy = oy * g.stride - g.pad + ky;
            const int ix = ox * g.stride - g.pad + kx;
            if (iy < 0 || iy >= g.in_height || ix < 0 || ix >= g.in_width) continue;
            const float v = x[std::int64_t{p} * g.in_height * g.in_width + iy * g.in_width + ix];
            if (best_at < 0 || v > best) {
              best = v;
              best_at = iy * g.in_width + ix;
            }
          }
        }
        y[std::int64_t{p} * oh * ow + oy * ow + ox] = best;
        argmax[std::int64_t{p} * oh * ow + oy * ow + ox] = best_at;
      }
    }
  }
}

void batchnorm_forward_train(int batch, int channels, int spatial, float eps,
                             std::span<const float> x, std::span<const float> gamma,
                             std::span<const float> beta, std::span<float> y,
                             std::span<float> mean, std::span<float> inv_std) {
  for (int c = 0; c < channels; ++c) {
    std::vector<double> values;
    for (int b = 0; b < batch; ++b)
      for (int s = 0; s < spatial; ++s)
        values.push_back(x[(std::int64_t{b} * channels + c) * spatial + s]);
    double mu = 0.0;
    for (double v : values) mu += v;
    mu /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mu) * (v - mu);
    var /= static_cast<double>(values.size());
    mean[c] = static_cast<float>(mu);
    inv_std[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
    for (int b = 0; b < batch; ++b) {
      for (int s = 0; s < spatial; ++s) {
        const std::int64_t i = (std::int64_t{b} * channels + c) * spatial + s;
        y[i] = static_cast<float>(gamma[c] * (x[i] - mu) / std::sqrt(var + eps) + beta[c]);
      }
    }
  }
}

void pairwise_sq_distances(std::span<const double> a, int n, std::span<const double> b, int m,
                           int d, std::span<double> out) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int t = 0; t < d; ++t) {
        const double diff = a[std::int64_t{i} * d + t] - b[std::int64_t{j} * d + t];
        acc += diff * diff;
      }
      out[std::int64_t{i} * m + j] = acc;
    }
  }
}

}  // namespace reference
}  // namespace catreid::kernels
