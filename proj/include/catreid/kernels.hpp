#pragma once

// Dense numeric kernels behind the network layers.
//
// Every kernel in `catreid::kernels` has an OpenMP-parallel implementation.
// `catreid::kernels::reference` holds straightforward serial versions that the
// tests compare against and the benchmark times side by side. Layouts are
// row-major; image tensors are NCHW.

#include <cstdint>
#include <span>
#include <vector>

namespace catreid::kernels {

/// Geometry of a square-kernel 2-D convolution over one image.
struct ConvGeometry {
  int in_channels = 0;
  int in_height = 0;
  int in_width = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  int out_height() const { return (in_height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (in_width + 2 * pad - kernel) / stride + 1; }
  std::int64_t in_size() const { return std::int64_t{in_channels} * in_height * in_width; }
  std::int64_t out_size() const {
    return std::int64_t{out_channels} * out_height() * out_width();
  }
  std::int64_t patch_size() const { return std::int64_t{in_channels} * kernel * kernel; }
  std::int64_t weight_size() const { return std::int64_t{out_channels} * patch_size(); }
};

struct PoolGeometry {
  int channels = 0;
  int in_height = 0;
  int in_width = 0;
  int kernel = 2;
  int stride = 2;
  int pad = 0;

  int out_height() const { return (in_height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (in_width + 2 * pad - kernel) / stride + 1; }
};

/// C = alpha * op(A) * op(B) + beta * C with op(A): m x k, op(B): k x n.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          std::span<const float> a, int lda, std::span<const float> b, int ldb, float beta,
          std::span<float> c, int ldc);

void im2col(const ConvGeometry& g, std::span<const float> image, std::span<float> columns);
/// Accumulates columns back into `image` (which is not cleared).
void col2im(const ConvGeometry& g, std::span<const float> columns, std::span<float> image);

/// y[b] = W * im2col(x[b]) for every image of the batch. No bias.
void conv2d_forward(const ConvGeometry& g, int batch, std::span<const float> x,
                    std::span<const float> weight, std::span<float> y);
/// Writes dx (overwritten) and accumulates dweight.
void conv2d_backward(const ConvGeometry& g, int batch, std::span<const float> x,
                     std::span<const float> weight, std::span<const float> dy,
                     std::span<float> dx, std::span<float> dweight);

/// Max pooling; `argmax` receives the flat input offset (within the image) chosen per output.
void maxpool_forward(const PoolGeometry& g, int batch, std::span<const float> x,
                     std::span<float> y, std::span<std::int32_t> argmax);
void maxpool_backward(const PoolGeometry& g, int batch, std::span<const float> dy,
                      std::span<const std::int32_t> argmax, std::span<float> dx);

/// Per-channel spatial mean: (B, C, H*W) -> (B, C).
void global_avgpool_forward(int batch, int channels, int spatial, std::span<const float> x,
                            std::span<float> y);
void global_avgpool_backward(int batch, int channels, int spatial, std::span<const float> dy,
                             std::span<float> dx);

/// Training-mode batch norm over (B, C, S). Writes per-channel batch mean and
/// inverse std into `mean` / `inv_std` for the backward pass.
void batchnorm_forward_train(int batch, int channels, int spatial, float eps,
                             std::span<const float> x, std::span<const float> gamma,
                             std::span<const float> beta, std::span<float> y,
                             std::span<float> mean, std::span<float> inv_std);
void batchnorm_forward_eval(int batch, int channels, int spatial, float eps,
                            std::span<const float> x, std::span<const float> gamma,
                            std::span<const float> beta, std::span<const float> running_mean,
                            std::span<const float> running_var, std::span<float> y);
/// Accumulates dgamma/dbeta and overwrites dx.
void batchnorm_backward(int batch, int channels, int spatial, std::span<const float> x,
                        std::span<const float> gamma, std::span<const float> mean,
                        std::span<const float> inv_std, std::span<const float> dy,
                        std::span<float> dx, std::span<float> dgamma, std::span<float> dbeta);

/// Squared Euclidean distances between rows of a (n x d) and rows of b (m x d).
void pairwise_sq_distances(std::span<const double> a, int n, std::span<const double> b, int m,
                           int d, std::span<double> out);

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          std::span<const float> a, int lda, std::span<const float> b, int ldb, float beta,
          std::span<float> c, int ldc);

/// Direct 7-loop convolution, no im2col.
void conv2d_forward(const ConvGeometry& g, int batch, std::span<const float> x,
                    std::span<const float> weight, std::span<float> y);
void conv2d_backward(const ConvGeometry& g, int batch, std::span<const float> x,
                     std::span<const float> weight, std::span<const float> dy,
                     std::span<float> dx, std::span<float> dweight);

void maxpool_forward(const PoolGeometry& g, int batch, std::span<const float> x,
                     std::span<float> y, std::span<std::int32_t> argmax);

void batchnorm_forward_train(int batch, int channels, int spatial, float eps,
                             std::span<const float> x, std::span<const float> gamma,
                             std::span<const float> beta, std::span<float> y,
                             std::span<float> mean, std::span<float> inv_std);

void pairwise_sq_distances(std::span<const double> a, int n, std::span<const double> b, int m,
                           int d, std::span<double> out);

}  // namespace reference
}  // namespace catreid::kernels
