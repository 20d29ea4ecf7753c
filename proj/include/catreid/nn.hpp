#pragma once

// Minimal layer library: tensors, parameters, and the layers needed to build
// residual-network backbones with hand-written backward passes.

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace catreid::nn {

struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, float fill = 0.0f);

  std::int64_t numel() const;
  int dim(std::size_t i) const { return shape.at(i); }
  /// Elements per leading index (e.g. C*H*W for NCHW).
  std::int64_t row_size() const;
  std::span<float> span() { return data; }
  std::span<const float> span() const { return data; }
  std::span<float> row(int i) { return span().subspan(i * row_size(), row_size()); }
  std::span<const float> row(int i) const { return span().subspan(i * row_size(), row_size()); }
};

/// Whether a module allocates its weights or only records their shapes
/// (used to count parameters of configurations too large to materialise).
enum class Allocation { full, shape_only };

struct Parameter {
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;
  /// Running statistics are stored as non-trainable buffers.
  bool trainable = true;

  std::int64_t numel() const;
  bool allocated() const { return !value.empty() || numel() == 0; }
};

using NamedParameters = std::vector<std::pair<std::string, Parameter*>>;

/// Weight-initialisation context shared across a model build.
struct InitContext {
  Allocation allocation = Allocation::full;
  std::mt19937_64 rng{0};  // consumed through catreid/random.hpp helpers
};

class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  /// Propagates the gradient of the last forward call; accumulates into
  /// parameter gradients.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect(const std::string& prefix, NamedParameters& out) = 0;
  virtual void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

 protected:
  bool training_ = true;
};

class Conv2d final : public Module {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, InitContext& init);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, NamedParameters& out) override;

 private:
  int in_channels_, out_channels_, kernel_, stride_, pad_;
  Parameter weight_;
  Tensor input_;
};

class BatchNorm2d final : public Module {
 public:
  BatchNorm2d(int channels, InitContext& init, float eps = 1e-5f, float momentum = 0.1f);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, NamedParameters& out) override;

 private:
  int channels_;
  float eps_, momentum_;
  Parameter gamma_, beta_, running_mean_, running_var_;
  Tensor input_;
  std::vector<float> batch_mean_, batch_inv_std_;
};

class ReLU final : public Module {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string&, NamedParameters&) override {}

 private:
  std::vector<std::uint8_t> mask_;
};

class MaxPool2d final : public Module {
 public:
  MaxPool2d(int kernel, int stride, int pad) : kernel_(kernel), stride_(stride), pad_(pad) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string&, NamedParameters&) override {}

 private:
  int kernel_, stride_, pad_;
  std::vector<int> input_shape_;
  std::vector<std::int32_t> argmax_;
};

/// (B, C, H, W) -> (B, C).
class GlobalAvgPool final : public Module {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string&, NamedParameters&) override {}

 private:
  std::vector<int> input_shape_;
};

/// (B, in) -> (B, out), y = x W^T + b.
class Linear final : public Module {
 public:
  Linear(int in_features, int out_features, bool bias, InitContext& init);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, NamedParameters& out) override;

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Parameter& weight() { return weight_; }

 private:
  int in_, out_;
  bool has_bias_;
  Parameter weight_, bias_;
  Tensor input_;
};

class Sequential final : public Module {
 public:
  void add(std::string name, std::unique_ptr<Module> module);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, NamedParameters& out) override;
  void set_training(bool training) override;
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> layers_;
};

/// Residual block: relu(body(x) + shortcut(x)); shortcut is identity unless
/// the shape changes, in which case it is conv1x1 + batch norm.
class ResidualBlock final : public Module {
 public:
  enum class Kind { basic, bottleneck };
  static constexpr int kBottleneckExpansion = 4;

  ResidualBlock(Kind kind, int in_channels, int width, int stride, InitContext& init);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, NamedParameters& out) override;
  void set_training(bool training) override;
  int out_channels() const { return out_channels_; }

 private:
  int out_channels_;
  Sequential body_;
  Sequential shortcut_;
  ReLU relu_;
};

/// Architecture of a residual backbone ending in global average pooling.
struct BackboneSpec {
  std::string name;
  ResidualBlock::Kind block = ResidualBlock::Kind::basic;
  int stem_channels = 64;
  int stem_kernel = 7;
  int stem_stride = 2;
  bool stem_maxpool = true;
  std::vector<int> widths;
  std::vector<int> blocks;

  int feature_dim() const;
  /// Accepts "resnet18", "resnet34", "resnet50", "resnet101", "resnet152",
  /// or a compact form "basic:16,32,64:1,1,1" / "bottleneck:...", which uses a
  /// stride-2 3x3 stem without max pooling.
  static BackboneSpec parse(const std::string& text);
  std::string to_string() const;
};

class Backbone final : public Module {
 public:
  Backbone(const BackboneSpec& spec, InitContext& init);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect(const std::string& prefix, NamedParameters& out) override;
  void set_training(bool training) override;
  int feature_dim() const { return spec_.feature_dim(); }
  const BackboneSpec& spec() const { return spec_; }

 private:
  BackboneSpec spec_;
  Sequential layers_;
};

std::int64_t count_parameters(const NamedParameters& params, bool trainable_only = true);

}  // namespace catreid::nn
