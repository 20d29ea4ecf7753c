#include "catreid/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "catreid/error.hpp"
#include "catreid/kernels.hpp"
#include "catreid/random.hpp"

namespace catreid::nn {
namespace {

void ensure_grad(Parameter& p) {
  if (p.grad.size() != p.value.size()) p.grad.assign(p.value.size(), 0.0f);
}

Parameter make_parameter(std::vector<int> shape, bool trainable, const InitContext& init) {
  Parameter p;
  p.shape = std::move(shape);
  p.trainable = trainable;
  if (init.allocation == Allocation::full) p.value.assign(p.numel(), 0.0f);
  return p;
}

void require_rank(const Tensor& x, std::size_t rank, const char* layer) {
  if (x.shape.size() != rank) {
    throw Error(ErrorKind::model, std::string(layer) + ": expected rank-" +
                                      std::to_string(rank) + " input");
  }
}

std::vector<int> split_ints(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

Tensor::Tensor(std::vector<int> dims, float fill) : shape(std::move(dims)) {
  data.assign(numel(), fill);
}

std::int64_t Tensor::numel() const {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         [](std::int64_t a, int b) { return a * b; });
}

std::int64_t Tensor::row_size() const {
  if (shape.empty() || shape[0] == 0) return 0;
  return numel() / shape[0];
}

std::int64_t Parameter::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         [](std::int64_t a, int b) { return a * b; });
}

// Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad,
               InitContext& init)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      weight_(make_parameter({out_channels, in_channels, kernel, kernel}, true, init)) {
  if (init.allocation == Allocation::full) {
    // He-normal, fan-out mode.
    const double std_dev = std::sqrt(2.0 / (out_channels * kernel * kernel));
    for (float& w : weight_.value) w = static_cast<float>(std_dev * normal(init.rng));
  }
}

Tensor Conv2d::forward(const Tensor& x) {
  require_rank(x, 4, "conv2d");
  if (x.dim(1) != in_channels_) throw Error(ErrorKind::model, "conv2d: channel mismatch");
  const kernels::ConvGeometry g{in_channels_, x.dim(2), x.dim(3), out_channels_,
                                kernel_,      stride_,  pad_};
  Tensor y({x.dim(0), out_channels_, g.out_height(), g.out_width()});
  kernels::conv2d_forward(g, x.dim(0), x.span(), weight_.value, y.span());
  if (training_) input_ = x;
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const kernels::ConvGeometry g{in_channels_, x.dim(2), x.dim(3), out_channels_,
                                kernel_,      stride_,  pad_};
  ensure_grad(weight_);
  Tensor dx(x.shape);
  kernels::conv2d_backward(g, x.dim(0), x.span(), weight_.value, grad_out.span(), dx.span(),
                           weight_.grad);
  return dx;
}

void Conv2d::collect(const std::string& prefix, NamedParameters& out) {
  out.emplace_back(prefix + "weight", &weight_);
}

// BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, InitContext& init, float eps, float momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gamma_(make_parameter({channels}, true, init)),
      beta_(make_parameter({channels}, true, init)),
      running_mean_(make_parameter({channels}, false, init)),
      running_var_(make_parameter({channels}, false, init)) {
  if (init.allocation == Allocation::full) {
    std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0f);
    std::fill(running_var_.value.begin(), running_var_.value.end(), 1.0f);
  }
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  require_rank(x, 4, "batchnorm");
  const int batch = x.dim(0);
  const int spatial = x.dim(2) * x.dim(3);
  Tensor y(x.shape);
  if (!training_) {
    kernels::batchnorm_forward_eval(batch, channels_, spatial, eps_, x.span(), gamma_.value,
                                    beta_.value, running_mean_.value, running_var_.value,
                                    y.span());
    return y;
  }
  batch_mean_.assign(channels_, 0.0f);
  batch_inv_std_.assign(channels_, 0.0f);
  kernels::batchnorm_forward_train(batch, channels_, spatial, eps_, x.span(), gamma_.value,
                                   beta_.value, y.span(), batch_mean_, batch_inv_std_);
  const double count = static_cast<double>(batch) * spatial;
  const double unbias = count > 1 ? count / (count - 1) : 1.0;
  for (int c = 0; c < channels_; ++c) {
    const double var = 1.0 / (static_cast<double>(batch_inv_std_[c]) * batch_inv_std_[c]) - eps_;
    running_mean_.value[c] = (1 - momentum_) * running_mean_.value[c] + momentum_ * batch_mean_[c];
    running_var_.value[c] = static_cast<float>((1 - momentum_) * running_var_.value[c] +
                                               momentum_ * std::max(0.0, var) * unbias);
  }
  input_ = x;
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  ensure_grad(gamma_);
  ensure_grad(beta_);
  Tensor dx(x.shape);
  kernels::batchnorm_backward(x.dim(0), channels_, x.dim(2) * x.dim(3), x.span(), gamma_.value,
                              batch_mean_, batch_inv_std_, grad_out.span(), dx.span(),
                              gamma_.grad, beta_.grad);
  return dx;
}

void BatchNorm2d::collect(const std::string& prefix, NamedParameters& out) {
  out.emplace_back(prefix + "weight", &gamma_);
  out.emplace_back(prefix + "bias", &beta_);
  out.emplace_back(prefix + "running_mean", &running_mean_);
  out.emplace_back(prefix + "running_var", &running_var_);
}

// ReLU

Tensor ReLU::forward(const Tensor& x) {
  Tensor y(x.shape);
  if (training_) mask_.resize(x.data.size());
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const bool on = x.data[i] > 0.0f;
    y.data[i] = on ? x.data[i] : 0.0f;
    if (training_) mask_[i] = on;
  }
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor dx(grad_out.shape);
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] = mask_[i] ? grad_out.data[i] : 0.0f;
  return dx;
}

// MaxPool2d

Tensor MaxPool2d::forward(const Tensor& x) {
  require_rank(x, 4, "maxpool");
  const kernels::PoolGeometry g{x.dim(1), x.dim(2), x.dim(3), kernel_, stride_, pad_};
  Tensor y({x.dim(0), x.dim(1), g.out_height(), g.out_width()});
  if (!training_) {
    // Eval-mode forward must not touch members so frozen models can be shared.
    std::vector<std::int32_t> argmax(y.data.size());
    kernels::maxpool_forward(g, x.dim(0), x.span(), y.span(), argmax);
    return y;
  }
  argmax_.resize(y.data.size());
  kernels::maxpool_forward(g, x.dim(0), x.span(), y.span(), argmax_);
  input_shape_ = x.shape;
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  const kernels::PoolGeometry g{input_shape_[1], input_shape_[2], input_shape_[3],
                                kernel_,         stride_,         pad_};
  Tensor dx(input_shape_);
  kernels::maxpool_backward(g, input_shape_[0], grad_out.span(), argmax_, dx.span());
  return dx;
}

// GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x) {
  require_rank(x, 4, "avgpool");
  Tensor y({x.dim(0), x.dim(1)});
  kernels::global_avgpool_forward(x.dim(0), x.dim(1), x.dim(2) * x.dim(3), x.span(), y.span());
  if (training_) input_shape_ = x.shape;
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx(input_shape_);
  kernels::global_avgpool_backward(input_shape_[0], input_shape_[1],
                                   input_shape_[2] * input_shape_[3], grad_out.span(),
                                   dx.span());
  return dx;
}

// Linear

Linear::Linear(int in_features, int out_features, bool bias, InitContext& init)
    : in_(in_features),
      out_(out_features),
      has_bias_(bias),
      weight_(make_parameter({out_features, in_features}, true, init)),
      bias_(make_parameter({bias ? out_features : 0}, true, init)) {
  if (init.allocation == Allocation::full) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_features));
    for (float& w : weight_.value) w = static_cast<float>(uniform(init.rng, -bound, bound));
    for (float& b : bias_.value) b = static_cast<float>(uniform(init.rng, -bound, bound));
  }
}

Tensor Linear::forward(const Tensor& x) {
  require_rank(x, 2, "linear");
  if (x.dim(1) != in_) throw Error(ErrorKind::model, "linear: feature size mismatch");
  const int batch = x.dim(0);
  Tensor y({batch, out_});
  kernels::gemm(false, true, batch, out_, in_, 1.0f, x.span(), in_, weight_.value, in_, 0.0f,
                y.span(), out_);
  if (has_bias_) {
    for (int b = 0; b < batch; ++b)
      for (int o = 0; o < out_; ++o) y.data[std::size_t(b) * out_ + o] += bias_.value[o];
  }
  if (training_) input_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  const int batch = input_.dim(0);
  ensure_grad(weight_);
  kernels::gemm(true, false, out_, in_, batch, 1.0f, grad_out.span(), out_, input_.span(), in_,
                1.0f, weight_.grad, in_);
  if (has_bias_) {
    ensure_grad(bias_);
    for (int b = 0; b < batch; ++b)
      for (int o = 0; o < out_; ++o) bias_.grad[o] += grad_out.data[std::size_t(b) * out_ + o];
  }
  Tensor dx({batch, in_});
  kernels::gemm(false, false, batch, in_, out_, 1.0f, grad_out.span(), out_, weight_.value, in_,
                0.0f, dx.span(), in_);
  return dx;
}

void Linear::collect(const std::string& prefix, NamedParameters& out) {
  out.emplace_back(prefix + "weight", &weight_);
  if (has_bias_) out.emplace_back(prefix + "bias", &bias_);
}

// Sequential

void Sequential::add(std::string name, std::unique_ptr<Module> module) {
  module->set_training(training_);
  layers_.emplace_back(std::move(name), std::move(module));
}

Tensor Sequential::forward(const Tensor& x) {
  Tensor out = x;
  for (auto& [name, layer] : layers_) out = layer->forward(out);
  return out;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor grad = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) grad = it->second->backward(grad);
  return grad;
}

void Sequential::collect(const std::string& prefix, NamedParameters& out) {
  for (auto& [name, layer] : layers_) layer->collect(prefix + name + ".", out);
}

void Sequential::set_training(bool training) {
  training_ = training;
  for (auto& [name, layer] : layers_) layer->set_training(training);
}

// ResidualBlock

ResidualBlock::ResidualBlock(Kind kind, int in_channels, int width, int stride,
                             InitContext& init) {
  if (kind == Kind::basic) {
    out_channels_ = width;
    body_.add("conv1", std::make_unique<Conv2d>(in_channels, width, 3, stride, 1, init));
    body_.add("bn1", std::make_unique<BatchNorm2d>(width, init));
    body_.add("relu1", std::make_unique<ReLU>());
    body_.add("conv2", std::make_unique<Conv2d>(width, width, 3, 1, 1, init));
    body_.add("bn2", std::make_unique<BatchNorm2d>(width, init));
  } else {
    out_channels_ = width * kBottleneckExpansion;
    body_.add("conv1", std::make_unique<Conv2d>(in_channels, width, 1, 1, 0, init));
    body_.add("bn1", std::make_unique<BatchNorm2d>(width, init));
    body_.add("relu1", std::make_unique<ReLU>());
    body_.add("conv2", std::make_unique<Conv2d>(width, width, 3, stride, 1, init));
    body_.add("bn2", std::make_unique<BatchNorm2d>(width, init));
    body_.add("relu2", std::make_unique<ReLU>());
    body_.add("conv3", std::make_unique<Conv2d>(width, out_channels_, 1, 1, 0, init));
    body_.add("bn3", std::make_unique<BatchNorm2d>(out_channels_, init));
  }
  if (stride != 1 || in_channels != out_channels_) {
    shortcut_.add("0", std::make_unique<Conv2d>(in_channels, out_channels_, 1, stride, 0, init));
    shortcut_.add("1", std::make_unique<BatchNorm2d>(out_channels_, init));
  }
}

Tensor ResidualBlock::forward(const Tensor& x) {
  Tensor y = body_.forward(x);
  if (shortcut_.empty()) {
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
  } else {
    const Tensor s = shortcut_.forward(x);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += s.data[i];
  }
  return relu_.forward(y);
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
  const Tensor g = relu_.backward(grad_out);
  Tensor dx = body_.backward(g);
  if (shortcut_.empty()) {
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += g.data[i];
  } else {
    const Tensor ds = shortcut_.backward(g);
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += ds.data[i];
  }
  return dx;
}

void ResidualBlock::collect(const std::string& prefix, NamedParameters& out) {
  body_.collect(prefix, out);
  shortcut_.collect(prefix + "downsample.", out);
}

void ResidualBlock::set_training(bool training) {
  training_ = training;
  body_.set_training(training);
  shortcut_.set_training(training);
  relu_.set_training(training);
}

// Backbone

int BackboneSpec::feature_dim() const {
  const int last = widths.empty() ? stem_channels : widths.back();
  return block == ResidualBlock::Kind::bottleneck ? last * ResidualBlock::kBottleneckExpansion
                                                  : last;
}

BackboneSpec BackboneSpec::parse(const std::string& text) {
  BackboneSpec spec;
  spec.name = text;
  const std::vector<int> standard_widths{64, 128, 256, 512};
  if (text == "resnet18" || text == "resnet34") {
    spec.block = ResidualBlock::Kind::basic;
    spec.widths = standard_widths;
    spec.blocks = text == "resnet18" ? std::vector<int>{2, 2, 2, 2} : std::vector<int>{3, 4, 6, 3};
    return spec;
  }
  if (text == "resnet50" || text == "resnet101" || text == "resnet152") {
    spec.block = ResidualBlock::Kind::bottleneck;
    spec.widths = standard_widths;
    if (text == "resnet50") spec.blocks = {3, 4, 6, 3};
    if (text == "resnet101") spec.blocks = {3, 4, 23, 3};
    if (text == "resnet152") spec.blocks = {3, 8, 36, 3};
    return spec;
  }
  const auto first = text.find(':');
  const auto second = text.find(':', first == std::string::npos ? 0 : first + 1);
  if (first == std::string::npos || second == std::string::npos) {
    throw Error(ErrorKind::config, "unknown backbone '" + text + "'");
  }
  const std::string kind = text.substr(0, first);
  if (kind == "basic") {
    spec.block = ResidualBlock::Kind::basic;
  } else if (kind == "bottleneck") {
    spec.block = ResidualBlock::Kind::bottleneck;
  } else {
    throw Error(ErrorKind::config, "unknown block kind '" + kind + "'");
  }
  try {
    spec.widths = split_ints(text.substr(first + 1, second - first - 1));
    spec.blocks = split_ints(text.substr(second + 1));
  } catch (const std::exception&) {
    throw Error(ErrorKind::config, "malformed backbone '" + text + "'");
  }
  if (spec.widths.empty() || spec.widths.size() != spec.blocks.size() ||
      std::ranges::any_of(spec.widths, [](int w) { return w <= 0; }) ||
      std::ranges::any_of(spec.blocks, [](int b) { return b <= 0; })) {
    throw Error(ErrorKind::config, "malformed backbone '" + text + "'");
  }
  spec.stem_channels = spec.widths.front();
  spec.stem_kernel = 3;
  spec.stem_stride = 2;
  spec.stem_maxpool = false;
  return spec;
}

std::string BackboneSpec::to_string() const { return name; }

Backbone::Backbone(const BackboneSpec& spec, InitContext& init) : spec_(spec) {
  layers_.add("conv1", std::make_unique<Conv2d>(3, spec.stem_channels, spec.stem_kernel,
                                                spec.stem_stride, spec.stem_kernel / 2, init));
  layers_.add("bn1", std::make_unique<BatchNorm2d>(spec.stem_channels, init));
  layers_.add("relu", std::make_unique<ReLU>());
  if (spec.stem_maxpool) layers_.add("maxpool", std::make_unique<MaxPool2d>(3, 2, 1));
  int channels = spec.stem_channels;
  for (std::size_t stage = 0; stage < spec.widths.size(); ++stage) {
    for (int b = 0; b < spec.blocks[stage]; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      auto block = std::make_unique<ResidualBlock>(spec.block, channels, spec.widths[stage],
                                                   stride, init);
      channels = block->out_channels();
      layers_.add("layer" + std::to_string(stage + 1) + "." + std::to_string(b),
                  std::move(block));
    }
  }
  layers_.add("avgpool", std::make_unique<GlobalAvgPool>());
}

Tensor Backbone::forward(const Tensor& x) { return layers_.forward(x); }
Tensor Backbone::backward(const Tensor& grad_out) { return layers_.backward(grad_out); }
void Backbone::collect(const std::string& prefix, NamedParameters& out) {
  layers_.collect(prefix, out);
}
void Backbone::set_training(bool training) {
  training_ = training;
  layers_.set_training(training);
}

std::int64_t count_parameters(const NamedParameters& params, bool trainable_only) {
  std::int64_t total = 0;
  for (const auto& [name, p] : params) {
    if (!trainable_only || p->trainable) total += p->numel();
  }
  return total;
}

}  // namespace catreid::nn
