#include "catreid/network.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "catreid/checkpoint.hpp"
#include "catreid/error.hpp"
#include "catreid/random.hpp"

namespace catreid::model {
namespace {

constexpr std::array<float, 3> kPixelMean{0.485f, 0.456f, 0.406f};
constexpr std::array<float, 3> kPixelStd{0.229f, 0.224f, 0.225f};

int limb_stream_index(Part part) {
  const auto it = std::ranges::find(geometry::kLimbStreamParts, part);
  if (it == geometry::kLimbStreamParts.end()) {
    throw Error(ErrorKind::model, "not a limb-stream part: " + geometry::to_string(part));
  }
  return static_cast<int>(it - geometry::kLimbStreamParts.begin());
}

void check_images(const nn::Tensor& t, ImageSize size, const std::string& what) {
  if (t.shape.size() != 4 || t.dim(1) != 3 || t.dim(2) != size.height || t.dim(3) != size.width) {
    throw Error(ErrorKind::model, what + ": expected (B, 3, " + std::to_string(size.height) +
                                      ", " + std::to_string(size.width) + ") input");
  }
}

void check_samples(const PartInputs& in, int batch, const std::string& what) {
  const int rows = in.images.shape.empty() ? 0 : in.images.dim(0);
  if (static_cast<int>(in.samples.size()) != rows) {
    throw Error(ErrorKind::model, what + ": sample list does not match image count");
  }
  for (std::size_t i = 0; i < in.samples.size(); ++i) {
    if (in.samples[i] < 0 || in.samples[i] >= batch ||
        (i > 0 && in.samples[i] <= in.samples[i - 1])) {
      throw Error(ErrorKind::model, what + ": sample indices must be increasing and in range");
    }
  }
}

nn::Tensor concat_rows(const std::vector<const nn::Tensor*>& parts) {
  std::vector<int> shape;
  int rows = 0;
  for (const nn::Tensor* t : parts) {
    if (t->shape.empty() || t->dim(0) == 0) continue;
    if (shape.empty()) shape = t->shape;
    rows += t->dim(0);
  }
  if (shape.empty()) return {};
  shape[0] = rows;
  nn::Tensor out(shape);
  std::size_t offset = 0;
  for (const nn::Tensor* t : parts) {
    std::copy(t->data.begin(), t->data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += t->data.size();
  }
  return out;
}

nn::Tensor slice_rows(const nn::Tensor& t, int begin, int count) {
  std::vector<int> shape = t.shape;
  shape[0] = count;
  nn::Tensor out(shape);
  const auto row = t.row_size();
  std::copy(t.data.begin() + begin * row, t.data.begin() + (begin + count) * row, out.data.begin());
  return out;
}

}  // namespace

std::string to_string(PartialSharing sharing) {
  switch (sharing) {
    case PartialSharing::shared: return "shared";
    case PartialSharing::per_limb: return "per_limb";
    case PartialSharing::per_part: return "per_part";
  }
  return "unknown";
}

PartialSharing parse_sharing(const std::string& text) {
  if (text == "shared") return PartialSharing::shared;
  if (text == "per_limb") return PartialSharing::per_limb;
  if (text == "per_part") return PartialSharing::per_part;
  throw Error(ErrorKind::config, "unknown partial sharing '" + text + "'");
}

void StreamConfig::validate() const {
  if (limb_embed_dim <= 0 || tail_embed_dim <= 0 || embed_dim <= 0) {
    throw Error(ErrorKind::config, "embedding sizes must be positive");
  }
  if (4 * limb_embed_dim + 2 * tail_embed_dim != embed_dim) {
    throw Error(ErrorKind::config, "embed_dim must equal 4*limb_embed_dim + 2*tail_embed_dim");
  }
  if (2 * tail_embed_dim != limb_embed_dim) {
    throw Error(ErrorKind::config, "tail_embed_dim must be half of limb_embed_dim");
  }
  if (num_entities < 1) throw Error(ErrorKind::config, "num_entities must be >= 1");
  for (auto s : {full_image, trunk_image, limb_image}) {
    if (s.width <= 0 || s.height <= 0) throw Error(ErrorKind::config, "input sizes must be positive");
  }
  (void)nn::BackboneSpec::parse(full_backbone);
  (void)nn::BackboneSpec::parse(partial_backbone);
}

int StreamConfig::block_dim(Part part) const {
  if (part == Part::trunk) return embed_dim;
  if (part == Part::tail_proximal || part == Part::tail_distal) return tail_embed_dim;
  return limb_embed_dim;
}

int StreamConfig::block_offset(Part part) const {
  const int index = limb_stream_index(part);
  return index < 4 ? index * limb_embed_dim : 4 * limb_embed_dim + (index - 4) * tail_embed_dim;
}

StreamConfig StreamConfig::reference(int num_entities) {
  StreamConfig c;
  c.num_entities = num_entities;
  return c;
}

StreamConfig StreamConfig::small(int num_entities) {
  StreamConfig c;
  c.full_backbone = "basic:16,32,64,128:1,1,1,1";
  c.partial_backbone = "basic:16,32,64:1,1,1";
  c.limb_embed_dim = 32;
  c.tail_embed_dim = 16;
  c.embed_dim = 160;
  c.num_entities = num_entities;
  c.full_image = {64, 64};
  c.trunk_image = {64, 32};
  c.limb_image = {32, 32};
  return c;
}

nlohmann::json to_json(const StreamConfig& c) {
  return {{"full_backbone", c.full_backbone},
          {"partial_backbone", c.partial_backbone},
          {"embed_dim", c.embed_dim},
          {"limb_embed_dim", c.limb_embed_dim},
          {"tail_embed_dim", c.tail_embed_dim},
          {"num_entities", c.num_entities},
          {"sharing", to_string(c.sharing)},
          {"full_image", {c.full_image.width, c.full_image.height}},
          {"trunk_image", {c.trunk_image.width, c.trunk_image.height}},
          {"limb_image", {c.limb_image.width, c.limb_image.height}}};
}

StreamConfig stream_config_from_json(const nlohmann::json& doc) {
  StreamConfig c;
  try {
    c.full_backbone = doc.at("full_backbone").get<std::string>();
    c.partial_backbone = doc.at("partial_backbone").get<std::string>();
    c.embed_dim = doc.at("embed_dim").get<int>();
    c.limb_embed_dim = doc.at("limb_embed_dim").get<int>();
    c.tail_embed_dim = doc.at("tail_embed_dim").get<int>();
    c.num_entities = doc.at("num_entities").get<int>();
    c.sharing = parse_sharing(doc.at("sharing").get<std::string>());
    auto size = [&](const char* key) {
      return ImageSize{doc.at(key).at(0).get<int>(), doc.at(key).at(1).get<int>()};
    };
    c.full_image = size("full_image");
    c.trunk_image = size("trunk_image");
    c.limb_image = size("limb_image");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::model, std::string("malformed stream config: ") + e.what());
  }
  c.validate();
  return c;
}

nn::Tensor images_to_tensor(std::span<const cv::Mat> images, ImageSize expected) {
  const int n = static_cast<int>(images.size());
  for (const cv::Mat& m : images) {
    if (m.cols != expected.width || m.rows != expected.height) {
      throw Error(ErrorKind::model, "image of " + std::to_string(m.cols) + "x" +
                                        std::to_string(m.rows) + " does not match input size " +
                                        std::to_string(expected.width) + "x" +
                                        std::to_string(expected.height));
    }
    if (m.channels() != 3 && m.channels() != 1) {
      throw Error(ErrorKind::model, "images must have 1 or 3 channels");
    }
  }
  nn::Tensor t({n, 3, expected.height, expected.width});
  const std::int64_t plane = std::int64_t{expected.height} * expected.width;
  for (int b = 0; b < n; ++b) {
    cv::Mat f;
    const double scale = (images[b].depth() == CV_8U) ? 1.0 / 255.0 : 1.0;
    images[b].convertTo(f, CV_32F, scale);
    if (f.channels() == 1) cv::cvtColor(f, f, cv::COLOR_GRAY2BGR);
    float* dst = t.data.data() + b * 3 * plane;
    for (int y = 0; y < f.rows; ++y) {
      const auto* row = f.ptr<cv::Vec3f>(y);
      for (int x = 0; x < f.cols; ++x) {
        for (int c = 0; c < 3; ++c) {
          // BGR storage -> RGB planes.
          const float v = row[x][2 - c];
          dst[c * plane + std::int64_t{y} * f.cols + x] = (v - kPixelMean[c]) / kPixelStd[c];
        }
      }
    }
  }
  return t;
}

EmbeddingSet embedding_set(const EmbeddingBatch& batch, int index) {
  auto row = [&](const nn::Tensor& t) {
    auto r = t.row(index);
    return std::vector<float>(r.begin(), r.end());
  };
  return {row(batch.d_full), row(batch.d_trunk), row(batch.d_limbs),
          row(batch.z_ft),   row(batch.z_fl),    batch.validity.at(index)};
}

// FullStream

FullStream::FullStream(const StreamConfig& config, nn::InitContext& init)
    : backbone_(nn::BackboneSpec::parse(config.full_backbone), init),
      proj_(backbone_.feature_dim(), config.embed_dim, true, init) {}

nn::Tensor FullStream::forward(const nn::Tensor& images) {
  return proj_.forward(backbone_.forward(images));
}

nn::Tensor FullStream::backward(const nn::Tensor& grad) {
  return backbone_.backward(proj_.backward(grad));
}

void FullStream::collect(const std::string& prefix, nn::NamedParameters& out) {
  backbone_.collect(prefix + "backbone.", out);
  proj_.collect(prefix + "proj.", out);
}

void FullStream::set_training(bool training) {
  backbone_.set_training(training);
  proj_.set_training(training);
}

// TrainingModel

TrainingModel::TrainingModel(const StreamConfig& config, std::uint64_t seed,
                             nn::Allocation allocation)
    : config_(config) {
  config_.validate();
  nn::InitContext init{allocation, Rng(seed)};
  full_ = std::make_unique<FullStream>(config_, init);
  const auto partial = nn::BackboneSpec::parse(config_.partial_backbone);
  trunk_backbone_ = std::make_unique<nn::Backbone>(partial, init);
  trunk_proj_ = std::make_unique<nn::Linear>(partial.feature_dim(), config_.embed_dim, true, init);

  std::vector<std::vector<Part>> groups;
  const auto& parts = geometry::kLimbStreamParts;
  switch (config_.sharing) {
    case PartialSharing::shared:
      groups.emplace_back(parts.begin(), parts.end());
      break;
    case PartialSharing::per_limb:
      for (int i = 0; i < 4; ++i) groups.push_back({parts[i]});
      groups.push_back({Part::tail_proximal, Part::tail_distal});
      break;
    case PartialSharing::per_part:
      for (Part p : parts) groups.push_back({p});
      break;
  }
  for (auto& g : groups) {
    limb_groups_.push_back({std::make_unique<nn::Backbone>(partial, init), std::move(g), {}});
  }
  for (std::size_t i = 0; i < parts.size(); ++i) {
    part_proj_[i] = std::make_unique<nn::Linear>(partial.feature_dim(),
                                                 config_.block_dim(parts[i]), true, init);
  }
  const float bound = 1.0f / std::sqrt(static_cast<float>(config_.embed_dim));
  for (auto& c : classifiers_) {
    c.shape = {config_.num_entities, config_.embed_dim};
    if (allocation == nn::Allocation::full) {
      c.value.resize(c.numel());
      for (float& w : c.value) w = static_cast<float>(uniform(init.rng, -bound, bound));
    }
  }
}

void TrainingModel::set_training(bool training) {
  training_ = training;
  full_->set_training(training);
  trunk_backbone_->set_training(training);
  trunk_proj_->set_training(training);
  for (auto& g : limb_groups_) g.backbone->set_training(training);
  for (auto& p : part_proj_) p->set_training(training);
}

nn::Tensor TrainingModel::embed_full(const nn::Tensor& images) {
  check_images(images, config_.full_image, "full stream");
  return full_->forward(images);
}

EmbeddingBatch TrainingModel::forward_train(const TrainBatch& batch) {
  const int b = batch.size();
  const int e = config_.embed_dim;
  // Validate every input before running anything.
  check_images(batch.full, config_.full_image, "full stream");
  for (std::size_t p = 0; p < geometry::kAllParts.size(); ++p) {
    const Part part = geometry::kAllParts[p];
    const auto& in = batch.parts[p];
    check_samples(in, b, geometry::to_string(part));
    if (!in.samples.empty()) {
      check_images(in.images, part == Part::trunk ? config_.trunk_image : config_.limb_image,
                   geometry::to_string(part));
    }
  }

  EmbeddingBatch out;
  out.validity.assign(b, std::array<bool, 7>{});
  for (std::size_t p = 0; p < geometry::kAllParts.size(); ++p) {
    for (int s : batch.parts[p].samples) out.validity[s][p] = true;
  }

  out.d_full = full_->forward(batch.full);
  out.d_trunk = nn::Tensor({b, e});
  out.d_limbs = nn::Tensor({b, e});

  const PartInputs& trunk = batch.parts[0];
  last_trunk_samples_ = trunk.samples;
  if (!trunk.samples.empty()) {
    const nn::Tensor proj = trunk_proj_->forward(trunk_backbone_->forward(trunk.images));
    for (std::size_t k = 0; k < trunk.samples.size(); ++k) {
      auto src = proj.row(static_cast<int>(k));
      std::ranges::copy(src, out.d_trunk.row(trunk.samples[k]).begin());
    }
  }

  for (auto& group : limb_groups_) {
    group.segments.clear();
    std::vector<const nn::Tensor*> inputs;
    for (Part part : group.parts) {
      const auto& in = batch.parts[1 + limb_stream_index(part)];
      if (in.samples.empty()) continue;
      group.segments.emplace_back(part, static_cast<int>(in.samples.size()));
      inputs.push_back(&in.images);
    }
    if (inputs.empty()) continue;
    const nn::Tensor features = group.backbone->forward(concat_rows(inputs));
    int offset = 0;
    for (const auto& [part, count] : group.segments) {
      const int index = limb_stream_index(part);
      const nn::Tensor proj =
          part_proj_[index]->forward(slice_rows(features, offset, count));
      const auto& samples = batch.parts[1 + index].samples;
      const int block = config_.block_offset(part);
      for (int k = 0; k < count; ++k) {
        auto src = proj.row(k);
        std::ranges::copy(src, out.d_limbs.row(samples[k]).begin() + block);
      }
      offset += count;
    }
  }
  for (int p = 0; p < 6; ++p) last_part_samples_[p] = batch.parts[1 + p].samples;
  last_batch_ = b;

  out.z_ft = out.d_full;
  out.z_fl = out.d_full;
  for (std::size_t i = 0; i < out.z_ft.data.size(); ++i) {
    out.z_ft.data[i] += out.d_trunk.data[i];
    out.z_fl.data[i] += out.d_limbs.data[i];
  }
  return out;
}

void TrainingModel::backward(const nn::Tensor& grad_full, const nn::Tensor& grad_ft,
                             const nn::Tensor& grad_fl) {
  if (!training_) throw Error(ErrorKind::model, "backward requires training mode");
  const int e = config_.embed_dim;
  for (const nn::Tensor* g : {&grad_full, &grad_ft, &grad_fl}) {
    if (g->shape != std::vector<int>{last_batch_, e}) {
      throw Error(ErrorKind::model, "gradient shape does not match the last forward batch");
    }
  }

  nn::Tensor g_full = grad_full;
  for (std::size_t i = 0; i < g_full.data.size(); ++i) {
    g_full.data[i] += grad_ft.data[i] + grad_fl.data[i];
  }

  if (!last_trunk_samples_.empty()) {
    const int n = static_cast<int>(last_trunk_samples_.size());
    nn::Tensor g({n, e});
    for (int k = 0; k < n; ++k) std::ranges::copy(grad_ft.row(last_trunk_samples_[k]), g.row(k).begin());
    trunk_backbone_->backward(trunk_proj_->backward(g));
  }

  for (auto& group : limb_groups_) {
    if (group.segments.empty()) continue;
    std::vector<nn::Tensor> feature_grads;
    for (const auto& [part, count] : group.segments) {
      const int index = limb_stream_index(part);
      const int dim = config_.block_dim(part);
      const int block = config_.block_offset(part);
      nn::Tensor g({count, dim});
      for (int k = 0; k < count; ++k) {
        auto src = grad_fl.row(last_part_samples_[index][k]).subspan(block, dim);
        std::ranges::copy(src, g.row(k).begin());
      }
      feature_grads.push_back(part_proj_[index]->backward(g));
    }
    std::vector<const nn::Tensor*> ptrs;
    for (const auto& t : feature_grads) ptrs.push_back(&t);
    group.backbone->backward(concat_rows(ptrs));
  }

  full_->backward(g_full);
}

nn::NamedParameters TrainingModel::parameters() {
  nn::NamedParameters out;
  full_->collect("full.", out);
  trunk_backbone_->collect("trunk.backbone.", out);
  trunk_proj_->collect("trunk.proj.", out);
  for (std::size_t g = 0; g < limb_groups_.size(); ++g) {
    limb_groups_[g].backbone->collect("limb_group" + std::to_string(g) + ".backbone.", out);
  }
  for (std::size_t p = 0; p < part_proj_.size(); ++p) {
    part_proj_[p]->collect("part." + geometry::to_string(geometry::kLimbStreamParts[p]) + ".proj.",
                           out);
  }
  const std::array<const char*, 3> heads{"classifier.full", "classifier.ft", "classifier.fl"};
  for (std::size_t h = 0; h < classifiers_.size(); ++h) out.emplace_back(heads[h], &classifiers_[h]);
  return out;
}

void TrainingModel::zero_grad() {
  for (auto& [name, p] : parameters()) {
    if (p->trainable) p->grad.assign(p->value.size(), 0.0f);
  }
}

std::int64_t TrainingModel::parameter_count() { return nn::count_parameters(parameters()); }

// InferenceModel

InferenceModel::InferenceModel(const StreamConfig& config, std::uint64_t seed,
                               nn::Allocation allocation)
    : config_(config) {
  config_.validate();
  nn::InitContext init{allocation, Rng(seed)};
  full_ = std::make_unique<FullStream>(config_, init);
  full_->set_training(false);
}

InferenceModel InferenceModel::from_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ckpt =
      Checkpoint::load(path, [](const std::string& name) { return name.starts_with("full."); });
  if (ckpt.tensors.empty()) {
    throw Error(ErrorKind::model, "checkpoint " + path.string() + " has no full-stream weights");
  }
  InferenceModel model(ckpt.stream);
  model.entities_ = ckpt.entities;
  ckpt.restore(model.parameters());
  return model;
}

nn::Tensor InferenceModel::forward_infer(const nn::Tensor& images) {
  check_images(images, config_.full_image, "inference");
  return full_->forward(images);
}

nn::NamedParameters InferenceModel::parameters() {
  nn::NamedParameters out;
  full_->collect("full.", out);
  return out;
}

std::int64_t InferenceModel::parameter_count() { return nn::count_parameters(parameters()); }

std::int64_t param_count(const StreamConfig& config, Mode mode) {
  if (mode == Mode::training) {
    return TrainingModel(config, 0, nn::Allocation::shape_only).parameter_count();
  }
  return InferenceModel(config, 0, nn::Allocation::shape_only).parameter_count();
}

}  // namespace catreid::model
