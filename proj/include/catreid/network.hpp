#pragma once

// The multi-stream embedding model. Training builds the full stream plus the
// trunk and limb/tail partial streams; inference builds the full stream only.
//
// Embedding layout (E = 4 * limb_dim + 2 * tail_dim):
//   d_full  = proj(full_backbone(full image))                      [E]
//   d_trunk = proj(trunk_backbone(trunk image)), zero if invalid   [E]
//   d_limbs = [fl | fr | bl | br | tail_prox | tail_dist]          [E]
//             each block proj_p(limb_backbone(part image)), zero if invalid
//   z_ft = d_full + d_trunk,  z_fl = d_full + d_limbs

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "catreid/nn.hpp"
#include "catreid/part_geometry.hpp"

namespace catreid::model {

using geometry::ImageSize;
using geometry::Part;

/// How the six limb-stream parts map onto partial backbones.
enum class PartialSharing {
  shared,    // one backbone for all limbs and tail segments
  per_limb,  // one per limb, one shared by both tail segments
  per_part,  // one per limb-stream part
};
std::string to_string(PartialSharing sharing);
PartialSharing parse_sharing(const std::string& text);

struct StreamConfig {
  std::string full_backbone = "resnet152";
  std::string partial_backbone = "resnet34";
  int embed_dim = 2560;
  int limb_embed_dim = 512;
  int tail_embed_dim = 256;
  int num_entities = 20;
  PartialSharing sharing = PartialSharing::per_limb;
  ImageSize full_image{256, 256};
  ImageSize trunk_image{192, 96};
  ImageSize limb_image{96, 96};

  /// Throws Error(config) unless 4*limb + 2*tail == E, tail == limb/2 and
  /// the backbones parse.
  void validate() const;
  int block_dim(Part part) const;
  /// Offset of a limb-stream part's block inside d_limbs.
  int block_offset(Part part) const;

  /// Full-size configuration (152-layer full stream, 34-layer partial streams).
  static StreamConfig reference(int num_entities = 20);
  /// Desk-scale variant for CPU training at reduced resolution.
  static StreamConfig small(int num_entities);
};

nlohmann::json to_json(const StreamConfig& config);
StreamConfig stream_config_from_json(const nlohmann::json& doc);

/// Pixels -> normalised float tensor (B, 3, H, W). Accepts 8-bit or float
/// BGR images; throws Error(model) if any image differs from `expected`.
nn::Tensor images_to_tensor(std::span<const cv::Mat> images, ImageSize expected);

/// Valid part images for one part, packed; `samples[k]` is the batch row of
/// `images` row k. Samples absent from `samples` are invalid for this part.
struct PartInputs {
  std::vector<int> samples;
  nn::Tensor images;
};

struct TrainBatch {
  nn::Tensor full;
  /// Indexed in `geometry::kAllParts` order.
  std::array<PartInputs, 7> parts;

  int size() const { return full.shape.empty() ? 0 : full.dim(0); }
};

/// Row-major (B, E) embeddings for a batch.
struct EmbeddingBatch {
  nn::Tensor d_full;
  nn::Tensor d_trunk;
  nn::Tensor d_limbs;
  nn::Tensor z_ft;
  nn::Tensor z_fl;
  /// validity[b][p] in `kAllParts` order.
  std::vector<std::array<bool, 7>> validity;
};

/// One image's embeddings.
struct EmbeddingSet {
  std::vector<float> d_full, d_trunk, d_limbs, z_ft, z_fl;
  std::array<bool, 7> part_validity{};
};
EmbeddingSet embedding_set(const EmbeddingBatch& batch, int index);

/// F-stream: backbone + linear projection to E.
class FullStream {
 public:
  FullStream(const StreamConfig& config, nn::InitContext& init);
  nn::Tensor forward(const nn::Tensor& images);
  nn::Tensor backward(const nn::Tensor& grad);
  void collect(const std::string& prefix, nn::NamedParameters& out);
  void set_training(bool training);

 private:
  nn::Backbone backbone_;
  nn::Linear proj_;
};

class Checkpoint;

class TrainingModel {
 public:
  explicit TrainingModel(const StreamConfig& config, std::uint64_t seed = 0,
                         nn::Allocation allocation = nn::Allocation::full);

  const StreamConfig& config() const { return config_; }
  void set_training(bool training);
  bool training() const { return training_; }

  EmbeddingBatch forward_train(const TrainBatch& batch);
  /// Back-propagates gradients w.r.t. d_full, z_ft and z_fl of the last
  /// forward_train call into parameter gradients.
  void backward(const nn::Tensor& grad_full, const nn::Tensor& grad_ft, const nn::Tensor& grad_fl);

  /// d_full only (same path the inference model runs).
  nn::Tensor embed_full(const nn::Tensor& images);

  /// (C, E) identity classifier of each head, in `loss::kHeads` order.
  nn::Parameter& classifier(std::size_t head) { return classifiers_.at(head); }

  nn::NamedParameters parameters();
  void zero_grad();
  std::int64_t parameter_count();

 private:
  struct LimbGroup {
    std::unique_ptr<nn::Backbone> backbone;
    std::vector<Part> parts;
    /// Cached layout of the last forward: rows per part in the packed batch.
    std::vector<std::pair<Part, int>> segments;
  };

  StreamConfig config_;
  bool training_ = true;
  std::unique_ptr<FullStream> full_;
  std::unique_ptr<nn::Backbone> trunk_backbone_;
  std::unique_ptr<nn::Linear> trunk_proj_;
  std::vector<LimbGroup> limb_groups_;
  std::array<std::unique_ptr<nn::Linear>, 6> part_proj_;
  std::array<nn::Parameter, 3> classifiers_;
  // Forward cache for backward.
  int last_batch_ = 0;
  std::vector<int> last_trunk_samples_;
  std::array<std::vector<int>, 6> last_part_samples_;
};

/// Full stream only; built from a checkpoint that may lack partial streams.
class InferenceModel {
 public:
  explicit InferenceModel(const StreamConfig& config, std::uint64_t seed = 0,
                          nn::Allocation allocation = nn::Allocation::full);
  /// Throws Error(model) if the checkpoint has no full-stream weights.
  static InferenceModel from_checkpoint(const std::filesystem::path& path);

  const StreamConfig& config() const { return config_; }
  const std::vector<std::string>& entities() const { return entities_; }
  /// (N, 3, H, W) -> (N, E), order-preserving.
  nn::Tensor forward_infer(const nn::Tensor& images);
  nn::NamedParameters parameters();
  std::int64_t parameter_count();

 private:
  StreamConfig config_;
  std::vector<std::string> entities_;
  std::unique_ptr<FullStream> full_;
};

enum class Mode { training, inference };

/// Exact learnable-parameter count for a configuration without allocating weights.
std::int64_t param_count(const StreamConfig& config, Mode mode);

}  // namespace catreid::model
