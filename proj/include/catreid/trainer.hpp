#pragma once

// Training configuration, PK batch sampling, optimisers and the training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "catreid/augmentation.hpp"
#include "catreid/config.hpp"
#include "catreid/dataset.hpp"
#include "catreid/losses.hpp"
#include "catreid/network.hpp"
#include "catreid/part_geometry.hpp"

namespace catreid::train {

struct TrainConfig {
  int epochs = 150;
  int P = 4;
  int K = 4;
  /// Batches per epoch; 0 means enough to cover every image and every entity once.
  int batches_per_epoch = 0;
  std::string optimizer = "adam";  // "adam" or "sgd"
  double lr = 3.5e-4;
  double momentum = 0.9;  // sgd momentum, adam beta1
  double beta2 = 0.999;
  double weight_decay = 5e-4;
  /// Epoch fractions at which the learning rate is multiplied by lr_decay.
  std::vector<double> lr_milestones{0.6, 0.85};
  double lr_decay = 0.1;
  std::uint64_t seed = 0;
  /// Longer side of the cached bbox crops; 0 picks twice the full-image size.
  int working_max_side = 0;
  /// Entity partition applied to the training manifest.
  std::string partition = "side+time";
  /// Optional sequence de-duplication window in seconds (0 disables).
  double dedup_seconds = 0.0;
  std::filesystem::path manifest;
  std::filesystem::path pretrained_full;
  std::filesystem::path pretrained_partial;

  augment::AugmentConfig augment;
  loss::LossConfig loss;
  model::StreamConfig stream;
  geometry::PartConfig parts;

  /// Throws Error(config) on any invariant violation (P >= 2, K >= 2, epochs >= 1, ...).
  void validate() const;
  double learning_rate(int epoch) const;
};

/// Applies every key of `file` on top of the defaults; unknown keys are an error.
TrainConfig train_config_from(const config::KeyValueFile& file);
TrainConfig load_train_config(const std::filesystem::path& path);
/// Every key with its current value, in reference order.
std::string to_text(const TrainConfig& config);

struct KeyDoc {
  std::string key;
  std::string default_value;
  std::string description;
};
std::vector<KeyDoc> config_keys();

/// P x K batches of record indices (entity-major: K consecutive slots per entity).
class PkSampler {
 public:
  /// `labels[i]` is record i's entity label. Throws Error(validation) with fewer than P entities.
  PkSampler(std::vector<int> labels, int P, int K, std::uint64_t seed);

  /// The epoch's batches; a pure function of (seed, epoch). Every entity
  /// appears at least once when `batches * P >= entities`.
  std::vector<std::vector<std::size_t>> epoch(int epoch, int batches) const;
  int default_batches() const;
  int entity_count() const { return static_cast<int>(by_entity_.size()); }

 private:
  std::vector<std::vector<std::size_t>> by_entity_;
  std::size_t records_ = 0;
  int P_, K_;
  std::uint64_t seed_;
};

/// Adam or SGD with momentum, L2 weight decay folded into the gradient.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& config);
  void step(const nn::NamedParameters& params, double lr);
  /// State tensors as named parameters, for checkpointing.
  nn::NamedParameters state(const nn::NamedParameters& params);
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t steps) { steps_ = steps; }

 private:
  std::vector<float>& slot(const std::string& name, std::size_t size);

  std::string kind_;
  double momentum_, beta2_, weight_decay_;
  std::int64_t steps_ = 0;
  std::map<std::string, nn::Parameter> state_;
};

struct MetricsRow {
  int epoch = 0;
  std::int64_t step = 0;
  loss::LossBreakdown loss;
  double lr = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,step,full_id,full_triplet,ft_id,ft_triplet,fl_id,fl_triplet,total,lr";
std::string format_metrics_row(const MetricsRow& row);

struct TrainOptions {
  std::filesystem::path out_dir;
  /// Continue from a checkpoint written by an earlier run of the same config.
  std::optional<std::filesystem::path> resume;
  /// Record ids that must never reach a training batch (the test split).
  std::vector<std::string> forbidden_ids;
  /// When set, mAP on this set is computed after every epoch and the best
  /// checkpoint is kept as best.ckpt.
  const data::Dataset* validation = nullptr;
  /// Stop after this many epochs of the schedule (for interrupted runs).
  std::optional<int> stop_after_epoch;
  std::function<void(const MetricsRow&)> on_step;
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::int64_t steps = 0;
  int epochs_completed = 0;
  std::optional<double> best_validation_map;
};

/// Trains on `train_set` (entities already derived). Writes metrics.csv,
/// last.ckpt after every epoch and model.ckpt at the end into out_dir.
/// A non-finite loss aborts with Error(numeric) listing the batch record ids.
TrainResult train(const TrainConfig& config, const data::Dataset& train_set,
                  const TrainOptions& options);

/// Copies tensors named "backbone.*" from a checkpoint-format file into every
/// parameter of `params` whose name starts with one of `prefixes` + "backbone.".
void load_pretrained(const std::filesystem::path& path, const nn::NamedParameters& params,
                     const std::vector<std::string>& prefixes);

}  // namespace catreid::train
