#pragma once

// Turns manifest records into network inputs: bbox crop, optional
// augmentation of the whole crop, resize to the full-stream size and part
// extraction from the (augmented) keypoints.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <opencv2/core.hpp>

#include "catreid/augmentation.hpp"
#include "catreid/dataset.hpp"
#include "catreid/network.hpp"
#include "catreid/part_geometry.hpp"

namespace catreid::pipeline {

/// Reads an image as 8-bit BGR; throws Error(io) naming the path.
cv::Mat read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const cv::Mat& image);

/// A record's bbox crop with keypoints in crop coordinates.
struct WorkingImage {
  cv::Mat image;
  data::KeypointSet keypoints;
};

/// Crops `source` to the record's bbox and downscales so the longer side is
/// at most `max_side` (no upscaling).
WorkingImage make_working_image(const cv::Mat& source, const data::ImageRecord& record,
                                int max_side = 512);
WorkingImage load_working_image(const data::Dataset& dataset, std::size_t index, int max_side = 512);

struct SampleImages {
  cv::Mat full;
  /// `geometry::kAllParts` order; nullopt for invalid parts.
  std::array<std::optional<cv::Mat>, 7> parts;
};

/// Training view. With `augment` null the working image is used as is.
SampleImages prepare_sample(const WorkingImage& working, const model::StreamConfig& stream,
                            const geometry::PartConfig& parts,
                            const augment::AugmentConfig* augment, std::uint64_t seed);

/// Evaluation view of the full image (no augmentation).
cv::Mat full_view(const WorkingImage& working, geometry::ImageSize size);

/// Packs samples into network tensors, leaving invalid parts out.
model::TrainBatch assemble_batch(std::span<const SampleImages> samples,
                                 const model::StreamConfig& stream);

/// Per-channel mean of the working images, in 8-bit units.
cv::Scalar mean_color(std::span<const WorkingImage> images);

/// Working-image size used when a configuration leaves it unset: twice the
/// longer full-image side, so augmentation has some headroom before resizing.
int default_working_side(const model::StreamConfig& stream);

/// Part configuration whose output sizes follow the stream configuration.
geometry::PartConfig part_config_for(const geometry::PartConfig& base,
                                     const model::StreamConfig& stream);

}  // namespace catreid::pipeline
