#pragma once

// Procedural "cats" for end-to-end runs without real camera-trap data. Each
// cat has a coat colour scheme; each side has its own stripe and blotch
// layout. A side-view silhouette is posed with a random rigid transform and
// keypoints follow the same transform. Night images are dark, grey and noisy.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

#include "catreid/dataset.hpp"

namespace catreid::toy {

struct ToyOptions {
  int cats = 4;
  int images_per_entity = 20;
  /// The first `day_cats` cats also get day images on both sides.
  int day_cats = 1;
  int width = 192;
  int height = 144;
  /// Chance that a limb or tail keypoint is hidden (making that part invalid).
  double hidden_keypoint_probability = 0.08;
  std::uint64_t seed = 0;
};

struct ToyImage {
  cv::Mat image;
  data::ImageRecord record;
};

/// Renders one image; `index` selects the pose and noise draws.
ToyImage render_toy_image(const ToyOptions& options, int cat, data::Side side, data::TimeOfDay time,
                          int index);

/// Writes images/<id>.png and manifest.jsonl under `out_dir`; returns the records
/// (image paths relative to `out_dir`).
std::vector<data::ImageRecord> generate_toy_dataset(const ToyOptions& options,
                                                    const std::filesystem::path& out_dir);

}  // namespace catreid::toy
