#pragma once

// Training-time degradations for camera-trap imagery. Applied to the whole
// working image before part extraction; the geometric part of the pipeline
// is reported as a homography so keypoints can follow the pixels.

#include <cstdint>
#include <optional>

#include <opencv2/core.hpp>

namespace catreid::augment {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct AugmentConfig {
  bool blur = true;
  Range blur_sigma{0.0, 2.0};
  bool noise = true;
  /// Standard deviation as a fraction of full intensity scale (1.0 == 255 for 8-bit).
  Range noise_std{0.0, 10.0 / 255.0};
  bool perspective = true;
  /// Max corner displacement as a fraction of half the image extent.
  double perspective_distortion = 0.2;
  bool rotation = true;
  Range rotation_degrees{-15.0, 15.0};
  bool erase = true;
  double erase_probability = 0.5;
  Range erase_area{0.02, 0.20};
  /// Per-channel fill for erased regions, in the image's own units
  /// (normally the dataset mean). Mid-grey when unset.
  std::optional<cv::Scalar> erase_fill;

  /// Throws Error(config) on negative ranges or probabilities outside [0, 1].
  void validate() const;
  /// Every op disabled.
  static AugmentConfig none();
};

struct AugmentResult {
  cv::Mat image;
  /// Maps continuous input coordinates (pixel i spans [i, i+1)) to output ones.
  cv::Matx33d transform = cv::Matx33d::eye();
};

/// blur -> noise -> perspective -> rotate -> erase, each with parameters drawn
/// from a generator seeded with `seed`. Same seed, same output.
AugmentResult augment_with_transform(const cv::Mat& image, const AugmentConfig& config,
                                     std::uint64_t seed);

inline cv::Mat augment(const cv::Mat& image, const AugmentConfig& config, std::uint64_t seed) {
  return augment_with_transform(image, config, seed).image;
}

cv::Mat gaussian_blur(const cv::Mat& image, double sigma);
/// Adds N(0, std^2) noise; `std_fraction` is relative to full scale.
cv::Mat add_gaussian_noise(const cv::Mat& image, double std_fraction, std::uint64_t seed);
/// Rotates about the image centre with replicate borders; returns the
/// continuous-coordinate transform alongside.
AugmentResult rotate(const cv::Mat& image, double degrees);

struct EraseRegion {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
};

/// Replaces one axis-aligned rectangle of about `area_fraction` of the image
/// with `fill`; every other pixel is left untouched.
cv::Mat random_erase(const cv::Mat& image, double area_fraction, std::uint64_t seed,
                     const cv::Scalar& fill, EraseRegion* region = nullptr);
cv::Mat random_erase(const cv::Mat& image, double area_fraction, std::uint64_t seed);

/// Full-scale value for the image depth (255 for 8-bit, 1 for float).
double full_scale(const cv::Mat& image);

}  // namespace catreid::augment
