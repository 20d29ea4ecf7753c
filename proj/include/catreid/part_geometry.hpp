#pragma once

// Keypoint-driven part crops: the body axis, the oriented trunk rectangle,
// limb/tail rectangles, and perspective extraction of part images.

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>

#include "catreid/dataset.hpp"

namespace catreid::geometry {

using data::KeypointSet;
using data::Point;

/// Four corners with positive signed area (counter-clockwise in a y-up frame).
/// corners[0] -> corners[1] maps to the top edge of an extracted image.
struct Quad {
  std::array<Point, 4> corners{};

  double signed_area() const;
  double area() const { return std::abs(signed_area()); }
  /// Inside or on the boundary, within `tolerance` pixels.
  bool contains(Point p, double tolerance = 1e-9) const;
};

enum class Part { trunk, limb_fl, limb_fr, limb_bl, limb_br, tail_proximal, tail_distal };
inline constexpr std::array<Part, 7> kAllParts{Part::trunk,   Part::limb_fl,       Part::limb_fr,
                                              Part::limb_bl, Part::limb_br,       Part::tail_proximal,
                                              Part::tail_distal};
/// Limb-stream parts in embedding block order.
inline constexpr std::array<Part, 6> kLimbStreamParts{Part::limb_fl, Part::limb_fr,
                                                      Part::limb_bl, Part::limb_br,
                                                      Part::tail_proximal, Part::tail_distal};
std::string to_string(Part part);

struct PartCrop {
  Part part = Part::trunk;
  /// Absent when any defining keypoint is invisible.
  std::optional<Quad> quad;

  bool valid() const { return quad.has_value(); }
};

struct BodyAxis {
  Point direction;  // unit vector, rear -> front
  Point center;     // midpoint of the two anchor centroids
  double length = 0.0;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

struct PartConfig {
  /// Limb width as a fraction of its length.
  double limb_ratio = 1.0 / 3.0;
  /// Trunk rectangle growth on every side, as a fraction of the body-axis length.
  double trunk_padding = 0.1;
  ImageSize trunk_image_size{192, 96};
  ImageSize limb_image_size{96, 96};
  std::map<Part, std::pair<int, int>> limb_keypoint_pairs{{Part::limb_fl, {5, 6}},
                                                          {Part::limb_fr, {3, 4}},
                                                          {Part::limb_bl, {10, 12}},
                                                          {Part::limb_br, {7, 9}}};
  std::vector<int> trunk_keypoints{3, 5, 7, 10, 13, 14};
  std::vector<int> front_anchor{3, 5};
  std::vector<int> rear_anchor{7, 10, 13};
  int tail_root = 13;
  int min_trunk_points = 3;

  /// Throws Error(config) if ratios or indices are out of range.
  void validate() const;
  ImageSize image_size(Part part) const {
    return part == Part::trunk ? trunk_image_size : limb_image_size;
  }
};

/// Rear-to-front axis from the anchor centroids; nullopt when an anchor set
/// has no visible keypoint or the centroids coincide.
std::optional<BodyAxis> body_axis(const KeypointSet& keypoints, const PartConfig& config = {});

/// Smallest rectangle aligned with `direction` enclosing `points`, grown by
/// `padding` pixels on every side.
Quad oriented_box(std::span<const Point> points, Point direction, double padding);

PartCrop trunk_quad(const KeypointSet& keypoints, const PartConfig& config = {});

/// Rectangle spanning segment ab with width ratio*|b-a|. Throws
/// Error(validation) for coincident endpoints.
Quad limb_rect(Point a, Point b, double ratio);

/// Crop for a limb or tail part from its keypoint pair.
PartCrop segment_crop(const KeypointSet& keypoints, Part part, const PartConfig& config = {});

/// All seven crops in `kAllParts` order.
std::vector<PartCrop> part_crops(const KeypointSet& keypoints, const PartConfig& config = {});

/// Perspective-resamples the quad to `size`. Partially out-of-frame quads are
/// clamped with replicate padding; nullopt marks an invalid part (invalid crop
/// or quad entirely outside the image). Never fabricates pixels for invalid parts.
std::optional<cv::Mat> extract_part(const cv::Mat& image, const PartCrop& crop, ImageSize size);

/// Axis-aligned quad covering pixels [x, x+w) x [y, y+h).
Quad rect_quad(double x, double y, double w, double h);

/// Draws every valid crop outline onto a copy of `image`.
cv::Mat draw_part_overlay(const cv::Mat& image, std::span<const PartCrop> crops,
                          const KeypointSet* keypoints = nullptr);

/// Applies a 3x3 homography (row-major) to a point.
Point apply_homography(const cv::Matx33d& h, Point p);

}  // namespace catreid::geometry
