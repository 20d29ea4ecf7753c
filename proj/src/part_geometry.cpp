#include "catreid/part_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <opencv2/imgproc.hpp>

#include "catreid/error.hpp"

namespace catreid::geometry {
namespace {

Point sub(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
Point add(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
Point scale(Point a, double s) { return {a.x * s, a.y * s}; }
double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
double norm(Point a) { return std::hypot(a.x, a.y); }
Point perp(Point u) { return {-u.y, u.x}; }

std::optional<Point> centroid(const KeypointSet& kps, std::span<const int> indices) {
  Point sum{};
  int count = 0;
  for (int i : indices) {
    if (!kps[i].visible) continue;
    sum = add(sum, kps[i].point());
    ++count;
  }
  if (count == 0) return std::nullopt;
  return scale(sum, 1.0 / count);
}

bool valid_index(int i) { return i >= 0 && i < data::kKeypointCount; }

}  // namespace

double Quad::signed_area() const {
  double twice = 0.0;
  for (std::size_t i = 0; i < 4; ++i) twice += cross(corners[i], corners[(i + 1) % 4]);
  return 0.5 * twice;
}

bool Quad::contains(Point p, double tolerance) const {
  const double orientation = signed_area() >= 0.0 ? 1.0 : -1.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const Point edge = sub(corners[(i + 1) % 4], corners[i]);
    const double len = norm(edge);
    if (len == 0.0) continue;
    // Signed distance of p from the edge line, positive inside.
    const double d = orientation * cross(edge, sub(p, corners[i])) / len;
    if (d < -tolerance) return false;
  }
  return true;
}

std::string to_string(Part part) {
  switch (part) {
    case Part::trunk: return "trunk";
    case Part::limb_fl: return "limb_fl";
    case Part::limb_fr: return "limb_fr";
    case Part::limb_bl: return "limb_bl";
    case Part::limb_br: return "limb_br";
    case Part::tail_proximal: return "tail_proximal";
    case Part::tail_distal: return "tail_distal";
  }
  return "unknown";
}

void PartConfig::validate() const {
  if (!(limb_ratio > 0.0 && limb_ratio <= 1.0)) {
    throw Error(ErrorKind::config, "limb_ratio must lie in (0, 1]");
  }
  if (!(trunk_padding >= 0.0)) throw Error(ErrorKind::config, "trunk_padding must be >= 0");
  auto check = [](int i) {
    if (!valid_index(i)) {
      throw Error(ErrorKind::config, "keypoint index " + std::to_string(i) + " outside 0-16");
    }
  };
  for (const auto& [part, pair] : limb_keypoint_pairs) {
    check(pair.first);
    check(pair.second);
  }
  for (int i : trunk_keypoints) check(i);
  for (int i : front_anchor) check(i);
  for (int i : rear_anchor) check(i);
  check(tail_root);
  for (auto size : {trunk_image_size, limb_image_size}) {
    if (size.width <= 0 || size.height <= 0) {
      throw Error(ErrorKind::config, "part image sizes must be positive");
    }
  }
}

std::optional<BodyAxis> body_axis(const KeypointSet& keypoints, const PartConfig& config) {
  const auto front = centroid(keypoints, config.front_anchor);
  const auto rear = centroid(keypoints, config.rear_anchor);
  if (!front || !rear) return std::nullopt;
  const Point d = sub(*front, *rear);
  const double len = norm(d);
  if (len <= 1e-9) return std::nullopt;
  return BodyAxis{scale(d, 1.0 / len), scale(add(*front, *rear), 0.5), len};
}

Quad oriented_box(std::span<const Point> points, Point direction, double padding) {
  const Point u = scale(direction, 1.0 / norm(direction));
  const Point n = perp(u);
  double u_min = std::numeric_limits<double>::infinity(), u_max = -u_min;
  double n_min = u_min, n_max = -u_min;
  for (const Point& p : points) {
    const double pu = dot(p, u);
    const double pn = dot(p, n);
    u_min = std::min(u_min, pu);
    u_max = std::max(u_max, pu);
    n_min = std::min(n_min, pn);
    n_max = std::max(n_max, pn);
  }
  u_min -= padding;
  u_max += padding;
  n_min -= padding;
  n_max += padding;
  auto at = [&](double a, double b) { return add(scale(u, a), scale(n, b)); };
  return Quad{{at(u_min, n_min), at(u_max, n_min), at(u_max, n_max), at(u_min, n_max)}};
}

PartCrop trunk_quad(const KeypointSet& keypoints, const PartConfig& config) {
  PartCrop crop{Part::trunk, std::nullopt};
  const auto axis = body_axis(keypoints, config);
  if (!axis) return crop;
  std::vector<Point> points;
  for (int i : config.trunk_keypoints) {
    if (keypoints[i].visible) points.push_back(keypoints[i].point());
  }
  if (static_cast<int>(points.size()) < config.min_trunk_points) return crop;
  Quad quad = oriented_box(points, axis->direction, config.trunk_padding * axis->length);
  // Collinear trunk points with no padding have no area to crop.
  if (quad.area() <= 1e-9) return crop;
  crop.quad = quad;
  return crop;
}

Quad limb_rect(Point a, Point b, double ratio) {
  const Point d = sub(b, a);
  const double len = norm(d);
  if (len <= 0.0) throw Error(ErrorKind::validation, "limb_rect: coincident endpoints");
  const Point n = perp(scale(d, 1.0 / len));
  const double half = 0.5 * ratio * len;
  const Point offset = scale(n, half);
  // Top edge across the segment at `a`, bottom edge at `b`.
  return Quad{{add(a, offset), sub(a, offset), sub(b, offset), add(b, offset)}};
}

PartCrop segment_crop(const KeypointSet& keypoints, Part part, const PartConfig& config) {
  PartCrop crop{part, std::nullopt};
  std::pair<int, int> pair;
  if (part == Part::tail_proximal) {
    pair = {config.tail_root, data::kTailProximal};
  } else if (part == Part::tail_distal) {
    pair = {data::kTailProximal, data::kTailDistal};
  } else {
    const auto it = config.limb_keypoint_pairs.find(part);
    if (it == config.limb_keypoint_pairs.end()) return crop;
    pair = it->second;
  }
  const auto& a = keypoints[pair.first];
  const auto& b = keypoints[pair.second];
  if (!a.visible || !b.visible) return crop;
  if (norm(sub(b.point(), a.point())) <= 1e-9) return crop;
  crop.quad = limb_rect(a.point(), b.point(), config.limb_ratio);
  return crop;
}

std::vector<PartCrop> part_crops(const KeypointSet& keypoints, const PartConfig& config) {
  std::vector<PartCrop> crops;
  crops.reserve(kAllParts.size());
  crops.push_back(trunk_quad(keypoints, config));
  for (Part p : kLimbStreamParts) crops.push_back(segment_crop(keypoints, p, config));
  return crops;
}

Quad rect_quad(double x, double y, double w, double h) {
  return Quad{{Point{x, y}, Point{x + w, y}, Point{x + w, y + h}, Point{x, y + h}}};
}

std::optional<cv::Mat> extract_part(const cv::Mat& image, const PartCrop& crop, ImageSize size) {
  if (size.width <= 0 || size.height <= 0) {
    throw Error(ErrorKind::validation, "extract_part: size must be positive");
  }
  if (image.empty()) throw Error(ErrorKind::validation, "extract_part: empty image");
  if (!crop.valid()) return std::nullopt;
  const Quad& q = *crop.quad;

  std::vector<cv::Point2f> poly, frame, overlap;
  for (const Point& c : q.corners) poly.emplace_back(static_cast<float>(c.x), static_cast<float>(c.y));
  if (q.signed_area() < 0) std::reverse(poly.begin(), poly.end());
  const auto w = static_cast<float>(image.cols);
  const auto h = static_cast<float>(image.rows);
  frame = {{0, 0}, {w, 0}, {w, h}, {0, h}};
  if (cv::intersectConvexConvex(poly, frame, overlap, true) <= 0.0f) return std::nullopt;

  // Pixel i covers [i, i+1); warpPerspective samples at integer indices, so
  // both sides shift by half a pixel.
  std::array<cv::Point2f, 4> src, dst;
  const float dw = static_cast<float>(size.width);
  const float dh = static_cast<float>(size.height);
  const std::array<cv::Point2f, 4> target{cv::Point2f{0, 0}, {dw, 0}, {dw, dh}, {0, dh}};
  for (std::size_t i = 0; i < 4; ++i) {
    src[i] = cv::Point2f(static_cast<float>(q.corners[i].x - 0.5),
                         static_cast<float>(q.corners[i].y - 0.5));
    dst[i] = target[i] - cv::Point2f(0.5f, 0.5f);
  }
  const cv::Mat transform = cv::getPerspectiveTransform(src.data(), dst.data());
  cv::Mat out;
  cv::warpPerspective(image, out, transform, cv::Size(size.width, size.height), cv::INTER_LINEAR,
                      cv::BORDER_REPLICATE);
  return out;
}

cv::Mat draw_part_overlay(const cv::Mat& image, std::span<const PartCrop> crops,
                          const KeypointSet* keypoints) {
  cv::Mat canvas;
  if (image.channels() == 1) {
    cv::cvtColor(image, canvas, cv::COLOR_GRAY2BGR);
  } else {
    canvas = image.clone();
  }
  static const std::map<Part, cv::Scalar> colors{
      {Part::trunk, {0, 255, 255}},         {Part::limb_fl, {255, 0, 0}},
      {Part::limb_fr, {0, 255, 0}},         {Part::limb_bl, {0, 0, 255}},
      {Part::limb_br, {255, 0, 255}},       {Part::tail_proximal, {255, 255, 0}},
      {Part::tail_distal, {128, 128, 255}}};
  const int thickness = std::max(1, std::min(canvas.cols, canvas.rows) / 200);
  for (const PartCrop& crop : crops) {
    if (!crop.valid()) continue;
    std::vector<cv::Point> pts;
    for (const Point& c : crop.quad->corners) pts.emplace_back(cvRound(c.x), cvRound(c.y));
    cv::polylines(canvas, pts, true, colors.at(crop.part), thickness, cv::LINE_AA);
  }
  if (keypoints != nullptr) {
    for (const auto& k : keypoints->points) {
      if (k.visible) {
        cv::circle(canvas, cv::Point(cvRound(k.x), cvRound(k.y)), thickness + 1,
                   cv::Scalar(255, 255, 255), cv::FILLED);
      }
    }
  }
  return canvas;
}

Point apply_homography(const cv::Matx33d& h, Point p) {
  const double x = h(0, 0) * p.x + h(0, 1) * p.y + h(0, 2);
  const double y = h(1, 0) * p.x + h(1, 1) * p.y + h(1, 2);
  const double w = h(2, 0) * p.x + h(2, 1) * p.y + h(2, 2);
  return {x / w, y / w};
}

}  // namespace catreid::geometry
