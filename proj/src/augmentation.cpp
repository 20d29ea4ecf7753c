#include "catreid/augmentation.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "catreid/error.hpp"
#include "catreid/random.hpp"

namespace catreid::augment {
namespace {

void check_range(const Range& r, const char* name) {
  if (!(r.lo >= 0.0) || !(r.hi >= r.lo)) {
    throw Error(ErrorKind::config, std::string(name) + " must satisfy 0 <= lo <= hi");
  }
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::config, std::string(name) + " must lie in [0, 1]");
}

cv::Matx33d to_3x3(const cv::Mat& m) {
  cv::Matx33d out = cv::Matx33d::eye();
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < 3; ++c) out(r, c) = m.at<double>(r, c);
  return out;
}

// Converts an index-coordinate homography to continuous coordinates.
cv::Matx33d index_to_continuous(const cv::Matx33d& h) {
  const cv::Matx33d to_index(1, 0, -0.5, 0, 1, -0.5, 0, 0, 1);
  const cv::Matx33d to_cont(1, 0, 0.5, 0, 1, 0.5, 0, 0, 1);
  return to_cont * h * to_index;
}

cv::Mat clamp_to_range(const cv::Mat& image) {
  if (image.depth() == CV_32F || image.depth() == CV_64F) {
    cv::Mat out = cv::max(image, 0.0);
    return cv::min(out, 1.0);
  }
  return image;
}

}  // namespace

void AugmentConfig::validate() const {
  check_range(blur_sigma, "blur_sigma");
  check_range(noise_std, "noise_std");
  check_range(erase_area, "erase_area");
  if (erase_area.hi >= 1.0) throw Error(ErrorKind::config, "erase_area must stay below 1");
  check_probability(erase_probability, "erase_probability");
  if (!(perspective_distortion >= 0.0 && perspective_distortion < 1.0)) {
    throw Error(ErrorKind::config, "perspective_distortion must lie in [0, 1)");
  }
  if (!(rotation_degrees.hi >= rotation_degrees.lo)) {
    throw Error(ErrorKind::config, "rotation_degrees must satisfy lo <= hi");
  }
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.blur = c.noise = c.perspective = c.rotation = c.erase = false;
  return c;
}

double full_scale(const cv::Mat& image) {
  return (image.depth() == CV_32F || image.depth() == CV_64F) ? 1.0 : 255.0;
}

cv::Mat gaussian_blur(const cv::Mat& image, double sigma) {
  if (sigma <= 1e-3) return image.clone();
  cv::Mat out;
  cv::GaussianBlur(image, out, cv::Size(0, 0), sigma, sigma, cv::BORDER_REPLICATE);
  return out;
}

cv::Mat add_gaussian_noise(const cv::Mat& image, double std_fraction, std::uint64_t seed) {
  if (std_fraction <= 0.0) return image.clone();
  Rng rng(seed);
  cv::Mat work;
  image.convertTo(work, CV_32F);
  const double sigma = std_fraction * full_scale(image);
  const int values = work.cols * work.channels();
  for (int r = 0; r < work.rows; ++r) {
    auto* row = work.ptr<float>(r);
    for (int i = 0; i < values; ++i) row[i] += static_cast<float>(sigma * normal(rng));
  }
  cv::Mat out;
  work.convertTo(out, image.type());
  return clamp_to_range(out);
}

AugmentResult rotate(const cv::Mat& image, double degrees) {
  if (degrees == 0.0) return {image.clone(), cv::Matx33d::eye()};
  const cv::Point2f center(static_cast<float>(image.cols - 1) * 0.5f,
                           static_cast<float>(image.rows - 1) * 0.5f);
  const cv::Mat m = cv::getRotationMatrix2D(center, degrees, 1.0);
  AugmentResult result;
  cv::warpAffine(image, result.image, m, image.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
  result.transform = index_to_continuous(to_3x3(m));
  return result;
}

cv::Mat random_erase(const cv::Mat& image, double area_fraction, std::uint64_t seed,
                     const cv::Scalar& fill, EraseRegion* region) {
  if (!(area_fraction > 0.0 && area_fraction < 1.0)) {
    throw Error(ErrorKind::validation, "random_erase: area fraction must lie in (0, 1)");
  }
  Rng rng(seed);
  const double target = area_fraction * image.rows * image.cols;
  int w = 0, h = 0;
  for (int attempt = 0; attempt < 20 && (w == 0 || h == 0); ++attempt) {
    // Log-uniform aspect ratio in [0.3, 1/0.3].
    const double aspect = std::exp(uniform(rng, std::log(0.3), std::log(1.0 / 0.3)));
    const int hh = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int ww = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (hh >= 1 && ww >= 1 && hh <= image.rows && ww <= image.cols) {
      h = hh;
      w = ww;
    }
  }
  if (w == 0 || h == 0) {
    // Fall back to the image aspect.
    h = std::clamp(static_cast<int>(std::lround(std::sqrt(area_fraction) * image.rows)), 1, image.rows);
    w = std::clamp(static_cast<int>(std::lround(std::sqrt(area_fraction) * image.cols)), 1, image.cols);
  }
  const int x = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(image.cols - w + 1)));
  const int y = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(image.rows - h + 1)));
  cv::Mat out = image.clone();
  out(cv::Rect(x, y, w, h)).setTo(fill);
  if (region != nullptr) *region = {x, y, w, h};
  return out;
}

cv::Mat random_erase(const cv::Mat& image, double area_fraction, std::uint64_t seed) {
  const double mid = 0.5 * full_scale(image);
  return random_erase(image, area_fraction, seed, cv::Scalar::all(mid));
}

AugmentResult augment_with_transform(const cv::Mat& image, const AugmentConfig& config,
                                     std::uint64_t seed) {
  if (image.empty()) throw Error(ErrorKind::validation, "augment: empty image");
  config.validate();
  Rng rng(seed);
  AugmentResult result{image.clone(), cv::Matx33d::eye()};

  if (config.blur) {
    result.image = gaussian_blur(result.image, uniform(rng, config.blur_sigma.lo, config.blur_sigma.hi));
  }
  if (config.noise) {
    const double std_fraction = uniform(rng, config.noise_std.lo, config.noise_std.hi);
    result.image = add_gaussian_noise(result.image, std_fraction, rng());
  }
  if (config.perspective && config.perspective_distortion > 0.0) {
    const float w = static_cast<float>(image.cols - 1);
    const float h = static_cast<float>(image.rows - 1);
    const double dx = config.perspective_distortion * 0.5 * w;
    const double dy = config.perspective_distortion * 0.5 * h;
    const cv::Point2f src[4] = {{0, 0}, {w, 0}, {w, h}, {0, h}};
    const float sx[4] = {1, -1, -1, 1};
    const float sy[4] = {1, 1, -1, -1};
    cv::Point2f dst[4];
    for (int i = 0; i < 4; ++i) {
      dst[i] = src[i] + cv::Point2f(sx[i] * static_cast<float>(uniform(rng, 0.0, dx)),
                                    sy[i] * static_cast<float>(uniform(rng, 0.0, dy)));
    }
    const cv::Mat m = cv::getPerspectiveTransform(src, dst);
    cv::Mat warped;
    cv::warpPerspective(result.image, warped, m, image.size(), cv::INTER_LINEAR,
                        cv::BORDER_REPLICATE);
    result.image = warped;
    result.transform = index_to_continuous(to_3x3(m)) * result.transform;
  }
  if (config.rotation) {
    const double degrees = uniform(rng, config.rotation_degrees.lo, config.rotation_degrees.hi);
    AugmentResult rotated = rotate(result.image, degrees);
    result.image = rotated.image;
    result.transform = rotated.transform * result.transform;
  }
  if (config.erase) {
    const bool apply = uniform01(rng) < config.erase_probability;
    const double area = uniform(rng, config.erase_area.lo, config.erase_area.hi);
    const std::uint64_t erase_seed = rng();
    if (apply && area > 0.0) {
      const cv::Scalar fill = config.erase_fill.value_or(cv::Scalar::all(0.5 * full_scale(image)));
      result.image = random_erase(result.image, area, erase_seed, fill);
    }
  }
  return result;
}

}  // namespace catreid::augment
