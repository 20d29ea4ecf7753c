#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <opencv2/imgproc.hpp>

#include "catreid/augmentation.hpp"
#include "catreid/error.hpp"
#include "catreid/part_geometry.hpp"

using namespace catreid::augment;

namespace {

cv::Mat random_image(int rows, int cols, int seed) {
  cv::Mat image(rows, cols, CV_8UC3);
  cv::RNG rng(seed);
  rng.fill(image, cv::RNG::UNIFORM, 0, 200);
  return image;
}

cv::Mat smooth_image(int rows, int cols) {
  cv::Mat image(rows, cols, CV_8UC3);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      image.at<cv::Vec3b>(y, x) = cv::Vec3b(static_cast<uchar>(128 + 100 * std::sin(x * 0.05)),
                                            static_cast<uchar>(128 + 100 * std::cos(y * 0.07)),
                                            static_cast<uchar>((x + y) % 256));
    }
  }
  cv::GaussianBlur(image, image, cv::Size(0, 0), 2.0);
  return image;
}

bool identical(const cv::Mat& a, const cv::Mat& b) {
  return a.size() == b.size() && a.type() == b.type() && cv::norm(a, b, cv::NORM_INF) == 0.0;
}

}  // namespace

TEST_CASE("with every op disabled the output equals the input") {
  const cv::Mat image = random_image(40, 60, 1);
  CHECK(identical(augment(image, AugmentConfig::none(), 5), image));
}

TEST_CASE("degenerate parameters leave the image unchanged") {
  const cv::Mat image = random_image(40, 60, 2);
  AugmentConfig c;
  c.blur_sigma = {0, 0};
  c.noise_std = {0, 0};
  c.erase_probability = 0.0;
  c.rotation_degrees = {0, 0};
  c.perspective_distortion = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(identical(augment(image, c, seed), image));
}

TEST_CASE("noise on a constant image has the requested standard deviation") {
  const cv::Mat flat(256, 256, CV_8UC1, cv::Scalar(128));
  for (double s : {4.0 / 255.0, 10.0 / 255.0}) {
    const cv::Mat noisy = add_gaussian_noise(flat, s, 3);
    cv::Scalar mean, stddev;
    cv::meanStdDev(noisy, mean, stddev);
    CHECK(std::abs(stddev[0] - s * 255.0) < 0.1 * s * 255.0);
  }
}

TEST_CASE("random erase replaces one rectangle of the requested area and nothing else") {
  const cv::Mat image = random_image(100, 100, 4);
  const cv::Scalar fill(255, 255, 255);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    EraseRegion region;
    const cv::Mat out = random_erase(image, 0.25, seed, fill, &region);
    // Rounding each side to whole pixels moves the area by at most one row and column.
    CHECK(std::abs(region.width * region.height - 2500) <= region.width + region.height + 1);
    cv::Mat diff;
    cv::absdiff(image, out, diff);
    cv::cvtColor(diff, diff, cv::COLOR_BGR2GRAY);
    cv::Mat mask = diff > 0;
    const int changed = cv::countNonZero(mask);
    const cv::Rect box = cv::boundingRect(mask);
    CHECK(changed == box.area());
    CHECK(box == cv::Rect(region.x, region.y, region.width, region.height));
    CHECK(100 * 100 - changed == 10000 - region.width * region.height);
    CHECK(identical(random_erase(image, 0.25, seed, fill), out));
  }
}

TEST_CASE("the full pipeline is seed-deterministic and preserves size and type") {
  AugmentConfig c;
  c.erase_probability = 1.0;
  for (const cv::Mat& image : {random_image(48, 64, 5), cv::Mat(smooth_image(30, 30))}) {
    const cv::Mat a = augment(image, c, 42);
    const cv::Mat b = augment(image, c, 42);
    const cv::Mat other = augment(image, c, 43);
    CHECK(identical(a, b));
    CHECK_FALSE(identical(a, other));
    CHECK(a.size() == image.size());
    CHECK(a.type() == image.type());
  }
  cv::Mat as_float;
  random_image(20, 24, 6).convertTo(as_float, CV_32FC3, 1.0 / 255.0);
  const cv::Mat f = augment(as_float, c, 1);
  CHECK(f.type() == CV_32FC3);
  double lo, hi;
  cv::minMaxLoc(f.reshape(1), &lo, &hi);
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
}

TEST_CASE("rotating by theta and back restores the interior") {
  const cv::Mat image = smooth_image(160, 160);
  for (double deg : {5.0, 12.5, -15.0}) {
    const cv::Mat back = rotate(rotate(image, deg).image, -deg).image;
    const cv::Rect inner(40, 40, 80, 80);
    cv::Mat diff;
    cv::absdiff(image(inner), back(inner), diff);
    CHECK(cv::mean(diff.reshape(1))[0] < 2.0);
  }
}

TEST_CASE("the reported transform carries points along with the pixels") {
  AugmentConfig c = AugmentConfig::none();
  c.perspective = true;
  c.rotation = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    cv::Mat image(120, 160, CV_8UC1, cv::Scalar(0));
    const cv::Point dot(50, 70);
    cv::circle(image, dot, 2, cv::Scalar(255), cv::FILLED);
    const auto result = augment_with_transform(image, c, seed);
    const auto p = catreid::geometry::apply_homography(result.transform, {dot.x + 0.5, dot.y + 0.5});
    cv::Mat blurred;
    cv::GaussianBlur(result.image, blurred, cv::Size(0, 0), 1.5);
    cv::Point peak;
    cv::minMaxLoc(blurred, nullptr, nullptr, nullptr, &peak);
    CHECK(std::hypot(peak.x + 0.5 - p.x, peak.y + 0.5 - p.y) < 1.5);
  }
}

TEST_CASE("invalid configurations are rejected up front") {
  AugmentConfig c;
  c.erase_probability = 1.5;
  CHECK_THROWS_AS(c.validate(), catreid::Error);
  c = {};
  c.blur_sigma = {-1.0, 1.0};
  CHECK_THROWS_AS(c.validate(), catreid::Error);
  c = {};
  c.noise_std = {0.2, 0.1};
  CHECK_THROWS_AS(augment(random_image(8, 8, 7), c, 0), catreid::Error);
}
