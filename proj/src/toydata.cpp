#include "catreid/toydata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "catreid/error.hpp"
#include "catreid/pipeline.hpp"
#include "catreid/random.hpp"

namespace catreid::toy {
namespace {

using data::Side;
using data::TimeOfDay;

// Template frame: cat facing +x, y down, body centre at the origin.
constexpr std::array<std::array<double, 2>, data::kKeypointCount> kTemplate{{
    {48, -30},   // 0 left ear
    {58, -29},   // 1 right ear
    {66, -12},   // 2 nose
    {28, 0},     // 3 right shoulder
    {27, 44},    // 4 right front paw
    {36, 2},     // 5 left shoulder
    {37, 43},    // 6 left front paw
    {-30, 0},    // 7 right hip
    {-36, 22},   // 8 right knee
    {-31, 44},   // 9 right back paw
    {-22, 2},    // 10 left hip
    {-27, 23},   // 11 left knee
    {-22, 43},   // 12 left back paw
    {-46, -4},   // 13 tail root
    {0, 0},      // 14 body centre
    {-62, -16},  // 15 proximal tail
    {-70, -36},  // 16 distal tail
}};

// Canvas for texture and mask: 2 px per template unit over u in [-80, 80], v in [-50, 55].
constexpr double kCanvasScale = 2.0;
constexpr double kU0 = -80.0, kV0 = -50.0;
constexpr int kCanvasW = 320, kCanvasH = 210;

cv::Point canvas(double u, double v) {
  return {static_cast<int>(std::lround((u - kU0) * kCanvasScale)),
          static_cast<int>(std::lround((v - kV0) * kCanvasScale))};
}

cv::Point canvas_kp(int i) { return canvas(kTemplate[i][0], kTemplate[i][1]); }

cv::Mat silhouette() {
  cv::Mat mask(kCanvasH, kCanvasW, CV_8U, cv::Scalar(0));
  const int s = static_cast<int>(kCanvasScale);
  cv::ellipse(mask, canvas(0, 2), cv::Size(48 * s, 19 * s), 0, 0, 360, 255, cv::FILLED);
  cv::circle(mask, canvas(54, -14), 14 * s, 255, cv::FILLED);
  std::vector<cv::Point> ear1{canvas(44, -20), canvas(48, -32), canvas(53, -22)};
  std::vector<cv::Point> ear2{canvas(54, -22), canvas(59, -31), canvas(63, -18)};
  cv::fillPoly(mask, std::vector<std::vector<cv::Point>>{ear1, ear2}, 255);
  const std::array<std::array<int, 3>, 4> legs{{{3, 3, 4}, {5, 5, 6}, {7, 8, 9}, {10, 11, 12}}};
  for (const auto& leg : legs) {
    cv::line(mask, canvas_kp(leg[0]), canvas_kp(leg[1]), 255, 10 * s);
    cv::line(mask, canvas_kp(leg[1]), canvas_kp(leg[2]), 255, 9 * s);
  }
  cv::line(mask, canvas_kp(13), canvas_kp(15), 255, 8 * s);
  cv::line(mask, canvas_kp(15), canvas_kp(16), 255, 7 * s);
  return mask;
}

struct CoatScheme {
  cv::Vec3f base, stripe, blotch;
};

cv::Vec3f hsv_to_bgr(double h, double s, double v) {
  cv::Mat hsv(1, 1, CV_32FC3, cv::Scalar(h, s, v));
  cv::Mat bgr;
  cv::cvtColor(hsv, bgr, cv::COLOR_HSV2BGR);
  return bgr.at<cv::Vec3f>(0, 0) * 255.0f;
}

CoatScheme coat_for(const ToyOptions& o, int cat) {
  Rng rng(derive_seed(o.seed, 0xC0A7, static_cast<std::uint64_t>(cat)));
  // Spread hues evenly, jittered, so cats stay tellable apart.
  const double hue = std::fmod(cat * 360.0 / std::max(o.cats, 1) + uniform(rng, -15, 15) + 360.0, 360.0);
  const double value = uniform(rng, 0.55, 0.95);
  CoatScheme c;
  c.base = hsv_to_bgr(hue, uniform(rng, 0.35, 0.75), value);
  c.stripe = hsv_to_bgr(std::fmod(hue + 20, 360.0), uniform(rng, 0.3, 0.8), value * uniform(rng, 0.2, 0.45));
  c.blotch = hsv_to_bgr(std::fmod(hue + 180, 360.0), uniform(rng, 0.05, 0.3), std::min(1.0, value + 0.3));
  return c;
}

cv::Mat coat_texture(const ToyOptions& o, int cat, Side side) {
  const CoatScheme scheme = coat_for(o, cat);
  Rng rng(derive_seed(o.seed, 0x7E47, static_cast<std::uint64_t>(cat), side == Side::left ? 1 : 2));
  const double angle = (side == Side::left ? uniform(rng, 10, 70) : uniform(rng, 100, 170)) * std::numbers::pi / 180.0;
  const double wavelength = uniform(rng, 9, 18);
  const double duty = uniform(rng, 0.25, 0.55);
  const double phase = uniform(rng, 0, 1);
  cv::Mat tex(kCanvasH, kCanvasW, CV_32FC3);
  for (int y = 0; y < kCanvasH; ++y) {
    for (int x = 0; x < kCanvasW; ++x) {
      const double u = x / kCanvasScale + kU0, v = y / kCanvasScale + kV0;
      const double t = (u * std::cos(angle) + v * std::sin(angle)) / wavelength + phase;
      tex.at<cv::Vec3f>(y, x) = (t - std::floor(t)) < duty ? scheme.stripe : scheme.base;
    }
  }
  const int blotches = static_cast<int>(uniform_index(rng, 4)) + 3;
  for (int b = 0; b < blotches; ++b) {
    const cv::Point c = canvas(uniform(rng, -45, 50), uniform(rng, -18, 20));
    const cv::Size axes(static_cast<int>(uniform(rng, 6, 16) * kCanvasScale),
                        static_cast<int>(uniform(rng, 4, 10) * kCanvasScale));
    cv::ellipse(tex, c, axes, uniform(rng, 0, 180), 0, 360,
                cv::Scalar(scheme.blotch[0], scheme.blotch[1], scheme.blotch[2]), cv::FILLED);
  }
  return tex;
}

cv::Mat background(const ToyOptions& o, Rng& rng) {
  cv::Mat small(4, 5, CV_32FC3);
  for (int y = 0; y < small.rows; ++y) {
    for (int x = 0; x < small.cols; ++x) {
      small.at<cv::Vec3f>(y, x) = cv::Vec3f(static_cast<float>(uniform(rng, 40, 90)),
                                            static_cast<float>(uniform(rng, 80, 140)),
                                            static_cast<float>(uniform(rng, 70, 120)));
    }
  }
  cv::Mat bg;
  cv::resize(small, bg, cv::Size(o.width, o.height), 0, 0, cv::INTER_CUBIC);
  return bg;
}

}  // namespace

ToyImage render_toy_image(const ToyOptions& o, int cat, Side side, TimeOfDay time, int index) {
  if (o.width < 64 || o.height < 48) throw Error(ErrorKind::validation, "toy images must be at least 64x48");
  Rng rng(derive_seed(o.seed, static_cast<std::uint64_t>(cat) * 8 + (side == Side::left ? 0 : 2) +
                                  (time == TimeOfDay::day ? 0 : 1),
                      static_cast<std::uint64_t>(index), 0x1AA6));
  static const cv::Mat mask = silhouette();
  const cv::Mat tex = coat_texture(o, cat, side);

  // Pose: template -> image. Right-side views face the other way.
  const double fit = std::min(o.width / 160.0, o.height / 105.0) * 0.92;
  const double scale = fit * uniform(rng, 0.85, 1.05);
  const double theta = uniform(rng, -12.0, 12.0) * std::numbers::pi / 180.0;
  const double flip = side == Side::right ? -1.0 : 1.0;
  const double cx = o.width / 2.0 + uniform(rng, -0.06, 0.06) * o.width;
  const double cy = o.height / 2.0 + uniform(rng, -0.05, 0.05) * o.height;
  const double c = std::cos(theta) * scale, s = std::sin(theta) * scale;
  // [x y]^T = R * diag(flip, 1) * [u v]^T + t
  const cv::Matx23d pose(c * flip, -s, cx, s * flip, c, cy);
  // Canvas pixel -> template: u = x / scale + U0.
  const cv::Matx33d from_canvas(1 / kCanvasScale, 0, kU0, 0, 1 / kCanvasScale, kV0, 0, 0, 1);
  const cv::Matx33d pose3(pose(0, 0), pose(0, 1), pose(0, 2), pose(1, 0), pose(1, 1), pose(1, 2), 0, 0, 1);
  const cv::Matx33d m3 = pose3 * from_canvas;
  const cv::Matx23d m(m3(0, 0), m3(0, 1), m3(0, 2), m3(1, 0), m3(1, 1), m3(1, 2));

  cv::Mat coat, alpha;
  cv::warpAffine(tex, coat, m, cv::Size(o.width, o.height), cv::INTER_LINEAR, cv::BORDER_CONSTANT);
  cv::warpAffine(mask, alpha, m, cv::Size(o.width, o.height), cv::INTER_LINEAR, cv::BORDER_CONSTANT);
  cv::Mat a;
  alpha.convertTo(a, CV_32F, 1.0 / 255.0);
  cv::cvtColor(a, a, cv::COLOR_GRAY2BGR);
  const cv::Mat bg = background(o, rng);
  cv::Mat img = coat.mul(a) + bg.mul(cv::Scalar::all(1.0) - a);

  // Lighting: a soft horizontal gradient plus global brightness.
  const double brightness = time == TimeOfDay::day ? uniform(rng, 0.9, 1.1) : uniform(rng, 0.4, 0.55);
  const double tilt = uniform(rng, -0.15, 0.15);
  for (int y = 0; y < img.rows; ++y) {
    auto* row = img.ptr<cv::Vec3f>(y);
    for (int x = 0; x < img.cols; ++x) {
      row[x] *= static_cast<float>(brightness * (1.0 + tilt * (x / static_cast<double>(img.cols) - 0.5)));
    }
  }
  if (time == TimeOfDay::night) {
    cv::Mat grey;
    cv::cvtColor(img, grey, cv::COLOR_BGR2GRAY);
    cv::cvtColor(grey, img, cv::COLOR_GRAY2BGR);
  }
  const double noise = time == TimeOfDay::day ? 3.0 : 9.0;
  for (int y = 0; y < img.rows; ++y) {
    auto* row = img.ptr<cv::Vec3f>(y);
    for (int x = 0; x < img.cols; ++x) {
      const float n = static_cast<float>(normal(rng) * noise);
      row[x] += cv::Vec3f(n, n, n);
    }
  }
  ToyImage out;
  img.convertTo(out.image, CV_8UC3);

  data::ImageRecord& r = out.record;
  const char* side_name = side == Side::left ? "left" : "right";
  const char* time_name = time == TimeOfDay::day ? "day" : "night";
  char id[96];
  std::snprintf(id, sizeof(id), "cat%02d_%s_%s_%03d", cat, side_name, time_name, index);
  r.id = id;
  r.image_path = "images/" + r.id + ".png";
  r.cat_id = "cat" + std::string(cat < 10 ? "0" : "") + std::to_string(cat);
  r.side = side;
  r.time_of_day = time;
  r.camera_id = "cam" + std::to_string(cat % 3);
  r.image_width = o.width;
  r.image_height = o.height;
  // Sequential captures a minute apart; day at 10:00, night at 22:00.
  r.capture_time = 1677628800LL + 86400LL * (cat + 1) + (time == TimeOfDay::day ? 36000 : 79200) +
                   (side == Side::left ? 0 : 3600) + 60LL * index;

  for (int k = 0; k < data::kKeypointCount; ++k) {
    const double u = kTemplate[k][0], v = kTemplate[k][1];
    auto& kp = r.keypoints[k];
    kp.x = pose(0, 0) * u + pose(0, 1) * v + pose(0, 2) + 0.5;
    kp.y = pose(1, 0) * u + pose(1, 1) * v + pose(1, 2) + 0.5;
    kp.visible = kp.x >= 0 && kp.y >= 0 && kp.x <= o.width && kp.y <= o.height;
  }
  // Occasionally hide the end point of a limb or tail segment.
  for (int k : {4, 6, 9, 12, 16}) {
    if (uniform01(rng) < o.hidden_keypoint_probability) r.keypoints[k].visible = false;
  }

  cv::Rect box = cv::boundingRect(alpha > 64);
  double x0 = box.x, y0 = box.y, x1 = box.x + box.width, y1 = box.y + box.height;
  for (const auto& kp : r.keypoints.points) {
    if (!kp.visible) continue;
    x0 = std::min(x0, kp.x);
    y0 = std::min(y0, kp.y);
    x1 = std::max(x1, kp.x);
    y1 = std::max(y1, kp.y);
  }
  x0 = std::max(0.0, std::floor(x0 - 3));
  y0 = std::max(0.0, std::floor(y0 - 3));
  x1 = std::min<double>(o.width, std::ceil(x1 + 3));
  y1 = std::min<double>(o.height, std::ceil(y1 + 3));
  r.bbox = {x0, y0, x1 - x0, y1 - y0};
  return out;
}

std::vector<data::ImageRecord> generate_toy_dataset(const ToyOptions& o, const std::filesystem::path& out_dir) {
  if (o.cats < 1) throw Error(ErrorKind::validation, "toy data needs at least one cat");
  if (o.images_per_entity < 1) throw Error(ErrorKind::validation, "images per entity must be >= 1");
  std::filesystem::create_directories(out_dir / "images");
  struct Job {
    int cat;
    Side side;
    TimeOfDay time;
    int index;
  };
  std::vector<Job> jobs;
  for (int cat = 0; cat < o.cats; ++cat) {
    std::vector<TimeOfDay> times{TimeOfDay::night};
    if (cat < o.day_cats) times.insert(times.begin(), TimeOfDay::day);
    for (Side side : {Side::left, Side::right}) {
      for (TimeOfDay t : times) {
        for (int i = 0; i < o.images_per_entity; ++i) jobs.push_back({cat, side, t, i});
      }
    }
  }
  std::vector<data::ImageRecord> records(jobs.size());
  std::vector<std::string> failures(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    try {
      auto img = render_toy_image(o, jobs[j].cat, jobs[j].side, jobs[j].time, jobs[j].index);
      pipeline::write_png(out_dir / img.record.image_path, img.image);
      records[j] = std::move(img.record);
    } catch (const std::exception& e) {
      failures[j] = e.what();
    }
  }
  for (const auto& f : failures) {
    if (!f.empty()) throw Error(ErrorKind::io, f);
  }
  data::write_manifest(out_dir / "manifest.jsonl", records);
  return records;
}

}  // namespace catreid::toy
