#include "catreid/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "catreid/error.hpp"

namespace catreid::pipeline {

cv::Mat read_image(const std::filesystem::path& path) {
  cv::Mat image = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (image.empty()) throw Error(ErrorKind::io, "cannot read image " + path.string());
  return image;
}

void write_png(const std::filesystem::path& path, const cv::Mat& image) {
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), image)) throw Error(ErrorKind::io, "cannot write " + path.string());
}

WorkingImage make_working_image(const cv::Mat& source, const data::ImageRecord& record,
                                int max_side) {
  const data::BBox& b = record.bbox;
  const int x0 = std::clamp(static_cast<int>(std::floor(b.x)), 0, source.cols - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(b.y)), 0, source.rows - 1);
  const int x1 = std::clamp(static_cast<int>(std::ceil(b.x + b.w)), x0 + 1, source.cols);
  const int y1 = std::clamp(static_cast<int>(std::ceil(b.y + b.h)), y0 + 1, source.rows);
  WorkingImage out;
  cv::Mat crop = source(cv::Rect(x0, y0, x1 - x0, y1 - y0));
  const int longest = std::max(crop.cols, crop.rows);
  double scale = 1.0;
  if (max_side > 0 && longest > max_side) {
    scale = static_cast<double>(max_side) / longest;
    const int w = std::max(1, static_cast<int>(std::lround(crop.cols * scale)));
    const int h = std::max(1, static_cast<int>(std::lround(crop.rows * scale)));
    cv::resize(crop, out.image, cv::Size(w, h), 0, 0, cv::INTER_AREA);
  } else {
    out.image = crop.clone();
  }
  const double sx = static_cast<double>(out.image.cols) / crop.cols;
  const double sy = static_cast<double>(out.image.rows) / crop.rows;
  out.keypoints = record.keypoints;
  for (auto& k : out.keypoints.points) {
    k.x = (k.x - x0) * sx;
    k.y = (k.y - y0) * sy;
  }
  return out;
}

WorkingImage load_working_image(const data::Dataset& dataset, std::size_t index, int max_side) {
  const auto& record = dataset.records.at(index);
  return make_working_image(read_image(dataset.resolve(record)), record, max_side);
}

cv::Mat full_view(const WorkingImage& working, geometry::ImageSize size) {
  cv::Mat out;
  cv::resize(working.image, out, cv::Size(size.width, size.height), 0, 0, cv::INTER_AREA);
  return out;
}

SampleImages prepare_sample(const WorkingImage& working, const model::StreamConfig& stream,
                            const geometry::PartConfig& parts,
                            const augment::AugmentConfig* augment, std::uint64_t seed) {
  cv::Mat image = working.image;
  data::KeypointSet keypoints = working.keypoints;
  if (augment != nullptr) {
    const auto result = augment::augment_with_transform(working.image, *augment, seed);
    image = result.image;
    for (auto& k : keypoints.points) {
      const auto p = geometry::apply_homography(result.transform, k.point());
      k.x = p.x;
      k.y = p.y;
    }
  }
  SampleImages out;
  out.full = full_view({image, keypoints}, stream.full_image);
  const auto config = part_config_for(parts, stream);
  const auto crops = geometry::part_crops(keypoints, config);
  for (std::size_t p = 0; p < crops.size(); ++p) {
    out.parts[p] = geometry::extract_part(image, crops[p], config.image_size(crops[p].part));
  }
  return out;
}

model::TrainBatch assemble_batch(std::span<const SampleImages> samples,
                                 const model::StreamConfig& stream) {
  model::TrainBatch batch;
  std::vector<cv::Mat> full;
  for (const auto& s : samples) full.push_back(s.full);
  batch.full = model::images_to_tensor(full, stream.full_image);
  for (std::size_t p = 0; p < geometry::kAllParts.size(); ++p) {
    std::vector<cv::Mat> images;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].parts[p]) {
        batch.parts[p].samples.push_back(static_cast<int>(i));
        images.push_back(*samples[i].parts[p]);
      }
    }
    const auto size = p == 0 ? stream.trunk_image : stream.limb_image;
    if (!images.empty()) batch.parts[p].images = model::images_to_tensor(images, size);
  }
  return batch;
}

cv::Scalar mean_color(std::span<const WorkingImage> images) {
  cv::Scalar sum(0, 0, 0, 0);
  double pixels = 0.0;
  for (const auto& w : images) {
    const double n = static_cast<double>(w.image.total());
    sum += cv::mean(w.image) * n;
    pixels += n;
  }
  if (pixels == 0.0) return cv::Scalar::all(127.5);
  return sum * (1.0 / pixels);
}

int default_working_side(const model::StreamConfig& stream) {
  return 2 * std::max(stream.full_image.width, stream.full_image.height);
}

geometry::PartConfig part_config_for(const geometry::PartConfig& base,
                                     const model::StreamConfig& stream) {
  geometry::PartConfig config = base;
  config.trunk_image_size = stream.trunk_image;
  config.limb_image_size = stream.limb_image;
  return config;
}

}  // namespace catreid::pipeline
