#pragma once

// Annotated image manifests: loading, validation, entity derivation and the
// cat-level train/test split.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace catreid::data {

inline constexpr int kKeypointCount = 17;
/// Indices 0-14 follow the ATRW body-joint schema; these two are additions.
inline constexpr int kTailProximal = 15;
inline constexpr int kTailDistal = 16;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  bool visible = false;

  Point point() const { return {x, y}; }
};

/// Always exactly 17 entries; missing annotations are invisible.
struct KeypointSet {
  std::array<Keypoint, kKeypointCount> points{};

  const Keypoint& operator[](int i) const { return points.at(static_cast<std::size_t>(i)); }
  Keypoint& operator[](int i) { return points.at(static_cast<std::size_t>(i)); }
  int visible_count() const;
};

enum class Side { left, right, unknown };
enum class TimeOfDay { day, night };

std::string to_string(Side side);
std::string to_string(TimeOfDay time);
Side parse_side(const std::string& text);
TimeOfDay parse_time_of_day(const std::string& text);

struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool contains(double px, double py) const {
    return px >= x && px <= x + w && py >= y && py <= y + h;
  }
};

struct ImageRecord {
  std::string id;
  std::string image_path;
  std::string cat_id;
  Side side = Side::unknown;
  TimeOfDay time_of_day = TimeOfDay::night;
  /// Seconds since the epoch of the naive local timestamp, when known.
  std::optional<std::int64_t> capture_time;
  std::string camera_id;
  BBox bbox;
  KeypointSet keypoints;
  /// Source image dimensions when the manifest states them.
  std::optional<int> image_width;
  std::optional<int> image_height;
};

struct PartitionSetting {
  bool use_side = true;
  bool use_time = true;

  /// "none", "time", "side", "side+time".
  std::string name() const;
  static PartitionSetting parse(const std::string& text);
  static std::array<PartitionSetting, 4> all();
  friend bool operator==(const PartitionSetting&, const PartitionSetting&) = default;
};

struct Dataset {
  std::vector<ImageRecord> records;
  /// Parallel to `records`; empty until entities are derived.
  std::vector<std::string> entity_of;
  PartitionSetting partition;
  /// Directory relative image paths are resolved against.
  std::filesystem::path root;

  bool has_entities() const { return !records.empty() && entity_of.size() == records.size(); }
  /// Distinct entity ids, sorted.
  std::vector<std::string> entities() const;
  /// Distinct cat ids, sorted.
  std::vector<std::string> cats() const;
  /// Dense labels into `entities()`, parallel to `records`.
  std::vector<int> entity_labels() const;
  std::filesystem::path resolve(const ImageRecord& record) const;
};

struct DayWindow {
  int start_hour = 6;
  int end_hour = 18;
  bool is_day(std::int64_t seconds_since_epoch) const;
};

struct LoadOptions {
  /// Report and skip malformed/invalid lines instead of failing on the first.
  bool skip_invalid = false;
  DayWindow day_window;
  /// Look for `<image>.bbox.json` detector output when a record lacks a bbox.
  bool use_detector_sidecars = true;
};

struct ManifestIssue {
  int line = 0;
  std::string message;
};

struct ManifestLoad {
  Dataset dataset;
  /// Rejected lines (malformed, invalid, or unusable such as side=unknown).
  std::vector<ManifestIssue> issues;
};

/// Parses a JSON-lines manifest. Throws Error(io) for a missing file and
/// Error(validation) naming the line for the first invalid record unless
/// `skip_invalid` is set. Records with side=unknown are always rejected into
/// `issues` since they cannot form entities.
ManifestLoad load_manifest(const std::filesystem::path& path, const LoadOptions& options = {});

/// Parses one manifest line; throws Error(validation) on any violation.
ImageRecord parse_record(const std::string& line, const std::filesystem::path& root,
                         const LoadOptions& options = {});

/// Serialises a record back to a manifest line.
std::string to_manifest_line(const ImageRecord& record);
void write_manifest(const std::filesystem::path& path, const std::vector<ImageRecord>& records);

/// Parses "YYYY-MM-DDTHH:MM:SS" (or with a space) as a naive timestamp.
std::optional<std::int64_t> parse_timestamp(const std::string& text);

std::string entity_key(const ImageRecord& record, const PartitionSetting& setting);

/// Assigns entity ids from observed (cat, side?, time?) tuples.
Dataset derive_entities(const Dataset& dataset, const PartitionSetting& setting);

/// Splits at cat level; all images of a cat land on one side.
std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double train_ratio,
                                             std::uint64_t seed);

/// Drops images taken within `window_seconds` of the last kept image of the
/// same camera and cat. Records without a capture time are kept.
Dataset filter_sequences(const Dataset& dataset, double window_seconds = 2.0);

/// Subset by record indices, carrying entity assignments along.
Dataset select(const Dataset& dataset, const std::vector<std::size_t>& indices);

}  // namespace catreid::data
