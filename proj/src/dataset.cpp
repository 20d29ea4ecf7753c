#include "catreid/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "catreid/error.hpp"
#include "catreid/random.hpp"

namespace catreid::data {
namespace {

using nlohmann::json;

[[noreturn]] void invalid(const std::string& message) {
  throw Error(ErrorKind::validation, message);
}

BBox parse_bbox(const json& value) {
  if (!value.is_array() || value.size() != 4) invalid("bbox must be [x, y, w, h]");
  BBox box;
  try {
    box = {value[0].get<double>(), value[1].get<double>(), value[2].get<double>(),
           value[3].get<double>()};
  } catch (const json::exception&) {
    invalid("bbox entries must be numbers");
  }
  return box;
}

std::optional<BBox> read_sidecar(const std::filesystem::path& image) {
  auto sidecar = image;
  sidecar += ".bbox.json";
  std::ifstream in(sidecar);
  if (!in) return std::nullopt;
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    invalid("detector sidecar " + sidecar.string() + " is not valid JSON");
  }
  if (!doc.contains("bbox")) invalid("detector sidecar " + sidecar.string() + " has no bbox");
  return parse_bbox(doc["bbox"]);
}

KeypointSet parse_keypoints(const json& value) {
  KeypointSet set;
  if (value.is_null()) return set;
  if (!value.is_array()) invalid("keypoints must be an array of [x, y, visible]");
  if (value.size() > kKeypointCount) {
    invalid("keypoints has " + std::to_string(value.size()) + " entries, at most 17 allowed");
  }
  for (std::size_t i = 0; i < value.size(); ++i) {
    const json& entry = value[i];
    if (entry.is_null()) continue;
    if (!entry.is_array() || entry.size() != 3) {
      invalid("keypoint " + std::to_string(i) + " must be [x, y, visible]");
    }
    Keypoint kp;
    try {
      kp.x = entry[0].get<double>();
      kp.y = entry[1].get<double>();
      kp.visible = entry[2].is_boolean() ? entry[2].get<bool>() : entry[2].get<double>() > 0.0;
    } catch (const json::exception&) {
      invalid("keypoint " + std::to_string(i) + " has non-numeric fields");
    }
    if (!std::isfinite(kp.x) || !std::isfinite(kp.y)) {
      invalid("keypoint " + std::to_string(i) + " is not finite");
    }
    set.points[i] = kp;
  }
  return set;
}

std::string required_string(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc[key].is_string() || doc[key].get<std::string>().empty()) {
    invalid(std::string("missing field '") + key + "'");
  }
  return doc[key].get<std::string>();
}

}  // namespace

int KeypointSet::visible_count() const {
  return static_cast<int>(std::ranges::count_if(points, [](const Keypoint& k) { return k.visible; }));
}

std::string to_string(Side side) {
  switch (side) {
    case Side::left: return "left";
    case Side::right: return "right";
    case Side::unknown: return "unknown";
  }
  return "unknown";
}

std::string to_string(TimeOfDay time) { return time == TimeOfDay::day ? "day" : "night"; }

Side parse_side(const std::string& text) {
  if (text == "left") return Side::left;
  if (text == "right") return Side::right;
  if (text == "unknown" || text.empty()) return Side::unknown;
  invalid("side must be left, right or unknown, got '" + text + "'");
}

TimeOfDay parse_time_of_day(const std::string& text) {
  if (text == "day") return TimeOfDay::day;
  if (text == "night") return TimeOfDay::night;
  invalid("time_of_day must be day or night, got '" + text + "'");
}

std::string PartitionSetting::name() const {
  if (use_side && use_time) return "side+time";
  if (use_side) return "side";
  if (use_time) return "time";
  return "none";
}

PartitionSetting PartitionSetting::parse(const std::string& text) {
  if (text == "side+time" || text == "full") return {true, true};
  if (text == "side") return {true, false};
  if (text == "time") return {false, true};
  if (text == "none") return {false, false};
  throw Error(ErrorKind::config, "unknown partition '" + text + "' (none|time|side|side+time)");
}

std::array<PartitionSetting, 4> PartitionSetting::all() {
  return {PartitionSetting{false, false}, PartitionSetting{false, true},
          PartitionSetting{true, false}, PartitionSetting{true, true}};
}

std::vector<std::string> Dataset::entities() const {
  std::set<std::string> unique(entity_of.begin(), entity_of.end());
  return {unique.begin(), unique.end()};
}

std::vector<std::string> Dataset::cats() const {
  std::set<std::string> unique;
  for (const auto& r : records) unique.insert(r.cat_id);
  return {unique.begin(), unique.end()};
}

std::vector<int> Dataset::entity_labels() const {
  const auto names = entities();
  std::vector<int> labels;
  labels.reserve(entity_of.size());
  for (const auto& e : entity_of) {
    labels.push_back(static_cast<int>(std::ranges::lower_bound(names, e) - names.begin()));
  }
  return labels;
}

std::filesystem::path Dataset::resolve(const ImageRecord& record) const {
  std::filesystem::path p(record.image_path);
  return p.is_absolute() ? p : root / p;
}

bool DayWindow::is_day(std::int64_t seconds) const {
  const std::int64_t in_day = ((seconds % 86400) + 86400) % 86400;
  const int hour = static_cast<int>(in_day / 3600);
  return hour >= start_hour && hour < end_hour;
}

std::optional<std::int64_t> parse_timestamp(const std::string& text) {
  std::string normalized = text;
  std::ranges::replace(normalized, 'T', ' ');
  std::tm tm{};
  std::istringstream in(normalized);
  in >> std::get_time(&tm, "%Y-%m-%d %H:%M:%S");
  if (in.fail()) return std::nullopt;
  return static_cast<std::int64_t>(timegm(&tm));
}

ImageRecord parse_record(const std::string& line, const std::filesystem::path& root,
                         const LoadOptions& options) {
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::parse_error& e) {
    invalid(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) invalid("record must be a JSON object");

  ImageRecord r;
  r.image_path = required_string(doc, "image");
  r.cat_id = required_string(doc, "cat_id");
  r.id = doc.value("id", r.image_path);
  r.camera_id = doc.value("camera_id", std::string{});
  r.side = parse_side(doc.value("side", std::string{"unknown"}));
  if (doc.contains("image_width")) r.image_width = doc["image_width"].get<int>();
  if (doc.contains("image_height")) r.image_height = doc["image_height"].get<int>();

  if (doc.contains("capture_time") && !doc["capture_time"].is_null()) {
    r.capture_time = parse_timestamp(doc["capture_time"].get<std::string>());
    if (!r.capture_time) invalid("capture_time is not YYYY-MM-DDTHH:MM:SS");
  }
  if (doc.contains("time_of_day") && !doc["time_of_day"].is_null()) {
    r.time_of_day = parse_time_of_day(doc["time_of_day"].get<std::string>());
  } else if (r.capture_time) {
    r.time_of_day = options.day_window.is_day(*r.capture_time) ? TimeOfDay::day : TimeOfDay::night;
  } else {
    invalid("neither time_of_day nor capture_time given");
  }

  if (doc.contains("bbox") && !doc["bbox"].is_null()) {
    r.bbox = parse_bbox(doc["bbox"]);
  } else {
    std::optional<BBox> detected;
    if (options.use_detector_sidecars) {
      std::filesystem::path image(r.image_path);
      detected = read_sidecar(image.is_absolute() ? image : root / image);
    }
    if (!detected) invalid("record has no bbox and no detector sidecar");
    r.bbox = *detected;
  }
  if (!(r.bbox.w > 0.0) || !(r.bbox.h > 0.0)) invalid("bbox must have w > 0 and h > 0");
  if (r.bbox.x < 0.0 || r.bbox.y < 0.0) invalid("bbox lies outside the image");
  if ((r.image_width && r.bbox.x + r.bbox.w > *r.image_width) ||
      (r.image_height && r.bbox.y + r.bbox.h > *r.image_height)) {
    invalid("bbox lies outside the image");
  }

  r.keypoints = parse_keypoints(doc.contains("keypoints") ? doc["keypoints"] : json());
  for (int i = 0; i < kKeypointCount; ++i) {
    const Keypoint& k = r.keypoints[i];
    if (k.visible && !r.bbox.contains(k.x, k.y)) {
      invalid("visible keypoint " + std::to_string(i) + " lies outside the bbox");
    }
  }
  return r;
}

std::string to_manifest_line(const ImageRecord& r) {
  json doc;
  doc["id"] = r.id;
  doc["image"] = r.image_path;
  doc["cat_id"] = r.cat_id;
  doc["side"] = to_string(r.side);
  doc["time_of_day"] = to_string(r.time_of_day);
  if (r.capture_time) {
    const std::time_t t = static_cast<std::time_t>(*r.capture_time);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S");
    doc["capture_time"] = out.str();
  }
  doc["camera_id"] = r.camera_id;
  if (r.image_width) doc["image_width"] = *r.image_width;
  if (r.image_height) doc["image_height"] = *r.image_height;
  doc["bbox"] = {r.bbox.x, r.bbox.y, r.bbox.w, r.bbox.h};
  json kps = json::array();
  for (const auto& k : r.keypoints.points) kps.push_back({k.x, k.y, k.visible ? 1 : 0});
  doc["keypoints"] = kps;
  return doc.dump();
}

void write_manifest(const std::filesystem::path& path, const std::vector<ImageRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write manifest " + path.string());
  for (const auto& r : records) out << to_manifest_line(r) << '\n';
}

ManifestLoad load_manifest(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "manifest not found: " + path.string());
  ManifestLoad result;
  result.dataset.root = path.parent_path();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ImageRecord r = parse_record(line, result.dataset.root, options);
      if (r.side == Side::unknown) {
        result.issues.push_back({line_no, "side=unknown cannot be used for re-identification"});
        continue;
      }
      result.dataset.records.push_back(std::move(r));
    } catch (const Error& e) {
      if (!options.skip_invalid) {
        throw Error(ErrorKind::validation,
                    path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
      result.issues.push_back({line_no, e.what()});
    }
  }
  return result;
}

std::string entity_key(const ImageRecord& record, const PartitionSetting& setting) {
  std::string key = record.cat_id;
  if (setting.use_side) key += "/" + to_string(record.side);
  if (setting.use_time) key += "/" + to_string(record.time_of_day);
  return key;
}

Dataset derive_entities(const Dataset& dataset, const PartitionSetting& setting) {
  Dataset out = dataset;
  out.partition = setting;
  out.entity_of.clear();
  out.entity_of.reserve(out.records.size());
  for (const auto& r : out.records) {
    if (setting.use_side && r.side == Side::unknown) {
      invalid("record '" + r.id + "' has side=unknown");
    }
    out.entity_of.push_back(entity_key(r, setting));
  }
  return out;
}

Dataset select(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.partition = dataset.partition;
  out.root = dataset.root;
  const bool with_entities = dataset.has_entities();
  for (std::size_t i : indices) {
    out.records.push_back(dataset.records.at(i));
    if (with_entities) out.entity_of.push_back(dataset.entity_of.at(i));
  }
  return out;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& dataset, double train_ratio,
                                             std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
    throw Error(ErrorKind::config, "train ratio must lie in (0, 1)");
  }
  std::vector<std::string> cats = dataset.cats();
  if (cats.size() < 2) invalid("a train/test split needs at least 2 cats");
  const auto n_train =
      static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(cats.size())));
  if (n_train == 0 || n_train >= cats.size()) {
    invalid("ratio " + std::to_string(train_ratio) + " over " + std::to_string(cats.size()) +
            " cats leaves one side empty");
  }
  Rng rng(seed);
  shuffle(cats, rng);
  const std::set<std::string> train_cats(cats.begin(), cats.begin() + n_train);
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    (train_cats.contains(dataset.records[i].cat_id) ? train_idx : test_idx).push_back(i);
  }
  return {select(dataset, train_idx), select(dataset, test_idx)};
}

Dataset filter_sequences(const Dataset& dataset, double window_seconds) {
  std::vector<std::size_t> order(dataset.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
    const auto& ra = dataset.records[a];
    const auto& rb = dataset.records[b];
    return std::tie(ra.camera_id, ra.cat_id, ra.capture_time) <
           std::tie(rb.camera_id, rb.cat_id, rb.capture_time);
  });
  std::vector<bool> keep(order.size(), true);
  std::map<std::pair<std::string, std::string>, std::int64_t> last_kept;
  for (std::size_t i : order) {
    const auto& r = dataset.records[i];
    if (!r.capture_time) continue;
    const auto key = std::make_pair(r.camera_id, r.cat_id);
    auto it = last_kept.find(key);
    if (it != last_kept.end() &&
        static_cast<double>(*r.capture_time - it->second) <= window_seconds) {
      keep[i] = false;
      continue;
    }
    last_kept[key] = *r.capture_time;
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (keep[i]) kept.push_back(i);
  return select(dataset, kept);
}

}  // namespace catreid::data
