#pragma once

// Checkpoint container.
//
//   bytes 0-7   magic "CRIDCKPT"
//   bytes 8-11  uint32 format version (little-endian)
//   bytes 12-19 uint64 header length N
//   next N      UTF-8 JSON header:
//                 { "format_version", "stream_config", "entities",
//                   "metadata", "tensors": [{"name","shape","offset"}] }
//   remainder   float32 little-endian tensor payload; offsets are in floats
//               from the start of the payload.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "catreid/network.hpp"
#include "catreid/nn.hpp"

namespace catreid::model {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct TensorBlob {
  std::vector<int> shape;
  std::vector<float> data;
};

class Checkpoint {
 public:
  StreamConfig stream;
  std::vector<std::string> entities;
  std::map<std::string, TensorBlob> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  void save(const std::filesystem::path& path) const;
  /// Loads only tensors whose name passes `filter` (all when empty).
  static Checkpoint load(const std::filesystem::path& path,
                         const std::function<bool(const std::string&)>& filter = {});

  /// Copies every named parameter (trainable or buffer) into `tensors`.
  void store(const nn::NamedParameters& params, const std::string& prefix = "");
  /// Restores parameters from `tensors`; throws Error(model) naming the
  /// first missing or mis-shaped tensor.
  void restore(const nn::NamedParameters& params, const std::string& prefix = "") const;
};

}  // namespace catreid::model
