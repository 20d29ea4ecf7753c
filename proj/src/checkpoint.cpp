#include "catreid/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "catreid/error.hpp"

namespace catreid::model {
namespace {

constexpr char kMagic[8] = {'C', 'R', 'I', 'D', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::int64_t element_count(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw Error(ErrorKind::model, what + ": truncated checkpoint header");
  }
  return value;
}

std::string shape_text(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + ")";
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["stream_config"] = to_json(stream);
  header["entities"] = entities;
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& [name, blob] : tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", blob.shape}, {"offset", offset}});
    offset += static_cast<std::int64_t>(blob.data.size());
  }
  const std::string text = header.dump();

  // Write to a sibling file and rename so a crash never leaves a torn checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, kCheckpointFormatVersion);
    write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, blob] : tensors) {
      out.write(reinterpret_cast<const char*>(blob.data.data()),
                static_cast<std::streamsize>(blob.data.size() * sizeof(float)));
    }
    if (!out) throw Error(ErrorKind::io, "failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::io, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path,
                            const std::function<bool(const std::string&)>& filter) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open checkpoint " + path.string());
  const std::string where = path.string();
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::model, where + ": not a checkpoint file");
  }
  const auto version = read_pod<std::uint32_t>(in, where);
  if (version != kCheckpointFormatVersion) {
    throw Error(ErrorKind::model, where + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto length = read_pod<std::uint64_t>(in, where);
  if (length > (std::uint64_t{1} << 30)) throw Error(ErrorKind::model, where + ": header too large");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
    throw Error(ErrorKind::model, where + ": truncated checkpoint header");
  }
  const std::streamoff payload_start = in.tellg();

  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(text);
    ckpt.stream = stream_config_from_json(header.at("stream_config"));
    ckpt.entities = header.at("entities").get<std::vector<std::string>>();
    ckpt.metadata = header.value("metadata", nlohmann::json::object());
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      if (filter && !filter(name)) continue;
      TensorBlob blob;
      blob.shape = t.at("shape").get<std::vector<int>>();
      const auto n = element_count(blob.shape);
      const auto offset = t.at("offset").get<std::int64_t>();
      if (n < 0 || offset < 0) throw Error(ErrorKind::model, where + ": bad tensor entry " + name);
      blob.data.resize(static_cast<std::size_t>(n));
      in.seekg(payload_start + offset * static_cast<std::streamoff>(sizeof(float)));
      if (!in.read(reinterpret_cast<char*>(blob.data.data()),
                   static_cast<std::streamsize>(n * sizeof(float)))) {
        throw Error(ErrorKind::model, where + ": truncated payload for tensor " + name);
      }
      ckpt.tensors.emplace(name, std::move(blob));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::model, where + ": malformed checkpoint header: " + e.what());
  }
  return ckpt;
}

void Checkpoint::store(const nn::NamedParameters& params, const std::string& prefix) {
  for (const auto& [name, p] : params) {
    tensors[prefix + name] = TensorBlob{p->shape, p->value};
  }
}

void Checkpoint::restore(const nn::NamedParameters& params, const std::string& prefix) const {
  for (const auto& [name, p] : params) {
    const auto it = tensors.find(prefix + name);
    if (it == tensors.end()) {
      throw Error(ErrorKind::model, "checkpoint is missing tensor " + prefix + name);
    }
    if (it->second.shape != p->shape) {
      throw Error(ErrorKind::model, "tensor " + prefix + name + " has shape " +
                                        shape_text(it->second.shape) + ", model expects " +
                                        shape_text(p->shape));
    }
  }
  for (const auto& [name, p] : params) p->value = tensors.at(prefix + name).data;
}

}  // namespace catreid::model
