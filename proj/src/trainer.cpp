#include "catreid/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "catreid/checkpoint.hpp"
#include "catreid/error.hpp"
#include "catreid/evaluator.hpp"
#include "catreid/pipeline.hpp"
#include "catreid/random.hpp"

namespace catreid::train {
namespace {

using config::format_double;
using geometry::Part;

std::string range_text(augment::Range r) { return format_double(r.lo) + ", " + format_double(r.hi); }

augment::Range parse_range(const std::string& key, const std::string& text) {
  const auto v = config::parse_double_list(key, text);
  if (v.size() != 2) throw Error(ErrorKind::config, key + ": expected 'lo, hi'");
  return {v[0], v[1]};
}

std::string size_text(geometry::ImageSize s) {
  return std::to_string(s.width) + "x" + std::to_string(s.height);
}

geometry::ImageSize parse_image_size(const std::string& key, const std::string& text) {
  const auto [w, h] = config::parse_size(key, text);
  return {w, h};
}

std::string ints_text(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
  return s;
}

std::vector<int> parse_ints(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (double d : config::parse_double_list(key, text)) {
    if (d != std::floor(d)) throw Error(ErrorKind::config, key + ": expected integers");
    out.push_back(static_cast<int>(d));
  }
  return out;
}

std::string doubles_text(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

struct KeyHandler {
  std::string key;
  std::string description;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&, const std::filesystem::path&)> set;
};

std::filesystem::path resolve_path(const std::string& value, const std::filesystem::path& base) {
  if (value.empty()) return {};
  std::filesystem::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

template <typename T>
KeyHandler number_key(std::string key, std::string description, T TrainConfig::*field) {
  return {key, std::move(description),
          [field](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*field);
            else return std::to_string(c.*field);
          },
          [field, key](TrainConfig& c, const std::string& v, const std::filesystem::path&) {
            if constexpr (std::is_floating_point_v<T>) c.*field = config::parse_double(key, v);
            else c.*field = static_cast<T>(config::parse_int(key, v));
          }};
}

#define CATREID_KEY(KEY, DESC, GET, SET)                                                    \
  KeyHandler {                                                                              \
    KEY, DESC, [](const TrainConfig& c) -> std::string { return GET; },                     \
        [](TrainConfig& c, const std::string& v, const std::filesystem::path& base) {       \
          const std::string key = KEY;                                                      \
          (void)base;                                                                       \
          SET;                                                                              \
        }                                                                                   \
  }

std::string pair_text(const TrainConfig& c, Part p) {
  const auto& pr = c.parts.limb_keypoint_pairs.at(p);
  return std::to_string(pr.first) + ", " + std::to_string(pr.second);
}

void set_pair(TrainConfig& c, Part p, const std::string& key, const std::string& v) {
  const auto ints = parse_ints(key, v);
  if (ints.size() != 2) throw Error(ErrorKind::config, key + ": expected two keypoint indices");
  c.parts.limb_keypoint_pairs[p] = {ints[0], ints[1]};
}

loss::HeadWeights& head(TrainConfig& c, int h) { return c.loss.head_weights[static_cast<std::size_t>(h)]; }
const loss::HeadWeights& head(const TrainConfig& c, int h) {
  return c.loss.head_weights[static_cast<std::size_t>(h)];
}

const std::vector<KeyHandler>& handlers() {
  static const std::vector<KeyHandler> table = {
      number_key("epochs", "Training epochs.", &TrainConfig::epochs),
      number_key("P", "Entities per batch.", &TrainConfig::P),
      number_key("K", "Images per entity in a batch.", &TrainConfig::K),
      number_key("batches_per_epoch", "Batches per epoch; 0 covers every image and entity once.",
                 &TrainConfig::batches_per_epoch),
      CATREID_KEY("optimizer", "adam or sgd (momentum).", c.optimizer,
                  c.optimizer = v; if (v != "adam" && v != "sgd") throw Error(ErrorKind::config, key + ": expected adam or sgd")),
      number_key("lr", "Base learning rate.", &TrainConfig::lr),
      number_key("momentum", "SGD momentum, or Adam beta1.", &TrainConfig::momentum),
      number_key("beta2", "Adam beta2.", &TrainConfig::beta2),
      number_key("weight_decay", "L2 penalty added to every trainable gradient.", &TrainConfig::weight_decay),
      CATREID_KEY("lr_milestones", "Epoch fractions where the rate is multiplied by lr_decay.",
                  doubles_text(c.lr_milestones), c.lr_milestones = config::parse_double_list(key, v)),
      number_key("lr_decay", "Step-decay factor.", &TrainConfig::lr_decay),
      CATREID_KEY("seed", "Seed for initialisation, sampling and augmentation.", std::to_string(c.seed),
                  c.seed = static_cast<std::uint64_t>(config::parse_int(key, v))),
      number_key("working_max_side", "Longer side of cached bbox crops; 0 = twice the full-image side.",
                 &TrainConfig::working_max_side),
      CATREID_KEY("data.manifest", "Training manifest (relative to the config file).", c.manifest.string(),
                  c.manifest = resolve_path(v, base)),
      CATREID_KEY("data.partition", "Entity partition: none, time, side or side+time.", c.partition,
                  (void)data::PartitionSetting::parse(v); c.partition = v),
      number_key("data.dedup_seconds", "Drop images this close to the previous one of the same camera and cat (0 = off).",
                 &TrainConfig::dedup_seconds),
      CATREID_KEY("pretrained.full", "Checkpoint-format file with backbone.* tensors for the full stream.",
                  c.pretrained_full.string(), c.pretrained_full = resolve_path(v, base)),
      CATREID_KEY("pretrained.partial", "Checkpoint-format file with backbone.* tensors for every partial stream.",
                  c.pretrained_partial.string(), c.pretrained_partial = resolve_path(v, base)),

      CATREID_KEY("augment.blur", "Enable Gaussian blur.", bool_text(c.augment.blur), c.augment.blur = config::parse_bool(key, v)),
      CATREID_KEY("augment.blur_sigma", "Blur sigma range in pixels.", range_text(c.augment.blur_sigma),
                  c.augment.blur_sigma = parse_range(key, v)),
      CATREID_KEY("augment.noise", "Enable Gaussian noise.", bool_text(c.augment.noise), c.augment.noise = config::parse_bool(key, v)),
      CATREID_KEY("augment.noise_std", "Noise std range as a fraction of full scale.", range_text(c.augment.noise_std),
                  c.augment.noise_std = parse_range(key, v)),
      CATREID_KEY("augment.perspective", "Enable perspective distortion.", bool_text(c.augment.perspective),
                  c.augment.perspective = config::parse_bool(key, v)),
      CATREID_KEY("augment.perspective_distortion", "Max corner shift as a fraction of half the image size.",
                  format_double(c.augment.perspective_distortion),
                  c.augment.perspective_distortion = config::parse_double(key, v)),
      CATREID_KEY("augment.rotation", "Enable rotation.", bool_text(c.augment.rotation),
                  c.augment.rotation = config::parse_bool(key, v)),
      CATREID_KEY("augment.rotation_degrees", "Rotation range in degrees.", range_text(c.augment.rotation_degrees),
                  c.augment.rotation_degrees = parse_range(key, v)),
      CATREID_KEY("augment.erase", "Enable random erasing (fill = dataset mean colour).", bool_text(c.augment.erase),
                  c.augment.erase = config::parse_bool(key, v)),
      CATREID_KEY("augment.erase_probability", "Probability of erasing one region.", format_double(c.augment.erase_probability),
                  c.augment.erase_probability = config::parse_double(key, v)),
      CATREID_KEY("augment.erase_area", "Erased area range as a fraction of the image.", range_text(c.augment.erase_area),
                  c.augment.erase_area = parse_range(key, v)),

      CATREID_KEY("loss.triplet_margin", "Batch-hard triplet margin.", format_double(c.loss.triplet_margin),
                  c.loss.triplet_margin = config::parse_double(key, v)),
      CATREID_KEY("loss.use_arcface", "Use ArcFace logits for the ID terms.", bool_text(c.loss.use_arcface),
                  c.loss.use_arcface = config::parse_bool(key, v)),
      CATREID_KEY("loss.arcface_scale", "ArcFace scale s.", format_double(c.loss.arcface_scale),
                  c.loss.arcface_scale = config::parse_double(key, v)),
      CATREID_KEY("loss.arcface_margin", "ArcFace angular margin m in radians.", format_double(c.loss.arcface_margin),
                  c.loss.arcface_margin = config::parse_double(key, v)),
      CATREID_KEY("loss.full.id", "ID weight on d_full.", format_double(head(c, 0).id), head(c, 0).id = config::parse_double(key, v)),
      CATREID_KEY("loss.full.triplet", "Triplet weight on d_full.", format_double(head(c, 0).triplet),
                  head(c, 0).triplet = config::parse_double(key, v)),
      CATREID_KEY("loss.ft.id", "ID weight on z_ft.", format_double(head(c, 1).id), head(c, 1).id = config::parse_double(key, v)),
      CATREID_KEY("loss.ft.triplet", "Triplet weight on z_ft.", format_double(head(c, 1).triplet),
                  head(c, 1).triplet = config::parse_double(key, v)),
      CATREID_KEY("loss.fl.id", "ID weight on z_fl.", format_double(head(c, 2).id), head(c, 2).id = config::parse_double(key, v)),
      CATREID_KEY("loss.fl.triplet", "Triplet weight on z_fl.", format_double(head(c, 2).triplet),
                  head(c, 2).triplet = config::parse_double(key, v)),

      CATREID_KEY("stream.full_backbone", "Full-stream backbone: resnet18..resnet152 or basic|bottleneck:widths:blocks.",
                  c.stream.full_backbone, c.stream.full_backbone = v),
      CATREID_KEY("stream.partial_backbone", "Backbone of the trunk and limb/tail streams.", c.stream.partial_backbone,
                  c.stream.partial_backbone = v),
      CATREID_KEY("stream.embed_dim", "Embedding size E.", std::to_string(c.stream.embed_dim),
                  c.stream.embed_dim = static_cast<int>(config::parse_int(key, v))),
      CATREID_KEY("stream.limb_embed_dim", "Block size per limb.", std::to_string(c.stream.limb_embed_dim),
                  c.stream.limb_embed_dim = static_cast<int>(config::parse_int(key, v))),
      CATREID_KEY("stream.tail_embed_dim", "Block size per tail segment.", std::to_string(c.stream.tail_embed_dim),
                  c.stream.tail_embed_dim = static_cast<int>(config::parse_int(key, v))),
      CATREID_KEY("stream.sharing", "Limb/tail backbone sharing: shared, per_limb or per_part.",
                  model::to_string(c.stream.sharing), c.stream.sharing = model::parse_sharing(v)),
      CATREID_KEY("stream.full_image", "Full-stream input WxH.", size_text(c.stream.full_image),
                  c.stream.full_image = parse_image_size(key, v)),
      CATREID_KEY("stream.trunk_image", "Trunk input WxH.", size_text(c.stream.trunk_image),
                  c.stream.trunk_image = parse_image_size(key, v)),
      CATREID_KEY("stream.limb_image", "Limb and tail input WxH.", size_text(c.stream.limb_image),
                  c.stream.limb_image = parse_image_size(key, v)),

      CATREID_KEY("parts.limb_ratio", "Limb rectangle width as a fraction of its length.", format_double(c.parts.limb_ratio),
                  c.parts.limb_ratio = config::parse_double(key, v)),
      CATREID_KEY("parts.trunk_padding", "Trunk growth per side as a fraction of the body-axis length.",
                  format_double(c.parts.trunk_padding), c.parts.trunk_padding = config::parse_double(key, v)),
      CATREID_KEY("parts.limb_fl", "Keypoint pair of the front-left limb.", pair_text(c, Part::limb_fl),
                  set_pair(c, Part::limb_fl, key, v)),
      CATREID_KEY("parts.limb_fr", "Keypoint pair of the front-right limb.", pair_text(c, Part::limb_fr),
                  set_pair(c, Part::limb_fr, key, v)),
      CATREID_KEY("parts.limb_bl", "Keypoint pair of the back-left limb.", pair_text(c, Part::limb_bl),
                  set_pair(c, Part::limb_bl, key, v)),
      CATREID_KEY("parts.limb_br", "Keypoint pair of the back-right limb.", pair_text(c, Part::limb_br),
                  set_pair(c, Part::limb_br, key, v)),
      CATREID_KEY("parts.trunk_keypoints", "Keypoints enclosed by the trunk rectangle.", ints_text(c.parts.trunk_keypoints),
                  c.parts.trunk_keypoints = parse_ints(key, v)),
      CATREID_KEY("parts.front_anchor", "Keypoints averaged for the front end of the body axis.",
                  ints_text(c.parts.front_anchor), c.parts.front_anchor = parse_ints(key, v)),
      CATREID_KEY("parts.rear_anchor", "Keypoints averaged for the rear end of the body axis.",
                  ints_text(c.parts.rear_anchor), c.parts.rear_anchor = parse_ints(key, v)),
      CATREID_KEY("parts.tail_root", "Keypoint where the proximal tail segment starts.", std::to_string(c.parts.tail_root),
                  c.parts.tail_root = static_cast<int>(config::parse_int(key, v))),
      CATREID_KEY("parts.min_trunk_points", "Visible trunk keypoints needed for a valid trunk crop.",
                  std::to_string(c.parts.min_trunk_points),
                  c.parts.min_trunk_points = static_cast<int>(config::parse_int(key, v))),
  };
  return table;
}

#undef CATREID_KEY

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::config, "epochs must be >= 1");
  if (P < 2) throw Error(ErrorKind::config, "P must be >= 2");
  if (K < 2) throw Error(ErrorKind::config, "K must be >= 2");
  if (batches_per_epoch < 0) throw Error(ErrorKind::config, "batches_per_epoch must be >= 0");
  if (optimizer != "adam" && optimizer != "sgd") throw Error(ErrorKind::config, "optimizer must be adam or sgd");
  if (!(lr > 0.0)) throw Error(ErrorKind::config, "lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorKind::config, "momentum must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw Error(ErrorKind::config, "beta2 must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw Error(ErrorKind::config, "weight_decay must be >= 0");
  if (!(lr_decay > 0.0)) throw Error(ErrorKind::config, "lr_decay must be > 0");
  for (double m : lr_milestones) {
    if (!(m > 0.0 && m < 1.0)) throw Error(ErrorKind::config, "lr_milestones must lie in (0, 1)");
  }
  if (working_max_side < 0) throw Error(ErrorKind::config, "working_max_side must be >= 0");
  if (!(dedup_seconds >= 0.0)) throw Error(ErrorKind::config, "data.dedup_seconds must be >= 0");
  (void)data::PartitionSetting::parse(partition);
  augment.validate();
  loss.validate();
  model::StreamConfig s = stream;
  s.num_entities = std::max(1, s.num_entities);
  s.validate();
  parts.validate();
}

double TrainConfig::learning_rate(int epoch) const {
  double rate = lr;
  for (double m : lr_milestones) {
    if (epoch >= static_cast<int>(std::lround(m * epochs))) rate *= lr_decay;
  }
  return rate;
}

TrainConfig train_config_from(const config::KeyValueFile& file) {
  TrainConfig c;
  const auto base = file.source.parent_path();
  for (const auto& [key, entry] : file.entries) {
    const auto& table = handlers();
    const auto it = std::find_if(table.begin(), table.end(), [&](const KeyHandler& h) { return h.key == key; });
    const std::string where = (file.source.empty() ? std::string("<config>") : file.source.string()) + ":" +
                              std::to_string(entry.line) + ": ";
    if (it == table.end()) throw Error(ErrorKind::config, where + "unknown key '" + key + "'");
    try {
      it->set(c, entry.value, base);
    } catch (const Error& e) {
      throw Error(ErrorKind::config, where + e.what());
    }
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  return train_config_from(config::KeyValueFile::load(path));
}

std::string to_text(const TrainConfig& config) {
  std::string out;
  for (const auto& h : handlers()) out += h.key + " = " + h.get(config) + "\n";
  return out;
}

std::vector<KeyDoc> config_keys() {
  const TrainConfig defaults;
  std::vector<KeyDoc> out;
  for (const auto& h : handlers()) out.push_back({h.key, h.get(defaults), h.description});
  return out;
}

// PkSampler

PkSampler::PkSampler(std::vector<int> labels, int P, int K, std::uint64_t seed)
    : records_(labels.size()), P_(P), K_(K), seed_(seed) {
  if (P < 1 || K < 1) throw Error(ErrorKind::validation, "P and K must be positive");
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw Error(ErrorKind::validation, "negative entity label");
    max_label = std::max(max_label, l);
  }
  by_entity_.resize(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i) by_entity_[labels[i]].push_back(i);
  std::erase_if(by_entity_, [](const auto& v) { return v.empty(); });
  if (static_cast<int>(by_entity_.size()) < P) {
    throw Error(ErrorKind::validation, "PK sampling needs at least P=" + std::to_string(P) +
                                           " entities, dataset has " + std::to_string(by_entity_.size()));
  }
}

int PkSampler::default_batches() const {
  const auto per_batch = static_cast<std::size_t>(P_ * K_);
  const auto cover_images = (records_ + per_batch - 1) / per_batch;
  const auto cover_entities = (by_entity_.size() + P_ - 1) / P_;
  return static_cast<int>(std::max(cover_images, cover_entities));
}

std::vector<std::vector<std::size_t>> PkSampler::epoch(int epoch, int batches) const {
  Rng rng(derive_seed(seed_, 0x706b, static_cast<std::uint64_t>(epoch)));
  std::vector<int> pending;
  auto refill = [&] {
    std::vector<int> perm(by_entity_.size());
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm, rng);
    pending.insert(pending.end(), perm.begin(), perm.end());
  };
  std::vector<std::vector<std::size_t>> out;
  for (int b = 0; b < batches; ++b) {
    std::vector<int> chosen;
    while (static_cast<int>(chosen.size()) < P_) {
      if (pending.empty()) refill();
      // Take the first pending entity not already in this batch.
      auto it = std::find_if(pending.begin(), pending.end(), [&](int e) {
        return std::find(chosen.begin(), chosen.end(), e) == chosen.end();
      });
      if (it == pending.end()) {
        refill();
        continue;
      }
      chosen.push_back(*it);
      pending.erase(it);
    }
    std::vector<std::size_t> batch;
    for (int e : chosen) {
      std::vector<std::size_t> pool = by_entity_[e];
      shuffle(pool, rng);
      if (static_cast<int>(pool.size()) >= K_) {
        batch.insert(batch.end(), pool.begin(), pool.begin() + K_);
      } else {
        // Every image once, remaining slots drawn with replacement.
        batch.insert(batch.end(), pool.begin(), pool.end());
        for (auto i = static_cast<int>(pool.size()); i < K_; ++i) {
          batch.push_back(pool[uniform_index(rng, pool.size())]);
        }
      }
    }
    out.push_back(std::move(batch));
  }
  return out;
}

// Optimizer

Optimizer::Optimizer(const TrainConfig& config)
    : kind_(config.optimizer),
      momentum_(config.momentum),
      beta2_(config.beta2),
      weight_decay_(config.weight_decay) {}

std::vector<float>& Optimizer::slot(const std::string& name, std::size_t size) {
  auto& p = state_[name];
  if (p.value.size() != size) {
    p.shape = {static_cast<int>(size)};
    p.value.assign(size, 0.0f);
    p.trainable = false;
  }
  return p.value;
}

nn::NamedParameters Optimizer::state(const nn::NamedParameters& params) {
  nn::NamedParameters out;
  for (const auto& [name, p] : params) {
    if (!p->trainable) continue;
    slot("optim.m." + name, p->value.size());
    out.emplace_back("optim.m." + name, &state_["optim.m." + name]);
    if (kind_ == "adam") {
      slot("optim.v." + name, p->value.size());
      out.emplace_back("optim.v." + name, &state_["optim.v." + name]);
    }
  }
  return out;
}

void Optimizer::step(const nn::NamedParameters& params, double lr) {
  ++steps_;
  const double b1 = momentum_, b2 = beta2_, wd = weight_decay_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (const auto& [name, p] : params) {
    if (!p->trainable) continue;
    if (p->grad.size() != p->value.size()) continue;
    auto& m = slot("optim.m." + name, p->value.size());
    if (kind_ == "adam") {
      auto& v = slot("optim.v." + name, p->value.size());
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const double g = p->grad[i] + wd * p->value[i];
        m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g);
        v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * g * g);
        const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8);
        p->value[i] = static_cast<float>(p->value[i] - lr * update);
      }
    } else {
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const double g = p->grad[i] + wd * p->value[i];
        m[i] = static_cast<float>(b1 * m[i] + g);
        p->value[i] = static_cast<float>(p->value[i] - lr * m[i]);
      }
    }
  }
}

std::string format_metrics_row(const MetricsRow& row) {
  std::ostringstream out;
  out << row.epoch << ',' << row.step;
  char buf[64];
  for (const auto& h : row.loss.heads) {
    std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", h.id, h.triplet);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", row.loss.total, row.lr);
  out << buf;
  return out.str();
}

void load_pretrained(const std::filesystem::path& path, const nn::NamedParameters& params,
                     const std::vector<std::string>& prefixes) {
  const auto ckpt = model::Checkpoint::load(
      path, [](const std::string& name) { return name.starts_with("backbone."); });
  if (ckpt.tensors.empty()) {
    throw Error(ErrorKind::model, path.string() + ": no backbone.* tensors to load");
  }
  for (const auto& prefix : prefixes) {
    nn::NamedParameters subset;
    for (const auto& [name, p] : params) {
      if (name.starts_with(prefix + "backbone.")) subset.emplace_back(name.substr(prefix.size()), p);
    }
    ckpt.restore(subset);
  }
}

namespace {

loss::Matrix to_matrix(const nn::Tensor& t) {
  loss::Matrix m(t.dim(0), t.dim(1));
  for (int i = 0; i < t.dim(0); ++i) {
    for (int j = 0; j < t.dim(1); ++j) m(i, j) = t.data[static_cast<std::size_t>(i) * t.dim(1) + j];
  }
  return m;
}

loss::Matrix to_matrix(const nn::Parameter& p) {
  loss::Matrix m(p.shape[0], p.shape[1]);
  for (int i = 0; i < p.shape[0]; ++i) {
    for (int j = 0; j < p.shape[1]; ++j) m(i, j) = p.value[static_cast<std::size_t>(i) * p.shape[1] + j];
  }
  return m;
}

nn::Tensor to_tensor(const loss::Matrix& m) {
  nn::Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      t.data[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
    }
  }
  return t;
}

void read_metrics_prefix(const std::filesystem::path& path, std::int64_t steps, std::vector<std::string>& rows) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line) && static_cast<std::int64_t>(rows.size()) < steps) rows.push_back(line);
  if (static_cast<std::int64_t>(rows.size()) != steps) {
    throw Error(ErrorKind::io, path.string() + ": metrics log is shorter than the checkpoint's step count");
  }
}

}  // namespace

TrainResult train(const TrainConfig& config_in, const data::Dataset& train_set, const TrainOptions& options) {
  config_in.validate();
  if (!train_set.has_entities()) throw Error(ErrorKind::validation, "train: entities not derived");
  TrainConfig config = config_in;
  const auto entities = train_set.entities();
  config.stream.num_entities = static_cast<int>(entities.size());
  const auto labels = train_set.entity_labels();
  const PkSampler sampler(labels, config.P, config.K, config.seed);
  const int batches = config.batches_per_epoch > 0 ? config.batches_per_epoch : sampler.default_batches();
  const int working_side =
      config.working_max_side > 0 ? config.working_max_side : pipeline::default_working_side(config.stream);
  const auto part_config = pipeline::part_config_for(config.parts, config.stream);
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };

  std::set<std::string> forbidden(options.forbidden_ids.begin(), options.forbidden_ids.end());
  std::filesystem::create_directories(options.out_dir);

  // Cache bbox crops once; augmentation works on these.
  const auto n = train_set.records.size();
  std::vector<pipeline::WorkingImage> working(n);
  std::vector<std::string> failures(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      working[i] = pipeline::load_working_image(train_set, i, working_side);
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  }
  for (const auto& f : failures) {
    if (!f.empty()) throw Error(ErrorKind::io, f);
  }
  augment::AugmentConfig augment = config.augment;
  if (!augment.erase_fill) augment.erase_fill = pipeline::mean_color(working);

  model::TrainingModel model(config.stream, derive_seed(config.seed, 0x1417));
  auto params = model.parameters();
  if (!config.pretrained_full.empty()) load_pretrained(config.pretrained_full, params, {"full."});
  if (!config.pretrained_partial.empty()) {
    std::vector<std::string> prefixes{"trunk."};
    for (const auto& [name, p] : params) {
      const auto dot = name.find('.');
      const auto head_name = name.substr(0, dot + 1);
      if (head_name.starts_with("limb_group") &&
          std::find(prefixes.begin(), prefixes.end(), head_name) == prefixes.end()) {
        prefixes.push_back(head_name);
      }
    }
    load_pretrained(config.pretrained_partial, params, prefixes);
  }
  Optimizer optimizer(config);
  const std::string config_text = to_text(config_in);

  int start_epoch = 0;
  std::int64_t step = 0;
  TrainResult result;
  const auto metrics_path = options.out_dir / "metrics.csv";
  std::vector<std::string> previous_rows;
  if (options.resume) {
    const auto ckpt = model::Checkpoint::load(*options.resume);
    if (ckpt.metadata.value("config", std::string()) != config_text) {
      throw Error(ErrorKind::config, "resume: checkpoint was written with a different configuration");
    }
    ckpt.restore(params);
    ckpt.restore(optimizer.state(params));
    optimizer.set_steps(ckpt.metadata.at("optimizer_steps").get<std::int64_t>());
    start_epoch = ckpt.metadata.at("epochs_completed").get<int>();
    step = ckpt.metadata.at("step").get<std::int64_t>();
    if (ckpt.metadata.contains("best_validation_map")) {
      result.best_validation_map = ckpt.metadata["best_validation_map"].get<double>();
    }
    const auto resume_metrics = options.resume->parent_path() / "metrics.csv";
    if (std::filesystem::exists(resume_metrics)) read_metrics_prefix(resume_metrics, step, previous_rows);
    log("resuming at epoch " + std::to_string(start_epoch) + ", step " + std::to_string(step));
  }

  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw Error(ErrorKind::io, "cannot write " + metrics_path.string());
  metrics << kMetricsHeader << '\n';
  for (const auto& row : previous_rows) metrics << row << '\n';
  metrics.flush();

  auto save = [&](const std::filesystem::path& path, int epochs_completed) {
    model::Checkpoint ckpt;
    ckpt.stream = config.stream;
    ckpt.entities = entities;
    ckpt.store(params);
    ckpt.store(optimizer.state(params));
    ckpt.metadata = {{"config", config_text},
                     {"epochs_completed", epochs_completed},
                     {"step", step},
                     {"optimizer_steps", optimizer.steps()},
                     {"seed", config.seed},
                     {"working_max_side", working_side},
                     {"model_id", options.out_dir.filename().string() + "@epoch" + std::to_string(epochs_completed)}};
    if (result.best_validation_map) ckpt.metadata["best_validation_map"] = *result.best_validation_map;
    ckpt.save(path);
  };

  const int last_epoch = options.stop_after_epoch ? std::min(*options.stop_after_epoch, config.epochs) : config.epochs;
  model.set_training(true);
  for (int epoch = start_epoch; epoch < last_epoch; ++epoch) {
    const double lr = config.learning_rate(epoch);
    const auto plan = sampler.epoch(epoch, batches);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < plan.size(); ++b) {
      const auto& indices = plan[b];
      for (std::size_t idx : indices) {
        if (forbidden.count(train_set.records[idx].id)) {
          throw Error(ErrorKind::validation, "test record " + train_set.records[idx].id + " reached a training batch");
        }
      }
      std::vector<pipeline::SampleImages> samples(indices.size());
#pragma omp parallel for schedule(dynamic)
      for (std::size_t i = 0; i < indices.size(); ++i) {
        samples[i] = pipeline::prepare_sample(working[indices[i]], config.stream, part_config, &augment,
                                              derive_seed(config.seed, static_cast<std::uint64_t>(epoch), b, i));
      }
      const auto batch = pipeline::assemble_batch(samples, config.stream);
      std::vector<int> batch_labels;
      for (std::size_t idx : indices) batch_labels.push_back(labels[idx]);

      model.zero_grad();
      const auto emb = model.forward_train(batch);
      std::array<loss::HeadInput, 3> heads{
          loss::HeadInput{to_matrix(emb.d_full), to_matrix(model.classifier(0)), std::nullopt},
          loss::HeadInput{to_matrix(emb.z_ft), to_matrix(model.classifier(1)), std::nullopt},
          loss::HeadInput{to_matrix(emb.z_fl), to_matrix(model.classifier(2)), std::nullopt}};
      const auto total = loss::total_loss(heads, batch_labels, config.loss);

      bool finite = std::isfinite(total.breakdown.total);
      for (const auto& h : total.breakdown.heads) finite = finite && std::isfinite(h.id) && std::isfinite(h.triplet);
      if (!finite) {
        std::string ids;
        nlohmann::json dump{{"epoch", epoch}, {"step", step}, {"record_ids", nlohmann::json::array()}};
        for (std::size_t idx : indices) {
          ids += (ids.empty() ? "" : " ") + train_set.records[idx].id;
          dump["record_ids"].push_back(train_set.records[idx].id);
        }
        std::ofstream(options.out_dir / "nonfinite_batch.json") << dump.dump(2) << '\n';
        throw Error(ErrorKind::numeric, "non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                            std::to_string(step) + "; batch records: " + ids);
      }

      model.backward(to_tensor(total.grads[0].embeddings), to_tensor(total.grads[1].embeddings),
                     to_tensor(total.grads[2].embeddings));
      for (std::size_t h = 0; h < 3; ++h) {
        auto& w = model.classifier(h);
        const auto& g = total.grads[h].class_weights;
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          for (Eigen::Index j = 0; j < g.cols(); ++j) {
            w.grad[static_cast<std::size_t>(i * g.cols() + j)] += static_cast<float>(g(i, j));
          }
        }
      }
      optimizer.step(params, lr);

      const MetricsRow row{epoch, step, total.breakdown, lr};
      metrics << format_metrics_row(row) << '\n';
      if (options.on_step) options.on_step(row);
      epoch_loss += total.breakdown.total;
      ++step;
    }
    metrics.flush();

    if (options.validation != nullptr) {
      model.set_training(false);
      const auto emb = eval::embed_dataset(
          *options.validation, config.stream.full_image,
          [&](const nn::Tensor& x) { return model.embed_full(x); }, 32, working_side);
      std::vector<std::string> ids;
      for (const auto& r : options.validation->records) ids.push_back(r.id);
      const auto report = eval::evaluate_embeddings(emb, options.validation->entity_of, ids);
      model.set_training(true);
      log("epoch " + std::to_string(epoch) + " validation mAP " + std::to_string(report.mAP));
      if (!result.best_validation_map || report.mAP > *result.best_validation_map) {
        result.best_validation_map = report.mAP;
        save(options.out_dir / "best.ckpt", epoch + 1);
      }
    }
    save(options.out_dir / "last.ckpt", epoch + 1);
    log("epoch " + std::to_string(epoch) + " mean loss " + std::to_string(epoch_loss / plan.size()) +
        " lr " + format_double(lr));
    result.epochs_completed = epoch + 1;
  }
  result.epochs_completed = std::max(result.epochs_completed, start_epoch);
  result.steps = step;
  result.metrics = metrics_path;
  if (result.epochs_completed >= config.epochs) {
    result.checkpoint = options.out_dir / "model.ckpt";
    save(result.checkpoint, result.epochs_completed);
  } else {
    result.checkpoint = options.out_dir / "last.ckpt";
  }
  return result;
}

}  // namespace catreid::train
