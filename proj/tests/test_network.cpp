#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "catreid/checkpoint.hpp"
#include "catreid/error.hpp"
#include "catreid/losses.hpp"
#include "catreid/network.hpp"
#include "support.hpp"

using namespace catreid::model;
using catreid::geometry::kAllParts;
using catreid::geometry::Part;
using catreid::nn::Tensor;

namespace {

Tensor random_images(int n, ImageSize size, catreid::Rng& rng) {
  Tensor t({n, 3, size.height, size.width});
  for (auto& v : t.data) v = static_cast<float>(catreid::normal(rng));
  return t;
}

/// Batch with part `p` valid for the samples where valid(b, p) holds.
template <typename Valid>
TrainBatch make_batch(const StreamConfig& cfg, int B, catreid::Rng& rng, Valid valid) {
  TrainBatch batch;
  batch.full = random_images(B, cfg.full_image, rng);
  for (std::size_t p = 0; p < kAllParts.size(); ++p) {
    const ImageSize size = kAllParts[p] == Part::trunk ? cfg.trunk_image : cfg.limb_image;
    for (int b = 0; b < B; ++b) {
      if (valid(b, p)) batch.parts[p].samples.push_back(b);
    }
    batch.parts[p].images = random_images(static_cast<int>(batch.parts[p].samples.size()), size, rng);
  }
  return batch;
}

bool all_zero(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; });
}

std::span<const float> block(const EmbeddingBatch& e, const StreamConfig& cfg, int b, Part part) {
  return e.d_limbs.row(b).subspan(cfg.block_offset(part), cfg.block_dim(part));
}

catreid::loss::Matrix to_matrix(const Tensor& t) {
  catreid::loss::Matrix m(t.dim(0), t.dim(1));
  for (int i = 0; i < t.dim(0); ++i)
    for (int j = 0; j < t.dim(1); ++j) m(i, j) = t.data[i * t.dim(1) + j];
  return m;
}

Tensor to_tensor(const catreid::loss::Matrix& m) {
  Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) t.data[i * m.cols() + j] = static_cast<float>(m(i, j));
  return t;
}

}  // namespace

TEST_CASE("stream config invariants") {
  CHECK_NOTHROW(StreamConfig::reference().validate());
  StreamConfig c = StreamConfig::reference();
  CHECK(4 * c.limb_embed_dim + 2 * c.tail_embed_dim == c.embed_dim);
  c.tail_embed_dim = 300;
  CHECK_THROWS_AS(c.validate(), catreid::Error);
  c = StreamConfig::reference();
  c.embed_dim = 2048;
  CHECK_THROWS_AS(c.validate(), catreid::Error);
  const StreamConfig ref = StreamConfig::reference();
  CHECK(ref.block_offset(Part::limb_fl) == 0);
  CHECK(ref.block_offset(Part::limb_br) == 1536);
  CHECK(ref.block_offset(Part::tail_proximal) == 2048);
  CHECK(ref.block_offset(Part::tail_distal) == 2304);
  CHECK(ref.block_dim(Part::tail_distal) == 256);
  const auto round_trip = stream_config_from_json(to_json(test::tiny_stream(7)));
  CHECK(round_trip.num_entities == 7);
  CHECK(round_trip.trunk_image.width == 32);
  CHECK(round_trip.full_backbone == "basic:8,16:1,1");
}

TEST_CASE("with every part invalid both fused embeddings equal d_full exactly") {
  catreid::Rng rng(1);
  const auto cfg = test::tiny_stream(3);
  TrainingModel model(cfg, 1);
  const auto e = model.forward_train(make_batch(cfg, 4, rng, [](int, std::size_t) { return false; }));
  CHECK(all_zero(e.d_trunk.span()));
  CHECK(all_zero(e.d_limbs.span()));
  CHECK(e.z_ft.data == e.d_full.data);
  CHECK(e.z_fl.data == e.d_full.data);
  for (const auto& v : e.validity) CHECK(std::none_of(v.begin(), v.end(), [](bool x) { return x; }));
}

TEST_CASE("an invalid part zeroes exactly its own block") {
  catreid::Rng rng(2);
  for (auto sharing : {PartialSharing::shared, PartialSharing::per_limb, PartialSharing::per_part}) {
    auto cfg = test::tiny_stream(3);
    cfg.sharing = sharing;
    TrainingModel model(cfg, 2);
    // Sample 1 lacks its distal tail, sample 2 its trunk.
    const auto e = model.forward_train(make_batch(cfg, 3, rng, [](int b, std::size_t p) {
      return !(b == 1 && kAllParts[p] == Part::tail_distal) && !(b == 2 && kAllParts[p] == Part::trunk);
    }));
    CHECK(all_zero(block(e, cfg, 1, Part::tail_distal)));
    for (Part p : {Part::limb_fl, Part::limb_fr, Part::limb_bl, Part::limb_br, Part::tail_proximal}) {
      CHECK_FALSE(all_zero(block(e, cfg, 1, p)));
    }
    CHECK_FALSE(all_zero(block(e, cfg, 0, Part::tail_distal)));
    CHECK(all_zero(e.d_trunk.row(2)));
    CHECK_FALSE(all_zero(e.d_trunk.row(0)));
    for (int b = 0; b < 3; ++b) {
      for (int i = 0; i < cfg.embed_dim; ++i) {
        const int k = b * cfg.embed_dim + i;
        CHECK(e.z_ft.data[k] == e.d_full.data[k] + e.d_trunk.data[k]);
        CHECK(e.z_fl.data[k] == e.d_full.data[k] + e.d_limbs.data[k]);
      }
    }
    const auto set = embedding_set(e, 2);
    CHECK(set.z_ft == set.d_full);
    CHECK_FALSE(set.part_validity[0]);
    CHECK(set.part_validity[6]);
  }
}

TEST_CASE("a black trunk image does not embed to zero, an invalid trunk does") {
  catreid::Rng rng(3);
  const auto cfg = test::tiny_stream(3);
  TrainingModel model(cfg, 3);
  model.set_training(false);
  auto batch = make_batch(cfg, 2, rng, [](int b, std::size_t p) { return p == 0 && b == 0; });
  // A black raster after the same normalisation the pipeline applies.
  const cv::Mat black(cfg.trunk_image.height, cfg.trunk_image.width, CV_8UC3, cv::Scalar(0, 0, 0));
  const std::vector<cv::Mat> blacks{black};
  batch.parts[0].images = images_to_tensor(blacks, cfg.trunk_image);
  const auto e = model.forward_train(batch);
  CHECK_FALSE(all_zero(e.d_trunk.row(0)));
  CHECK(all_zero(e.d_trunk.row(1)));
}

TEST_CASE("mismatched input sizes fail before any computation") {
  catreid::Rng rng(4);
  const auto cfg = test::tiny_stream(3);
  TrainingModel model(cfg, 4);
  auto batch = make_batch(cfg, 2, rng, [](int, std::size_t) { return true; });
  batch.parts[3].images = random_images(2, {20, 16}, rng);
  CHECK_THROWS_AS(model.forward_train(batch), catreid::Error);
  const cv::Mat wrong(10, 10, CV_8UC3);
  const std::vector<cv::Mat> images{wrong};
  CHECK_THROWS_AS(images_to_tensor(images, cfg.full_image), catreid::Error);
}

TEST_CASE("the inference model reproduces the training model's d_full") {
  catreid::Rng rng(5);
  const auto cfg = test::tiny_stream(3);
  TrainingModel model(cfg, 5);
  // A few training-mode passes move the batch-norm running statistics.
  for (int i = 0; i < 3; ++i) model.forward_train(make_batch(cfg, 4, rng, [](int, std::size_t) { return true; }));
  model.set_training(false);
  const auto dir = test::scratch_dir("network_infer");
  Checkpoint ck;
  ck.stream = cfg;
  ck.entities = {"a", "b", "c"};
  ck.store(model.parameters());
  ck.save(dir / "m.ckpt");

  auto inference = InferenceModel::from_checkpoint(dir / "m.ckpt");
  CHECK(inference.entities() == ck.entities);
  const auto batch = make_batch(cfg, 5, rng, [](int, std::size_t) { return true; });
  const auto train_out = model.forward_train(batch).d_full;
  const auto infer_out = inference.forward_infer(batch.full);
  REQUIRE(infer_out.shape == train_out.shape);
  for (int b = 0; b < 5; ++b) {
    double norm = 0.0, diff = 0.0;
    for (int i = 0; i < cfg.embed_dim; ++i) {
      norm += double(train_out.row(b)[i]) * train_out.row(b)[i];
      diff = std::max(diff, double(std::abs(train_out.row(b)[i] - infer_out.row(b)[i])));
    }
    CHECK(diff <= 1e-6 * std::sqrt(norm));
  }
  // Order-preserving batching: one image at a time gives the same rows.
  for (int b = 0; b < 5; ++b) {
    Tensor one({1, 3, cfg.full_image.height, cfg.full_image.width});
    std::copy(batch.full.row(b).begin(), batch.full.row(b).end(), one.data.begin());
    const auto single = inference.forward_infer(one);
    for (int i = 0; i < cfg.embed_dim; ++i) CHECK(single.data[i] == doctest::Approx(infer_out.row(b)[i]).epsilon(1e-5));
  }
  CHECK(infer_out.row(0)[0] != infer_out.row(1)[0]);
}

TEST_CASE("a checkpoint without full-stream weights cannot build an inference model") {
  const auto cfg = test::tiny_stream(3);
  TrainingModel model(cfg, 6);
  const auto dir = test::scratch_dir("network_nofull");
  Checkpoint ck;
  ck.stream = cfg;
  catreid::nn::NamedParameters partial;
  for (auto& [name, p] : model.parameters()) {
    if (name.rfind("full.", 0) != 0) partial.emplace_back(name, p);
  }
  ck.store(partial);
  ck.save(dir / "partial.ckpt");
  CHECK_THROWS_AS(InferenceModel::from_checkpoint(dir / "partial.ckpt"), catreid::Error);
}

TEST_CASE("an inference checkpoint loads without the partial streams") {
  const auto cfg = test::tiny_stream(3);
  TrainingModel model(cfg, 7);
  const auto dir = test::scratch_dir("network_fullonly");
  Checkpoint ck;
  ck.stream = cfg;
  catreid::nn::NamedParameters full_only;
  for (auto& [name, p] : model.parameters()) {
    if (name.rfind("full.", 0) == 0) full_only.emplace_back(name, p);
  }
  ck.store(full_only);
  ck.save(dir / "full.ckpt");
  CHECK_NOTHROW(InferenceModel::from_checkpoint(dir / "full.ckpt"));
}

TEST_CASE("the reference inference model is about a third the size of the training model") {
  const auto ref = StreamConfig::reference();
  const auto training = param_count(ref, Mode::training);
  const auto inference = param_count(ref, Mode::inference);
  CHECK(inference < training);
  const double ratio = static_cast<double>(training) / static_cast<double>(inference);
  CHECK(ratio >= 2.2);
  CHECK(ratio <= 3.4);
  CHECK(inference >= 55'000'000);
  CHECK(inference <= 85'000'000);
}

TEST_CASE("every trainable tensor of all three streams receives gradient") {
  catreid::Rng rng(8);
  auto cfg = test::tiny_stream(2);
  TrainingModel model(cfg, 8);
  const auto batch = make_batch(cfg, 4, rng, [](int, std::size_t) { return true; });
  const auto e = model.forward_train(batch);
  const std::vector<int> labels{0, 0, 1, 1};
  std::array<catreid::loss::HeadInput, 3> heads;
  const std::array<const Tensor*, 3> outs{&e.d_full, &e.z_ft, &e.z_fl};
  for (int h = 0; h < 3; ++h) {
    heads[h].embeddings = to_matrix(*outs[h]);
    const auto& w = model.classifier(h);
    catreid::loss::Matrix cw(w.shape[0], w.shape[1]);
    for (int i = 0; i < w.shape[0]; ++i)
      for (int j = 0; j < w.shape[1]; ++j) cw(i, j) = w.value[i * w.shape[1] + j];
    heads[h].class_weights = cw;
  }
  const auto total = catreid::loss::total_loss(heads, labels, {});
  model.zero_grad();
  model.backward(to_tensor(total.grads[0].embeddings), to_tensor(total.grads[1].embeddings),
                 to_tensor(total.grads[2].embeddings));
  int checked = 0;
  for (const auto& [name, p] : model.parameters()) {
    if (!p->trainable || name.rfind("classifier", 0) == 0) continue;
    ++checked;
    INFO(name);
    CHECK_FALSE(all_zero(p->grad));
  }
  CHECK(checked > 20);
}
