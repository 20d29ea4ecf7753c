#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "catreid/checkpoint.hpp"
#include "catreid/error.hpp"
#include "support.hpp"

using namespace catreid::model;

TEST_CASE("a checkpoint round-trips weights, config, entities and metadata") {
  const auto cfg = test::tiny_stream(2);
  TrainingModel model(cfg, 1);
  const auto dir = test::scratch_dir("checkpoint_roundtrip");
  Checkpoint ck;
  ck.stream = cfg;
  ck.entities = {"cat0/left/night", "cat0/right/night"};
  ck.metadata["epochs_completed"] = 3;
  ck.store(model.parameters());
  ck.save(dir / "a.ckpt");

  const auto loaded = Checkpoint::load(dir / "a.ckpt");
  CHECK(loaded.entities == ck.entities);
  CHECK(loaded.metadata["epochs_completed"] == 3);
  CHECK(to_json(loaded.stream) == to_json(cfg));
  REQUIRE(loaded.tensors.size() == ck.tensors.size());
  for (const auto& [name, blob] : ck.tensors) {
    CHECK(loaded.tensors.at(name).shape == blob.shape);
    CHECK(loaded.tensors.at(name).data == blob.data);
  }

  TrainingModel other(cfg, 99);
  loaded.restore(other.parameters());
  auto a = model.parameters();
  auto b = other.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].second->value == b[i].second->value);
  CHECK_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
}

TEST_CASE("filtered loads only read matching tensors") {
  const auto cfg = test::tiny_stream(2);
  TrainingModel model(cfg, 2);
  const auto dir = test::scratch_dir("checkpoint_filter");
  Checkpoint ck;
  ck.stream = cfg;
  ck.store(model.parameters());
  ck.save(dir / "a.ckpt");
  const auto loaded = Checkpoint::load(dir / "a.ckpt", [](const std::string& n) { return n.rfind("full.", 0) == 0; });
  CHECK_FALSE(loaded.tensors.empty());
  for (const auto& [name, blob] : loaded.tensors) CHECK(name.rfind("full.", 0) == 0);
}

TEST_CASE("restore names a missing or mis-shaped tensor") {
  const auto cfg = test::tiny_stream(2);
  TrainingModel model(cfg, 3);
  Checkpoint ck;
  ck.store(model.parameters());
  const std::string victim = ck.tensors.begin()->first;
  ck.tensors.erase(victim);
  try {
    ck.restore(model.parameters());
    FAIL("expected a model error");
  } catch (const catreid::Error& e) {
    CHECK(e.kind() == catreid::ErrorKind::model);
    CHECK(std::string(e.what()).find(victim) != std::string::npos);
  }
  Checkpoint wrong;
  wrong.store(model.parameters());
  wrong.tensors.begin()->second.shape = {1};
  CHECK_THROWS_AS(wrong.restore(model.parameters()), catreid::Error);
}

TEST_CASE("corrupt or missing files are reported") {
  const auto dir = test::scratch_dir("checkpoint_corrupt");
  CHECK_THROWS_AS(Checkpoint::load(dir / "missing.ckpt"), catreid::Error);
  std::ofstream(dir / "bad.ckpt") << "NOTACKPT and some bytes";
  try {
    Checkpoint::load(dir / "bad.ckpt");
    FAIL("expected a model error");
  } catch (const catreid::Error& e) {
    CHECK(e.kind() == catreid::ErrorKind::model);
  }
  const auto cfg = test::tiny_stream(2);
  TrainingModel model(cfg, 4);
  Checkpoint ck;
  ck.stream = cfg;
  ck.store(model.parameters());
  ck.save(dir / "good.ckpt");
  std::filesystem::resize_file(dir / "good.ckpt", std::filesystem::file_size(dir / "good.ckpt") - 16);
  CHECK_THROWS_AS(Checkpoint::load(dir / "good.ckpt"), catreid::Error);
}
