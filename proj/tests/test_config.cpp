#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "catreid/config.hpp"
#include "catreid/error.hpp"
#include "catreid/trainer.hpp"
#include "support.hpp"

using namespace catreid;

namespace {

config::KeyValueFile parse(const std::string& text, const std::filesystem::path& source = "/cfg/train.conf") {
  std::istringstream in(text);
  return config::KeyValueFile::parse(in, source);
}

}  // namespace

TEST_CASE("key-value files accept comments, blank lines and trailing comments") {
  const auto f = parse("# header\n\nepochs = 12   # short run\n  lr=0.001\n");
  CHECK(f.entries.size() == 2);
  CHECK(f.entries.at("epochs").value == "12");
  CHECK(f.entries.at("epochs").line == 3);
  CHECK(f.entries.at("lr").value == "0.001");
}

TEST_CASE("malformed and repeated keys are errors naming the line") {
  for (const std::string text : {"epochs 12\n", "a = 1\na = 2\n", "bad key = 3\n", " = 4\n"}) {
    try {
      parse(text);
      FAIL("expected a config error for: " << text);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::config);
      CHECK(std::string(e.what()).find("train.conf:") != std::string::npos);
    }
  }
}

TEST_CASE("value parsers") {
  CHECK(config::parse_double("k", "3.5e-4") == 3.5e-4);
  CHECK(config::parse_int("k", "-7") == -7);
  CHECK(config::parse_bool("k", "true"));
  CHECK_FALSE(config::parse_bool("k", "off"));
  CHECK(config::parse_double_list("k", "0.6, 0.85") == std::vector<double>{0.6, 0.85});
  CHECK(config::parse_size("k", "192x96") == std::pair<int, int>{192, 96});
  CHECK_THROWS_AS(config::parse_double("k", "1.5x"), Error);
  CHECK_THROWS_AS(config::parse_int("k", "2.5"), Error);
  CHECK_THROWS_AS(config::parse_bool("k", "maybe"), Error);
  CHECK_THROWS_AS(config::parse_size("k", "96"), Error);
  for (double v : {0.1, 1.0 / 3.0, 3.5e-4, 1e300, -2.0}) CHECK(config::parse_double("k", config::format_double(v)) == v);
}

TEST_CASE("training configs apply keys over the defaults and resolve paths") {
  const auto cfg = train::train_config_from(parse(
      "epochs = 30\nP = 3\nstream.sharing = per_part\nloss.use_arcface = true\n"
      "augment.rotation_degrees = -5, 5\ndata.manifest = data/train.jsonl\nparts.limb_fl = 1, 2\n"));
  CHECK(cfg.epochs == 30);
  CHECK(cfg.P == 3);
  CHECK(cfg.K == 4);
  CHECK(cfg.stream.sharing == model::PartialSharing::per_part);
  CHECK(cfg.loss.use_arcface);
  CHECK(cfg.augment.rotation_degrees.lo == -5.0);
  CHECK(cfg.manifest == std::filesystem::path("/cfg/data/train.jsonl"));
  CHECK(cfg.parts.limb_keypoint_pairs.at(geometry::Part::limb_fl) == std::pair<int, int>{1, 2});
}

TEST_CASE("unknown keys and invariant violations are config errors") {
  try {
    train::train_config_from(parse("epochs = 3\nepoch = 4\n"));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  CHECK_THROWS_AS(train::train_config_from(parse("K = 1\n")).validate(), Error);
  CHECK_THROWS_AS(train::train_config_from(parse("epochs = 0\n")).validate(), Error);
  CHECK_THROWS_AS(train::train_config_from(parse("stream.embed_dim = 100\n")).validate(), Error);
}

TEST_CASE("the printed config parses back to the same text") {
  train::TrainConfig cfg;
  cfg.epochs = 17;
  cfg.lr = 1.0 / 3.0;
  cfg.stream = model::StreamConfig::small(5);
  const std::string text = train::to_text(cfg);
  CHECK(train::to_text(train::train_config_from(parse(text))) == text);
  CHECK(train::config_keys().size() >= 50);
}

TEST_CASE("the shipped configs load and validate") {
  for (const char* name : {"reference.conf", "toy-small.conf"}) {
    CAPTURE(name);
    const auto cfg = train::load_train_config(std::filesystem::path(CATREID_SOURCE_DIR) / "configs" / name);
    CHECK_NOTHROW(cfg.validate());
  }
  const auto ref = train::load_train_config(std::filesystem::path(CATREID_SOURCE_DIR) / "configs" / "reference.conf");
  CHECK(train::to_text(ref) == train::to_text(train::TrainConfig{}));
}

TEST_CASE("learning rate steps down at the milestones") {
  train::TrainConfig cfg;
  cfg.epochs = 100;
  CHECK(cfg.learning_rate(0) == doctest::Approx(3.5e-4));
  CHECK(cfg.learning_rate(59) == doctest::Approx(3.5e-4));
  CHECK(cfg.learning_rate(60) == doctest::Approx(3.5e-5));
  CHECK(cfg.learning_rate(85) == doctest::Approx(3.5e-6));
}
