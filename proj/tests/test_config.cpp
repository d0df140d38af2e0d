#include <doctest.h>

#include <sstream>

#include "mdnet/config.hpp"

using namespace mdnet;

TEST_CASE("defaults carry the reference training settings") {
  const auto c = Config::defaults();
  const auto t = c.train_config();
  CHECK(t.lambda_m == 1.0);
  CHECK(t.lambda_d == 1.0);
  CHECK(t.batch_size == 16);
  CHECK(t.l0 == 0.01);
  CHECK(t.epochs == 100);
  CHECK(t.b == 0.01);
  CHECK(t.weight_decay == 1e-6);
  CHECK(c.detector_config().max_points == features::DetectorConfig{}.max_points);
  CHECK(c.match_config().ratio == 0.8);
  CHECK(c.match_config().mutual);
  CHECK(c.ransac_config().threshold_px == 1.0);
}

TEST_CASE("unknown keys are rejected with their location") {
  auto c = Config::defaults();
  CHECK_THROWS_AS(c.set("batchsize", "8"), ConfigError);
  std::istringstream in("epochs = 5\n# fine\n\nlearning_rate = 0.1\n");
  try {
    c.load(in, "run.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("run.cfg:4") != std::string::npos);
    CHECK(msg.find("learning_rate") != std::string::npos);
  }
}

TEST_CASE("values parse into typed configs") {
  auto c = Config::defaults();
  std::istringstream in("batch_size = 4  # small\nreweight=false\nfast_threshold=0.2\nransac_seed=9\n");
  c.load(in, "x.cfg");
  CHECK(c.train_config().batch_size == 4);
  CHECK_FALSE(c.train_config().reweight);
  CHECK(c.detector_config().threshold == 0.2);
  CHECK(c.ransac_config().seed == 9);
  c.set("batch_size", "four");
  CHECK_THROWS_AS(c.train_config(), ConfigError);
  c.set("batch_size", "-3");
  CHECK_THROWS_AS(c.get_size("batch_size"), ConfigError);
  c.set("reweight", "maybe");
  CHECK_THROWS_AS(c.get_bool("reweight"), ConfigError);
}

TEST_CASE("dump round trips") {
  auto c = Config::defaults();
  c.set("epochs", "7");
  std::istringstream in(c.dump());
  auto d = Config::defaults();
  d.load(in, "dump");
  CHECK(d.dump() == c.dump());
  CHECK(d.get_size("epochs") == 7);
  CHECK(c.keys().size() > 20);
}

TEST_CASE("a line without '=' is an error") {
  auto c = Config::defaults();
  std::istringstream in("epochs 5\n");
  CHECK_THROWS_AS(c.load(in, "bad.cfg"), ConfigError);
}
