#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "mtlsed/run_config.hpp"

using namespace mtlsed;

TEST_CASE("format then parse gives the same config") {
  for (RunConfig cfg : {RunConfig{}, testing::tiny_run_config()}) {
    cfg.train.mode = train::TrainMode::sed_only;
    cfg.train.pooling = std::nullopt;
    cfg.train.optimizer.lr = 0.1 + 0.2;
    cfg.train.weights.zeta = 1.0 / 3.0;
    std::istringstream is(format_run_config(cfg));
    CHECK(parse_run_config(is) == cfg);
  }
  const auto keys = run_config_keys();
  const std::string text = format_run_config(RunConfig{});
  for (const auto& k : keys) CHECK(text.find(k + " = ") != std::string::npos);
}

TEST_CASE("comments, blank lines and overrides") {
  std::istringstream is(
      "# reduced run\n"
      "\n"
      "dsp.n_mels = 32   # follows into the architecture\n"
      "train.mode = mtl-strong\n"
      "arch.shared_freq_pools = 8, 2, 2\n"
      "train.pooling = es\n"
      "train.epochs = 3\n"
      "train.epochs = 4\n");
  const RunConfig c = parse_run_config(is);
  CHECK(c.dsp.n_mels == 32);
  CHECK(c.arch.n_mels == 32);
  CHECK(c.train.mode == train::TrainMode::mtl_strong);
  CHECK(c.train.pooling == milpool::PoolingKind::exp_softmax);
  CHECK(c.train.epochs == 4);
  CHECK(get_run_config_value(c, "train.epochs") == "4");
}

TEST_CASE("errors name the line and key") {
  auto message = [](const std::string& text) {
    std::istringstream is(text);
    try {
      parse_run_config(is);
    } catch (const InvalidConfig& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("train.epochs = 2\nbogus.key = 1\n").find("line 2") != std::string::npos);
  CHECK(message("train.epochs = 2\nbogus.key = 1\n").find("bogus.key") != std::string::npos);
  CHECK(message("\n\ntrain.lr = fast\n").find("line 3") != std::string::npos);
  CHECK(message("train.epochs\n").find("line 1") != std::string::npos);
  CHECK(message("train.epochs = -1\n") != "no error");
  CHECK(message("arch.shared_freq_pools = 2,2\n") != "no error");
  CHECK(message("train.rectified = maybe\n") != "no error");

  RunConfig c;
  CHECK_THROWS_AS(set_run_config_value(c, "train.nope", "1"), InvalidConfig);
  CHECK_THROWS_AS(get_run_config_value(c, "train.nope"), InvalidConfig);
}

TEST_CASE("validation covers the combined config") {
  CHECK_NOTHROW(RunConfig{}.validate());
  CHECK_NOTHROW(testing::tiny_run_config().validate());
  RunConfig c;
  c.arch.n_mels = 32;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c = RunConfig{};
  c.train.eval_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
}
