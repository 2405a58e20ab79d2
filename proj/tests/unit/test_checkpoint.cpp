#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "mtlsed/checkpoint.hpp"
#include "mtlsed/train.hpp"
#include "support.hpp"

using namespace mtlsed;
using namespace mtlsed::model;

namespace {

Checkpoint trained_checkpoint(std::optional<PoolingKind> pooling) {
  const auto ds = testing::tiny_dataset(8, 1);
  train::TrainConfig cfg;
  cfg.pooling = pooling;
  cfg.batch_size = 4;
  cfg.epochs = 1;
  const auto r = train::train_loop(ds, nullptr, testing::tiny_arch(), cfg);
  return {testing::tiny_arch(), pooling, testing::tiny_dsp(), r.final_params};
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit exact") {
  testing::TempDir dir("ckpt");
  for (std::optional<PoolingKind> pooling :
       {std::optional(PoolingKind::attention), std::optional(PoolingKind::exp_softmax), std::optional<PoolingKind>()}) {
    const Checkpoint c = trained_checkpoint(pooling);
    save_checkpoint(dir / "m.bin", c);
    const Checkpoint back = load_checkpoint(dir / "m.bin");
    CHECK(back == c);
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      CHECK(back.params.entries()[i].trainable == c.params.entries()[i].trainable);
    }
  }
}

TEST_CASE("a reloaded model evaluates identically") {
  testing::TempDir dir("ckpt_eval");
  const Checkpoint c = trained_checkpoint(PoolingKind::attention);
  save_checkpoint(dir / "m.bin", c);
  const Checkpoint back = load_checkpoint(dir / "m.bin");
  const auto ds = testing::tiny_dataset(8, 2);
  CHECK(train::evaluate(c.arch, c.pooling, c.params, ds) == train::evaluate(back.arch, back.pooling, back.params, ds));
}

TEST_CASE("header lists every array in order") {
  const Checkpoint c{testing::tiny_arch(), PoolingKind::max, testing::tiny_dsp(),
                     init_params<float>(testing::tiny_arch(), PoolingKind::max, 0)};
  const std::string h = checkpoint_header(c);
  std::size_t pos = 0;
  for (const auto& e : c.params.entries()) {
    const auto at = h.find("\"" + e.name + "\"", pos);
    INFO(e.name);
    REQUIRE(at != std::string::npos);
    pos = at;
  }
  CHECK(h.find("\"" + std::string(milpool::to_string(PoolingKind::max)) + "\"") != std::string::npos);
}

TEST_CASE("damaged checkpoints are rejected") {
  testing::TempDir dir("ckpt_bad");
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), IoError);
  {
    std::ofstream os(dir / "magic.bin", std::ios::binary);
    os << "NOPE0000";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.bin"), ParseError);

  const Checkpoint c = trained_checkpoint(PoolingKind::average);
  save_checkpoint(dir / "m.bin", c);
  const auto size = std::filesystem::file_size(dir / "m.bin");
  std::filesystem::resize_file(dir / "m.bin", size - 6);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.bin"), ParseError);
}
