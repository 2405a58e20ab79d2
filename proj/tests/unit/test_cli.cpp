#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "support.hpp"

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

Result run(const std::vector<std::string>& args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  Result r;
  r.code = mtlsed::cli::run(args, in, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

using mtlsed::cli::kExitData;
using mtlsed::cli::kExitOk;
using mtlsed::cli::kExitUsage;

TEST_CASE("pool reads a vector from stdin") {
  CHECK(run({"pool", "--kind", "mp"}, "0.1 0.7 0.3\n").out == "0.7\n");
  CHECK(run({"pool", "--kind", "ap"}, "1 2 3\n").out == "2\n");
  CHECK(run({"pool", "--kind", "at"}, "1 3\n0 0\n").out == "2\n");
  const Result es = run({"pool", "--kind", "es"}, "0 1\n");
  CHECK(std::stod(es.out) == doctest::Approx(std::exp(1.0) / (1.0 + std::exp(1.0))));
  CHECK(run({"pool", "--kind", "at"}, "1 3\n").code == kExitData);
  CHECK(run({"pool", "--kind", "mp"}, "1 x\n").code == kExitData);
  CHECK(run({"pool", "--kind", "mp"}, "\n").code == kExitData);
  CHECK(run({"pool", "--kind", "median"}, "1\n").code == kExitUsage);
}

TEST_CASE("usage errors") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"train", "--data", "x"}).code == kExitUsage);
  CHECK(run({"synth-data", "--out", "x", "--clips", "0"}).code == kExitUsage);
  const Result help = run({"--help"});
  CHECK(help.code == kExitOk);
  CHECK(help.out.find("synth-data") != std::string::npos);
}

TEST_CASE("gradcheck command") {
  const Result r = run({"gradcheck", "--op", "pool_mp", "--seeds", "3"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(run({"gradcheck", "--op", "no_such_op"}).code != kExitOk);
}

TEST_CASE("synthesize, extract, train and evaluate") {
  testing::TempDir dir("cli_flow");
  mtlsed::write_run_config(dir / "tiny.cfg", testing::tiny_run_config());
  REQUIRE(run({"synth-data", "--out", (dir / "raw").string(), "--clips", "16", "--clip-seconds", "0.16", "--seed",
               "3"})
              .code == kExitOk);
  const Result ex = run({"extract-features", "--in", (dir / "raw").string(), "--out", (dir / "feat").string(),
                         "--config", (dir / "tiny.cfg").string()});
  REQUIRE(ex.code == kExitOk);
  CHECK(std::filesystem::exists(dir / "feat" / "features"));

  for (const char* data : {"raw", "feat"}) {
    const auto out = dir / (std::string("run_") + data);
    const Result tr = run({"train", "--config", (dir / "tiny.cfg").string(), "--data", (dir / data).string(), "--out",
                           out.string(), "--seed", "1"});
    INFO(tr.err);
    REQUIRE(tr.code == kExitOk);
    CHECK(tr.out.find("epoch 2 mean loss") != std::string::npos);
    for (const char* f : {"config.txt", "log.csv", "final.ckpt", "best.ckpt", "metrics.json"}) {
      CHECK(std::filesystem::exists(out / f));
    }
    const Result ev = run({"evaluate", "--model", (out / "final.ckpt").string(), "--data",
                           (out / "eval_data").string(), "--out", (out / "again.json").string()});
    INFO(ev.err);
    REQUIRE(ev.code == kExitOk);
    CHECK(slurp(out / "again.json") == slurp(out / "metrics.json"));
  }
  // Raw audio and precomputed features go through the same frontend.
  CHECK(slurp(dir / "run_raw" / "metrics.json") == slurp(dir / "run_feat" / "metrics.json"));

  const Result wrong_frames = run({"train", "--data", (dir / "feat").string(), "--out", (dir / "x").string(),
                                   "--config", (dir / "tiny.cfg").string(), "--set", "arch.n_frames=16"});
  CHECK(wrong_frames.code == kExitData);
  CHECK(wrong_frames.err.find("arch.n_frames") != std::string::npos);
  CHECK(run({"train", "--data", (dir / "feat").string(), "--out", (dir / "x").string(), "--config",
             (dir / "tiny.cfg").string(), "--set", "train.bogus=1"})
            .code == kExitUsage);
  CHECK(run({"train", "--data", (dir / "nothing").string(), "--out", (dir / "x").string(), "--config",
             (dir / "tiny.cfg").string()})
            .code == kExitData);
  CHECK(run({"evaluate", "--model", (dir / "missing.ckpt").string(), "--data", (dir / "feat").string(), "--out",
             (dir / "m.json").string()})
            .code == kExitData);
}

TEST_CASE("sweep covers every system") {
  testing::TempDir dir("cli_sweep");
  mtlsed::write_run_config(dir / "tiny.cfg", testing::tiny_run_config());
  REQUIRE(run({"synth-data", "--out", (dir / "raw").string(), "--clips", "16", "--clip-seconds", "0.16"}).code ==
          kExitOk);
  const Result r = run({"sweep", "--config", (dir / "tiny.cfg").string(), "--data", (dir / "raw").string(), "--out",
                        (dir / "sweep").string(), "--seeds", "1", "--epochs", "1"});
  INFO(r.err);
  REQUIRE(r.code == kExitOk);
  std::ifstream table(dir / "sweep" / "table.tsv");
  std::vector<std::string> systems;
  std::string line;
  std::getline(table, line);
  while (std::getline(table, line)) systems.push_back(line.substr(0, line.find('\t')));
  CHECK(systems == std::vector<std::string>{"CNN(ASC)", "CNN-BiGRU(SED)", "Conv. MTL", "MTL w/o MIL",
                                            "MTL w/ MIL (MP)", "MTL w/ MIL (AP)", "MTL w/ MIL (ES)",
                                            "MTL w/ MIL (AT)"});
  std::ifstream summary(dir / "sweep" / "summary.tsv");
  std::size_t rows = 0;
  while (std::getline(summary, line)) ++rows;
  CHECK(rows == 9);
}
