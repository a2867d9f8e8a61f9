#include <doctest.h>

#include <fstream>
#include <sstream>

#include "menet/cli.hpp"
#include "menet/errors.hpp"
#include "menet/image_io.hpp"
#include "menet/train.hpp"
#include "test_util.hpp"

using namespace menet;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(invoke({}).code == kExitUsage);
  CHECK(invoke({"frobnicate"}).code == kExitUsage);
  CHECK(invoke({"train"}).code == kExitUsage);
  CHECK(invoke({"synth", "--out", "x", "--rain", "drizzle"}).code == kExitUsage);
  CHECK(invoke({"--help"}).code == kExitOk);
}

TEST_CASE("missing data exits with 2") {
  const auto dir = test::scratch_dir("cli_missing");
  const Result r = invoke({"train", "--data", (dir / "nope").string(), "--out",
                           (dir / "m.ckpt").string()});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("nope") != std::string::npos);
  CHECK(invoke({"derain", "--checkpoint", (dir / "none.ckpt").string(), "--input",
                (dir / "a.png").string(), "--out", (dir / "b.png").string()})
            .code == kExitData);
}

TEST_CASE("config files") {
  const auto dir = test::scratch_dir("cli_config");
  {
    std::ofstream cfg(dir / "ok.cfg");
    cfg << "# comment\ncount = 2\nsize=16\n\nrain=light\n";
  }
  const auto parsed = read_config_file((dir / "ok.cfg").string());
  REQUIRE(parsed.size() == 3);
  CHECK(parsed[0].first == "count");
  CHECK(parsed[0].second == "2");

  // a command-line value overrides the file
  const Result r = invoke({"synth", "--config", (dir / "ok.cfg").string(), "--out",
                           (dir / "corpus").string(), "--count", "3"});
  REQUIRE(r.code == kExitOk);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "corpus" / "rain")) {
    CHECK(read_image(e.path()).shape() == Shape{3, 16, 16});
    ++files;
  }
  CHECK(files == 3);

  {
    std::ofstream cfg(dir / "bad.cfg");
    cfg << "colour=blue\n";
  }
  CHECK(invoke({"synth", "--config", (dir / "bad.cfg").string(), "--out",
                (dir / "c2").string()})
            .code == kExitUsage);
  {
    std::ofstream cfg(dir / "malformed.cfg");
    cfg << "just words\n";
  }
  CHECK_THROWS_AS(read_config_file((dir / "malformed.cfg").string()), ConfigError);
}

TEST_CASE("synth, train, derain and eval round trip") {
  const auto dir = test::scratch_dir("cli_roundtrip");
  const std::string data = (dir / "data").string();
  REQUIRE(invoke({"synth", "--out", data, "--count", "3", "--size", "16", "--seed", "4"}).code ==
          kExitOk);

  const std::string ckpt = (dir / "m.ckpt").string();
  const std::string log = (dir / "log.csv").string();
  Result r = invoke({"train", "--data", data, "--out", ckpt, "--log", log, "--crop", "0",
                     "--batch", "2", "--max-steps", "3", "--blocks", "1", "--loss-e",
                     "--weighting", "lb", "--seed", "2"});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(count_lines(log) == 4);
  const Checkpoint ck = load_checkpoint(ckpt);
  CHECK(ck.step == 3);
  CHECK(ck.model.num_residual_blocks == 1);

  r = invoke({"train", "--data", data, "--out", ckpt, "--log", log, "--crop", "0", "--batch",
              "2", "--max-steps", "5", "--blocks", "1", "--loss-e", "--weighting", "lb",
              "--seed", "2", "--resume", ckpt});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(load_checkpoint(ckpt).step == 5);
  CHECK(count_lines(log) == 6);

  const std::string restored = (dir / "restored").string();
  r = invoke({"derain", "--checkpoint", ckpt, "--input", data + "/rain", "--out", restored,
              "--residual", (dir / "residual").string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(r.out.find("3 image") != std::string::npos);

  r = invoke({"eval", "--restored", restored, "--truth", data + "/norain", "--out", "-"});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(r.out.rfind("id,psnr_db,ssim", 0) == 0);
  CHECK(r.out.find("#mean,") != std::string::npos);

  r = invoke({"train", "--data", data, "--out", ckpt, "--crop", "0", "--max-steps", "1",
              "--blocks", "2", "--resume", ckpt});
  CHECK(r.code == kExitData);
}

TEST_CASE("bad argument values") {
  const auto dir = test::scratch_dir("cli_values");
  const std::string data = (dir / "data").string();
  REQUIRE(invoke({"synth", "--out", data, "--count", "1", "--size", "16"}).code == kExitOk);
  CHECK(invoke({"train", "--data", data, "--weighting", "mystery"}).code == kExitUsage);
  CHECK(invoke({"train", "--data", data, "--fixed-w", "1,-1,0"}).code == kExitUsage);
  CHECK(invoke({"train", "--data", data, "--ca", "maybe"}).code == kExitUsage);
  CHECK(invoke({"synth", "--out", data, "--density", "2"}).code == kExitUsage);
}
