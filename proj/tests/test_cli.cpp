#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "maria/cli.hpp"
#include "maria/config.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = maria::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "maria_cli_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Small enough that train and eval finish in well under a second.
const fs::path& small_config() {
  static const fs::path p = [] {
    fs::path path = scratch("small.conf");
    std::ofstream(path) << maria::tiny_gradcheck_config() << "data_count = 60\nepochs = 1\nbatch_size = 16\n"
                        << "learning_rate = 0.01\n";
    return path;
  }();
  return p;
}

}  // namespace

TEST_CASE("help") {
  Run r = run({"--help"});
  CHECK(r.code == maria::kExitOk);
  for (const char* sub : {"gen-data", "train", "eval", "ablate", "gradcheck"}) CHECK(r.out.find(sub) != std::string::npos);
  for (const auto& k : maria::config_keys()) {
    CAPTURE(k.name);
    CHECK(r.out.find(k.name) != std::string::npos);
  }
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == maria::kExitConfig);
  CHECK(run({"frobnicate"}).code == maria::kExitConfig);
  CHECK(run({"train", "--data", "x.jsonl"}).code == maria::kExitConfig);
  Run r = run({"gen-data", "--out", scratch("bad.jsonl").string(), "--set", "traffic_share=0.5,0.6",
               "--set", "trigger_kinds=image,none"});
  CHECK(r.code == maria::kExitConfig);
  CHECK(r.err.find("traffic_share") != std::string::npos);
  CHECK(run({"gen-data", "--out", scratch("bad.jsonl").string(), "--set", "nokey=1"}).code ==
        maria::kExitConfig);
}

TEST_CASE("missing inputs exit with 3") {
  CHECK(run({"eval", "--model", scratch("none.ckpt").string(), "--data", scratch("none.jsonl").string()}).code ==
        maria::kExitIo);
  CHECK(run({"train", "--config", scratch("none.conf").string(), "--data", "x", "--model-out", "y"}).code ==
        maria::kExitIo);
}

TEST_CASE("gen-data is reproducible") {
  const auto a = scratch("a.jsonl"), b = scratch("b.jsonl");
  const std::string conf = small_config().string();
  CHECK(run({"gen-data", "--config", conf, "--out", a.string(), "--seed", "5"}).code == 0);
  CHECK(run({"gen-data", "--config", conf, "--out", b.string(), "--seed", "5"}).code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(fs::path(a.string() + ".manifest.json")) == slurp(fs::path(b.string() + ".manifest.json")));
  CHECK_FALSE(slurp(a).empty());
}

TEST_CASE("train then eval reproduces the metrics") {
  const std::string conf = small_config().string();
  const auto data = scratch("train.jsonl"), model = scratch("train.ckpt"), metrics = scratch("train.json");
  REQUIRE(run({"gen-data", "--config", conf, "--out", data.string()}).code == 0);
  Run t = run({"train", "--config", conf, "--data", data.string(), "--model-out", model.string(),
               "--metrics-out", metrics.string()});
  REQUIRE(t.code == 0);
  CHECK(t.out.find("scenario 1") != std::string::npos);

  Run e = run({"eval", "--model", model.string(), "--data", data.string(), "--json"});
  REQUIRE(e.code == 0);
  // The training report also carries the loss trajectory; compare everything else.
  std::string trained = slurp(metrics);
  const auto cut = [](std::string s) {
    const auto b = s.find("\"loss_trajectory\"");
    const auto end = s.find(']', b);
    return s.erase(b, end - b + 1);
  };
  CHECK(cut(trained) == cut(e.out));

  SUBCASE("a checkpoint rejects data for another schema") {
    const auto other = scratch("other.jsonl");
    REQUIRE(run({"gen-data", "--config", conf, "--set", "vocab_items=9", "--out", other.string()}).code == 0);
    CHECK(run({"eval", "--model", model.string(), "--data", other.string()}).code == maria::kExitConfig);
  }
}

TEST_CASE("gradcheck") {
  Run ok = run({"gradcheck"});
  CHECK(ok.code == maria::kExitOk);
  Run bad = run({"gradcheck", "--inject-fault", "sum_cols:1.01"});
  CHECK(bad.code == maria::kExitCheckFailed);
  // The fault must not leak into later runs.
  CHECK(run({"gradcheck", "--json"}).code == maria::kExitOk);
}
