#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "slat/metrics.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::string kToyConfig = SLAT_SOURCE_DIR "/configs/toy.ini";

// Small and fast toy settings appended to every toy command.
const std::string kFast =
    " --data.n_per_class=60 --data.eval_per_class=60 --train.epochs=3 --train.batch=32 --train.checkpoint_every=2"
    " --eval.samples=32 --eval.final_count=64 --eval.final_steps=5 --eval.final_restarts=2 --eval.landscape_n=5"
    " --eval.landscape_samples=16";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "slat_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir.parent_path());
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(SLATLAB_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

TEST_CASE("repeated seeded runs give identical outputs") {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  REQUIRE(run("train --config " + kToyConfig + " --seed 3 --out " + a.string() + kFast) == 0);
  REQUIRE(run("train --config " + kToyConfig + " --seed 3 --out " + b.string() + kFast) == 0);
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
  CHECK(slurp(a / "final.ckpt") == slurp(b / "final.ckpt"));
  CHECK(fs::exists(a / "landscape_slat.csv"));
  CHECK(fs::exists(a / "timing.json"));

  const json s = read_json(a / "summary.json");
  CHECK(s["method"] == "slat");
  CHECK(s["seed"] == 3);
  CHECK(s.contains("boundary_ratio"));
  CHECK(s.contains("catastrophic_overfitting"));
  CHECK(s.contains("pgd20_acc"));
  CHECK(s.contains("pgd5_2_acc"));

  const auto records = slat::read_metrics_csv((a / "metrics.csv").string());
  CHECK(records.front().step == 0);
  CHECK(records.back().step == s["steps"].get<long>());
}

TEST_CASE("a different seed changes the run") {
  const fs::path a = scratch("seed_a"), b = scratch("seed_b");
  REQUIRE(run("train --config " + kToyConfig + " --seed 1 --out " + a.string() + kFast) == 0);
  REQUIRE(run("train --config " + kToyConfig + " --seed 2 --out " + b.string() + kFast) == 0);
  CHECK(slurp(a / "metrics.csv") != slurp(b / "metrics.csv"));
}

TEST_CASE("eval-only recomputes the summary from a checkpoint") {
  const fs::path a = scratch("evalonly");
  REQUIRE(run("train --config " + kToyConfig + " --out " + a.string() + kFast) == 0);
  REQUIRE(run("train --config " + kToyConfig + " --eval-only --ckpt " + (a / "final.ckpt").string() + " --out " +
              a.string() + kFast) == 0);
  const json trained = read_json(a / "summary.json");
  const json again = read_json(a / "eval_summary.json");
  CHECK(again["clean_acc"] == trained["clean_acc"]);
  CHECK(again["pgd20_acc"] == trained["pgd20_acc"]);
  CHECK(again["boundary_ratio"] == trained["boundary_ratio"]);
  REQUIRE(run("eval --config " + kToyConfig + " --ckpt " + (a / "final.ckpt").string() + " --out " + a.string() +
              kFast) == 0);
  CHECK(read_json(a / "eval_summary.json")["clean_acc"] == trained["clean_acc"]);
}

TEST_CASE("toy demo reports every boundary ratio") {
  const fs::path a = scratch("demo");
  REQUIRE(run("toy-demo --config " + kToyConfig + " --out " + a.string() + kFast) == 0);
  const json s = read_json(a / "summary.json");
  for (const char* m : {"standard", "fgsm_at", "slat"}) {
    CAPTURE(m);
    REQUIRE(s.contains(m));
    CHECK(s[m].contains("boundary_ratio"));
    CHECK(s[m].contains("robust_acc"));
    CHECK(fs::exists(a / m / "metrics.csv"));
  }
  CHECK(fs::exists(a / "toy_data.csv"));
}

TEST_CASE("sweep writes one directory per value and a merged table") {
  const fs::path a = scratch("sweep");
  REQUIRE(run("sweep --config " + kToyConfig + " --param train.epsilon --values 0.05,0.1 --out " + a.string() +
              kFast) == 0);
  CHECK(fs::exists(a / "train.epsilon=0.05" / "summary.json"));
  CHECK(fs::exists(a / "train.epsilon=0.1" / "summary.json"));
  const std::string table = slurp(a / "sweep.csv");
  CHECK(table.find("0.05,ok") != std::string::npos);
  CHECK(table.find("0.1,ok") != std::string::npos);
  CHECK(run("sweep --config " + kToyConfig + " --param train.epsilon --values , --out " + a.string()) == 1);
}

TEST_CASE("landscape verb writes a grid") {
  const fs::path a = scratch("landscape");
  REQUIRE(run("train --config " + kToyConfig + " --out " + a.string() + kFast + " --eval.landscape=false") == 0);
  CHECK_FALSE(fs::exists(a / "landscape_slat.csv"));
  REQUIRE(run("landscape --config " + kToyConfig + " --ckpt " + (a / "final.ckpt").string() + " --out " + a.string() +
              kFast) == 0);
  CHECK(fs::exists(a / "landscape_slat.csv"));
}

TEST_CASE("exit codes") {
  const fs::path a = scratch("codes");
  CHECK(run("train --config " + kToyConfig + " --out " + a.string() + " --train.bogus=1") == 1);
  CHECK(run("train --config /nonexistent.ini") != 0);
  CHECK(run("train --config " + kToyConfig + " --out " + a.string() + " --train.epsilon=-1") == 1);
  CHECK(run("train --config " + kToyConfig + " --out " + a.string() + kFast + " --train.lr_max=1e200") == 2);
  const json s = read_json(a / "summary.json");
  CHECK(s["aborted"] == true);
  CHECK(fs::exists(a / "metrics.csv"));
}
