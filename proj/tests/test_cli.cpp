#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

const std::string kBin = OTLOC_BIN;

int run(const std::string& args) {
  std::string cmd = kBin + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  return WEXITSTATUS(status);
}

fs::path temp_dir(const std::string& tag) {
  fs::path p =
      fs::temp_directory_path() / ("otloc_cli_" + tag + "_" + std::to_string(getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += (c == '\n');
  return n;
}

// Small corpus every test can share: 2 classes, 1-shot scale.
std::string gen_flags(const fs::path& out) {
  return "gen-data --out " + out.string() +
         " --classes 2 --dim 8 --clips 32 --videos-train 4 --videos-test 3 --pool 4 "
         "--seed 5";
}

std::string train_flags(const fs::path& data, const fs::path& out, int prompts = 2) {
  return "train --data " + data.string() + " --out " + out.string() +
         " --epochs 2 --shots 1 --prompts " + std::to_string(prompts) +
         " --ctx 3 --ctx-dim 4 --fpn-levels 2 --seed 1";
}

}  // namespace

TEST_CASE("gen-data writes a manifest and two splits, reproducibly") {
  fs::path d1 = temp_dir("gen1"), d2 = temp_dir("gen2");
  REQUIRE(run(gen_flags(d1)) == 0);
  CHECK(fs::exists(d1 / "manifest.json"));
  CHECK(fs::exists(d1 / "train.jsonl"));
  CHECK(fs::exists(d1 / "test.jsonl"));
  CHECK(fs::exists(d1 / "config.resolved.json"));

  REQUIRE(run(gen_flags(d2)) == 0);
  for (const char* f : {"manifest.json", "train.jsonl", "test.jsonl"}) {
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("gen-data without --out is a usage error (exit 2)") {
  CHECK(run("gen-data --classes 2") == 2);
}

TEST_CASE("help exits 0 for every subcommand") {
  CHECK(run("--help") == 0);
  for (const char* sub : {"gen-data", "train", "eval", "dump-plan", "ablate"}) {
    CHECK(run(std::string(sub) + " --help") == 0);
  }
}

TEST_CASE("train writes model.json, loss.csv and the resolved config") {
  fs::path data = temp_dir("trdata"), out = temp_dir("trout");
  REQUIRE(run(gen_flags(data)) == 0);
  REQUIRE(run(train_flags(data, out)) == 0);
  CHECK(fs::exists(out / "model.json"));
  CHECK(fs::exists(out / "config.resolved.json"));
  std::string loss = slurp(out / "loss.csv");
  CHECK(loss.rfind("epoch,cls,reg,total\n", 0) == 0);
  CHECK(count_lines(loss) == 3);  // header + 2 epochs
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST_CASE("train is byte-identical across identical invocations") {
  fs::path data = temp_dir("detdata"), o1 = temp_dir("det1"), o2 = temp_dir("det2");
  REQUIRE(run(gen_flags(data)) == 0);
  REQUIRE(run(train_flags(data, o1)) == 0);
  REQUIRE(run(train_flags(data, o2)) == 0);
  CHECK(slurp(o1 / "model.json") == slurp(o2 / "model.json"));
  CHECK(slurp(o1 / "loss.csv") == slurp(o2 / "loss.csv"));
  fs::remove_all(data);
  fs::remove_all(o1);
  fs::remove_all(o2);
}

TEST_CASE("train accepts every strategy flag, including the single-prompt analog") {
  fs::path data = temp_dir("stratdata");
  REQUIRE(run(gen_flags(data)) == 0);
  for (const char* strategy : {"ot", "hungarian", "euclidean", "mean"}) {
    fs::path out = temp_dir("strat_"s + strategy);
    REQUIRE(run(train_flags(data, out) + " --strategy " + strategy) == 0);
    std::string resolved = slurp(out / "config.resolved.json");
    CHECK(resolved.find("\""s + strategy + "\"") != std::string::npos);
    fs::remove_all(out);
  }
  fs::path out1 = temp_dir("coop");
  REQUIRE(run(train_flags(data, out1, 1)) == 0);
  fs::remove_all(data);
  fs::remove_all(out1);
}

TEST_CASE("train on a missing corpus is a data error (exit 3)") {
  fs::path out = temp_dir("nodata");
  CHECK(run("train --data /nonexistent_dir_xyz --out " + out.string()) == 3);
  fs::remove_all(out);
}

TEST_CASE("eval writes reports and honors a custom threshold grid") {
  fs::path data = temp_dir("evdata"), tr = temp_dir("evtr"), ev = temp_dir("evout");
  REQUIRE(run(gen_flags(data)) == 0);
  REQUIRE(run(train_flags(data, tr)) == 0);
  REQUIRE(run("eval --model " + (tr / "model.json").string() + " --data " + data.string() +
              " --out " + ev.string() + " --thresholds 0.1,0.2,0.3,0.4,0.5") == 0);
  CHECK(fs::exists(ev / "report.json"));
  std::string csv = slurp(ev / "report.csv");
  CHECK(csv.find("0.1000,") != std::string::npos);
  CHECK(csv.find("0.5000,") != std::string::npos);
  CHECK(csv.find("average,mAP,") != std::string::npos);
  fs::remove_all(data);
  fs::remove_all(tr);
  fs::remove_all(ev);
}

TEST_CASE("eval rejects a corpus with mismatched feature dim (exit 3)") {
  fs::path data = temp_dir("dimdata"), tr = temp_dir("dimtr"), other = temp_dir("dimother");
  REQUIRE(run(gen_flags(data)) == 0);
  REQUIRE(run(train_flags(data, tr)) == 0);
  REQUIRE(run("gen-data --out " + other.string() +
              " --classes 2 --dim 16 --clips 32 --videos-train 4 --videos-test 3 --pool 4 "
              "--seed 5") == 0);
  CHECK(run("eval --model " + (tr / "model.json").string() + " --data " + other.string() +
            " --out " + (other / "ev").string()) == 3);
  fs::remove_all(data);
  fs::remove_all(tr);
  fs::remove_all(other);
}

TEST_CASE("dump-plan emits a frame-by-prompt CSV table") {
  fs::path data = temp_dir("dpdata"), tr = temp_dir("dptr");
  REQUIRE(run(gen_flags(data)) == 0);
  REQUIRE(run(train_flags(data, tr)) == 0);
  fs::path csv = tr / "plan.csv";
  REQUIRE(run("dump-plan --model " + (tr / "model.json").string() + " --data " +
              data.string() + " --video test_0 --class 1 --out " + csv.string()) == 0);
  std::string text = slurp(csv);
  CHECK(text.rfind("frame,prompt_1,prompt_2\n", 0) == 0);
  CHECK(count_lines(text) == 33);  // header + 32 frames (level 1)

  CHECK(run("dump-plan --model " + (tr / "model.json").string() + " --data " + data.string() +
            " --video no_such_video --class 0 --out " + csv.string()) == 3);
  fs::remove_all(data);
  fs::remove_all(tr);
}

TEST_CASE("config file drives commands and unknown keys are rejected") {
  fs::path dir = temp_dir("cfg");
  fs::path good = dir / "good.json";
  {
    std::ofstream out(good);
    out << R"({"gen": {"classes": 2, "feature_dim": 8, "clips_per_video": 32,
               "train_videos": 4, "test_videos": 3, "prototype_pool_size": 4, "seed": 5}})";
  }
  fs::path data = dir / "data";
  REQUIRE(run("--config " + good.string() + " gen-data --out " + data.string()) == 0);
  CHECK(fs::exists(data / "manifest.json"));

  // Flag overrides the config key.
  fs::path data3 = dir / "data3";
  REQUIRE(run("--config " + good.string() + " gen-data --out " + data3.string() +
              " --classes 3") == 0);
  std::string manifest = slurp(data3 / "manifest.json");
  CHECK(manifest.find("action_2") != std::string::npos);

  fs::path bad = dir / "bad.json";
  {
    std::ofstream out(bad);
    out << R"({"gen": {"classes": 2, "nonsense_key": 1}})";
  }
  CHECK(run("--config " + bad.string() + " gen-data --out " + (dir / "x").string()) == 2);
  fs::remove_all(dir);
}

TEST_CASE("ablate sweeps a grid into one combined csv") {
  fs::path data = temp_dir("abdata"), out = temp_dir("about");
  REQUIRE(run(gen_flags(data)) == 0);
  REQUIRE(run("ablate --data " + data.string() + " --out " + out.string() +
              " --strategies ot,mean --prompts 1,2 --seeds 1 --epochs 1 --shots 1" +
              " --ctx 3 --fpn-levels 2") == 0);
  std::string csv = slurp(out / "ablation.csv");
  CHECK(csv.rfind("strategy,prompts,n_ctx,fpn_levels,seed", 0) == 0);
  CHECK(count_lines(csv) == 5);  // header + 2 strategies x 2 prompt counts
  CHECK(csv.find("ot,1,") != std::string::npos);
  CHECK(csv.find("mean,2,") != std::string::npos);
  fs::remove_all(data);
  fs::remove_all(out);
}
