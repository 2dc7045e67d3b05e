#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "nps/checkpoint.hpp"
#include "../support/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "nps_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = "cd '" + work_dir().string() + "' && '" + NPS_CLI_PATH + "' " + args +
                          " >>cli_stdout.log 2>>cli_stderr.log";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(work_dir() / p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

constexpr const char* kTinyConfig = R"(tasks = 2
upstream_tasks = 2
hidden = 16
generations = 3
fusion_generations = 3
sweep_ratios = 0.5, 0.2
train_samples = 128
calibration_samples = 64
test_samples = 128
pretrain_steps = 100
finetune_steps = 80
)";

void write_config() {
  std::ofstream(work_dir() / "tiny.cfg") << kTinyConfig;
}

}  // namespace

TEST_CASE("bench writes its outputs and repeats byte for byte") {
  write_config();
  REQUIRE(run("bench --config tiny.cfg --out-dir b1 --export ex") == 0);
  REQUIRE(run("bench --config tiny.cfg --out-dir b2") == 0);
  REQUIRE(run("bench --config tiny.cfg --out-dir b3 --workers 3") == 0);
  for (const char* f : {"comparison.csv", "sweep.csv", "storage_points.csv", "report.json"}) {
    const auto a = slurp(fs::path("b1") / f);
    CHECK_MESSAGE(!a.empty(), f);
    CHECK_MESSAGE(a == slurp(fs::path("b2") / f), f);
    CHECK_MESSAGE(a == slurp(fs::path("b3") / f), f);
  }
  const auto manifest = read_json("b1/run_manifest.json");
  CHECK(manifest.at("command") == "bench");
  CHECK(manifest.at("seeds").at("bench") == 7);
  CHECK(manifest.at("timing").contains("T_total"));
  CHECK(read_json("b3/run_manifest.json").at("config").at("workers") == 3);
  for (const char* f : {"pre.npsc", "ft_0.npsc", "ft_1.npsc", "task_0.npsc", "bundle.npsb"}) {
    CHECK_MESSAGE(fs::exists(work_dir() / "ex" / f), f);
  }
  const auto& timing = manifest.at("timing");
  const double per_gen = timing.at("T_pruning").get<double>() + timing.at("T_validate").get<double>();
  const double total = timing.at("T_total").get<double>();
  CHECK(std::fabs(timing.at("generations").get<double>() * per_gen - total) <= 0.1 * total);

  // Replaying the recorded arguments reproduces the outputs.
  const auto before = slurp("b2/comparison.csv");
  std::string replay;
  const auto recorded = read_json("b2/run_manifest.json");
  for (const auto& a : recorded.at("args")) replay += " '" + a.get<std::string>() + "'";
  REQUIRE(run(replay) == 0);
  CHECK(slurp("b2/comparison.csv") == before);
  CHECK(slurp("b2/report.json") == slurp("b1/report.json"));

  // A seed given on the command line changes the run.
  REQUIRE(run("bench --config tiny.cfg --out-dir b4 --seed 8 --no-sweep") == 0);
  CHECK(slurp("b4/comparison.csv") != slurp("b1/comparison.csv"));
}

TEST_CASE("prune at ratio 1 keeps the fine-tuned accuracy") {
  REQUIRE(fs::exists(work_dir() / "ex" / "pre.npsc"));
  REQUIRE(run("--out eval_ft.json eval --model ex/ft_0.npsc --data ex/task_0.npsc") == 0);
  REQUIRE(run("--out prune.json prune --pre ex/pre.npsc --ft ex/ft_0.npsc --ratio 1.0 --model-out full.npsc") == 0);
  REQUIRE(run("--out eval_full.json eval --model full.npsc --data ex/task_0.npsc") == 0);
  CHECK(read_json("eval_full.json").at("mean") == read_json("eval_ft.json").at("mean"));
  CHECK(read_json("prune.json").at("kept") == read_json("prune.json").at("parameters"));
  const auto ft = nps::load_checkpoint(work_dir() / "ex" / "ft_0.npsc");
  const auto full = nps::load_checkpoint(work_dir() / "full.npsc");
  CHECK(testutil::bit_equal(ft.values(), full.values()));
}

TEST_CASE("search, compress, reconstruct and merge from the command line") {
  REQUIRE(fs::exists(work_dir() / "ex" / "pre.npsc"));
  REQUIRE(run("--out s.json search --pre ex/pre.npsc --ft ex/ft_0.npsc --data ex/task_0.npsc --ratio 0.2 "
              "--subspaces 4 --generations 3 --bundle-out s0.npsb --name t0 --history h.jsonl") == 0);
  const auto s = read_json("s.json");
  CHECK(s.at("fitness").get<double>() >= s.at("magnitude_fitness").get<double>());
  REQUIRE(run("search --pre ex/pre.npsc --ft ex/ft_1.npsc --data ex/task_1.npsc --ratio 0.2 --subspaces 4 "
              "--generations 3 --bundle-out s1.npsb --name t1 >/dev/null") == 0);
  REQUIRE(run("compress --pre ex/pre.npsc --input s0.npsb --input s1.npsb --bundle-out both.npsb") == 0);
  REQUIRE(run("reconstruct --bundle both.npsb --task t1 --model-out t1.npsc") == 0);
  REQUIRE(run("--out e1.json eval --model t1.npsc --data ex/task_1.npsc") == 0);
  CHECK(read_json("e1.json").at("mean").get<double>() > 0.5);
  REQUIRE(run("--out f.json merge --method fuse-search --pre ex/pre.npsc --bundle both.npsb "
              "--data ex/task_0.npsc --data ex/task_1.npsc --generations 2 --model-out fused.npsc") == 0);
  CHECK(read_json("f.json").at("lambdas").size() == 2);
  REQUIRE(run("merge --method ties --pre ex/pre.npsc --ft ex/ft_0.npsc --ft ex/ft_1.npsc --ratio 0.2 "
              "--lambda 1.0 --model-out ties.npsc") == 0);
  CHECK(fs::exists(work_dir() / "ties.npsc"));
}

TEST_CASE("storage report on the command line") {
  REQUIRE(run("--out st.json storage-report --n 8 --p 1e6 --p-prime 1e6 --f 0 --ratio 0.05") == 0);
  const auto j = read_json("st.json");
  CHECK(j.at("nps") == 52800000);
  CHECK(j.at("fine_tuned") == 256000000);
  CHECK(j.at("tallmask_ties") == 72000000);
}

TEST_CASE("exit codes") {
  CHECK(run("--help") == 0);
  CHECK(run("") == 2);
  CHECK(run("storage-report --n 8") == 2);
  CHECK(run("storage-report --n 8 --p 10 --p-prime 9 --f 0") == 2);
  CHECK(run("prune --pre ex/pre.npsc --ft ex/ft_0.npsc --ratio 1.5") == 2);
  CHECK(run("prune --pre missing.npsc --ft ex/ft_0.npsc") == 3);
  {
    std::ofstream(work_dir() / "garbage.npsc") << "not a checkpoint";
  }
  CHECK(run("prune --pre garbage.npsc --ft ex/ft_0.npsc") == 3);
  CHECK(run("reconstruct --bundle both.npsb --task nope") == 3);
  nps::save_checkpoint(testutil::random_checkpoint(testutil::vector_layout(10), 1), work_dir() / "small.npsc");
  CHECK(run("diff --pre small.npsc --ft ex/ft_0.npsc") == 4);
  {
    std::ofstream(work_dir() / "diverge.cfg") << kTinyConfig << "pretrain_lr = 1e30\n";
  }
  CHECK(run("bench --config diverge.cfg --out-dir bd") == 5);
}
