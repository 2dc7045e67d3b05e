#include <doctest.h>

#include <set>
#include <sstream>

#include "nps/applications.hpp"
#include "nps/bench.hpp"
#include "nps/error.hpp"

using namespace nps;
using namespace nps::bench;

namespace {

BenchConfig tiny_config() {
  BenchConfig c;
  apply_config_text(c, R"(
# small enough for a unit test
tasks = 2
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
)");
  return c;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("config text parsing") {
  BenchConfig c;
  apply_config_text(c, "ratio = 0.1\nsubspaces=4 # trailing comment\n\nactivation = tanh\nfusion = false\n");
  CHECK(c.ratio == 0.1);
  CHECK(c.subspaces == 4);
  CHECK(c.model.activation == harness::Activation::kTanh);
  CHECK_FALSE(c.fusion);
  apply_config_text(c, "input_dim = 12\nclasses = 3\nhidden = 8,8,4");
  CHECK(c.model.input_dim == 12);
  CHECK(c.data.input_dim == 12);
  CHECK(c.data.class_count == 3);
  CHECK(c.model.hidden == std::vector<std::size_t>{8, 8, 4});

  CHECK_THROWS_AS(apply_config_text(c, "no_such_key = 1"), InvalidArgument);
  CHECK_THROWS_AS(apply_config_text(c, "tasks"), InvalidArgument);
  CHECK_THROWS_AS(apply_config_text(c, "tasks = many"), InvalidArgument);
  CHECK_THROWS_AS(apply_config_text(c, "ratio = 1.5"), InvalidArgument);
  CHECK_THROWS_AS(apply_config_text(c, "activation = gelu"), InvalidArgument);
}

TEST_CASE("config json leaves out the worker count") {
  BenchConfig a, b;
  b.workers = 4;
  CHECK(config_to_json(a) == config_to_json(b));
  CHECK_FALSE(config_to_json(a).contains("workers"));
  CHECK(config_to_json(a).at("seed") == 7);
}

TEST_CASE("derived seeds differ by stage and index") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t stage = 1; stage < 10; ++stage) {
    for (std::uint64_t i = 0; i < 10; ++i) seen.insert(derive_seed(7, stage, i));
  }
  CHECK(seen.size() == 90);
  CHECK(derive_seed(7, 3, 1) == derive_seed(7, 3, 1));
  CHECK(derive_seed(7, 3, 1) != derive_seed(8, 3, 1));
}

TEST_CASE("small bench run: tables, storage points and determinism") {
  auto cfg = tiny_config();
  BenchArtifacts art;
  const auto report = run_bench(cfg, &art);
  CHECK(report.tasks.size() == 2);
  CHECK(art.tasks.size() == 2);
  REQUIRE(art.bundle.has_value());
  CHECK(report.bundle_roundtrip_exact);

  const auto comp = lines(comparison_csv(report));
  REQUIRE(!comp.empty());
  CHECK(comp[0] == "method,hyperparameters,task_0,task_1,mean,normalized");
  std::set<std::string> methods;
  for (std::size_t i = 1; i < comp.size(); ++i) methods.insert(comp[i].substr(0, comp[i].find(',')));
  for (const char* m : {"fine_tuned", "pretrained", "magnitude_prune", "nps_prune", "weight_average",
                        "task_arithmetic", "ties", "dare", "nps_fusion"}) {
    CHECK_MESSAGE(methods.count(m) == 1, m);
  }

  for (const auto& t : report.tasks) CHECK(t.nps_calibration >= t.magnitude_calibration);
  CHECK(report.fusion.fitness >= report.fusion.baseline_fitness);

  const auto sweep = lines(sweep_csv(report));
  CHECK(sweep[0] == "ratio,method,task_0,task_1,mean");
  CHECK(sweep.size() == 1 + 2 * 4);

  const auto storage = storage_report({2, report.parameters, report.parameters, 0, cfg.ratio});
  bool found_ft = false, found_nps = false;
  for (const auto& p : report.storage) {
    if (p.method == "fine_tuned") {
      found_ft = true;
      CHECK(p.bits == storage.fine_tuned_bits);
      CHECK(p.normalized_accuracy == doctest::Approx(1.0));
    }
    if (p.method == "nps_compress") {
      found_nps = true;
      CHECK(p.bits == storage.nps_bits);
    }
  }
  CHECK(found_ft);
  CHECK(found_nps);

  cfg.workers = 3;
  const auto again = run_bench(cfg);
  CHECK(comparison_csv(again) == comparison_csv(report));
  CHECK(sweep_csv(again) == sweep_csv(report));
  CHECK(storage_csv(again) == storage_csv(report));
  CHECK(report_json(again).dump() == report_json(report).dump());
}

TEST_CASE("history lines carry the label and one record per generation") {
  cmaes::SearchHistory h;
  h.generations.push_back({0, 0.5, 0.5, 0.3, 0.01, 0.02, 1});
  h.generations.push_back({1, 0.6, 0.55, 0.28, 0.01, 0.02, 8});
  const auto text = history_jsonl(h, "task_0");
  const auto ls = lines(text);
  REQUIRE(ls.size() == 2);
  const auto j = nlohmann::json::parse(ls[1]);
  CHECK(j.at("search") == "task_0");
  CHECK(j.at("generation") == 1);
  CHECK(j.at("best_fitness") == 0.6);
}
