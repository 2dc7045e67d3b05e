#pragma once

// End-to-end desk benchmark: pretrain -> finetune x N -> per-task search ->
// fusion search -> compression -> evaluation, plus a sparsity sweep and
// accuracy-vs-storage points. Everything in BenchReport is a deterministic
// function of BenchConfig; wall-clock timings are kept in BenchTiming.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nps/applications.hpp"
#include "nps/harness.hpp"

namespace nps::bench {

struct BenchConfig {
  std::size_t tasks = 8;
  std::size_t upstream_tasks = 8;
  double ratio = kDefaultRatio;
  std::size_t subspaces = kDefaultSubspaces;
  std::size_t generations = 30;
  std::size_t stagnation = 10;
  double init_sigma = 0.3;
  std::size_t fusion_generations = 30;
  double fusion_ratio = 0.2;  ///< sparsity of the task vectors that get fused
  std::uint64_t seed = 7;
  std::size_t workers = 1;
  double calibration_fraction = 1.0;
  bool fusion = true;
  bool sweep = true;
  std::vector<double> sweep_ratios = {0.5, 0.2, 0.1, 0.05, 0.04};

  harness::TinyModelSpec model;
  harness::TaskGeneratorConfig data;
  harness::TrainConfig pretrain{600, 32, 0.05};
  harness::TrainConfig finetune{300, 32, 0.05};
};

/// Applies `key = value` lines (# comments, blank lines ignored) on top of
/// `config`. Unknown keys and malformed values throw InvalidArgument.
void apply_config_text(BenchConfig& config, std::string_view text);
void load_config_file(BenchConfig& config, const std::filesystem::path& path);
nlohmann::json config_to_json(const BenchConfig& config);

struct TaskResult {
  std::size_t task = 0;
  double pre_test = 0;
  double fine_tuned_test = 0;
  double fine_tuned_calibration = 0;
  double magnitude_calibration = 0;
  double magnitude_test = 0;
  double nps_calibration = 0;
  double nps_test = 0;
  WeightVector weights;
  std::size_t kept = 0;
  std::size_t generations = 0;
};

struct MethodRow {
  std::string method;
  std::string hyperparameters;
  std::vector<double> test;
  std::vector<double> calibration;
};

struct SweepPoint {
  double ratio = 0;
  std::string method;
  std::vector<double> test;
};

struct StoragePoint {
  std::string method;
  std::uint64_t bits = 0;
  double mean_accuracy = 0;
  double normalized_accuracy = 0;
};

struct FusionSummary {
  std::vector<double> lambdas;
  double fitness = 0;                 ///< searched λ, calibration mean accuracy
  double baseline_fitness = 0;        ///< λ = 1
  double weight_average_fitness = 0;  ///< element-wise mean of fine-tuned models
};

struct BenchTiming {
  std::size_t generations = 0;
  double prune_seconds = 0;
  double validate_seconds = 0;
  double search_seconds = 0;  ///< measured wall time of all searches
  double total_seconds = 0;   ///< whole pipeline
};

struct BenchReport {
  BenchConfig config;
  std::size_t parameters = 0;
  std::vector<TaskResult> tasks;
  std::vector<MethodRow> methods;
  bool has_fusion = false;
  FusionSummary fusion;
  std::vector<SweepPoint> sweep;
  std::vector<StoragePoint> storage;
  std::size_t bundle_bytes = 0;
  bool bundle_roundtrip_exact = false;
  std::vector<cmaes::SearchHistory> histories;
  std::vector<std::string> history_labels;  ///< task_i, fusion_task_i, fusion
  BenchTiming timing;
};

/// Checkpoints produced along the way, for export.
struct BenchArtifacts {
  std::vector<harness::TaskPtr> upstream;
  std::vector<harness::TaskPtr> tasks;
  std::optional<Checkpoint> pre;
  std::vector<Checkpoint> fine_tuned;
  std::optional<CompressedBundle> bundle;
};

BenchReport run_bench(const BenchConfig& config, BenchArtifacts* artifacts = nullptr);

/// method,hyperparameters,task_0..task_{n-1},mean,normalized (test split).
std::string comparison_csv(const BenchReport& report);
/// ratio,method,task_0..,mean (test split).
std::string sweep_csv(const BenchReport& report);
/// method,tasks,bits,mean_accuracy,normalized_accuracy.
std::string storage_csv(const BenchReport& report);
/// Deterministic summary; excludes timings.
nlohmann::json report_json(const BenchReport& report);
/// One JSON object per generation: generation, best_fitness, mean_fitness,
/// sigma, elapsed_prune_s, elapsed_validate_s.
std::string history_jsonl(const cmaes::SearchHistory& history, std::string_view label = {});

/// Seeds for independent pipeline stages derived from one user seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage, std::uint64_t index = 0);

}  // namespace nps::bench
