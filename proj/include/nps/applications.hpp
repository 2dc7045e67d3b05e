#pragma once

// Downstream uses of pruned task vectors: rescaled transfer, normalized
// multi-task fusion (with a coefficient search), compressed bundles, and the
// storage / accuracy bookkeeping used to compare them.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "nps/checkpoint.hpp"
#include "nps/cmaes.hpp"
#include "nps/prune.hpp"

namespace nps {

// ---------------------------------------------------------------- transfer

struct TransferConfig {
  double lambda = 1.0;
  SparsityRatio ratio{kDefaultRatio};
};

/// θ_pre + λ · m ⊙ τ. Throws InvalidArgument unless λ > 0.
Checkpoint transfer(const Checkpoint& pre, const PrunedTaskVector& ptv, const TransferConfig& cfg);

// ------------------------------------------------------------------ fusion

/// θ_pre + Σ_i λ_i · m_i ⊙ τ_i / Σ_i λ_i. Throws InvalidArgument when Σλ = 0,
/// on an empty task list or a λ/task count mismatch.
Checkpoint fuse(const Checkpoint& pre, const std::vector<const PrunedTaskVector*>& ptvs,
                std::span<const double> lambdas);
Checkpoint fuse(const Checkpoint& pre, const std::vector<PrunedTaskVector>& ptvs,
                std::span<const double> lambdas);

/// Same sum without the Σλ normalization (task-arithmetic style).
Checkpoint fuse_unnormalized(const Checkpoint& pre, const std::vector<const PrunedTaskVector*>& ptvs,
                             std::span<const double> lambdas);

inline constexpr double kFusionLambdaMin = 0.8;
inline constexpr double kFusionLambdaMax = 2.5;

struct FusionOptions {
  cmaes::SearchBudget budget;
  double init_sigma = 0.3;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  double lambda_min = kFusionLambdaMin;
  double lambda_max = kFusionLambdaMax;
};

struct FusionResult {
  Checkpoint merged;
  std::vector<double> lambdas;  ///< projected into [lambda_min, lambda_max]
  std::vector<Bitmask> per_task_masks;
  double fitness = 0;
  double baseline_fitness = 0;  ///< λ = 1 for every task
  cmaes::SearchHistory history;
};

/// CMA-ES over λ ∈ R^n starting at all-ones. Candidates are clamped into
/// [lambda_min, lambda_max] before fusing, so the optimizer stays
/// unconstrained.
FusionResult fuse_search(const Checkpoint& pre, const std::vector<PrunedTaskVector>& ptvs,
                         const FitnessEvaluator& evaluator, const FusionOptions& options);

// ------------------------------------------------------------- compression

inline constexpr std::uint32_t kBundleFormatVersion = 1;

struct CompressedBundle {
  Checkpoint base;
  std::vector<std::pair<std::string, PrunedTaskVector>> entries;
  std::uint32_t format_version = kBundleFormatVersion;

  const PrunedTaskVector& entry(std::string_view task) const;
  std::vector<std::string> task_names() const;
};

/// Throws StructuralMismatch for entries built on another layout and
/// InvalidArgument for duplicate task names.
CompressedBundle compress(Checkpoint base, std::vector<std::pair<std::string, PrunedTaskVector>> pruned);

/// θ_pre + m_t ⊙ τ_t. Throws LookupError for unknown tasks.
Checkpoint reconstruct(const CompressedBundle& bundle, std::string_view task);

// NPSB format: magic, u32 version, embedded NPSC checkpoint, u32 task count,
// per task [u16 name length, name, f64 ratio, u64 kept, ⌈D/8⌉ mask bytes,
// kept × f32].
std::vector<std::uint8_t> serialize_bundle(const CompressedBundle& bundle);
CompressedBundle deserialize_bundle(std::span<const std::uint8_t> data);
void save_bundle(const CompressedBundle& bundle, const std::filesystem::path& path);
CompressedBundle load_bundle(const std::filesystem::path& path);

// ---------------------------------------------------------------- storage

struct StorageInputs {
  std::uint64_t tasks = 1;             ///< N
  std::uint64_t params = 0;            ///< P = P′ + F
  std::uint64_t trainable_params = 0;  ///< P′
  std::uint64_t frozen_params = 0;     ///< F
  double ratio = kDefaultRatio;        ///< r
};

struct StorageReport {
  StorageInputs inputs;
  std::uint64_t fine_tuned_bits = 0;      ///< 32(NP′ + F)
  std::uint64_t single_model_bits = 0;    ///< 32P
  std::uint64_t tallmask_bits = 0;        ///< (64 + N)P′ + 32F
  std::uint64_t nps_bits = 0;             ///< 32P + N(32⌈rP′⌉ + P′)
};

/// Throws InvalidArgument when N = 0, P ≠ P′ + F, r ∉ (0, 1] or a count
/// overflows 64 bits.
StorageReport storage_report(const StorageInputs& inputs);

// ---------------------------------------------------------------- metrics

/// Mean over tasks of merged / fine-tuned accuracy.
double normalized_accuracy(std::span<const double> merged, std::span<const double> fine_tuned);

/// Harmonic mean 2ab / (a + b) of the original-task and target-task averages.
double h_score(double avg_origin, double avg_target);

}  // namespace nps
