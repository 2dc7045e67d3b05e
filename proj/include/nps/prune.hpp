#pragma once

// Magnitude masks, sparse task vectors and the subspace-reweighting search.

#include <cstdint>
#include <vector>

#include "nps/bitmask.hpp"
#include "nps/checkpoint.hpp"
#include "nps/cmaes.hpp"
#include "nps/subspace.hpp"

namespace nps {

/// Fraction r ∈ (0, 1] of task-vector elements that survive pruning.
class SparsityRatio {
 public:
  explicit SparsityRatio(double r);
  double value() const noexcept { return r_; }
  /// ⌈r·n⌉, clamped to [1, n] for n > 0.
  std::size_t kept(std::size_t n) const noexcept;

 private:
  double r_;
};

inline constexpr double kDefaultRatio = 0.05;

/// ⌈r·n⌉ for r ∈ (0, 1]. The product is taken with a relative slack of
/// 1e-12 so that decimal ratios like 0.1 × 30 yield 3, not 4.
std::size_t ceil_ratio(double r, std::size_t n) noexcept;

/// Bits set for exactly ⌈r·D⌉ entries: the largest |τ_d|, ties resolved in
/// favour of the lower flat index.
Bitmask top_r_mask(const TaskVector& tv, SparsityRatio r);

/// τ̂ = m ⊙ τ stored sparsely: values are the kept deltas in ascending
/// flat-index order.
struct PrunedTaskVector {
  LayoutPtr layout;
  Bitmask mask;
  std::vector<float> values;
  WeightVector weights_used;  ///< subspace weights the deltas were scaled by; empty if unknown
  SparsityRatio ratio{1.0};

  std::size_t kept() const noexcept { return values.size(); }
  /// Dense m ⊙ τ.
  TaskVector expand() const;
  /// θ_pre + m ⊙ τ.
  Checkpoint reconstruct(const Checkpoint& pre) const;
  void reconstruct_into(const Checkpoint& pre, Checkpoint& out) const;
};

struct PruneResult {
  PrunedTaskVector pruned;
  Checkpoint model;
};

PruneResult prune(const Checkpoint& pre, const TaskVector& tv_adjusted, SparsityRatio r);

/// Scores a candidate model, higher is better. Implementations must be
/// deterministic and safe to call concurrently.
class FitnessEvaluator {
 public:
  virtual ~FitnessEvaluator() = default;
  virtual double evaluate(const Checkpoint& candidate) const = 0;
};

struct NpsOptions {
  std::size_t subspaces = kDefaultSubspaces;
  SparsityRatio ratio{kDefaultRatio};
  PartitionScope scope = PartitionScope::kGlobal;
  cmaes::SearchBudget budget;
  double init_sigma = 0.3;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct NpsResult {
  PrunedTaskVector pruned;
  Checkpoint model;
  double fitness = 0;           ///< evaluator score of `model`
  double baseline_fitness = 0;  ///< score of plain magnitude pruning (w = 1)
  cmaes::SearchHistory history;
};

/// Searches w ∈ R^M maximizing evaluate(θ_pre + top_r(reweight(τ, w))),
/// starting from w = 1, and returns the pruned model of the best w found.
NpsResult nps_search(const Checkpoint& pre, const Checkpoint& fine_tuned,
                     const FitnessEvaluator& evaluator, const NpsOptions& options);

}  // namespace nps
