#pragma once

// Magnitude-ranked subspace decomposition of a task vector, τ = Σ_m q_m, and
// the per-subspace reweighting τ' = Σ_m w_m · q_m.

#include <cstdint>
#include <vector>

#include "nps/checkpoint.hpp"

namespace nps {

inline constexpr std::size_t kDefaultSubspaces = 8;

enum class PartitionScope {
  kGlobal,     ///< one ranking over the whole flat vector
  kPerTensor,  ///< each tensor ranked and binned on its own
};

struct SubspacePartition {
  std::size_t count = 0;               ///< M
  std::vector<std::uint32_t> bin_of;   ///< flat index -> bin in [0, M)
  /// Global scope: M+1 rank cut points, bin m holds ranks [boundaries[m],
  /// boundaries[m+1]). Empty for per-tensor partitions.
  std::vector<std::size_t> boundaries;

  std::size_t size() const noexcept { return bin_of.size(); }
  std::vector<std::size_t> bin_sizes() const;
};

/// Rank cut points for splitting `n` ranks into `m` near-equal bins; the
/// first n mod m bins receive one extra element.
std::vector<std::size_t> equal_count_boundaries(std::size_t n, std::size_t m);

/// Bin 0 receives the largest |τ_d|. Throws InvalidArgument unless
/// 1 ≤ M ≤ D (per tensor: 1 ≤ M ≤ smallest tensor size).
SubspacePartition partition(const TaskVector& tv, std::size_t subspaces,
                            PartitionScope scope = PartitionScope::kGlobal);

using WeightVector = std::vector<double>;

TaskVector reweight(const TaskVector& tv, const SubspacePartition& part, const WeightVector& w);
/// In-place variant for search loops; `out` must already match tv's layout.
void reweight_into(const TaskVector& tv, const SubspacePartition& part, const WeightVector& w,
                   TaskVector& out);

/// θ_pre + Σ_m w_m · q_m.
Checkpoint adjusted_model(const Checkpoint& pre, const TaskVector& tv,
                          const SubspacePartition& part, const WeightVector& w);

}  // namespace nps
