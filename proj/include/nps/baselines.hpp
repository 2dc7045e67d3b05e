#pragma once

// Reference merging and pruning methods used as comparison points.

#include <cstdint>
#include <vector>

#include "nps/checkpoint.hpp"
#include "nps/prune.hpp"

namespace nps::baselines {

/// Element-wise mean of the checkpoints.
Checkpoint weight_average(const std::vector<Checkpoint>& checkpoints);

/// θ_pre + λ · Σ_t τ_t, unnormalized.
Checkpoint task_arithmetic(const Checkpoint& pre, const std::vector<TaskVector>& task_vectors,
                           double lambda);

/// TIES merging: trim each τ_t to its top ⌈r·D⌉ magnitudes, elect the sign
/// with the larger summed magnitude per coordinate, average the trimmed
/// values that agree with it (divisor = number of agreeing tasks), and add
/// λ times the result to θ_pre.
Checkpoint ties_merge(const Checkpoint& pre, const std::vector<TaskVector>& task_vectors,
                      SparsityRatio r, double lambda);

struct DareConfig {
  double p = 0.9;  ///< drop probability in [0, 1)
  std::uint64_t seed = 0;
};

/// Zeroes each delta with probability p and rescales survivors by 1/(1−p).
TaskVector dare(const TaskVector& tv, const DareConfig& cfg);

/// The λ grids swept when tuning baselines for comparison tables.
std::vector<double> task_arithmetic_lambda_grid();  // 0.2 .. 1.5 step 0.1
std::vector<double> ties_lambda_grid();             // 0.8 .. 2.5 step 0.1

}  // namespace nps::baselines
