#include "nps/subspace.hpp"

#include <cmath>
#include <string>

#include "nps/error.hpp"
#include "nps/kernels.hpp"

namespace nps {

std::vector<std::size_t> SubspacePartition::bin_sizes() const {
  std::vector<std::size_t> sizes(count, 0);
  for (auto b : bin_of) ++sizes[b];
  return sizes;
}

std::vector<std::size_t> equal_count_boundaries(std::size_t n, std::size_t m) {
  std::vector<std::size_t> cuts(m + 1, 0);
  const std::size_t base = n / m;
  const std::size_t extra = n % m;
  for (std::size_t b = 0; b < m; ++b) {
    cuts[b + 1] = cuts[b] + base + (b < extra ? 1 : 0);
  }
  return cuts;
}

namespace {

void assign_bins(std::span<const float> values, std::size_t offset, std::size_t subspaces,
                 std::vector<std::uint32_t>& bin_of, std::vector<std::size_t>* boundaries) {
  const auto order = kernels::magnitude_order(values);
  const auto cuts = equal_count_boundaries(values.size(), subspaces);
  for (std::size_t b = 0; b < subspaces; ++b) {
    for (std::size_t r = cuts[b]; r < cuts[b + 1]; ++r) {
      bin_of[offset + order[r]] = static_cast<std::uint32_t>(b);
    }
  }
  if (boundaries) *boundaries = cuts;
}

}  // namespace

SubspacePartition partition(const TaskVector& tv, std::size_t subspaces, PartitionScope scope) {
  const std::size_t n = tv.size();
  if (subspaces < 1 || subspaces > n) {
    throw InvalidArgument("subspace count " + std::to_string(subspaces) + " outside [1, " +
                          std::to_string(n) + "]");
  }
  SubspacePartition part;
  part.count = subspaces;
  part.bin_of.assign(n, 0);
  if (scope == PartitionScope::kGlobal) {
    assign_bins(tv.values(), 0, subspaces, part.bin_of, &part.boundaries);
    return part;
  }
  for (const auto& t : tv.layout().tensors()) {
    if (t.numel() < subspaces) {
      throw InvalidArgument("tensor '" + t.name + "' has fewer elements than subspaces");
    }
  }
  for (const auto& t : tv.layout().tensors()) {
    assign_bins(tv.values().subspan(t.offset, t.numel()), t.offset, subspaces, part.bin_of,
                nullptr);
  }
  return part;
}

void reweight_into(const TaskVector& tv, const SubspacePartition& part, const WeightVector& w,
                   TaskVector& out) {
  if (part.size() != tv.size()) {
    throw InvalidArgument("partition covers " + std::to_string(part.size()) +
                          " elements, task vector has " + std::to_string(tv.size()));
  }
  if (w.size() != part.count) {
    throw InvalidArgument("weight vector has " + std::to_string(w.size()) + " entries, expected " +
                          std::to_string(part.count));
  }
  for (double x : w) {
    if (!std::isfinite(x)) throw InvalidArgument("subspace weights must be finite");
  }
  require_same_layout(tv.layout_ptr(), out.layout_ptr(), "reweight");
  kernels::reweight(tv.values(), part.bin_of, w, out.values_mut());
}

TaskVector reweight(const TaskVector& tv, const SubspacePartition& part, const WeightVector& w) {
  TaskVector out(tv.layout_ptr());
  reweight_into(tv, part, w, out);
  return out;
}

Checkpoint adjusted_model(const Checkpoint& pre, const TaskVector& tv,
                          const SubspacePartition& part, const WeightVector& w) {
  return apply(pre, reweight(tv, part, w), 1.0);
}

}  // namespace nps
