#include "nps/baselines.hpp"

#include <cmath>

#include "nps/error.hpp"
#include "nps/kernels.hpp"

namespace nps::baselines {

namespace {

using Index = std::ptrdiff_t;

template <typename Params>
void require_matching(const LayoutPtr& layout, const std::vector<Params>& items,
                      std::string_view context) {
  for (const auto& item : items) require_same_layout(layout, item.layout_ptr(), context);
}

std::vector<double> grid(double lo, double hi) {
  std::vector<double> out;
  // Integer steps avoid drift from repeated += 0.1.
  const int steps = static_cast<int>(std::lround((hi - lo) * 10.0));
  for (int i = 0; i <= steps; ++i) out.push_back(std::round((lo + 0.1 * i) * 10.0) / 10.0);
  return out;
}

}  // namespace

Checkpoint weight_average(const std::vector<Checkpoint>& checkpoints) {
  if (checkpoints.empty()) throw InvalidArgument("weight averaging needs at least one checkpoint");
  const auto& layout = checkpoints.front().layout_ptr();
  require_matching(layout, checkpoints, "weight_average");
  Checkpoint out(layout);
  auto dst = out.values_mut();
  const Index n = static_cast<Index>(dst.size());
  const double count = static_cast<double>(checkpoints.size());
#pragma omp parallel for schedule(static)
  for (Index d = 0; d < n; ++d) {
    double sum = 0;
    for (const auto& c : checkpoints) sum += c.values()[d];
    dst[d] = static_cast<float>(sum / count);
  }
  return out;
}

Checkpoint task_arithmetic(const Checkpoint& pre, const std::vector<TaskVector>& task_vectors,
                           double lambda) {
  require_matching(pre.layout_ptr(), task_vectors, "task_arithmetic");
  if (!std::isfinite(lambda)) throw InvalidArgument("lambda must be finite");
  Checkpoint out(pre.layout_ptr());
  auto dst = out.values_mut();
  const auto base = pre.values();
  const Index n = static_cast<Index>(dst.size());
#pragma omp parallel for schedule(static)
  for (Index d = 0; d < n; ++d) {
    double sum = 0;
    for (const auto& tv : task_vectors) sum += tv.values()[d];
    dst[d] = lambda == 0.0 ? base[d] : base[d] + static_cast<float>(lambda * sum);
  }
  return out;
}

Checkpoint ties_merge(const Checkpoint& pre, const std::vector<TaskVector>& task_vectors,
                      SparsityRatio r, double lambda) {
  require_matching(pre.layout_ptr(), task_vectors, "ties_merge");
  if (!std::isfinite(lambda)) throw InvalidArgument("lambda must be finite");
  std::vector<Bitmask> trimmed;
  trimmed.reserve(task_vectors.size());
  for (const auto& tv : task_vectors) trimmed.push_back(top_r_mask(tv, r));

  Checkpoint out(pre.layout_ptr());
  auto dst = out.values_mut();
  const auto base = pre.values();
  const Index n = static_cast<Index>(dst.size());
#pragma omp parallel for schedule(static)
  for (Index d = 0; d < n; ++d) {
    double positive = 0, negative = 0;
    for (std::size_t t = 0; t < task_vectors.size(); ++t) {
      if (!trimmed[t].test(static_cast<std::size_t>(d))) continue;
      const double v = task_vectors[t].values()[d];
      (v > 0 ? positive : negative) += std::fabs(v);
    }
    // Ties in mass elect the positive sign.
    const bool elect_positive = positive >= negative;
    double sum = 0;
    std::size_t agreeing = 0;
    for (std::size_t t = 0; t < task_vectors.size(); ++t) {
      if (!trimmed[t].test(static_cast<std::size_t>(d))) continue;
      const double v = task_vectors[t].values()[d];
      if ((elect_positive && v > 0) || (!elect_positive && v < 0)) {
        sum += v;
        ++agreeing;
      }
    }
    const double merged = agreeing ? sum / static_cast<double>(agreeing) : 0.0;
    dst[d] = merged == 0.0 ? base[d] : base[d] + static_cast<float>(lambda * merged);
  }
  return out;
}

TaskVector dare(const TaskVector& tv, const DareConfig& cfg) {
  if (!(cfg.p >= 0.0 && cfg.p < 1.0)) {
    throw InvalidArgument("DARE drop probability must lie in [0, 1)");
  }
  TaskVector out(tv.layout_ptr());
  kernels::drop_and_rescale(tv.values(), cfg.p, cfg.seed, out.values_mut());
  return out;
}

std::vector<double> task_arithmetic_lambda_grid() { return grid(0.2, 1.5); }
std::vector<double> ties_lambda_grid() { return grid(0.8, 2.5); }

}  // namespace nps::baselines
