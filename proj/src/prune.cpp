#include "nps/prune.hpp"

#include <chrono>
#include <algorithm>
#include <cmath>

#include "nps/error.hpp"
#include "nps/kernels.hpp"

namespace nps {

SparsityRatio::SparsityRatio(double r) : r_(r) {
  if (!(r > 0.0 && r <= 1.0)) {
    throw InvalidArgument("sparsity ratio must lie in (0, 1], got " + std::to_string(r));
  }
}

std::size_t SparsityRatio::kept(std::size_t n) const noexcept { return ceil_ratio(r_, n); }

std::size_t ceil_ratio(double r, std::size_t n) noexcept {
  if (n == 0) return 0;
  const double exact = r * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(exact * (1.0 - 1e-12)));
  return std::clamp<std::size_t>(k, 1, n);
}

Bitmask top_r_mask(const TaskVector& tv, SparsityRatio r) {
  if (tv.size() == 0) throw InvalidArgument("cannot mask an empty task vector");
  Bitmask mask(tv.size());
  kernels::top_k_mask(tv.values(), r.kept(tv.size()), mask);
  return mask;
}

TaskVector PrunedTaskVector::expand() const {
  TaskVector out(layout);
  std::vector<float> zeros(layout->size(), 0.0f);
  kernels::scatter_add(zeros, mask, values, out.values_mut());
  return out;
}

void PrunedTaskVector::reconstruct_into(const Checkpoint& pre, Checkpoint& out) const {
  require_same_layout(pre.layout_ptr(), layout, "reconstruct");
  require_same_layout(pre.layout_ptr(), out.layout_ptr(), "reconstruct");
  kernels::scatter_add(pre.values(), mask, values, out.values_mut());
}

Checkpoint PrunedTaskVector::reconstruct(const Checkpoint& pre) const {
  Checkpoint out(pre.layout_ptr());
  reconstruct_into(pre, out);
  return out;
}

PruneResult prune(const Checkpoint& pre, const TaskVector& tv_adjusted, SparsityRatio r) {
  require_same_layout(pre.layout_ptr(), tv_adjusted.layout_ptr(), "prune");
  PrunedTaskVector pruned{pre.layout_ptr(), top_r_mask(tv_adjusted, r), {}, {}, r};
  pruned.values.resize(pruned.mask.count());
  kernels::gather(tv_adjusted.values(), pruned.mask, pruned.values);
  Checkpoint model = pruned.reconstruct(pre);
  return PruneResult{std::move(pruned), std::move(model)};
}

namespace {

using Clock = std::chrono::steady_clock;

/// Per-worker buffers reused across candidate evaluations.
struct Scratch {
  explicit Scratch(const LayoutPtr& layout)
      : adjusted(layout), mask(layout->size()), model(layout) {}
  TaskVector adjusted;
  Bitmask mask;
  std::vector<float> kept;
  Checkpoint model;
};

}  // namespace

NpsResult nps_search(const Checkpoint& pre, const Checkpoint& fine_tuned,
                     const FitnessEvaluator& evaluator, const NpsOptions& options) {
  const TaskVector tv = diff(fine_tuned, pre);
  const SubspacePartition part = partition(tv, options.subspaces, options.scope);
  const std::size_t k = options.ratio.kept(tv.size());

  std::vector<Scratch> scratch;
  scratch.reserve(options.workers);
  for (std::size_t i = 0; i < options.workers; ++i) scratch.emplace_back(pre.layout_ptr());

  const cmaes::Objective objective = [&](std::span<const double> w, std::size_t worker) {
    Scratch& s = scratch.at(worker);
    const auto t0 = Clock::now();
    kernels::reweight(tv.values(), part.bin_of, w, s.adjusted.values_mut());
    kernels::top_k_mask(s.adjusted.values(), k, s.mask);
    s.kept.resize(k);
    kernels::gather(s.adjusted.values(), s.mask, s.kept);
    kernels::scatter_add(pre.values(), s.mask, s.kept, s.model.values_mut());
    const auto t1 = Clock::now();
    cmaes::Evaluation e;
    e.fitness = evaluator.evaluate(s.model);
    e.prune_seconds = std::chrono::duration<double>(t1 - t0).count();
    e.validate_seconds = std::chrono::duration<double>(Clock::now() - t1).count();
    return e;
  };

  cmaes::RunOptions run_options;
  run_options.init_sigma = options.init_sigma;
  run_options.budget = options.budget;
  run_options.seed = options.seed;
  run_options.maximize = true;
  run_options.workers = options.workers;

  const WeightVector ones(options.subspaces, 1.0);
  auto search = cmaes::run(objective, ones, run_options);

  auto [pruned, model] = prune(pre, reweight(tv, part, search.best), options.ratio);
  pruned.weights_used = search.best;
  NpsResult result{std::move(pruned), std::move(model), search.best_fitness,
                   search.history.generations.front().mean_fitness, std::move(search.history)};
  return result;
}

}  // namespace nps
