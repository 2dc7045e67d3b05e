#include "nps/applications.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "nps/error.hpp"
#include "nps/kernels.hpp"

namespace nps {

namespace {

constexpr char kBundleMagic[4] = {'N', 'P', 'S', 'B'};

std::vector<SparseTerm> sparse_terms(const Checkpoint& pre,
                                     const std::vector<const PrunedTaskVector*>& ptvs,
                                     std::span<const double> lambdas) {
  if (ptvs.empty()) throw InvalidArgument("fusion needs at least one task");
  if (lambdas.size() != ptvs.size()) {
    throw InvalidArgument("got " + std::to_string(lambdas.size()) + " coefficients for " +
                          std::to_string(ptvs.size()) + " tasks");
  }
  std::vector<SparseTerm> terms;
  terms.reserve(ptvs.size());
  for (std::size_t i = 0; i < ptvs.size(); ++i) {
    require_same_layout(pre.layout_ptr(), ptvs[i]->layout, "fuse");
    if (!std::isfinite(lambdas[i])) throw InvalidArgument("fusion coefficients must be finite");
    terms.push_back(SparseTerm{&ptvs[i]->mask, ptvs[i]->values, lambdas[i]});
  }
  return terms;
}

std::vector<const PrunedTaskVector*> pointers(const std::vector<PrunedTaskVector>& ptvs) {
  std::vector<const PrunedTaskVector*> out;
  out.reserve(ptvs.size());
  for (const auto& p : ptvs) out.push_back(&p);
  return out;
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t out;
  if (__builtin_mul_overflow(a, b, &out)) throw InvalidArgument("storage bit count overflows");
  return out;
}

std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  std::uint64_t out;
  if (__builtin_add_overflow(a, b, &out)) throw InvalidArgument("storage bit count overflows");
  return out;
}

}  // namespace

Checkpoint transfer(const Checkpoint& pre, const PrunedTaskVector& ptv, const TransferConfig& cfg) {
  if (!(cfg.lambda > 0) || !std::isfinite(cfg.lambda)) {
    throw InvalidArgument("transfer lambda must be positive and finite");
  }
  require_same_layout(pre.layout_ptr(), ptv.layout, "transfer");
  Checkpoint out(pre.layout_ptr());
  const SparseTerm term{&ptv.mask, ptv.values, cfg.lambda};
  kernels::fuse_sparse(pre.values(), std::span(&term, 1), 1.0, out.values_mut());
  return out;
}

Checkpoint fuse(const Checkpoint& pre, const std::vector<const PrunedTaskVector*>& ptvs,
                std::span<const double> lambdas) {
  const auto terms = sparse_terms(pre, ptvs, lambdas);
  double total = 0;
  for (double l : lambdas) total += l;
  if (total == 0.0) throw InvalidArgument("degenerate coefficients: sum of lambdas is zero");
  Checkpoint out(pre.layout_ptr());
  kernels::fuse_sparse(pre.values(), terms, total, out.values_mut());
  return out;
}

Checkpoint fuse(const Checkpoint& pre, const std::vector<PrunedTaskVector>& ptvs,
                std::span<const double> lambdas) {
  return fuse(pre, pointers(ptvs), lambdas);
}

Checkpoint fuse_unnormalized(const Checkpoint& pre, const std::vector<const PrunedTaskVector*>& ptvs,
                             std::span<const double> lambdas) {
  const auto terms = sparse_terms(pre, ptvs, lambdas);
  Checkpoint out(pre.layout_ptr());
  kernels::fuse_sparse(pre.values(), terms, 1.0, out.values_mut());
  return out;
}

FusionResult fuse_search(const Checkpoint& pre, const std::vector<PrunedTaskVector>& ptvs,
                         const FitnessEvaluator& evaluator, const FusionOptions& options) {
  if (!(options.lambda_min < options.lambda_max) || !(options.lambda_min > 0)) {
    throw InvalidArgument("fusion lambda range must satisfy 0 < min < max");
  }
  const auto refs = pointers(ptvs);
  const auto project = [&](std::span<const double> x) {
    std::vector<double> lambdas(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      lambdas[i] = std::clamp(x[i], options.lambda_min, options.lambda_max);
    }
    return lambdas;
  };

  std::vector<Checkpoint> scratch;
  scratch.reserve(options.workers);
  for (std::size_t i = 0; i < options.workers; ++i) scratch.emplace_back(pre.layout_ptr());

  using Clock = std::chrono::steady_clock;
  const cmaes::Objective objective = [&](std::span<const double> x, std::size_t worker) {
    const auto t0 = Clock::now();
    const auto lambdas = project(x);
    const auto terms = sparse_terms(pre, refs, lambdas);
    double total = 0;
    for (double l : lambdas) total += l;
    Checkpoint& merged = scratch.at(worker);
    kernels::fuse_sparse(pre.values(), terms, total, merged.values_mut());
    const auto t1 = Clock::now();
    cmaes::Evaluation e;
    e.fitness = evaluator.evaluate(merged);
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

  const std::vector<double> ones(ptvs.size(), 1.0);
  auto search = cmaes::run(objective, project(ones), run_options);

  FusionResult result{fuse(pre, refs, project(search.best)), project(search.best), {},
                      search.best_fitness, search.history.generations.front().mean_fitness,
                      std::move(search.history)};
  for (const auto& p : ptvs) result.per_task_masks.push_back(p.mask);
  return result;
}

const PrunedTaskVector& CompressedBundle::entry(std::string_view task) const {
  for (const auto& [name, ptv] : entries) {
    if (name == task) return ptv;
  }
  throw LookupError("bundle has no task named '" + std::string(task) + "'");
}

std::vector<std::string> CompressedBundle::task_names() const {
  std::vector<std::string> names;
  for (const auto& e : entries) names.push_back(e.first);
  return names;
}

CompressedBundle compress(Checkpoint base,
                          std::vector<std::pair<std::string, PrunedTaskVector>> pruned) {
  std::unordered_set<std::string> seen;
  for (auto& [name, ptv] : pruned) {
    if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw InvalidArgument("task name must be 1..65535 bytes");
    }
    if (!seen.insert(name).second) throw InvalidArgument("duplicate task name '" + name + "'");
    require_same_layout(base.layout_ptr(), ptv.layout, "compress '" + name + "'");
    // Share the base layout so reconstruction compares layouts by pointer.
    ptv.layout = base.layout_ptr();
  }
  return CompressedBundle{std::move(base), std::move(pruned), kBundleFormatVersion};
}

Checkpoint reconstruct(const CompressedBundle& bundle, std::string_view task) {
  return bundle.entry(task).reconstruct(bundle.base);
}

std::vector<std::uint8_t> serialize_bundle(const CompressedBundle& bundle) {
  io::ByteWriter out;
  out.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kBundleMagic), 4));
  out.u32(bundle.format_version);
  write_checkpoint(out, bundle.base);
  out.u32(static_cast<std::uint32_t>(bundle.entries.size()));
  for (const auto& [name, ptv] : bundle.entries) {
    out.u16(static_cast<std::uint16_t>(name.size()));
    out.str(name);
    out.f64(ptv.ratio.value());
    out.u64(ptv.values.size());
    out.bytes(ptv.mask.to_bytes());
    out.f32_array(ptv.values);
  }
  return std::move(out).take();
}

CompressedBundle deserialize_bundle(std::span<const std::uint8_t> data) {
  io::ByteReader in(data);
  auto magic = in.bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kBundleMagic)) {
    throw ParseError(ParseErrorCode::kBadMagic, "expected NPSB");
  }
  const auto version = in.u32("version");
  if (version != kBundleFormatVersion) {
    throw ParseError(ParseErrorCode::kVersionMismatch,
                     "bundle version " + std::to_string(version) + ", supported " +
                         std::to_string(kBundleFormatVersion));
  }
  Checkpoint base = read_checkpoint(in);
  const std::size_t n = base.size();
  const auto count = in.u32("task count");
  std::vector<std::pair<std::string, PrunedTaskVector>> entries;
  std::unordered_set<std::string> seen;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = in.u16("task name length");
    auto name = in.str(name_len, "task name");
    if (name.empty() || !seen.insert(name).second) {
      throw ParseError(ParseErrorCode::kMalformed, "empty or duplicate task name");
    }
    const double r = in.f64("ratio");
    if (!(r > 0.0 && r <= 1.0)) {
      throw ParseError(ParseErrorCode::kMalformed, "task '" + name + "' has ratio outside (0, 1]");
    }
    const auto kept = in.u64("kept count");
    Bitmask mask = Bitmask::from_bytes(in.bytes((n + 7) / 8, "mask"), n);
    if (mask.count() != kept) {
      throw ParseError(ParseErrorCode::kMalformed,
                       "task '" + name + "' mask has " + std::to_string(mask.count()) +
                           " bits set but declares " + std::to_string(kept) + " values");
    }
    std::vector<float> values(static_cast<std::size_t>(kept));
    in.f32_array(values, "kept values");
    for (float v : values) {
      if (!std::isfinite(v)) throw ParseError(ParseErrorCode::kNonFinite, "task '" + name + "'");
    }
    entries.emplace_back(std::move(name), PrunedTaskVector{base.layout_ptr(), std::move(mask),
                                                           std::move(values), {}, SparsityRatio(r)});
  }
  if (in.remaining() != 0) {
    throw ParseError(ParseErrorCode::kMalformed,
                     std::to_string(in.remaining()) + " trailing bytes after last task");
  }
  return CompressedBundle{std::move(base), std::move(entries), version};
}

void save_bundle(const CompressedBundle& bundle, const std::filesystem::path& path) {
  io::write_file(path, serialize_bundle(bundle));
}

CompressedBundle load_bundle(const std::filesystem::path& path) {
  return deserialize_bundle(io::read_file(path));
}

StorageReport storage_report(const StorageInputs& in) {
  if (in.tasks == 0) throw InvalidArgument("storage report needs N >= 1");
  if (!(in.ratio > 0.0 && in.ratio <= 1.0)) throw InvalidArgument("ratio must lie in (0, 1]");
  if (checked_add(in.trainable_params, in.frozen_params) != in.params) {
    throw InvalidArgument("inconsistent parameter counts: P must equal P' + F");
  }
  StorageReport r;
  r.inputs = in;
  r.fine_tuned_bits =
      checked_mul(32, checked_add(checked_mul(in.tasks, in.trainable_params), in.frozen_params));
  r.single_model_bits = checked_mul(32, in.params);
  r.tallmask_bits = checked_add(checked_mul(checked_add(64, in.tasks), in.trainable_params),
                                checked_mul(32, in.frozen_params));
  const std::uint64_t kept = ceil_ratio(in.ratio, static_cast<std::size_t>(in.trainable_params));
  const std::uint64_t per_task = checked_add(checked_mul(32, kept), in.trainable_params);
  r.nps_bits = checked_add(r.single_model_bits, checked_mul(in.tasks, per_task));
  return r;
}

double normalized_accuracy(std::span<const double> merged, std::span<const double> fine_tuned) {
  if (merged.size() != fine_tuned.size() || merged.empty()) {
    throw InvalidArgument("normalized accuracy needs matching, non-empty accuracy lists");
  }
  double sum = 0;
  for (std::size_t i = 0; i < merged.size(); ++i) {
    if (!(fine_tuned[i] > 0)) {
      throw InvalidArgument("fine-tuned accuracy of task " + std::to_string(i) +
                            " is zero; cannot normalize");
    }
    sum += merged[i] / fine_tuned[i];
  }
  return sum / static_cast<double>(merged.size());
}

double h_score(double avg_origin, double avg_target) {
  if (!(avg_origin >= 0) || !(avg_target >= 0) || avg_origin + avg_target == 0) {
    throw InvalidArgument("H-score needs non-negative averages, not both zero");
  }
  if (avg_origin == avg_target) return avg_origin;
  return 2.0 * avg_origin * avg_target / (avg_origin + avg_target);
}

}  // namespace nps
