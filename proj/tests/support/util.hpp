#pragma once

// Helpers and independent oracles shared by the test executables. Nothing
// here calls into the library's kernels; oracles are written the slow,
// obvious way on purpose.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nps/checkpoint.hpp"

namespace testutil {

inline nps::LayoutPtr vector_layout(std::size_t n) { return nps::Layout::create({{"w", {n}}}); }

inline nps::LayoutPtr two_tensor_layout() {
  return nps::Layout::create({{"fc.weight", {3, 4}}, {"fc.bias", {3}}});
}

inline std::vector<float> random_values(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, static_cast<float>(scale));
  std::vector<float> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

inline nps::Checkpoint random_checkpoint(const nps::LayoutPtr& layout, std::uint64_t seed,
                                         double scale = 1.0) {
  return nps::Checkpoint(layout, random_values(layout->size(), seed, scale));
}

inline nps::Checkpoint make_checkpoint(std::vector<float> values) {
  const auto n = values.size();
  return nps::Checkpoint(vector_layout(n), std::move(values));
}

inline nps::TaskVector make_task_vector(std::vector<float> values) {
  const auto n = values.size();
  return nps::TaskVector(vector_layout(n), std::move(values));
}

inline bool bit_equal(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  }
  return true;
}

/// Indices of the k largest |v|, ties to the lower index, via a full sort.
inline std::vector<bool> sort_mask_oracle(std::span<const float> v, std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const float fa = std::fabs(v[a]), fb = std::fabs(v[b]);
    if (fa != fb) return fa > fb;
    return a < b;
  });
  std::vector<bool> keep(v.size(), false);
  for (std::size_t i = 0; i < k; ++i) keep[idx[i]] = true;
  return keep;
}

/// ⌈r·n⌉ from the decimal string of r, in exact integer arithmetic.
/// "0.05" and n = 30 -> ⌈5·30 / 100⌉ = 2.
inline std::uint64_t ceil_decimal_ratio(const std::string& r, std::uint64_t n) {
  const auto dot = r.find('.');
  std::uint64_t num = 0, den = 1;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (i == dot) continue;
    num = num * 10 + static_cast<std::uint64_t>(r[i] - '0');
    if (dot != std::string::npos && i > dot) den *= 10;
  }
  return (num * n + den - 1) / den;
}

}  // namespace testutil
