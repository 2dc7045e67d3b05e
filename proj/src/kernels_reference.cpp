// Serial reference kernels. Written for clarity; the OpenMP versions in
// kernels_omp.cpp must match them bit-for-bit.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>

#include "nps/kernels.hpp"

namespace nps {

double counter_uniform(std::uint64_t seed, std::uint64_t index) noexcept {
  // splitmix64 finalizer over (seed, index)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  z ^= z >> 31;
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

std::vector<std::size_t> word_offsets(const Bitmask& mask) {
  const auto words = mask.words();
  std::vector<std::size_t> offsets(words.size() + 1, 0);
  for (std::size_t w = 0; w < words.size(); ++w) {
    offsets[w + 1] = offsets[w] + static_cast<std::size_t>(std::popcount(words[w]));
  }
  return offsets;
}

namespace reference {

void subtract(std::span<const float> a, std::span<const float> b, std::span<float> out) {
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
}

void add_scaled(std::span<const float> base, std::span<const float> delta, double scale,
                std::span<float> out) {
  if (scale == 0.0) {
    std::copy(base.begin(), base.end(), out.begin());
    return;
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float d = scale == 1.0 ? delta[i] : static_cast<float>(scale * delta[i]);
    out[i] = base[i] + d;
  }
}

void reweight(std::span<const float> tv, std::span<const std::uint32_t> bin_of,
              std::span<const double> weights, std::span<float> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(weights[bin_of[i]] * tv[i]);
  }
}

std::vector<std::uint32_t> magnitude_order(std::span<const float> v) {
  std::vector<std::uint32_t> order(v.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return std::fabs(v[a]) > std::fabs(v[b]);
  });
  return order;
}

void top_k_mask(std::span<const float> v, std::size_t k, Bitmask& mask) {
  assert(k <= v.size());
  mask = Bitmask(v.size());
  const auto order = magnitude_order(v);
  for (std::size_t j = 0; j < k; ++j) mask.set(order[j]);
}

void gather(std::span<const float> dense, const Bitmask& mask, std::span<float> out) {
  std::size_t j = 0;
  mask.for_each_set([&](std::size_t d) { out[j++] = dense[d]; });
}

void scatter_add(std::span<const float> base, const Bitmask& mask,
                 std::span<const float> values, std::span<float> out) {
  std::copy(base.begin(), base.end(), out.begin());
  std::size_t j = 0;
  mask.for_each_set([&](std::size_t d) { out[d] = base[d] + values[j++]; });
}

void fuse_sparse(std::span<const float> base, std::span<const SparseTerm> terms, double divisor,
                 std::span<float> out) {
  std::vector<double> acc(base.size(), 0.0);
  std::vector<char> touched(base.size(), 0);
  for (const auto& term : terms) {
    std::size_t j = 0;
    term.mask->for_each_set([&](std::size_t d) {
      acc[d] += term.coefficient * term.values[j++];
      touched[d] = 1;
    });
  }
  for (std::size_t d = 0; d < base.size(); ++d) {
    out[d] = touched[d] ? base[d] + static_cast<float>(acc[d] / divisor) : base[d];
  }
}

void drop_and_rescale(std::span<const float> tv, double p, std::uint64_t seed,
                      std::span<float> out) {
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = counter_uniform(seed, i) < p ? 0.0f : static_cast<float>(keep_scale * tv[i]);
  }
}

}  // namespace reference
}  // namespace nps
