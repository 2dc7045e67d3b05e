#pragma once

// Element-wise kernels over flat parameter arrays.
//
// nps::kernels holds the OpenMP versions used by the library. nps::reference
// holds plain serial loops with the same contracts; the test suite checks the
// two bit-for-bit and the benchmark target times them against each other.
// Every kernel is deterministic: results never depend on the thread count.

#include <cstdint>
#include <span>
#include <vector>

#include "nps/bitmask.hpp"

namespace nps {

/// One sparse addend of a fused update: λ · (mask, values).
struct SparseTerm {
  const Bitmask* mask = nullptr;
  std::span<const float> values;
  double coefficient = 1.0;
};

#define NPS_KERNEL_DECLARATIONS                                                                  \
  /* out = a − b */                                                                              \
  void subtract(std::span<const float> a, std::span<const float> b, std::span<float> out);      \
  /* out = base + float(scale·delta); scale == 1 adds delta unrounded, scale == 0 copies base */ \
  void add_scaled(std::span<const float> base, std::span<const float> delta, double scale,      \
                  std::span<float> out);                                                         \
  /* out[d] = float(weights[bin_of[d]] · tv[d]) */                                               \
  void reweight(std::span<const float> tv, std::span<const std::uint32_t> bin_of,               \
                std::span<const double> weights, std::span<float> out);                         \
  /* Indices ordered by |v| descending, ties by ascending index. */                             \
  std::vector<std::uint32_t> magnitude_order(std::span<const float> v);                         \
  /* Sets exactly k bits: the k largest |v|, ties broken by ascending index. */                 \
  void top_k_mask(std::span<const float> v, std::size_t k, Bitmask& mask);                      \
  /* out[j] = dense[j-th set bit]; out.size() must equal mask.count(). */                       \
  void gather(std::span<const float> dense, const Bitmask& mask, std::span<float> out);         \
  /* out = base, then out[d] = base[d] + values[j] at the j-th set bit d. */                    \
  void scatter_add(std::span<const float> base, const Bitmask& mask,                            \
                   std::span<const float> values, std::span<float> out);                        \
  /* out[d] = base[d] + float(Σ_i c_i·v_i[d] / divisor); untouched coordinates copy base. */    \
  void fuse_sparse(std::span<const float> base, std::span<const SparseTerm> terms,              \
                   double divisor, std::span<float> out);                                        \
  /* Drop each element with probability p (counter-based RNG), rescale survivors by 1/(1−p). */ \
  void drop_and_rescale(std::span<const float> tv, double p, std::uint64_t seed,                \
                        std::span<float> out);

namespace kernels {
NPS_KERNEL_DECLARATIONS
}  // namespace kernels

namespace reference {
NPS_KERNEL_DECLARATIONS
}  // namespace reference

#undef NPS_KERNEL_DECLARATIONS

/// Uniform double in [0, 1) for element `index` of stream `seed`. Shared by
/// both DARE kernels so they draw identical Bernoulli decisions.
double counter_uniform(std::uint64_t seed, std::uint64_t index) noexcept;

/// Offset of the first set bit of each 64-bit word within the packed values
/// array, plus the total in the last slot.
std::vector<std::size_t> word_offsets(const Bitmask& mask);

}  // namespace nps
