#include <omp.h>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <numeric>

#include "nps/kernels.hpp"

namespace nps::kernels {

namespace {

using Index = std::ptrdiff_t;

Index ssize(std::size_t n) { return static_cast<Index>(n); }

}  // namespace

void subtract(std::span<const float> a, std::span<const float> b, std::span<float> out) {
  const Index n = ssize(out.size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void add_scaled(std::span<const float> base, std::span<const float> delta, double scale,
                std::span<float> out) {
  const Index n = ssize(out.size());
  if (scale == 0.0) {
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < n; ++i) out[i] = base[i];
  } else if (scale == 1.0) {
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < n; ++i) out[i] = base[i] + delta[i];
  } else {
#pragma omp parallel for schedule(static)
    for (Index i = 0; i < n; ++i) out[i] = base[i] + static_cast<float>(scale * delta[i]);
  }
}

void reweight(std::span<const float> tv, std::span<const std::uint32_t> bin_of,
              std::span<const double> weights, std::span<float> out) {
  const Index n = ssize(out.size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) out[i] = static_cast<float>(weights[bin_of[i]] * tv[i]);
}

std::vector<std::uint32_t> magnitude_order(std::span<const float> v) {
  std::vector<std::uint32_t> order(v.size());
  std::iota(order.begin(), order.end(), 0u);
  // Strict total order, so chunked sorting and merging is deterministic.
  const auto before = [&](std::uint32_t a, std::uint32_t b) {
    const float ma = std::fabs(v[a]);
    const float mb = std::fabs(v[b]);
    return ma > mb || (ma == mb && a < b);
  };

  const std::size_t chunks = static_cast<std::size_t>(std::max(1, omp_get_max_threads()));
  std::vector<std::size_t> bounds(chunks + 1);
  for (std::size_t c = 0; c <= chunks; ++c) bounds[c] = v.size() * c / chunks;

#pragma omp parallel for schedule(static)
  for (Index c = 0; c < ssize(chunks); ++c) {
    std::sort(order.begin() + static_cast<Index>(bounds[c]),
              order.begin() + static_cast<Index>(bounds[c + 1]), before);
  }
  for (std::size_t width = 1; width < chunks; width *= 2) {
    const Index pairs = ssize((chunks + 2 * width - 1) / (2 * width));
#pragma omp parallel for schedule(static)
    for (Index p = 0; p < pairs; ++p) {
      const std::size_t lo = static_cast<std::size_t>(p) * 2 * width;
      const std::size_t mid = std::min(lo + width, chunks);
      const std::size_t hi = std::min(lo + 2 * width, chunks);
      if (mid < hi) {
        std::inplace_merge(order.begin() + static_cast<Index>(bounds[lo]),
                           order.begin() + static_cast<Index>(bounds[mid]),
                           order.begin() + static_cast<Index>(bounds[hi]), before);
      }
    }
  }
  return order;
}

void top_k_mask(std::span<const float> v, std::size_t k, Bitmask& mask) {
  assert(k <= v.size());
  const std::size_t n = v.size();
  if (mask.size() != n) {
    mask = Bitmask(n);
  }
  if (k == 0) {
    mask.clear();
    return;
  }

  std::vector<float> mags(n);
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < ssize(n); ++i) mags[i] = std::fabs(v[i]);
  std::nth_element(mags.begin(), mags.begin() + static_cast<Index>(k - 1), mags.end(),
                   std::greater<>());
  const float threshold = mags[k - 1];

  // Pass 1: per-word count of threshold ties, plus everything strictly above.
  auto words = mask.words_mut();
  const Index word_count = ssize(words.size());
  std::vector<std::size_t> ties(words.size() + 1, 0);
  std::size_t above = 0;
#pragma omp parallel for schedule(static) reduction(+ : above)
  for (Index w = 0; w < word_count; ++w) {
    const std::size_t lo = static_cast<std::size_t>(w) * 64;
    const std::size_t hi = std::min(lo + 64, n);
    std::uint64_t bits = 0;
    std::size_t tie_count = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      const float m = std::fabs(v[i]);
      if (m > threshold) {
        bits |= std::uint64_t{1} << (i - lo);
        ++above;
      } else if (m == threshold) {
        ++tie_count;
      }
    }
    words[w] = bits;
    ties[w + 1] = tie_count;
  }
  std::partial_sum(ties.begin(), ties.end(), ties.begin());

  // Pass 2: admit ties in ascending index order until exactly k are set.
  const std::size_t needed = k - above;
#pragma omp parallel for schedule(static)
  for (Index w = 0; w < word_count; ++w) {
    std::size_t rank = ties[w];
    if (rank >= needed) continue;
    const std::size_t lo = static_cast<std::size_t>(w) * 64;
    const std::size_t hi = std::min(lo + 64, n);
    for (std::size_t i = lo; i < hi && rank < needed; ++i) {
      if (std::fabs(v[i]) == threshold) {
        words[w] |= std::uint64_t{1} << (i - lo);
        ++rank;
      }
    }
  }
}

void gather(std::span<const float> dense, const Bitmask& mask, std::span<float> out) {
  const auto offsets = word_offsets(mask);
  const auto words = mask.words();
#pragma omp parallel for schedule(static)
  for (Index w = 0; w < ssize(words.size()); ++w) {
    std::uint64_t bits = words[w];
    std::size_t j = offsets[w];
    while (bits != 0) {
      out[j++] = dense[static_cast<std::size_t>(w) * 64 + std::countr_zero(bits)];
      bits &= bits - 1;
    }
  }
}

void scatter_add(std::span<const float> base, const Bitmask& mask,
                 std::span<const float> values, std::span<float> out) {
  const auto offsets = word_offsets(mask);
  const auto words = mask.words();
  const std::size_t n = base.size();
#pragma omp parallel for schedule(static)
  for (Index w = 0; w < ssize(words.size()); ++w) {
    const std::size_t lo = static_cast<std::size_t>(w) * 64;
    const std::size_t hi = std::min(lo + 64, n);
    for (std::size_t i = lo; i < hi; ++i) out[i] = base[i];
    std::uint64_t bits = words[w];
    std::size_t j = offsets[w];
    while (bits != 0) {
      const std::size_t d = lo + static_cast<std::size_t>(std::countr_zero(bits));
      out[d] = base[d] + values[j++];
      bits &= bits - 1;
    }
  }
}

void fuse_sparse(std::span<const float> base, std::span<const SparseTerm> terms, double divisor,
                 std::span<float> out) {
  const std::size_t n = base.size();
  std::vector<std::vector<std::size_t>> offsets;
  offsets.reserve(terms.size());
  for (const auto& term : terms) offsets.push_back(word_offsets(*term.mask));

  const Index word_count = ssize((n + 63) / 64);
#pragma omp parallel for schedule(static)
  for (Index w = 0; w < word_count; ++w) {
    const std::size_t lo = static_cast<std::size_t>(w) * 64;
    const std::size_t hi = std::min(lo + 64, n);
    double acc[64] = {};
    std::uint64_t touched = 0;
    // Terms accumulate in list order, matching the serial reference.
    for (std::size_t t = 0; t < terms.size(); ++t) {
      std::uint64_t bits = terms[t].mask->words()[w];
      touched |= bits;
      std::size_t j = offsets[t][w];
      while (bits != 0) {
        const int b = std::countr_zero(bits);
        acc[b] += terms[t].coefficient * terms[t].values[j++];
        bits &= bits - 1;
      }
    }
    for (std::size_t i = lo; i < hi; ++i) {
      const bool hit = (touched >> (i - lo)) & 1u;
      out[i] = hit ? base[i] + static_cast<float>(acc[i - lo] / divisor) : base[i];
    }
  }
}

void drop_and_rescale(std::span<const float> tv, double p, std::uint64_t seed,
                      std::span<float> out) {
  const double keep_scale = 1.0 / (1.0 - p);
  const Index n = ssize(out.size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) {
    out[i] = counter_uniform(seed, static_cast<std::uint64_t>(i)) < p
                 ? 0.0f
                 : static_cast<float>(keep_scale * tv[i]);
  }
}

}  // namespace nps::kernels
