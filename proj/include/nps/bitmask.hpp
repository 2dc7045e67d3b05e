#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

namespace nps {

/// Fixed-length packed bitset. Bit d lives in word d/64 at position d%64,
/// which on serialization becomes byte d/8, bit d%8 (LSB-first). Bits past
/// size() are always zero.
class Bitmask {
 public:
  Bitmask() = default;
  explicit Bitmask(std::size_t size, bool value = false);

  std::size_t size() const noexcept { return size_; }
  std::size_t word_count() const noexcept { return words_.size(); }

  bool test(std::size_t i) const noexcept { return (words_[i >> 6] >> (i & 63)) & 1u; }
  void set(std::size_t i) noexcept { words_[i >> 6] |= std::uint64_t{1} << (i & 63); }
  void reset(std::size_t i) noexcept { words_[i >> 6] &= ~(std::uint64_t{1} << (i & 63)); }
  void clear() noexcept;

  std::size_t count() const noexcept;

  std::span<const std::uint64_t> words() const noexcept { return words_; }
  std::span<std::uint64_t> words_mut() noexcept { return words_; }

  /// Calls fn(index) for every set bit in ascending order.
  template <typename Fn>
  void for_each_set(Fn&& fn) const {
    for (std::size_t w = 0; w < words_.size(); ++w) {
      std::uint64_t bits = words_[w];
      while (bits != 0) {
        fn(w * 64 + static_cast<std::size_t>(std::countr_zero(bits)));
        bits &= bits - 1;
      }
    }
  }

  std::size_t byte_count() const noexcept { return (size_ + 7) / 8; }
  std::vector<std::uint8_t> to_bytes() const;
  /// Throws ParseError(kMalformed) when padding bits past `size` are set.
  static Bitmask from_bytes(std::span<const std::uint8_t> bytes, std::size_t size);

  friend bool operator==(const Bitmask&, const Bitmask&) = default;

 private:
  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

}  // namespace nps
