#include "nps/bitmask.hpp"

#include <algorithm>
#include <string>

#include "nps/error.hpp"

namespace nps {

Bitmask::Bitmask(std::size_t size, bool value)
    : size_(size), words_((size + 63) / 64, value ? ~std::uint64_t{0} : 0) {
  if (value && (size & 63) != 0) {
    words_.back() = (std::uint64_t{1} << (size & 63)) - 1;
  }
}

void Bitmask::clear() noexcept { std::fill(words_.begin(), words_.end(), 0); }

std::size_t Bitmask::count() const noexcept {
  std::size_t n = 0;
  for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

std::vector<std::uint8_t> Bitmask::to_bytes() const {
  std::vector<std::uint8_t> out(byte_count());
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b] = static_cast<std::uint8_t>(words_[b / 8] >> (8 * (b % 8)));
  }
  return out;
}

Bitmask Bitmask::from_bytes(std::span<const std::uint8_t> bytes, std::size_t size) {
  Bitmask mask(size);
  if (bytes.size() != mask.byte_count()) {
    throw ParseError(ParseErrorCode::kMalformed,
                     "mask has " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(mask.byte_count()));
  }
  for (std::size_t b = 0; b < bytes.size(); ++b) {
    mask.words_[b / 8] |= std::uint64_t{bytes[b]} << (8 * (b % 8));
  }
  if ((size & 63) != 0 && !mask.words_.empty() &&
      (mask.words_.back() >> (size & 63)) != 0) {
    throw ParseError(ParseErrorCode::kMalformed, "mask padding bits are set");
  }
  return mask;
}

}  // namespace nps
