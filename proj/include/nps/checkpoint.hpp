#pragma once

// Checkpoints, task vectors and the NPSC on-disk format.
//
// Every parameter container is a flat f32 array indexed in the serialized
// tensor order. Tensor metadata lives in an immutable Layout that is shared
// by pointer, so derived vectors (task vectors, pruned reconstructions,
// scratch buffers) compare layouts in O(1) in the common case.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nps/binary_io.hpp"

namespace nps {

struct TensorSpec {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::uint64_t offset = 0;

  std::uint64_t numel() const noexcept;
  friend bool operator==(const TensorSpec&, const TensorSpec&) = default;
};

class Layout;
using LayoutPtr = std::shared_ptr<const Layout>;

class Layout {
 public:
  /// Builds a layout with consecutive offsets. Throws InvalidArgument on
  /// duplicate or empty names, zero dimensions, ranks above 255 or element
  /// count overflow.
  static LayoutPtr create(std::vector<std::pair<std::string, std::vector<std::uint64_t>>> tensors);

  const std::vector<TensorSpec>& tensors() const noexcept { return tensors_; }
  std::size_t size() const noexcept { return size_; }
  const TensorSpec* find(std::string_view name) const noexcept;

  friend bool operator==(const Layout& a, const Layout& b) { return a.tensors_ == b.tensors_; }

 private:
  Layout() = default;
  std::vector<TensorSpec> tensors_;
  std::size_t size_ = 0;
};

/// Throws StructuralMismatch naming the first tensor whose name, shape or
/// position differs. `context` prefixes the message.
void require_same_layout(const Layout& expected, const Layout& actual, std::string_view context);
void require_same_layout(const LayoutPtr& expected, const LayoutPtr& actual, std::string_view context);

class FlatParams {
 public:
  FlatParams(LayoutPtr layout, std::vector<float> values);
  /// Zero-filled container over `layout`.
  explicit FlatParams(LayoutPtr layout);

  const Layout& layout() const noexcept { return *layout_; }
  const LayoutPtr& layout_ptr() const noexcept { return layout_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<const float> values() const noexcept { return values_; }
  std::span<float> values_mut() noexcept { return values_; }

  /// Slice of the flat array belonging to one named tensor.
  std::span<const float> tensor(std::string_view name) const;

 private:
  LayoutPtr layout_;
  std::vector<float> values_;
};

/// Parameters θ of a model (pre-trained or fine-tuned).
class Checkpoint : public FlatParams {
 public:
  using FlatParams::FlatParams;
};

/// Element-wise delta between a fine-tuned and a pre-trained checkpoint.
class TaskVector : public FlatParams {
 public:
  using FlatParams::FlatParams;
};

/// τ = fine_tuned − pre_trained. The result shares pre_trained's layout.
TaskVector diff(const Checkpoint& fine_tuned, const Checkpoint& pre_trained);

/// base + scale·tv. With scale == 1 the delta is added unrounded, so
/// apply(pre, diff(ft, pre), 1) reproduces ft whenever ft − pre was exact in
/// f32. With scale == 0 the base is returned bit-exactly.
Checkpoint apply(const Checkpoint& base, const TaskVector& tv, double scale = 1.0);

// NPSC format: magic, u32 version, u32 tensor count, per tensor
// [u16 name length, name, u8 rank, rank × u64 dims], then the f32 payload.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void write_checkpoint(io::ByteWriter& out, const FlatParams& params);
/// Parses one checkpoint record starting at the reader's cursor.
Checkpoint read_checkpoint(io::ByteReader& in);

std::vector<std::uint8_t> serialize_checkpoint(const FlatParams& params);
/// Rejects trailing bytes after the payload.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> data);

void save_checkpoint(const FlatParams& params, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nps
