#include "nps/checkpoint.hpp"

#include <cmath>
#include <limits>
#include <unordered_set>

#include "nps/error.hpp"
#include "nps/kernels.hpp"

namespace nps {

namespace {

constexpr char kCheckpointMagic[4] = {'N', 'P', 'S', 'C'};

std::string shape_string(const std::vector<std::uint64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace

std::uint64_t TensorSpec::numel() const noexcept {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

LayoutPtr Layout::create(std::vector<std::pair<std::string, std::vector<std::uint64_t>>> tensors) {
  auto layout = std::shared_ptr<Layout>(new Layout());
  std::unordered_set<std::string> seen;
  std::uint64_t offset = 0;
  for (auto& [name, shape] : tensors) {
    if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw InvalidArgument("tensor name must be 1..65535 bytes");
    }
    if (!seen.insert(name).second) {
      throw InvalidArgument("duplicate tensor name '" + name + "'");
    }
    if (shape.size() > std::numeric_limits<std::uint8_t>::max()) {
      throw InvalidArgument("tensor '" + name + "' has rank above 255");
    }
    std::uint64_t numel = 1;
    for (auto d : shape) {
      if (d == 0) {
        throw InvalidArgument("tensor '" + name + "' has a zero dimension");
      }
      if (numel > std::numeric_limits<std::uint64_t>::max() / d) {
        throw InvalidArgument("tensor '" + name + "' element count overflows");
      }
      numel *= d;
    }
    if (offset > std::numeric_limits<std::uint32_t>::max() - numel) {
      throw InvalidArgument("checkpoint exceeds 2^32 elements");
    }
    layout->tensors_.push_back(TensorSpec{std::move(name), std::move(shape), offset});
    offset += numel;
  }
  layout->size_ = static_cast<std::size_t>(offset);
  return layout;
}

const TensorSpec* Layout::find(std::string_view name) const noexcept {
  for (const auto& t : tensors_) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void require_same_layout(const Layout& expected, const Layout& actual, std::string_view context) {
  const auto& a = expected.tensors();
  const auto& b = actual.tensors();
  const std::size_t common = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < common; ++i) {
    if (a[i].name != b[i].name) {
      throw StructuralMismatch(std::string(context) + ": tensor #" + std::to_string(i) +
                               " is '" + b[i].name + "', expected '" + a[i].name + "'");
    }
    if (a[i].shape != b[i].shape) {
      throw StructuralMismatch(std::string(context) + ": tensor '" + a[i].name + "' has shape " +
                               shape_string(b[i].shape) + ", expected " +
                               shape_string(a[i].shape));
    }
  }
  if (a.size() != b.size()) {
    const auto& extra = a.size() > b.size() ? a[common] : b[common];
    throw StructuralMismatch(std::string(context) + ": tensor '" + extra.name +
                             "' present on one side only");
  }
}

void require_same_layout(const LayoutPtr& expected, const LayoutPtr& actual,
                         std::string_view context) {
  if (expected == actual) return;
  require_same_layout(*expected, *actual, context);
}

FlatParams::FlatParams(LayoutPtr layout, std::vector<float> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (!layout_) throw InvalidArgument("null layout");
  if (values_.size() != layout_->size()) {
    throw InvalidArgument("value count " + std::to_string(values_.size()) +
                          " does not match layout size " + std::to_string(layout_->size()));
  }
}

FlatParams::FlatParams(LayoutPtr layout)
    : layout_(std::move(layout)), values_(layout_ ? layout_->size() : 0, 0.0f) {
  if (!layout_) throw InvalidArgument("null layout");
}

std::span<const float> FlatParams::tensor(std::string_view name) const {
  const TensorSpec* spec = layout_->find(name);
  if (!spec) throw LookupError("no tensor named '" + std::string(name) + "'");
  return std::span<const float>(values_).subspan(spec->offset, spec->numel());
}

TaskVector diff(const Checkpoint& fine_tuned, const Checkpoint& pre_trained) {
  require_same_layout(pre_trained.layout_ptr(), fine_tuned.layout_ptr(), "diff");
  TaskVector tv(pre_trained.layout_ptr());
  kernels::subtract(fine_tuned.values(), pre_trained.values(), tv.values_mut());
  return tv;
}

Checkpoint apply(const Checkpoint& base, const TaskVector& tv, double scale) {
  require_same_layout(base.layout_ptr(), tv.layout_ptr(), "apply");
  if (!std::isfinite(scale)) throw InvalidArgument("apply: scale must be finite");
  Checkpoint out(base.layout_ptr());
  kernels::add_scaled(base.values(), tv.values(), scale, out.values_mut());
  return out;
}

void write_checkpoint(io::ByteWriter& out, const FlatParams& params) {
  out.bytes(std::span(reinterpret_cast<const std::uint8_t*>(kCheckpointMagic), 4));
  out.u32(kCheckpointFormatVersion);
  const auto& tensors = params.layout().tensors();
  out.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    out.u16(static_cast<std::uint16_t>(t.name.size()));
    out.str(t.name);
    out.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) out.u64(d);
  }
  out.f32_array(params.values());
}

Checkpoint read_checkpoint(io::ByteReader& in) {
  auto magic = in.bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic)) {
    throw ParseError(ParseErrorCode::kBadMagic, "expected NPSC");
  }
  const auto version = in.u32("version");
  if (version != kCheckpointFormatVersion) {
    throw ParseError(ParseErrorCode::kVersionMismatch,
                     "checkpoint version " + std::to_string(version) + ", supported " +
                         std::to_string(kCheckpointFormatVersion));
  }
  const auto count = in.u32("tensor count");
  std::vector<std::pair<std::string, std::vector<std::uint64_t>>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.u16("tensor name length");
    auto name = in.str(name_len, "tensor name");
    const auto rank = in.u8("tensor rank");
    std::vector<std::uint64_t> shape(rank);
    for (auto& d : shape) d = in.u64("tensor dimension");
    tensors.emplace_back(std::move(name), std::move(shape));
  }
  LayoutPtr layout;
  try {
    layout = Layout::create(std::move(tensors));
  } catch (const InvalidArgument& e) {
    throw ParseError(ParseErrorCode::kMalformed, e.what());
  }
  std::vector<float> values(layout->size());
  in.f32_array(values, "tensor payload");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw ParseError(ParseErrorCode::kNonFinite, "element " + std::to_string(i));
    }
  }
  return Checkpoint(std::move(layout), std::move(values));
}

std::vector<std::uint8_t> serialize_checkpoint(const FlatParams& params) {
  io::ByteWriter out;
  write_checkpoint(out, params);
  return std::move(out).take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> data) {
  io::ByteReader in(data);
  auto ckpt = read_checkpoint(in);
  if (in.remaining() != 0) {
    throw ParseError(ParseErrorCode::kMalformed,
                     std::to_string(in.remaining()) + " trailing bytes after payload");
  }
  return ckpt;
}

void save_checkpoint(const FlatParams& params, const std::filesystem::path& path) {
  io::write_file(path, serialize_checkpoint(params));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

}  // namespace nps
