#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ajepa/error.hpp"
#include "ajepa/tensor.hpp"
#include "ajepa/wav.hpp"

// Binary layout:
//   "AJEPA1"
//   u32 array count
//   per array: u32 name length, name bytes, u32 rank, u32 dims[rank]
//   float32 payloads, contiguous, in manifest order (row-major)
// All integers and floats little-endian.
namespace ajepa {

inline constexpr char kCheckpointMagic[] = "AJEPA1";

struct NamedArray {
  std::string name;
  Mat<float> values;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    std::memcpy(&v, bytes_.data() + at_, 4);
    at_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + at_), n);
    at_ += n;
    return s;
  }

  void floats(float* out, std::size_t n) {
    need(n * 4);
    std::memcpy(out, bytes_.data() + at_, n * 4);
    at_ += n * 4;
  }

  bool done() const { return at_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - at_) throw CheckpointError("checkpoint truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t at_ = 0;
};

inline void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& arrays) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 6);
  detail::append_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    detail::append_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    detail::append_u32(out, 2);
    detail::append_u32(out, static_cast<std::uint32_t>(a.values.rows()));
    detail::append_u32(out, static_cast<std::uint32_t>(a.values.cols()));
  }
  for (const auto& a : arrays) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(a.values.data());
    out.insert(out.end(), p, p + 4 * static_cast<std::size_t>(a.values.size()));
  }
  return out;
}

/// Rank-1 arrays load as a single row; ranks above 2 are rejected.
inline std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  if (in.str(6) != std::string(kCheckpointMagic, 6)) {
    throw CheckpointError("bad checkpoint magic");
  }
  const std::uint32_t count = in.u32();
  std::vector<NamedArray> arrays;
  arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank < 1 || rank > 2) {
      throw CheckpointError("array '" + a.name + "' has unsupported rank " + std::to_string(rank));
    }
    const std::uint32_t d0 = in.u32();
    const std::uint32_t d1 = rank == 2 ? in.u32() : d0;
    a.values.resize(rank == 2 ? d0 : 1, d1);
    arrays.push_back(std::move(a));
  }
  for (auto& a : arrays) in.floats(a.values.data(), static_cast<std::size_t>(a.values.size()));
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return arrays;
}

inline void write_checkpoint(const std::filesystem::path& path,
                             const std::vector<NamedArray>& arrays) {
  write_file_bytes(path, encode_checkpoint(arrays));
}

inline std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

/// Appends every array of `store` with `prefix` prepended to its name.
inline void append_store(std::vector<NamedArray>& out, const std::string& prefix,
                         const ParamStore<float>& store) {
  for (const auto& [name, a] : store) out.push_back({prefix + name, a});
}

/// Fills `layout` (already shaped) from arrays named prefix + name. Every
/// array must be present with the expected shape.
inline void load_store(const std::vector<NamedArray>& arrays, const std::string& prefix,
                       ParamStore<float>& layout) {
  for (auto& [name, a] : layout) {
    const std::string full = prefix + name;
    const NamedArray* found = nullptr;
    for (const auto& na : arrays) {
      if (na.name == full) {
        found = &na;
        break;
      }
    }
    if (!found) throw CheckpointError("checkpoint is missing '" + full + "'");
    if (found->values.rows() != a.rows() || found->values.cols() != a.cols()) {
      throw CheckpointError("checkpoint array '" + full + "' is " +
                            shape_string(found->values.rows(), found->values.cols()) +
                            ", config expects " + shape_string(a.rows(), a.cols()));
    }
    a = found->values;
  }
}

inline bool has_prefix(const std::vector<NamedArray>& arrays, const std::string& prefix) {
  for (const auto& a : arrays) {
    if (a.name.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

}  // namespace ajepa
