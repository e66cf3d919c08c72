// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint container, little-endian throughout:
//
//   magic      8 bytes  "DKCKPT\0\1"
//   version    u32      kCheckpointVersion
//   manifest   u64 length + UTF-8 JSON bytes
//   count      u64      number of tensors
//   tensor*    u32 name length + name bytes
//              u32 rank + u64 dims[rank]
//              f64 values[prod(dims)]
//
// Tensors are written in lexicographic name order.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>

#include <json.hpp>

#include "dkctx/numerics/tape.hpp"

namespace dkctx {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::array<char, 8> kCheckpointMagic = {'D', 'K', 'C', 'K', 'P', 'T', '\0', '\1'};

struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;
};

namespace detail {

template <typename T>
void put_le(std::ostream& os, T v) {
  std::array<unsigned char, sizeof(T)> b{};
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(v);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b.data()), b.size());
}

template <typename T>
T get_le(std::istream& is, const char* what) {
  std::array<unsigned char, sizeof(T)> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), b.size()))
    throw Error(std::string("checkpoint truncated while reading ") + what);
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

inline std::string get_bytes(std::istream& is, std::uint64_t n, const char* what) {
  // Guard against absurd lengths from corrupt headers before allocating.
  if (n > (std::uint64_t{1} << 34)) throw Error(std::string("checkpoint corrupt: oversized ") + what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n)))
    throw Error(std::string("checkpoint truncated while reading ") + what);
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  const std::string manifest = ckpt.manifest.dump();
  detail::put_le<std::uint64_t>(os, manifest.size());
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  detail::put_le<std::uint64_t>(os, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(os, d);
    for (double v : t.values()) detail::put_le<double>(os, v);
  }
  if (!os) throw Error("checkpoint write failed");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size())) throw Error("checkpoint truncated while reading magic");
  if (magic != kCheckpointMagic) throw Error("not a checkpoint file (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw Error("checkpoint version mismatch: file has " + std::to_string(version) + ", expected " +
                std::to_string(kCheckpointVersion));
  Checkpoint ckpt;
  const auto mlen = detail::get_le<std::uint64_t>(is, "manifest length");
  const std::string manifest = detail::get_bytes(is, mlen, "manifest");
  try {
    ckpt.manifest = nlohmann::json::parse(manifest);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  const auto count = detail::get_le<std::uint64_t>(is, "tensor count");
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto nlen = detail::get_le<std::uint32_t>(is, "name length");
    std::string name = detail::get_bytes(is, nlen, "tensor name");
    const auto rank = detail::get_le<std::uint32_t>(is, "rank");
    if (rank > 8) throw Error("checkpoint corrupt: rank " + std::to_string(rank) + " for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_le<std::uint64_t>(is, "dims");
    const std::size_t n = shape_numel(shape);
    if (n > (std::size_t{1} << 31)) throw Error("checkpoint corrupt: tensor '" + name + "' too large");
    std::vector<double> values(n);
    for (double& v : values) v = detail::get_le<double>(is, "tensor data");
    ckpt.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_checkpoint(os, ckpt);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is);
}

inline Checkpoint checkpoint_from(const ParamStore& store, nlohmann::json manifest = nlohmann::json::object()) {
  Checkpoint c;
  c.manifest = std::move(manifest);
  for (const auto& [name, p] : store) c.tensors.emplace(name, p.value);
  return c;
}

/// Copies matching tensors into the store. Returns how many were restored.
/// With require_all, every store parameter must be present with the same shape.
inline std::size_t restore_params(ParamStore& store, const Checkpoint& ckpt, bool require_all = true) {
  std::size_t restored = 0;
  for (auto& [name, p] : store) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      if (require_all) throw Error("checkpoint is missing parameter '" + name + "'");
      continue;
    }
    if (it->second.shape() != p.value.shape()) {
      if (require_all)
        throw ShapeError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                         ", expected " + shape_str(p.value.shape()));
      continue;
    }
    p.value = it->second;
    ++restored;
  }
  return restored;
}

}  // namespace dkctx
