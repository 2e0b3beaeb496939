#pragma once

// Binary tensor container:
//   "GOFA" | version u32 | count u32 |
//   count × { name_len u32, name bytes, dtype u8, rank u8, dims u64[rank], data } |
//   crc32 u32 over every preceding byte.
// All integers and floating-point payloads are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "gofa/tensor.hpp"

namespace gofa {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f64 = 0, f32 = 1, u8 = 2 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f64:
      return 8;
    case DType::f32:
      return 4;
    case DType::u8:
      return 1;
  }
  throw CheckpointError("unknown dtype code " + std::to_string(static_cast<int>(t)));
}

inline std::uint32_t crc32(const unsigned char* data, std::size_t len, std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1U) ? 0xEDB88320U ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFU] ^ (crc >> 8);
  return ~crc;
}

struct CheckpointEntry {
  std::string name;
  DType dtype = DType::f64;
  Shape dims;
  std::vector<unsigned char> payload;  // little-endian raw data
};

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  template <typename T>
  void put_tensor(const std::string& name, const BasicTensor<T>& t, DType dtype = DType::f64) {
    put_values(name, t.shape(), t.data(), dtype);
  }

  template <typename T>
  void put_values(const std::string& name, const Shape& shape, const std::vector<T>& values, DType dtype = DType::f64) {
    if (dtype == DType::u8) throw CheckpointError("numeric tensor " + name + " cannot be stored as u8");
    CheckpointEntry e{name, dtype, shape, {}};
    e.payload.reserve(values.size() * dtype_size(dtype));
    for (T v : values) {
      if (dtype == DType::f64) {
        append_le(e.payload, std::bit_cast<std::uint64_t>(static_cast<double>(v)), 8);
      } else {
        append_le(e.payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
      }
    }
    upsert(std::move(e));
  }

  void put_bytes(const std::string& name, const std::string& bytes) {
    CheckpointEntry e{name, DType::u8, Shape{bytes.size()}, {}};
    e.payload.assign(bytes.begin(), bytes.end());
    upsert(std::move(e));
  }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  /// Entry names in insertion order.
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  const CheckpointEntry& entry(const std::string& name) const {
    const auto* e = find(name);
    if (!e) throw CheckpointError("checkpoint has no entry named " + name);
    return *e;
  }

  template <typename T = double>
  std::vector<T> values(const std::string& name) const {
    const auto& e = entry(name);
    std::vector<T> out(numel(e.dims));
    const unsigned char* p = e.payload.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (e.dtype == DType::f64) {
        out[i] = static_cast<T>(std::bit_cast<double>(read_le<std::uint64_t>(p + 8 * i)));
      } else if (e.dtype == DType::f32) {
        out[i] = static_cast<T>(std::bit_cast<float>(read_le<std::uint32_t>(p + 4 * i)));
      } else {
        out[i] = static_cast<T>(p[i]);
      }
    }
    return out;
  }

  template <typename T = double>
  BasicTensor<T> tensor(const std::string& name) const {
    return BasicTensor<T>(entry(name).dims, values<T>(name));
  }

  std::string bytes(const std::string& name) const {
    const auto& e = entry(name);
    return std::string(e.payload.begin(), e.payload.end());
  }

  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  std::vector<unsigned char> serialize() const {
    std::vector<unsigned char> out{'G', 'O', 'F', 'A'};
    append_le(out, kVersion, 4);
    append_le(out, static_cast<std::uint32_t>(entries_.size()), 4);
    for (const auto& e : entries_) {
      append_le(out, static_cast<std::uint32_t>(e.name.size()), 4);
      out.insert(out.end(), e.name.begin(), e.name.end());
      out.push_back(static_cast<unsigned char>(e.dtype));
      out.push_back(static_cast<unsigned char>(e.dims.size()));
      for (auto d : e.dims) append_le(out, static_cast<std::uint64_t>(d), 8);
      out.insert(out.end(), e.payload.begin(), e.payload.end());
    }
    append_le(out, crc32(out.data(), out.size()), 4);
    return out;
  }

  static Checkpoint parse(const std::vector<unsigned char>& buf) {
    if (buf.size() < 16 || std::memcmp(buf.data(), "GOFA", 4) != 0) {
      throw CheckpointError("not a checkpoint: bad magic");
    }
    const std::size_t body = buf.size() - 4;
    if (crc32(buf.data(), body) != read_le<std::uint32_t>(buf.data() + body)) {
      throw CheckpointError("checkpoint CRC mismatch");
    }
    std::size_t pos = 4;
    auto need = [&](std::size_t n) {
      if (pos + n > body) throw CheckpointError("truncated checkpoint at byte " + std::to_string(pos));
    };
    need(8);
    const auto version = read_le<std::uint32_t>(buf.data() + pos);
    if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto count = read_le<std::uint32_t>(buf.data() + pos + 4);
    pos += 8;
    Checkpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
      CheckpointEntry e;
      need(4);
      const auto nlen = read_le<std::uint32_t>(buf.data() + pos);
      pos += 4;
      need(nlen + 2);
      e.name.assign(reinterpret_cast<const char*>(buf.data() + pos), nlen);
      pos += nlen;
      e.dtype = static_cast<DType>(buf[pos]);
      const std::size_t rank = buf[pos + 1];
      pos += 2;
      need(8 * rank);
      for (std::size_t r = 0; r < rank; ++r) {
        e.dims.push_back(static_cast<std::size_t>(read_le<std::uint64_t>(buf.data() + pos)));
        pos += 8;
      }
      const std::size_t bytes = numel(e.dims) * dtype_size(e.dtype);
      need(bytes);
      e.payload.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                       buf.begin() + static_cast<std::ptrdiff_t>(pos + bytes));
      pos += bytes;
      ck.entries_.push_back(std::move(e));
    }
    if (pos != body) throw CheckpointError("trailing bytes before checkpoint CRC");
    return ck;
  }

  void save(const std::string& path) const {
    const auto buf = serialize();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open " + path + " for writing");
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw CheckpointError("write failed: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse(buf);
  }

 private:
  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  void upsert(CheckpointEntry e) {
    for (auto& x : entries_) {
      if (x.name == e.name) {
        x = std::move(e);
        return;
      }
    }
    entries_.push_back(std::move(e));
  }

  template <typename U>
  static void append_le(std::vector<unsigned char>& out, U v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFFU));
  }

  template <typename U>
  static U read_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return static_cast<U>(v);
  }

  std::vector<CheckpointEntry> entries_;
};

}  // namespace gofa
