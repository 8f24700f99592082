#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "bevkit/error.hpp"
#include "bevkit/rng.hpp"

namespace bevkit {

/// Dense row-major tensor of 32-bit reals. Shapes are lists of positive
/// extents; product(shape) always equals the flat data length. All exported
/// operations accumulate in 64-bit and round once, so results do not depend
/// on evaluation order.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), 0.0f) {}

  Tensor(std::vector<std::size_t> shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
      throw ShapeError("tensor data length does not match shape product");
    }
  }

  static Tensor full(std::vector<std::size_t> shape, float v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  static Tensor random_uniform(std::vector<std::size_t> shape, Rng& rng, float lo = -1.0f,
                               float hi = 1.0f) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.uniform_f(lo, hi);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  std::size_t index(std::size_t i, std::size_t j) const { return i * shape_[1] + j; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  float at(std::size_t i, std::size_t j) const { return data_[index(i, j)]; }
  float& at(std::size_t i, std::size_t j) { return data_[index(i, j)]; }
  float at(std::size_t i, std::size_t j, std::size_t k) const { return data_[index(i, j, k)]; }
  float& at(std::size_t i, std::size_t j, std::size_t k) { return data_[index(i, j, k)]; }
  float at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[index(i, j, k, l)];
  }
  float& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[index(i, j, k, l)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void require_rank(std::size_t r, const char* what) const {
    if (rank() != r) {
      throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                       std::to_string(rank()));
    }
  }

  void require_finite(const char* what) const {
    for (float v : data_) {
      if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite element");
    }
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeError("tensor extents must be positive");
      n *= e;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

/// value + named gradients, one per differentiated input or parameter;
/// each gradient has the shape of the tensor it differentiates
struct GradPair {
  Tensor value;
  std::map<std::string, Tensor> grads;
};

namespace detail {

inline void put_u32_le(std::vector<std::byte>& out, std::uint32_t v) {
  out.push_back(static_cast<std::byte>(v & 0xff));
  out.push_back(static_cast<std::byte>((v >> 8) & 0xff));
  out.push_back(static_cast<std::byte>((v >> 16) & 0xff));
  out.push_back(static_cast<std::byte>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const std::vector<std::byte>& b, std::size_t off) {
  auto at = [&](std::size_t i) { return static_cast<std::uint32_t>(b[off + i]); };
  return at(0) | (at(1) << 8) | (at(2) << 16) | (at(3) << 24);
}

inline void put_f32_le(std::vector<std::byte>& out, float f) {
  std::uint32_t v;
  static_assert(sizeof(v) == sizeof(f));
  std::memcpy(&v, &f, 4);
  put_u32_le(out, v);
}

inline float get_f32_le(const std::vector<std::byte>& b, std::size_t off) {
  std::uint32_t v = get_u32_le(b, off);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace detail

/// Atomically write raw bytes: write to "<path>.tmp" then rename.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::vector<std::byte>& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + path.string() + ": " + ec.message());
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto* p = reinterpret_cast<const std::byte*>(text.data());
  write_file_atomic(path, std::vector<std::byte>(p, p + text.size()));
}

inline std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const std::byte*>(text.data());
  return std::vector<std::byte>(p, p + text.size());
}

/// BTF1 tensor file: magic "BTF1", u32 LE ndim, ndim u32 LE extents,
/// f32 LE payload in row-major order.
inline std::vector<std::byte> encode_btf(const Tensor& t) {
  std::vector<std::byte> out;
  out.reserve(8 + 4 * t.rank() + 4 * t.size());
  for (char c : {'B', 'T', 'F', '1'}) out.push_back(static_cast<std::byte>(c));
  detail::put_u32_le(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) detail::put_u32_le(out, static_cast<std::uint32_t>(e));
  for (std::size_t i = 0; i < t.size(); ++i) detail::put_f32_le(out, t[i]);
  return out;
}

inline Tensor decode_btf(const std::vector<std::byte>& bytes,
                         const std::string& origin = "<memory>") {
  if (bytes.size() < 8 || bytes[0] != std::byte{'B'} || bytes[1] != std::byte{'T'} ||
      bytes[2] != std::byte{'F'} || bytes[3] != std::byte{'1'}) {
    throw IoError("not a BTF1 file: " + origin);
  }
  std::uint32_t ndim = detail::get_u32_le(bytes, 4);
  if (ndim == 0 || ndim > 8) throw IoError("BTF1 ndim out of range: " + origin);
  if (bytes.size() < 8 + 4ull * ndim) throw IoError("truncated BTF1 header: " + origin);
  std::vector<std::size_t> shape(ndim);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    shape[i] = detail::get_u32_le(bytes, 8 + 4 * i);
    if (shape[i] == 0) throw IoError("BTF1 zero extent: " + origin);
    count *= shape[i];
  }
  std::size_t offset = 8 + 4ull * ndim;
  if (bytes.size() != offset + 4ull * count) throw IoError("BTF1 payload size mismatch: " + origin);
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = detail::get_f32_le(bytes, offset + 4 * i);
  return Tensor(std::move(shape), std::move(data));
}

inline void write_btf(const std::filesystem::path& path, const Tensor& t) {
  write_file_atomic(path, encode_btf(t));
}

inline Tensor read_btf(const std::filesystem::path& path) {
  return decode_btf(read_file(path), path.string());
}

}  // namespace bevkit
