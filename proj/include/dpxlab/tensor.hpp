// Copyright 2026 The DPXLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense row-major tensors and the DPXT on-disk container.
//
// Container layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "DPXT"
//   4       1     version (0x01)
//   5       1     dtype code (0x01 = f32, 0x02 = f64)
//   6       1     rank r (0..255)
//   7       7     reserved, zero
//   14      8*r   dims as u64
//   14+8r   ...   payload, row-major, IEEE-754 little-endian
//
// Compute is always f64. f32 payloads are widened on read and narrowed on
// write when the tensor's storage dtype is f32.

#ifndef DPXLAB_TENSOR_HPP
#define DPXLAB_TENSOR_HPP

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dpxlab/errors.hpp"

namespace dpxlab {

using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { kF32 = 0x01, kF64 = 0x02 };

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

class Tensor {
 public:
  Tensor() : shape_{0} {}

  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::kF64)
      : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
    if (element_count(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + shape_string(shape_) + " needs " +
                       std::to_string(element_count(shape_)) +
                       " elements, got " + std::to_string(data_.size()));
    }
  }

  static Tensor zeros(Shape shape, DType dtype = DType::kF64) {
    std::vector<double> data(element_count(shape), 0.0);
    return Tensor(std::move(shape), std::move(data), dtype);
  }

  static Tensor filled(Shape shape, double value) {
    std::vector<double> data(element_count(shape), value);
    return Tensor(std::move(shape), std::move(data));
  }

  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }

  static Tensor vector(std::vector<double> values) {
    Shape shape{values.size()};
    return Tensor(std::move(shape), std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  DType dtype() const noexcept { return dtype_; }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Row-major multi-index access.
  double at(std::initializer_list<std::size_t> index) const {
    return data_[offset(index)];
  }
  double& at(std::initializer_list<std::size_t> index) {
    return data_[offset(index)];
  }

  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_, dtype_);
  }

  Tensor with_dtype(DType dtype) const {
    Tensor copy = *this;
    copy.dtype_ = dtype;
    return copy;
  }

  /// Slice along the leading axis.
  Tensor row(std::size_t i) const {
    if (rank() == 0 || i >= shape_[0]) {
      throw ShapeError("row index " + std::to_string(i) +
                       " out of range for shape " + shape_string(shape_));
    }
    Shape sub(shape_.begin() + 1, shape_.end());
    const std::size_t n = element_count(sub);
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(i * n),
                            data_.begin() +
                                static_cast<std::ptrdiff_t>((i + 1) * n));
    return Tensor(std::move(sub), std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("index rank " + std::to_string(index.size()) +
                       " does not match tensor rank " +
                       std::to_string(shape_.size()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t idx : index) {
      if (idx >= shape_[axis]) {
        throw ShapeError("index out of range on axis " + std::to_string(axis));
      }
      flat = flat * shape_[axis] + idx;
      ++axis;
    }
    return flat;
  }

  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::kF64;
};

/// Stacks equally-shaped tensors along a new leading axis.
inline Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("cannot stack an empty list");
  Shape shape = items.front().shape();
  std::vector<double> data;
  data.reserve(items.size() * items.front().size());
  for (const Tensor& t : items) {
    if (t.shape() != shape) {
      throw ShapeError("stack: shape " + shape_string(t.shape()) +
                       " differs from " + shape_string(shape));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  shape.insert(shape.begin(), items.size());
  return Tensor(std::move(shape), std::move(data));
}

namespace container {

inline constexpr std::array<char, 4> kMagic{'D', 'P', 'X', 'T'};
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderBytes = 14;

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

/// Serializes a tensor to its exact container bytes.
inline std::string encode(const Tensor& t) {
  if (t.rank() > 255) throw UnsupportedError("rank above 255 not encodable");
  std::string out;
  const std::size_t width = t.dtype() == DType::kF32 ? 4 : 8;
  out.reserve(kHeaderBytes + 8 * t.rank() + width * t.size());
  out.append(kMagic.begin(), kMagic.end());
  out.push_back(static_cast<char>(kVersion));
  out.push_back(static_cast<char>(t.dtype()));
  out.push_back(static_cast<char>(t.rank()));
  out.append(kHeaderBytes - 7, '\0');
  for (std::size_t d : t.shape()) put_u64(out, d);
  for (double v : t.values()) {
    if (t.dtype() == DType::kF32) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    } else {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

/// Parses container bytes. `origin` names the source in error messages.
inline Tensor decode(std::string_view bytes, const std::string& origin) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw FormatError(origin + ": bad magic, not a DPXT tensor");
  }
  if (bytes.size() < kHeaderBytes) {
    throw CorruptError(origin + ": truncated header");
  }
  if (p[4] != kVersion) {
    throw UnsupportedError(origin + ": unsupported version " + std::to_string(p[4]));
  }
  DType dtype;
  if (p[5] == 0x01) {
    dtype = DType::kF32;
  } else if (p[5] == 0x02) {
    dtype = DType::kF64;
  } else {
    throw UnsupportedError(origin + ": unknown dtype code " + std::to_string(p[5]));
  }
  for (std::size_t i = 7; i < kHeaderBytes; ++i) {
    if (p[i] != 0) throw FormatError(origin + ": reserved header bytes not zero");
  }
  const std::size_t rank = p[6];
  if (bytes.size() < kHeaderBytes + 8 * rank) {
    throw CorruptError(origin + ": truncated dimension table");
  }
  Shape shape(rank);
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = get_u64(p + kHeaderBytes + 8 * i);
    if (shape[i] != 0 && count > (std::uint64_t{1} << 48) / shape[i]) {
      throw CorruptError(origin + ": implausible dimensions");
    }
    count *= shape[i];
  }
  const std::size_t width = dtype == DType::kF32 ? 4 : 8;
  const std::size_t payload_at = kHeaderBytes + 8 * rank;
  if (bytes.size() - payload_at != count * width) {
    throw CorruptError(origin + ": payload has " +
                       std::to_string(bytes.size() - payload_at) +
                       " bytes, dims " + shape_string(shape) + " need " +
                       std::to_string(count * width));
  }
  std::vector<double> data(count);
  const unsigned char* q = p + payload_at;
  for (std::size_t i = 0; i < count; ++i) {
    if (dtype == DType::kF32) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) bits = (bits << 8) | q[4 * i + static_cast<std::size_t>(b)];
      data[i] = static_cast<double>(std::bit_cast<float>(bits));
    } else {
      data[i] = std::bit_cast<double>(get_u64(q + 8 * i));
    }
    if (!std::isfinite(data[i])) {
      throw NonFiniteError(origin + ": non-finite value at element " + std::to_string(i));
    }
  }
  return Tensor(std::move(shape), std::move(data), dtype);
}

}  // namespace container

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Writes `bytes` to a sibling temp file and renames it over `path`, so
/// readers see either the old or the new content, never a partial file.
inline void write_file_atomic(const std::filesystem::path& path,
                              std::string_view bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write error: cannot open " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write error: " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("write error: rename to " + path.string() + ": " + ec.message());
}

inline void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  if (!t.all_finite()) {
    throw NonFiniteError("refusing to write non-finite tensor to " + path.string());
  }
  write_file_atomic(path, container::encode(t));
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  return container::decode(read_file_bytes(path), path.string());
}

}  // namespace dpxlab

#endif  // DPXLAB_TENSOR_HPP
