// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors of doubles. The last axis is the fastest-varying
// one; every index computation in the project relies on this layout.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <vector>

namespace mixt {

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::span<const std::size_t> dims() const noexcept { return dims_; }
  std::size_t numel() const noexcept { return numel_; }

  // Row-major strides in elements.
  std::vector<std::size_t> strides() const;

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

 private:
  std::vector<std::size_t> dims_;
  std::size_t numel_ = 1;
};

std::ostream& operator<<(std::ostream& os, const Shape& s);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor(Shape{rows, cols}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.rank(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t numel() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  double& at(std::span<const std::size_t> index);
  double at(std::span<const std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index) { return at(std::span(index.begin(), index.size())); }
  double at(std::initializer_list<std::size_t> index) const {
    return at(std::span(index.begin(), index.size()));
  }

  // Matrix-style access for rank-2 tensors.
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Flat offset of a multi-index; throws AxisOutOfRange on bad input.
std::size_t flat_index(const Shape& shape, std::span<const std::size_t> index);
std::vector<std::size_t> unravel_index(const Shape& shape, std::size_t flat);

Tensor reshape(const Tensor& t, Shape new_shape);
// output.at(perm-applied index) = input.at(index); output dim i = input dim perm[i].
Tensor permute(const Tensor& t, std::span<const std::size_t> perm);
// Contract axes_a[i] of a with axes_b[i] of b. Output axes are the
// remaining axes of a (in order) followed by the remaining axes of b.
Tensor contract(const Tensor& a, const Tensor& b, std::span<const std::size_t> axes_a,
                std::span<const std::size_t> axes_b);
Tensor pad_axis(const Tensor& t, std::size_t axis, std::size_t new_len);
Tensor slice_axis(const Tensor& t, std::size_t axis, std::size_t len);
double frobenius_norm(const Tensor& t);

// Throws Errc::NonFinite when any element is NaN or infinite.
void require_finite(const Tensor& t, const char* context);

// Binary file format: "MIXT", u32 version, u32 rank, u64 dims[rank],
// f64 payload; all little-endian.
inline constexpr std::uint32_t kTensorFormatVersion = 1;
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace mixt
