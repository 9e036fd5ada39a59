// SPDX-License-Identifier: Apache-2.0
#include "mixt/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "mixt/error.hpp"
#include "mixt/kernels.hpp"

namespace mixt {

namespace {

std::string dims_str(std::span<const std::size_t> dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << ']';
  return os.str();
}

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    std::reverse(b.begin(), b.end());
    std::memcpy(&v, b.data(), sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error(Errc::ParseError, "truncated tensor stream");
  return to_little(v);
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  numel_ = 1;
  for (std::size_t d : dims_) {
    if (d == 0) throw Error(Errc::InvalidLength, "zero-length axis in shape " + dims_str(dims_));
    if (numel_ > std::numeric_limits<std::size_t>::max() / d) {
      throw Error(Errc::InvalidLength, "element count overflows for shape " + dims_str(dims_));
    }
    numel_ *= d;
  }
}

std::vector<std::size_t> Shape::strides() const {
  std::vector<std::size_t> s(dims_.size(), 1);
  for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i];
  return s;
}

std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << dims_str(s.dims()); }

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_.numel(), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw Error(Errc::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                         " does not match shape " + dims_str(shape_.dims()));
  }
}

double& Tensor::at(std::span<const std::size_t> index) { return data_[flat_index(shape_, index)]; }
double Tensor::at(std::span<const std::size_t> index) const { return data_[flat_index(shape_, index)]; }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::size_t flat_index(const Shape& shape, std::span<const std::size_t> index) {
  if (index.size() != shape.rank()) throw Error(Errc::AxisOutOfRange, "index rank mismatch");
  std::size_t flat = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= shape[i]) throw Error(Errc::AxisOutOfRange, "index out of range on axis " + std::to_string(i));
    flat = flat * shape[i] + index[i];
  }
  return flat;
}

std::vector<std::size_t> unravel_index(const Shape& shape, std::size_t flat) {
  std::vector<std::size_t> idx(shape.rank());
  for (std::size_t i = shape.rank(); i-- > 0;) {
    idx[i] = flat % shape[i];
    flat /= shape[i];
  }
  return idx;
}

Tensor reshape(const Tensor& t, Shape new_shape) {
  if (new_shape.numel() != t.numel()) {
    throw Error(Errc::ShapeMismatch, "cannot reshape " + dims_str(t.shape().dims()) + " to " +
                                         dims_str(new_shape.dims()));
  }
  return Tensor(std::move(new_shape), std::vector<double>(t.data().begin(), t.data().end()));
}

Tensor permute(const Tensor& t, std::span<const std::size_t> perm) {
  const std::size_t rank = t.rank();
  if (perm.size() != rank) throw Error(Errc::InvalidPermutation, "permutation length differs from rank");
  std::vector<bool> seen(rank, false);
  for (std::size_t p : perm) {
    if (p >= rank || seen[p]) throw Error(Errc::InvalidPermutation, "not a permutation of 0..rank-1");
    seen[p] = true;
  }

  std::vector<std::size_t> out_dims(rank);
  for (std::size_t i = 0; i < rank; ++i) out_dims[i] = t.dim(perm[i]);
  Tensor out{Shape(out_dims)};

  // Walk the output in row-major order, advancing the matching input offset.
  const auto in_strides = t.shape().strides();
  std::vector<std::size_t> stride_for_out(rank);
  for (std::size_t i = 0; i < rank; ++i) stride_for_out[i] = in_strides[perm[i]];

  std::vector<std::size_t> counter(rank, 0);
  std::size_t in_off = 0;
  const double* src = t.ptr();
  double* dst = out.ptr();
  for (std::size_t flat = 0; flat < out.numel(); ++flat) {
    dst[flat] = src[in_off];
    for (std::size_t ax = rank; ax-- > 0;) {
      if (++counter[ax] < out_dims[ax]) {
        in_off += stride_for_out[ax];
        break;
      }
      in_off -= stride_for_out[ax] * (out_dims[ax] - 1);
      counter[ax] = 0;
    }
  }
  return out;
}

Tensor contract(const Tensor& a, const Tensor& b, std::span<const std::size_t> axes_a,
                std::span<const std::size_t> axes_b) {
  if (axes_a.size() != axes_b.size()) throw Error(Errc::AxisLengthMismatch, "axis lists differ in length");

  auto check_axes = [](const Tensor& t, std::span<const std::size_t> axes) {
    std::vector<bool> used(t.rank(), false);
    for (std::size_t ax : axes) {
      if (ax >= t.rank()) throw Error(Errc::AxisOutOfRange, "contraction axis " + std::to_string(ax));
      if (used[ax]) throw Error(Errc::AxisOutOfRange, "duplicate contraction axis " + std::to_string(ax));
      used[ax] = true;
    }
    std::vector<std::size_t> free;
    for (std::size_t ax = 0; ax < t.rank(); ++ax) {
      if (!used[ax]) free.push_back(ax);
    }
    return free;
  };
  const auto free_a = check_axes(a, axes_a);
  const auto free_b = check_axes(b, axes_b);

  std::size_t k = 1;
  for (std::size_t i = 0; i < axes_a.size(); ++i) {
    if (a.dim(axes_a[i]) != b.dim(axes_b[i])) {
      throw Error(Errc::AxisLengthMismatch, "paired axes have lengths " + std::to_string(a.dim(axes_a[i])) +
                                                " and " + std::to_string(b.dim(axes_b[i])));
    }
    k *= a.dim(axes_a[i]);
  }

  // a -> [free_a..., axes_a...], b -> [axes_b..., free_b...], then one GEMM.
  std::vector<std::size_t> perm_a(free_a);
  perm_a.insert(perm_a.end(), axes_a.begin(), axes_a.end());
  std::vector<std::size_t> perm_b(axes_b.begin(), axes_b.end());
  perm_b.insert(perm_b.end(), free_b.begin(), free_b.end());
  const Tensor pa = permute(a, perm_a);
  const Tensor pb = permute(b, perm_b);

  std::vector<std::size_t> out_dims;
  std::size_t m = 1, n = 1;
  for (std::size_t ax : free_a) {
    out_dims.push_back(a.dim(ax));
    m *= a.dim(ax);
  }
  for (std::size_t ax : free_b) {
    out_dims.push_back(b.dim(ax));
    n *= b.dim(ax);
  }
  Tensor out{Shape(out_dims)};
  kernels::gemm(false, false, m, n, k, 1.0, pa.ptr(), pb.ptr(), 0.0, out.ptr());
  return out;
}

Tensor pad_axis(const Tensor& t, std::size_t axis, std::size_t new_len) {
  if (axis >= t.rank()) throw Error(Errc::AxisOutOfRange, "pad axis " + std::to_string(axis));
  const std::size_t old_len = t.dim(axis);
  if (new_len < old_len) throw Error(Errc::InvalidLength, "pad length shorter than axis");

  std::vector<std::size_t> dims(t.shape().dims().begin(), t.shape().dims().end());
  dims[axis] = new_len;
  Tensor out{Shape(dims)};
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.dim(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(t.ptr() + o * old_len * inner, old_len * inner, out.ptr() + o * new_len * inner);
  }
  return out;
}

Tensor slice_axis(const Tensor& t, std::size_t axis, std::size_t len) {
  if (axis >= t.rank()) throw Error(Errc::AxisOutOfRange, "slice axis " + std::to_string(axis));
  const std::size_t old_len = t.dim(axis);
  if (len > old_len || len == 0) throw Error(Errc::InvalidLength, "slice length outside [1, axis length]");

  std::vector<std::size_t> dims(t.shape().dims().begin(), t.shape().dims().end());
  dims[axis] = len;
  Tensor out{Shape(dims)};
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.dim(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(t.ptr() + o * old_len * inner, len * inner, out.ptr() + o * len * inner);
  }
  return out;
}

double frobenius_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

void require_finite(const Tensor& t, const char* context) {
  if (!t.all_finite()) throw Error(Errc::NonFinite, std::string("non-finite value in ") + context);
}

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("MIXT", 4);
  put<std::uint32_t>(os, kTensorFormatVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape().dims()) put<std::uint64_t>(os, d);
  for (double v : t.data()) put<double>(os, v);
  if (!os) throw Error(Errc::ParseError, "failed writing tensor stream");
}

Tensor read_tensor(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MIXT", 4) != 0) throw Error(Errc::ParseError, "bad tensor magic");
  const auto version = get<std::uint32_t>(is);
  if (version != kTensorFormatVersion) {
    throw Error(Errc::ParseError, "unsupported tensor format version " + std::to_string(version));
  }
  const auto rank = get<std::uint32_t>(is);
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) d = static_cast<std::size_t>(get<std::uint64_t>(is));
  Shape shape(dims);
  std::vector<double> data(shape.numel());
  for (auto& v : data) v = get<double>(is);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(Errc::FileNotFound, "cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::FileNotFound, path.string());
  return read_tensor(is);
}

}  // namespace mixt
