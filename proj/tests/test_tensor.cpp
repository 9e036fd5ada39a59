// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mixt/error.hpp"
#include "mixt/tensor.hpp"
#include "support.hpp"

using namespace mixt;
using mixt::test::max_abs_diff;
using mixt::test::random_tensor;

namespace {

Tensor iota(Shape s) {
  Tensor t(std::move(s));
  std::iota(t.data().begin(), t.data().end(), 1.0);
  return t;
}

template <class F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an exception");
  return Errc::ParseError;
}

// Independent contraction oracle: loop over every output index and every
// contracted index combination.
Tensor naive_contract(const Tensor& a, const Tensor& b, std::vector<std::size_t> ax_a, std::vector<std::size_t> ax_b) {
  std::vector<std::size_t> free_a, free_b;
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (std::find(ax_a.begin(), ax_a.end(), i) == ax_a.end()) free_a.push_back(i);
  for (std::size_t i = 0; i < b.rank(); ++i)
    if (std::find(ax_b.begin(), ax_b.end(), i) == ax_b.end()) free_b.push_back(i);
  std::vector<std::size_t> out_dims, sum_dims;
  for (auto i : free_a) out_dims.push_back(a.dim(i));
  for (auto i : free_b) out_dims.push_back(b.dim(i));
  for (auto i : ax_a) sum_dims.push_back(a.dim(i));
  if (out_dims.empty()) out_dims.push_back(1);
  Tensor out{Shape(out_dims)};
  std::size_t sum_count = 1;
  for (auto d : sum_dims) sum_count *= d;
  for (std::size_t o = 0; o < out.numel(); ++o) {
    const auto oi = unravel_index(out.shape(), o);
    double acc = 0.0;
    for (std::size_t s = 0; s < sum_count; ++s) {
      std::vector<std::size_t> si(sum_dims.size());
      std::size_t rem = s;
      for (std::size_t j = sum_dims.size(); j-- > 0;) {
        si[j] = rem % sum_dims[j];
        rem /= sum_dims[j];
      }
      std::vector<std::size_t> ia(a.rank()), ib(b.rank());
      for (std::size_t j = 0; j < free_a.size(); ++j) ia[free_a[j]] = oi[j];
      for (std::size_t j = 0; j < free_b.size(); ++j) ib[free_b[j]] = oi[free_a.size() + j];
      for (std::size_t j = 0; j < ax_a.size(); ++j) {
        ia[ax_a[j]] = si[j];
        ib[ax_b[j]] = si[j];
      }
      acc += a.at(ia) * b.at(ib);
    }
    out[o] = acc;
  }
  return out;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("shape rejects zero-length axes and reports strides") {
  CHECK(code_of([] { Shape s{2, 0, 3}; }) == Errc::InvalidLength);
  const Shape s{2, 3, 4};
  CHECK(s.numel() == 24);
  CHECK(s.strides() == std::vector<std::size_t>{12, 4, 1});
  const std::size_t huge = std::numeric_limits<std::size_t>::max() / 2;
  CHECK(code_of([&] { Shape t{huge, 4}; }) == Errc::InvalidLength);
}

TEST_CASE("reshape follows row-major order") {
  const Tensor t = iota({4});
  const Tensor m = reshape(t, {2, 2});
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == 2.0);
  CHECK(m(1, 0) == 3.0);
  CHECK(m(1, 1) == 4.0);
  CHECK(reshape(m, {4}) == t);

  const Tensor cube = reshape(iota({8}), {2, 2, 2});
  CHECK(cube.at({1, 0, 1}) == 6.0);  // flat index 5
  CHECK(unravel_index(cube.shape(), 5) == std::vector<std::size_t>{1, 0, 1});
  CHECK(code_of([&] { reshape(t, {3}); }) == Errc::ShapeMismatch);
}

TEST_CASE("reshape composition equals a single reshape") {
  Rng rng(3);
  const Tensor t = random_tensor(rng, {2, 3, 4});
  CHECK(reshape(reshape(t, {6, 4}), {4, 6}) == reshape(t, {4, 6}));
}

TEST_CASE("permute") {
  const Tensor m = iota({2, 3});
  const std::array<std::size_t, 2> ident{0, 1}, swap{1, 0};
  CHECK(permute(m, ident) == m);
  const Tensor tr = permute(m, swap);
  REQUIRE(tr.shape() == Shape{3, 2});
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(tr(c, r) == m(r, c));

  Rng rng(5);
  const Tensor t = random_tensor(rng, {2, 3, 4});
  const std::array<std::size_t, 3> p{2, 0, 1};
  const Tensor pt = permute(t, p);
  CHECK(pt.shape() == Shape{4, 2, 3});
  CHECK(pt.at({1, 1, 0}) == t.at({1, 0, 1}));

  const std::array<std::size_t, 3> inv{1, 2, 0};
  CHECK(permute(pt, inv) == t);

  const std::array<std::size_t, 3> bad{0, 0, 1};
  CHECK(code_of([&] { permute(t, bad); }) == Errc::InvalidPermutation);
  CHECK(code_of([&] { permute(t, swap); }) == Errc::InvalidPermutation);
}

TEST_CASE("contract: matrix-vector and identity") {
  const Tensor a(Shape{2, 2}, {1, 2, 3, 4});
  const Tensor x(Shape{2}, {5, 6});
  const std::array<std::size_t, 1> one{1}, zero{0};
  const Tensor y = contract(a, x, one, zero);
  CHECK(y == Tensor(Shape{2}, {17, 39}));

  Rng rng(1);
  const Tensor t = random_tensor(rng, {3, 4});
  Tensor eye = Tensor::matrix(3, 3);
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
  // Contracting axis 0 of t with an identity gives t^T.
  const std::array<std::size_t, 2> swap{1, 0};
  CHECK(max_abs_diff(contract(t, eye, zero, zero), permute(t, swap)) == 0.0);
}

TEST_CASE("contract matches the nested-loop oracle") {
  Rng rng(11);
  {
    const Tensor a = random_tensor(rng, {2, 3, 4});
    const Tensor b = random_tensor(rng, {4, 3});
    const std::array<std::size_t, 2> ax_a{2, 1}, ax_b{0, 1};
    const Tensor c = contract(a, b, ax_a, ax_b);
    CHECK(c.shape() == Shape{2});
    CHECK(max_abs_diff(c, naive_contract(a, b, {2, 1}, {0, 1})) <= 1e-12);
  }
  for (int trial = 0; trial < 40; ++trial) {
    // Random ranks and a random set of shared axes; total size stays small.
    const std::size_t ra = 1 + rng.below(4), rb = 1 + rng.below(3);
    std::vector<std::size_t> da(ra), db(rb);
    for (auto& d : da) d = 1 + rng.below(4);
    for (auto& d : db) d = 1 + rng.below(4);
    const std::size_t shared = rng.below(std::min(ra, rb) + 1);
    std::vector<std::size_t> ax_a, ax_b;
    std::vector<std::size_t> pool_a(ra), pool_b(rb);
    std::iota(pool_a.begin(), pool_a.end(), 0);
    std::iota(pool_b.begin(), pool_b.end(), 0);
    for (std::size_t s = 0; s < shared; ++s) {
      const auto ia = rng.below(pool_a.size()), ib = rng.below(pool_b.size());
      ax_a.push_back(pool_a[ia]);
      ax_b.push_back(pool_b[ib]);
      db[pool_b[ib]] = da[pool_a[ia]];
      pool_a.erase(pool_a.begin() + static_cast<long>(ia));
      pool_b.erase(pool_b.begin() + static_cast<long>(ib));
    }
    const Tensor a = random_tensor(rng, Shape(da)), b = random_tensor(rng, Shape(db));
    const Tensor c = contract(a, b, ax_a, ax_b);
    const Tensor o = naive_contract(a, b, ax_a, ax_b);
    REQUIRE(c.numel() == o.numel());
    CHECK(max_abs_diff(c, o) <= 1e-12);
  }
}

TEST_CASE("contract is bilinear") {
  Rng rng(2);
  const Tensor a1 = random_tensor(rng, {3, 4, 2}), a2 = random_tensor(rng, {3, 4, 2});
  const Tensor b = random_tensor(rng, {2, 4, 5});
  const double alpha = 0.7, beta = -1.3;
  Tensor mix(a1.shape());
  for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = alpha * a1[i] + beta * a2[i];
  const std::array<std::size_t, 2> ax_a{1, 2}, ax_b{1, 0};
  const Tensor lhs = contract(mix, b, ax_a, ax_b);
  const Tensor c1 = contract(a1, b, ax_a, ax_b), c2 = contract(a2, b, ax_a, ax_b);
  Tensor rhs(c1.shape());
  for (std::size_t i = 0; i < rhs.numel(); ++i) rhs[i] = alpha * c1[i] + beta * c2[i];
  CHECK(max_abs_diff(lhs, rhs) <= 1e-12);
}

TEST_CASE("contract rejects mismatched axes") {
  const Tensor a = iota({2, 3}), b = iota({4, 2});
  const std::array<std::size_t, 1> one{1}, zero{0};
  CHECK(code_of([&] { contract(a, b, one, zero); }) == Errc::AxisLengthMismatch);
  const std::array<std::size_t, 2> two{0, 1};
  CHECK(code_of([&] { contract(a, b, two, zero); }) == Errc::AxisLengthMismatch);
  const std::array<std::size_t, 1> five{5};
  CHECK(code_of([&] { contract(a, b, five, zero); }) == Errc::AxisOutOfRange);
}

TEST_CASE("pad and slice") {
  const Tensor v(Shape{3}, {1, 2, 3});
  CHECK(pad_axis(v, 0, 4) == Tensor(Shape{4}, {1, 2, 3, 0}));
  CHECK(slice_axis(pad_axis(v, 0, 4), 0, 3) == v);
  CHECK(code_of([&] { pad_axis(v, 0, 2); }) == Errc::InvalidLength);
  CHECK(code_of([&] { slice_axis(v, 0, 0); }) == Errc::InvalidLength);
  CHECK(code_of([&] { slice_axis(v, 0, 4); }) == Errc::InvalidLength);
  CHECK(code_of([&] { pad_axis(v, 1, 4); }) == Errc::AxisOutOfRange);

  Rng rng(4);
  const Tensor w = random_tensor(rng, {3, 3});
  const Tensor x = random_tensor(rng, {3});
  const Tensor wp = pad_axis(pad_axis(w, 0, 4), 1, 4);
  const Tensor xp = pad_axis(x, 0, 4);
  const std::array<std::size_t, 1> one{1}, zero{0};
  const Tensor y = contract(w, x, one, zero), yp = contract(wp, xp, one, zero);
  for (std::size_t i = 0; i < 3; ++i) CHECK(yp[i] == doctest::Approx(y[i]).epsilon(1e-15));
  CHECK(yp[3] == 0.0);

  const Tensor t = random_tensor(rng, {2, 3, 5});
  CHECK(slice_axis(pad_axis(t, 1, 7), 1, 3) == t);
}

TEST_CASE("frobenius norm") {
  CHECK(frobenius_norm(Tensor(Shape{2, 2})) == 0.0);
  CHECK(frobenius_norm(Tensor(Shape{2}, {3, 4})) == 5.0);
  Rng rng(9);
  const Tensor t = random_tensor(rng, {2, 2, 2});
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  CHECK(std::abs(frobenius_norm(t) - std::sqrt(s)) <= 1e-14);
}

TEST_CASE("non-finite values are reported") {
  Tensor t(Shape{2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_FALSE(t.all_finite());
  CHECK(code_of([&] { require_finite(t, "test"); }) == Errc::NonFinite);
}

TEST_CASE("binary format round trip") {
  Rng rng(8);
  const Tensor t = random_tensor(rng, {3, 1, 4});
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4 + 4 + 4 + 3 * 8 + t.numel() * 8);
  CHECK(bytes.substr(0, 4) == "MIXT");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // little-endian version
  CHECK(static_cast<unsigned char>(bytes[8]) == 3);  // rank
  CHECK(read_tensor(ss) == t);

  std::stringstream bad("NOPE");
  CHECK(code_of([&] { read_tensor(bad); }) == Errc::ParseError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK(code_of([&] { read_tensor(truncated); }) == Errc::ParseError);
  CHECK(code_of([] { load_tensor("/nonexistent/x.mixt"); }) == Errc::FileNotFound);
}

}  // TEST_SUITE
