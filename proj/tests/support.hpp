// SPDX-License-Identifier: Apache-2.0
//
// Test helpers and independent oracles. Nothing here calls the code under
// test except to read operator specs and branch values.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mixt/mixt_operator.hpp"
#include "mixt/random.hpp"
#include "mixt/tensor.hpp"

namespace mixt::test {

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.uniform(-1.0, 1.0);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::vector<std::size_t> digits(std::size_t flat, std::size_t d, std::size_t count) {
  std::vector<std::size_t> out(count);
  for (std::size_t i = count; i-- > 0;) {
    out[i] = flat % d;
    flat /= d;
  }
  return out;
}

inline std::size_t undigits(const std::vector<std::size_t>& ds, std::size_t first, std::size_t count, std::size_t d) {
  std::size_t v = 0;
  for (std::size_t i = first; i < first + count; ++i) v = v * d + ds[i];
  return v;
}

// Padded d^m x d^n matrix of an operator, one bond index at a time: branch k
// acts on input bonds [k, k+n-n_t] and output bonds [k, k+m-n_t]; the k
// leading and n_t-1-k trailing bonds must agree between input and output.
inline Tensor bondwise_dense(const MixtOperator& op) {
  const MixtSpec& s = op.spec();
  const std::size_t wi = s.n - s.n_t + 1, wo = s.m - s.n_t + 1;
  const double scale = s.average ? 1.0 / static_cast<double>(s.n_t) : 1.0;
  Tensor dense = Tensor::matrix(s.out_dim(), s.in_dim());
  for (std::size_t o = 0; o < s.out_dim(); ++o) {
    const auto ob = digits(o, s.d, s.m);
    for (std::size_t i = 0; i < s.in_dim(); ++i) {
      const auto ib = digits(i, s.d, s.n);
      double acc = 0.0;
      for (std::size_t k = 0; k < s.n_t; ++k) {
        bool pass = true;
        for (std::size_t j = 0; j < k; ++j) pass = pass && ob[j] == ib[j];
        for (std::size_t t = 0; t + k + 1 < s.n_t; ++t) pass = pass && ob[k + wo + t] == ib[k + wi + t];
        if (!pass) continue;
        const std::size_t row = undigits(ob, k, wo, s.d), col = undigits(ib, k, wi, s.d);
        acc += op.branch(k)[row * s.branch_in() + col];
      }
      dense(o, i) = scale * acc;
    }
  }
  return dense;
}

inline Tensor naive_matmul_t(const Tensor& x, const Tensor& w) {
  // x [b, in], w [out, in] -> [b, out]
  Tensor y = Tensor::matrix(x.dim(0), w.dim(0));
  for (std::size_t b = 0; b < x.dim(0); ++b)
    for (std::size_t o = 0; o < w.dim(0); ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < w.dim(1); ++i) acc += x(b, i) * w(o, i);
      y(b, o) = acc;
    }
  return y;
}

inline MixtOperator random_operator(Rng& rng, const MixtSpec& spec, double scale = 1.0) {
  std::vector<Tensor> branches;
  for (std::size_t k = 0; k < spec.n_t; ++k) branches.push_back(random_tensor(rng, spec.branch_shape(), scale));
  return MixtOperator(spec, std::move(branches));
}

}  // namespace mixt::test
