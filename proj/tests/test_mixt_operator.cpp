// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mixt/error.hpp"
#include "mixt/mixt_operator.hpp"
#include "support.hpp"

using namespace mixt;
using namespace mixt::test;

namespace {

MixtSpec full_spec(std::size_t d, std::size_t n, std::size_t m, std::size_t n_t) {
  MixtSpec s;
  s.d = d;
  s.n = n;
  s.m = m;
  s.n_t = n_t;
  s.in_dim_raw = ipow(d, static_cast<unsigned>(n));
  s.out_dim_raw = ipow(d, static_cast<unsigned>(m));
  s.validate();
  return s;
}

// Multiply-adds of the Kronecker-sandwich matvec, counted one loop at a time.
std::uint64_t enumerate_contraction_madds(const MixtSpec& s) {
  std::uint64_t count = 0;
  for (std::size_t k = 0; k < s.n_t; ++k)
    for (std::size_t p = 0; p < s.prefix(k); ++p)
      for (std::size_t q = 0; q < s.suffix(k); ++q)
        for (std::size_t r = 0; r < s.branch_out(); ++r)
          for (std::size_t c = 0; c < s.branch_in(); ++c) ++count;
  return count;
}

}  // namespace

TEST_SUITE("mixt-operator") {

TEST_CASE("parameter count and remaining ratio") {
  const MixtSpec s = full_spec(2, 12, 12, 4);
  CHECK(param_count(s) == 1'048'576);
  CHECK(s.in_dim() * s.out_dim() == 16'777'216);
  CHECK(remaining_ratio(s) == 0.0625);
  CHECK(remaining_ratio(full_spec(2, 6, 6, 4)) == 0.0625);
  CHECK(remaining_ratio(full_spec(2, 5, 3, 1)) == 1.0);
  CHECK(remaining_ratio(full_spec(3, 4, 4, 1)) == 1.0);

  for (std::size_t d : {2u, 3u}) {
    double prev = 2.0;
    for (std::size_t nt = 2; nt <= 6; ++nt) {
      const double r = remaining_ratio(full_spec(d, 6, 6, nt));
      CHECK(r < prev);
      prev = r;
    }
  }
}

TEST_CASE("parameter count equals the branch storage on the whole grid") {
  for (std::size_t d : {2u, 3u})
    for (std::size_t n = 1; n <= 5; ++n)
      for (std::size_t m = 1; m <= 5; ++m)
        for (std::size_t nt = 1; nt <= std::min(n, m); ++nt) {
          const MixtSpec s = full_spec(d, n, m, nt);
          const MixtOperator op(s);
          std::uint64_t stored = 0;
          for (const auto& b : op.branches()) stored += b.numel();
          CHECK(param_count(s) == stored);
          CHECK(op.param_count() == stored);
          CHECK(stored == nt * ipow(d, static_cast<unsigned>(m + n + 2 - 2 * nt)));
        }
}

TEST_CASE("flop counts") {
  const MixtSpec s = full_spec(2, 12, 12, 4);
  CHECK(flop_count(s, FlopMode::Paper) == 1'048'576);
  CHECK(flop_count(s, FlopMode::Contraction) == 8'388'608);
  for (std::size_t d : {2u, 3u})
    for (std::size_t n = 1; n <= 4; ++n)
      for (std::size_t m = 1; m <= 4; ++m)
        for (std::size_t nt = 1; nt <= std::min(n, m); ++nt) {
          const MixtSpec g = full_spec(d, n, m, nt);
          CHECK(flop_count(g, FlopMode::Contraction) == enumerate_contraction_madds(g));
          if (nt == 1) {
            CHECK(flop_count(g, FlopMode::Paper) == g.in_dim() * g.out_dim());
            CHECK(flop_count(g, FlopMode::Contraction) == g.in_dim() * g.out_dim());
          }
        }
}

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(full_spec(2, 3, 3, 4), Error);
  CHECK_THROWS_AS(full_spec(1, 3, 3, 1), Error);
  MixtSpec s = full_spec(2, 4, 4, 2);
  s.in_dim_raw = 8;  // fits in 2^3, so 2^4 is not minimal
  CHECK_THROWS_AS(s.validate(), Error);
  s.in_dim_raw = 17;
  CHECK_THROWS_AS(s.validate(), Error);
  const MixtSpec padded = MixtSpec::for_dims(11008, 4096, 4);
  CHECK(padded.n == 14);
  CHECK(padded.m == 12);
  CHECK(MixtSpec::for_dims(1, 3, 1).n == 1);
  CHECK_THROWS_AS(MixtSpec::for_dims(0, 3, 1), Error);
}

TEST_CASE("forward equals the dense expansion over the grid") {
  Rng rng(101);
  int points = 0;
  for (std::size_t d : {2u, 3u})
    for (std::size_t n = 2; n <= 5; ++n)
      for (std::size_t m = 2; m <= 5; ++m) {
        if (ipow(d, static_cast<unsigned>(m + n)) > 4096) continue;
        for (std::size_t nt = 1; nt <= std::min(n, m); ++nt) {
          const MixtOperator op = random_operator(rng, full_spec(d, n, m, nt));
          const Tensor dense = expand_to_dense(op);
          CHECK(max_abs_diff(dense, bondwise_dense(op)) <= 1e-12);
          const Tensor x = random_tensor(rng, {20, op.spec().in_dim_raw});
          CHECK(max_abs_diff(forward(op, x), naive_matmul_t(x, dense)) <= 1e-10);
          ++points;
        }
      }
  CHECK(points > 40);
}

TEST_CASE("literal four-term transcription for n = m = 5, N_T = 4") {
  Rng rng(7);
  const MixtOperator op = random_operator(rng, full_spec(2, 5, 5, 4));
  // Each branch has two output bonds then two input bonds.
  auto T = [&](std::size_t k, std::size_t o0, std::size_t o1, std::size_t i0, std::size_t i1) {
    return op.branch(k)[((o0 * 2 + o1) * 2 + i0) * 2 + i1];
  };
  const Tensor x = random_tensor(rng, {3, 32});
  auto X = [&](std::size_t b, std::size_t a0, std::size_t a1, std::size_t a2, std::size_t a3, std::size_t a4) {
    return x(b, (((a0 * 2 + a1) * 2 + a2) * 2 + a3) * 2 + a4);
  };
  const Tensor y = forward(op, x);
  double worst = 0.0;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t o = 0; o < 32; ++o) {
      const std::size_t o0 = o >> 4 & 1, o1 = o >> 3 & 1, o2 = o >> 2 & 1, o3 = o >> 1 & 1, o4 = o & 1;
      double t1 = 0, t2 = 0, t3 = 0, t4 = 0;
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t c = 0; c < 2; ++c) {
          t1 += T(0, o0, o1, a, c) * X(b, a, c, o2, o3, o4);
          t2 += T(1, o1, o2, a, c) * X(b, o0, a, c, o3, o4);
          t3 += T(2, o2, o3, a, c) * X(b, o0, o1, a, c, o4);
          t4 += T(3, o3, o4, a, c) * X(b, o0, o1, o2, a, c);
        }
      worst = std::max(worst, std::abs(y(b, o) - 0.25 * (t1 + t2 + t3 + t4)));
    }
  CHECK(worst <= 1e-12);
}

TEST_CASE("single branch degenerates to a dense map") {
  Rng rng(3);
  const MixtOperator op = random_operator(rng, full_spec(2, 3, 2, 1));
  const Tensor dense = expand_to_dense(op);
  CHECK(max_abs_diff(dense, reshape(op.branch(0), {4, 8})) == 0.0);
  const MixtOperator zero(full_spec(2, 3, 3, 2));
  CHECK(frobenius_norm(expand_to_dense(zero)) == 0.0);
}

TEST_CASE("basis probing reproduces the expansion") {
  Rng rng(21);
  const MixtOperator op = random_operator(rng, full_spec(2, 3, 3, 2));
  const Tensor dense = expand_to_dense(op);
  for (std::size_t j = 0; j < 8; ++j) {
    Tensor e = Tensor::matrix(1, 8);
    e(0, j) = 1.0;
    const Tensor col = forward(op, e);
    for (std::size_t i = 0; i < 8; ++i) CHECK(col(0, i) == doctest::Approx(dense(i, j)).epsilon(1e-15));
  }
}

TEST_CASE("linearity and padding consistency") {
  Rng rng(33);
  MixtSpec s = MixtSpec::for_dims(11, 6, 2, 2);  // pads 11 -> 16, 6 -> 8
  const MixtOperator op = random_operator(rng, s);
  const Tensor x = random_tensor(rng, {4, 11}), z = random_tensor(rng, {4, 11});
  Tensor mix(x.shape());
  for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = 1.5 * x[i] - 0.25 * z[i];
  const Tensor fx = forward(op, x), fz = forward(op, z), fm = forward(op, mix);
  REQUIRE(fx.shape() == Shape{4, 6});
  double worst = 0.0;
  for (std::size_t i = 0; i < fm.numel(); ++i) worst = std::max(worst, std::abs(fm[i] - (1.5 * fx[i] - 0.25 * fz[i])));
  CHECK(worst <= 1e-12);

  MixtSpec full = s;
  full.in_dim_raw = 16;
  full.out_dim_raw = 8;
  const MixtOperator op_full(full, op.branches());
  const Tensor y_pad = forward(op_full, pad_axis(x, 1, 16));
  CHECK(max_abs_diff(slice_axis(y_pad, 1, 6), fx) <= 1e-14);
  CHECK(max_abs_diff(expand_to_dense(op), slice_axis(slice_axis(expand_to_dense_padded(op), 0, 6), 1, 11)) == 0.0);
}

TEST_CASE("averaging flag") {
  Rng rng(12);
  MixtSpec s = full_spec(2, 3, 3, 3);
  const MixtOperator avg = random_operator(rng, s);
  s.average = false;
  const MixtOperator sum(s, avg.branches());
  const Tensor a = expand_to_dense(avg), b = expand_to_dense(sum);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(b[i] == doctest::Approx(3.0 * a[i]).epsilon(1e-14));
}

TEST_CASE("backward matches central differences") {
  Rng rng(55);
  const MixtSpec s = MixtSpec::for_dims(7, 5, 2, 2);
  MixtOperator op = random_operator(rng, s);
  const Tensor x = random_tensor(rng, {3, 7});
  const Tensor g = random_tensor(rng, {3, 5});
  auto objective = [&](const MixtOperator& o, const Tensor& in) {
    const Tensor y = forward(o, in);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += y[i] * g[i];
    return acc;
  };
  const MixtGradients grads = backward(op, x, g);
  const double eps = 1e-6;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    const double num = (objective(op, xp) - objective(op, xm)) / (2 * eps);
    CHECK(grads.input[i] == doctest::Approx(num).epsilon(1e-7));
  }
  for (std::size_t k = 0; k < s.n_t; ++k)
    for (std::size_t i = 0; i < op.branch(k).numel(); ++i) {
      Tensor bp = op.branch(k), bm = op.branch(k);
      bp[i] += eps;
      bm[i] -= eps;
      MixtOperator opp = op, opm = op;
      opp.set_branch(k, bp);
      opm.set_branch(k, bm);
      const double num = (objective(opp, x) - objective(opm, x)) / (2 * eps);
      CHECK(grads.branches[k][i] == doctest::Approx(num).epsilon(1e-7));
    }
}

TEST_CASE("branch shapes and errors") {
  const MixtSpec s = full_spec(2, 4, 3, 2);
  MixtOperator op(s);
  CHECK(op.branch(0).shape() == Shape{2, 2, 2, 2, 2});
  Rng rng(1);
  const Tensor mat = random_tensor(rng, {s.branch_out(), s.branch_in()});
  op.set_branch(1, mat);
  CHECK(op.branch(1).shape() == s.branch_shape());
  CHECK_THROWS_AS(op.set_branch(0, random_tensor(rng, {8, 4})), Error);
  CHECK_THROWS_AS(op.set_branch(2, mat), Error);
  CHECK_THROWS_AS(forward(op, random_tensor(rng, {2, 15})), Error);
}

TEST_CASE("operator manifest round trip") {
  Rng rng(77);
  const MixtOperator op = random_operator(rng, MixtSpec::for_dims(12, 9, 3, 2));
  const auto dir = std::filesystem::temp_directory_path() / "mixt_test_operator";
  std::filesystem::remove_all(dir);
  save_operator(dir, op, "op");
  const auto manifest = nlohmann::json::parse(std::ifstream(dir / "op.json"));
  CHECK(manifest.at("spec").get<MixtSpec>() == op.spec());
  CHECK(manifest.at("branches").size() == 3);
  const MixtOperator back = load_operator(dir / "op.json");
  CHECK(back.spec() == op.spec());
  for (std::size_t k = 0; k < 3; ++k) CHECK(back.branch(k) == op.branch(k));
  CHECK_THROWS_AS(load_operator(dir / "missing.json"), Error);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
