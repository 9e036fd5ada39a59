// SPDX-License-Identifier: Apache-2.0
#include "mixt/mixt_operator.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "mixt/error.hpp"
#include "mixt/kernels.hpp"

namespace mixt {

std::uint64_t ipow(std::uint64_t base, unsigned exp) {
  std::uint64_t r = 1;
  for (unsigned i = 0; i < exp; ++i) {
    if (base != 0 && r > std::numeric_limits<std::uint64_t>::max() / base) {
      throw Error(Errc::InvalidSpec, "integer power overflows 64 bits");
    }
    r *= base;
  }
  return r;
}

unsigned ceil_log(std::uint64_t value, std::uint64_t base) {
  if (base < 2) throw Error(Errc::InvalidSpec, "bond dimension must be >= 2");
  if (value == 0) throw Error(Errc::InvalidSpec, "width must be >= 1");
  unsigned e = 0;
  std::uint64_t p = 1;
  while (p < value) {
    p *= base;
    ++e;
  }
  return e;
}

MixtSpec MixtSpec::for_dims(std::size_t in_dim_raw, std::size_t out_dim_raw, std::size_t n_t, std::size_t d) {
  MixtSpec s;
  s.d = d;
  // A width of 1 still needs one bond.
  s.n = std::max<unsigned>(1, ceil_log(in_dim_raw, d));
  s.m = std::max<unsigned>(1, ceil_log(out_dim_raw, d));
  s.n_t = n_t;
  s.in_dim_raw = in_dim_raw;
  s.out_dim_raw = out_dim_raw;
  s.validate();
  return s;
}

void MixtSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::InvalidSpec, msg); };
  if (d < 2) fail("bond dimension d must be >= 2");
  if (n < 1 || m < 1) fail("input and output orders must be >= 1");
  if (n_t < 1 || n_t > std::min(n, m)) fail("branch count must lie in [1, min(n, m)]");
  const auto din = ipow(d, static_cast<unsigned>(n));
  const auto dout = ipow(d, static_cast<unsigned>(m));
  const auto din_prev = ipow(d, static_cast<unsigned>(n - 1));
  const auto dout_prev = ipow(d, static_cast<unsigned>(m - 1));
  // Width 1 with a single bond is the only case where raw == d^(n-1).
  const bool in_ok = in_dim_raw <= din && (in_dim_raw > din_prev || (n == 1 && in_dim_raw >= 1));
  const bool out_ok = out_dim_raw <= dout && (out_dim_raw > dout_prev || (m == 1 && out_dim_raw >= 1));
  if (!in_ok) fail("in_dim_raw " + std::to_string(in_dim_raw) + " is not minimally padded by d^n");
  if (!out_ok) fail("out_dim_raw " + std::to_string(out_dim_raw) + " is not minimally padded by d^m");
}

Shape MixtSpec::branch_shape() const {
  std::vector<std::size_t> dims(m - n_t + 1, d);
  dims.insert(dims.end(), n - n_t + 1, d);
  return Shape(std::move(dims));
}

void to_json(nlohmann::json& j, const MixtSpec& s) {
  j = nlohmann::json{{"d", s.d},
                     {"n", s.n},
                     {"m", s.m},
                     {"n_t", s.n_t},
                     {"in_dim_raw", s.in_dim_raw},
                     {"out_dim_raw", s.out_dim_raw},
                     {"average", s.average}};
}

void from_json(const nlohmann::json& j, MixtSpec& s) {
  s.d = j.at("d").get<std::size_t>();
  s.n = j.at("n").get<std::size_t>();
  s.m = j.at("m").get<std::size_t>();
  s.n_t = j.at("n_t").get<std::size_t>();
  s.in_dim_raw = j.at("in_dim_raw").get<std::size_t>();
  s.out_dim_raw = j.at("out_dim_raw").get<std::size_t>();
  s.average = j.value("average", true);
}

MixtOperator::MixtOperator(MixtSpec spec) : spec_(spec) {
  spec_.validate();
  branches_.assign(spec_.n_t, Tensor(spec_.branch_shape()));
}

MixtOperator::MixtOperator(MixtSpec spec, std::vector<Tensor> branches) : MixtOperator(spec) {
  if (branches.size() != spec_.n_t) {
    throw Error(Errc::DimensionMismatch, "expected " + std::to_string(spec_.n_t) + " branches");
  }
  for (std::size_t k = 0; k < branches.size(); ++k) set_branch(k, branches[k]);
}

void MixtOperator::set_branch(std::size_t k, const Tensor& t) {
  if (k >= branches_.size()) throw Error(Errc::DimensionMismatch, "branch index out of range");
  const Shape expected = spec_.branch_shape();
  if (t.numel() != expected.numel()) {
    throw Error(Errc::DimensionMismatch, "branch tensor has wrong element count");
  }
  const bool matrix = t.rank() == 2 && t.dim(0) == spec_.branch_out() && t.dim(1) == spec_.branch_in();
  if (!(t.shape() == expected) && !matrix) throw Error(Errc::DimensionMismatch, "branch tensor has wrong shape");
  branches_[k] = reshape(t, expected);
}

std::uint64_t MixtOperator::param_count() const {
  std::uint64_t total = 0;
  for (const auto& b : branches_) total += b.numel();
  return total;
}

std::uint64_t param_count(const MixtSpec& spec) {
  spec.validate();
  return spec.n_t * ipow(spec.d, static_cast<unsigned>(spec.m + spec.n + 2 - 2 * spec.n_t));
}

double remaining_ratio(const MixtSpec& spec) {
  return static_cast<double>(param_count(spec)) /
         static_cast<double>(ipow(spec.d, static_cast<unsigned>(spec.m + spec.n)));
}

std::uint64_t flop_count(const MixtSpec& spec, FlopMode mode) {
  spec.validate();
  switch (mode) {
    case FlopMode::Paper:
      return param_count(spec);
    case FlopMode::Contraction:
      // Each branch applies its local map to every pass-through slice.
      return spec.n_t * ipow(spec.d, static_cast<unsigned>(spec.m + spec.n + 1 - spec.n_t));
  }
  return 0;
}

namespace {

void check_input(const MixtSpec& spec, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != spec.in_dim_raw) {
    throw Error(Errc::DimensionMismatch,
                "expected input of shape [batch, " + std::to_string(spec.in_dim_raw) + "]");
  }
}

// y[r, u, q] += scale * sum_v M[u, v] x[r, v, q] with r = batch*prefix.
void apply_branch(const MixtSpec& spec, std::size_t k, const double* branch, const double* xp, double* yp,
                  std::size_t batch) {
  const std::size_t rows = batch * spec.prefix(k);
  const std::size_t v_len = spec.branch_in();
  const std::size_t u_len = spec.branch_out();
  const std::size_t b = spec.suffix(k);
  const double s = spec.scale();
  if (b == 1) {
    kernels::gemm(false, true, rows, u_len, v_len, s, xp, branch, 1.0, yp);
    return;
  }
  std::vector<double> xt(rows * v_len * b);
  std::vector<double> yt(rows * b * u_len);
  std::vector<double> back(rows * u_len * b);
  kernels::transpose_inner(xp, xt.data(), rows, v_len, b);
  kernels::gemm(false, true, rows * b, u_len, v_len, s, xt.data(), branch, 0.0, yt.data());
  kernels::transpose_inner(yt.data(), back.data(), rows, b, u_len);
  for (std::size_t i = 0; i < back.size(); ++i) yp[i] += back[i];
}

}  // namespace

Tensor forward(const MixtOperator& op, const Tensor& x) {
  const MixtSpec& spec = op.spec();
  check_input(spec, x);
  const std::size_t batch = x.dim(0);
  const Tensor xp = spec.in_dim() == spec.in_dim_raw ? x : pad_axis(x, 1, spec.in_dim());
  Tensor yp = Tensor::matrix(batch, spec.out_dim());
  for (std::size_t k = 0; k < spec.n_t; ++k) apply_branch(spec, k, op.branch(k).ptr(), xp.ptr(), yp.ptr(), batch);
  return spec.out_dim() == spec.out_dim_raw ? yp : slice_axis(yp, 1, spec.out_dim_raw);
}

MixtGradients backward(const MixtOperator& op, const Tensor& x, const Tensor& grad_out) {
  const MixtSpec& spec = op.spec();
  check_input(spec, x);
  const std::size_t batch = x.dim(0);
  if (grad_out.rank() != 2 || grad_out.dim(0) != batch || grad_out.dim(1) != spec.out_dim_raw) {
    throw Error(Errc::DimensionMismatch, "output gradient has wrong shape");
  }
  const Tensor xp = spec.in_dim() == spec.in_dim_raw ? x : pad_axis(x, 1, spec.in_dim());
  const Tensor gp = spec.out_dim() == spec.out_dim_raw ? grad_out : pad_axis(grad_out, 1, spec.out_dim());
  Tensor dxp = Tensor::matrix(batch, spec.in_dim());

  MixtGradients g;
  const double s = spec.scale();
  const std::size_t v_len = spec.branch_in();
  const std::size_t u_len = spec.branch_out();
  for (std::size_t k = 0; k < spec.n_t; ++k) {
    const std::size_t rows = batch * spec.prefix(k);
    const std::size_t b = spec.suffix(k);
    const double* m = op.branch(k).ptr();
    Tensor dm(spec.branch_shape());
    if (b == 1) {
      kernels::gemm(true, false, u_len, v_len, rows, s, gp.ptr(), xp.ptr(), 0.0, dm.ptr());
      kernels::gemm(false, false, rows, v_len, u_len, s, gp.ptr(), m, 1.0, dxp.ptr());
    } else {
      std::vector<double> xt(rows * v_len * b);
      std::vector<double> gt(rows * u_len * b);
      std::vector<double> dxt(rows * b * v_len);
      std::vector<double> dx_back(rows * v_len * b);
      kernels::transpose_inner(xp.ptr(), xt.data(), rows, v_len, b);
      kernels::transpose_inner(gp.ptr(), gt.data(), rows, u_len, b);
      kernels::gemm(true, false, u_len, v_len, rows * b, s, gt.data(), xt.data(), 0.0, dm.ptr());
      kernels::gemm(false, false, rows * b, v_len, u_len, s, gt.data(), m, 0.0, dxt.data());
      kernels::transpose_inner(dxt.data(), dx_back.data(), rows, b, v_len);
      double* dst = dxp.ptr();
      for (std::size_t i = 0; i < dx_back.size(); ++i) dst[i] += dx_back[i];
    }
    g.branches.push_back(std::move(dm));
  }
  g.input = spec.in_dim() == spec.in_dim_raw ? std::move(dxp) : slice_axis(dxp, 1, spec.in_dim_raw);
  return g;
}

void add_kron_sandwich(Tensor& dense_padded, const Tensor& branch_matrix, std::size_t prefix, std::size_t suffix,
                       double scale) {
  const std::size_t u_len = branch_matrix.rank() == 2 ? branch_matrix.dim(0) : 0;
  const std::size_t v_len = branch_matrix.rank() == 2 ? branch_matrix.dim(1) : 0;
  if (u_len == 0 || dense_padded.rank() != 2 || dense_padded.dim(0) != prefix * u_len * suffix ||
      dense_padded.dim(1) != prefix * v_len * suffix) {
    throw Error(Errc::DimensionMismatch, "Kronecker sandwich does not fit the dense matrix");
  }
  for (std::size_t p = 0; p < prefix; ++p) {
    for (std::size_t u = 0; u < u_len; ++u) {
      for (std::size_t v = 0; v < v_len; ++v) {
        const double val = scale * branch_matrix(u, v);
        if (val == 0.0) continue;
        const std::size_t row0 = (p * u_len + u) * suffix;
        const std::size_t col0 = (p * v_len + v) * suffix;
        for (std::size_t q = 0; q < suffix; ++q) dense_padded(row0 + q, col0 + q) += val;
      }
    }
  }
}

Tensor expand_to_dense_padded(const MixtOperator& op) {
  const MixtSpec& spec = op.spec();
  Tensor dense = Tensor::matrix(spec.out_dim(), spec.in_dim());
  for (std::size_t k = 0; k < spec.n_t; ++k) {
    const Tensor mk = reshape(op.branch(k), Shape{spec.branch_out(), spec.branch_in()});
    add_kron_sandwich(dense, mk, spec.prefix(k), spec.suffix(k), spec.scale());
  }
  return dense;
}

Tensor expand_to_dense(const MixtOperator& op) {
  const MixtSpec& spec = op.spec();
  Tensor dense = expand_to_dense_padded(op);
  if (spec.out_dim() != spec.out_dim_raw) dense = slice_axis(dense, 0, spec.out_dim_raw);
  if (spec.in_dim() != spec.in_dim_raw) dense = slice_axis(dense, 1, spec.in_dim_raw);
  return dense;
}

void save_operator(const std::filesystem::path& dir, const MixtOperator& op, const std::string& stem) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "mixt-operator";
  manifest["version"] = 1;
  manifest["spec"] = op.spec();
  auto& refs = manifest["branches"] = nlohmann::json::array();
  for (std::size_t k = 0; k < op.branches().size(); ++k) {
    const std::string name = stem + "_branch_" + std::to_string(k) + ".mixt";
    save_tensor(dir / name, op.branch(k));
    refs.push_back(name);
  }
  std::ofstream os(dir / (stem + ".json"));
  if (!os) throw Error(Errc::FileNotFound, "cannot write operator manifest in " + dir.string());
  os << manifest.dump(2) << '\n';
}

MixtOperator load_operator(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw Error(Errc::FileNotFound, manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(is);
    const auto spec = manifest.at("spec").get<MixtSpec>();
    std::vector<Tensor> branches;
    for (const auto& ref : manifest.at("branches")) {
      branches.push_back(load_tensor(manifest_path.parent_path() / ref.get<std::string>()));
    }
    return MixtOperator(spec, std::move(branches));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, manifest_path.string() + ": " + e.what());
  }
}

}  // namespace mixt
