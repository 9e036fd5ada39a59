// SPDX-License-Identifier: Apache-2.0
#include "mixt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mixt/error.hpp"
#include "mixt/kernels.hpp"

namespace mixt::ad {

namespace {

void add_into(Tensor& dst, const Tensor& src) {
  double* d = dst.ptr();
  const double* s = src.ptr();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw Error(Errc::DimensionMismatch, std::string(what) + " must be a matrix");
}

}  // namespace

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.ref = &p.value;
  if (record_) {
    n.param = &p;
    n.needs_grad = true;
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ref ? *n.ref : n.value;
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.numel() == 0 || !(n.grad.shape() == value(v).shape())) n.grad = Tensor(value(v).shape());
  return n.grad;
}

Var Tape::push(Tensor value, std::vector<Var> inputs, std::function<void(Tape&, Var)> backward_fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    n.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](Var in) { return nodes_[in.id].needs_grad; });
    if (n.needs_grad) n.backward_fn = std::move(backward_fn);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (!record_) throw Error(Errc::InvalidConfig, "backward() on a non-recording tape");
  if (value(loss).numel() != 1) throw Error(Errc::DimensionMismatch, "backward() needs a single-element loss");
  grad(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.numel() == 0) continue;
    if (n.param) {
      if (n.param->grad.numel() == 0 || !(n.param->grad.shape() == n.param->value.shape())) {
        n.param->grad = Tensor(n.param->value.shape());
      }
      add_into(n.param->grad, n.grad);
    } else if (n.backward_fn) {
      n.backward_fn(*this, Var{i});
    }
  }
}

Var embedding(Tape& t, Var table, std::span<const int> ids) {
  const Tensor& w = t.value(table);
  require_matrix(w, "embedding table");
  const std::size_t cols = w.dim(1);
  Tensor out = Tensor::matrix(ids.size(), cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= w.dim(0)) {
      throw Error(Errc::DimensionMismatch, "token id outside the embedding table");
    }
    std::copy_n(w.ptr() + static_cast<std::size_t>(ids[r]) * cols, cols, out.ptr() + r * cols);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return t.push(std::move(out), {table}, [table, idv = std::move(idv), cols](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    Tensor& gw = tp.grad(table);
    for (std::size_t r = 0; r < idv.size(); ++r) {
      double* dst = gw.ptr() + static_cast<std::size_t>(idv[r]) * cols;
      const double* src = g.ptr() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (!(va.shape() == vb.shape())) throw Error(Errc::ShapeMismatch, "add operands differ in shape");
  Tensor out = va;
  add_into(out, vb);
  return t.push(std::move(out), {a, b}, [a, b](Tape& tp, Var self) {
    const Tensor g = tp.grad(self);
    if (tp.needs_grad(a)) add_into(tp.grad(a), g);
    if (tp.needs_grad(b)) add_into(tp.grad(b), g);
  });
}

Var linear(Tape& t, Var x, Var w) {
  const Tensor& vx = t.value(x);
  const Tensor& vw = t.value(w);
  require_matrix(vx, "linear input");
  require_matrix(vw, "linear weight");
  if (vx.dim(1) != vw.dim(1)) throw Error(Errc::DimensionMismatch, "linear input width mismatch");
  const std::size_t rows = vx.dim(0), in = vw.dim(1), out_w = vw.dim(0);
  Tensor out = Tensor::matrix(rows, out_w);
  kernels::gemm(false, true, rows, out_w, in, 1.0, vx.ptr(), vw.ptr(), 0.0, out.ptr());
  return t.push(std::move(out), {x, w}, [x, w, rows, in, out_w](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(x)) {
      kernels::gemm(false, false, rows, in, out_w, 1.0, g.ptr(), tp.value(w).ptr(), 1.0, tp.grad(x).ptr());
    }
    if (tp.needs_grad(w)) {
      kernels::gemm(true, false, out_w, in, rows, 1.0, g.ptr(), tp.value(x).ptr(), 1.0, tp.grad(w).ptr());
    }
  });
}

Var mixt_linear(Tape& t, Var x, std::span<const Var> branches, const MixtSpec& spec) {
  std::vector<Tensor> values;
  values.reserve(branches.size());
  for (Var b : branches) values.push_back(t.value(b));
  MixtOperator op(spec, std::move(values));
  Tensor out = forward(op, t.value(x));

  std::vector<Var> inputs{x};
  inputs.insert(inputs.end(), branches.begin(), branches.end());
  std::vector<Var> bv(branches.begin(), branches.end());
  return t.push(std::move(out), inputs, [x, bv = std::move(bv), op = std::move(op)](Tape& tp, Var self) {
    MixtGradients g = backward(op, tp.value(x), tp.grad(self));
    if (tp.needs_grad(x)) add_into(tp.grad(x), g.input);
    for (std::size_t k = 0; k < bv.size(); ++k) {
      if (tp.needs_grad(bv[k])) add_into(tp.grad(bv[k]), g.branches[k]);
    }
  });
}

Var rms_norm(Tape& t, Var x, Var gain, double eps) {
  const Tensor& vx = t.value(x);
  const Tensor& vg = t.value(gain);
  require_matrix(vx, "rms_norm input");
  const std::size_t rows = vx.dim(0), cols = vx.dim(1);
  if (vg.numel() != cols) throw Error(Errc::DimensionMismatch, "rms_norm gain width mismatch");
  Tensor out = Tensor::matrix(rows, cols);
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = vx.ptr() + r * cols;
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += xr[c] * xr[c];
    inv[r] = 1.0 / std::sqrt(ss / static_cast<double>(cols) + eps);
    double* o = out.ptr() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) o[c] = xr[c] * inv[r] * vg[c];
  }
  return t.push(std::move(out), {x, gain}, [x, gain, inv = std::move(inv), rows, cols](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& vx = tp.value(x);
    const Tensor& vg = tp.value(gain);
    const bool want_x = tp.needs_grad(x);
    const bool want_g = tp.needs_grad(gain);
    Tensor* gx = want_x ? &tp.grad(x) : nullptr;
    Tensor* gg = want_g ? &tp.grad(gain) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = vx.ptr() + r * cols;
      const double* gr = g.ptr() + r * cols;
      if (want_g) {
        for (std::size_t c = 0; c < cols; ++c) (*gg)[c] += gr[c] * xr[c] * inv[r];
      }
      if (want_x) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * vg[c] * xr[c];
        const double coef = inv[r] * inv[r] * inv[r] * dot / static_cast<double>(cols);
        double* dx = gx->ptr() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dx[c] += inv[r] * vg[c] * gr[c] - coef * xr[c];
      }
    }
  });
}

Var swiglu(Tape& t, Var gate, Var up) {
  const Tensor& vg = t.value(gate);
  const Tensor& vu = t.value(up);
  if (!(vg.shape() == vu.shape())) throw Error(Errc::ShapeMismatch, "swiglu operands differ in shape");
  Tensor out(vg.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-vg[i]));
    out[i] = vg[i] * s * vu[i];
  }
  return t.push(std::move(out), {gate, up}, [gate, up](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    const Tensor& vg = tp.value(gate);
    const Tensor& vu = tp.value(up);
    const bool want_g = tp.needs_grad(gate);
    const bool want_u = tp.needs_grad(up);
    Tensor* gg = want_g ? &tp.grad(gate) : nullptr;
    Tensor* gu = want_u ? &tp.grad(up) : nullptr;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-vg[i]));
      if (want_u) (*gu)[i] += g[i] * vg[i] * s;
      if (want_g) (*gg)[i] += g[i] * vu[i] * s * (1.0 + vg[i] * (1.0 - s));
    }
  });
}

Var causal_attention(Tape& t, Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads) {
  const Tensor& vq = t.value(q);
  const Tensor& vk = t.value(k);
  const Tensor& vv = t.value(v);
  require_matrix(vq, "attention query");
  const std::size_t hidden = vq.dim(1);
  if (vq.dim(0) != batch * seq || !(vk.shape() == vq.shape()) || !(vv.shape() == vq.shape())) {
    throw Error(Errc::DimensionMismatch, "attention inputs must all be [batch*seq, hidden]");
  }
  if (heads == 0 || hidden % heads != 0) throw Error(Errc::DimensionMismatch, "hidden not divisible by heads");
  const std::size_t dh = hidden / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[b, h, i, j] for j <= i, zero above the diagonal.
  std::vector<double> probs(batch * heads * seq * seq, 0.0);
  Tensor out = Tensor::matrix(batch * seq, hidden);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        double* p = probs.data() + ((b * heads + h) * seq + i) * seq;
        const double* qi = vq.ptr() + (b * seq + i) * hidden + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = vk.ptr() + (b * seq + j) * hidden + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        double* oi = out.ptr() + (b * seq + i) * hidden + h * dh;
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] /= z;
          const double* vj = vv.ptr() + (b * seq + j) * hidden + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  return t.push(std::move(out), {q, k, v},
                [q, k, v, batch, seq, heads, hidden, dh, scale, probs = std::move(probs)](Tape& tp, Var self) {
                  const Tensor& g = tp.grad(self);
                  const Tensor& vq = tp.value(q);
                  const Tensor& vk = tp.value(k);
                  const Tensor& vv = tp.value(v);
                  Tensor gq(vq.shape()), gk(vk.shape()), gv(vv.shape());
                  std::vector<double> dp(seq);
                  for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t h = 0; h < heads; ++h) {
                      for (std::size_t i = 0; i < seq; ++i) {
                        const double* p = probs.data() + ((b * heads + h) * seq + i) * seq;
                        const double* gi = g.ptr() + (b * seq + i) * hidden + h * dh;
                        double dot = 0.0;
                        for (std::size_t j = 0; j <= i; ++j) {
                          const double* vj = vv.ptr() + (b * seq + j) * hidden + h * dh;
                          double* gvj = gv.ptr() + (b * seq + j) * hidden + h * dh;
                          double s = 0.0;
                          for (std::size_t c = 0; c < dh; ++c) {
                            s += gi[c] * vj[c];
                            gvj[c] += p[j] * gi[c];
                          }
                          dp[j] = s;
                          dot += p[j] * s;
                        }
                        const double* qi = vq.ptr() + (b * seq + i) * hidden + h * dh;
                        double* gqi = gq.ptr() + (b * seq + i) * hidden + h * dh;
                        for (std::size_t j = 0; j <= i; ++j) {
                          const double ds = p[j] * (dp[j] - dot) * scale;
                          if (ds == 0.0) continue;
                          const double* kj = vk.ptr() + (b * seq + j) * hidden + h * dh;
                          double* gkj = gk.ptr() + (b * seq + j) * hidden + h * dh;
                          for (std::size_t c = 0; c < dh; ++c) {
                            gqi[c] += ds * kj[c];
                            gkj[c] += ds * qi[c];
                          }
                        }
                      }
                    }
                  }
                  if (tp.needs_grad(q)) add_into(tp.grad(q), gq);
                  if (tp.needs_grad(k)) add_into(tp.grad(k), gk);
                  if (tp.needs_grad(v)) add_into(tp.grad(v), gv);
                });
}

Var take_rows(Tape& t, Var x, std::span<const std::size_t> rows) {
  const Tensor& vx = t.value(x);
  require_matrix(vx, "take_rows input");
  const std::size_t cols = vx.dim(1);
  Tensor out = Tensor::matrix(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= vx.dim(0)) throw Error(Errc::AxisOutOfRange, "row index out of range");
    std::copy_n(vx.ptr() + rows[r] * cols, cols, out.ptr() + r * cols);
  }
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  return t.push(std::move(out), {x}, [x, rv = std::move(rv), cols](Tape& tp, Var self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(x);
    for (std::size_t r = 0; r < rv.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[rv[r] * cols + c] += g[r * cols + c];
    }
  });
}

Var cross_entropy(Tape& t, Var logits, std::span<const int> targets) {
  const Tensor& vl = t.value(logits);
  require_matrix(vl, "logits");
  const std::size_t rows = vl.dim(0), cols = vl.dim(1);
  if (targets.size() != rows) throw Error(Errc::DimensionMismatch, "one target per logit row required");
  Tensor probs = Tensor::matrix(rows, cols);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* lr = vl.ptr() + r * cols;
    const double mx = *std::max_element(lr, lr + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      probs(r, c) = std::exp(lr[c] - mx);
      z += probs(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) probs(r, c) /= z;
    const auto tgt = static_cast<std::size_t>(targets[r]);
    if (targets[r] < 0 || tgt >= cols) throw Error(Errc::DimensionMismatch, "target outside logit range");
    loss += -(lr[tgt] - mx - std::log(z));
  }
  loss /= static_cast<double>(rows);
  std::vector<int> tv(targets.begin(), targets.end());
  return t.push(Tensor(Shape{1}, {loss}), {logits},
                [logits, probs = std::move(probs), tv = std::move(tv), rows, cols](Tape& tp, Var self) {
                  const double g = tp.grad(self)[0] / static_cast<double>(rows);
                  Tensor& gl = tp.grad(logits);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) gl(r, c) += g * probs(r, c);
                    gl(r, static_cast<std::size_t>(tv[r])) -= g;
                  }
                });
}

Var squared_error(Tape& t, Var pred, const Tensor& target) {
  const Tensor& vp = t.value(pred);
  if (vp.numel() != target.numel()) throw Error(Errc::ShapeMismatch, "prediction and target sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < vp.numel(); ++i) s += (vp[i] - target[i]) * (vp[i] - target[i]);
  return t.push(Tensor(Shape{1}, {s}), {pred}, [pred, target](Tape& tp, Var self) {
    const double g = tp.grad(self)[0];
    const Tensor& vp = tp.value(pred);
    Tensor& gp = tp.grad(pred);
    for (std::size_t i = 0; i < vp.numel(); ++i) gp[i] += 2.0 * g * (vp[i] - target[i]);
  });
}

}  // namespace mixt::ad
