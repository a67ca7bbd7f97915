#include "fel/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "fel/kernels.hpp"

namespace fel {

std::string shape_str(const std::vector<Index>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

Index shape_numel(const std::vector<Index>& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e <= 0) throw Error("SHAPE_INVALID", "non-positive extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

void check_values_finite(const std::vector<Scalar>& v, const char* what) {
  for (Scalar x : v) {
    if (!std::isfinite(x)) throw Error("NONFINITE", std::string("non-finite value in ") + what);
  }
}

}  // namespace

Tensor Tensor::zeros(std::vector<Index> shape) {
  auto d = std::make_shared<TensorData>();
  const Index n = shape_numel(shape);
  d->shape = std::move(shape);
  d->values.assign(static_cast<std::size_t>(n), 0.0);
  return Tensor(std::move(d));
}

Tensor Tensor::full(std::vector<Index> shape, Scalar v) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

Tensor Tensor::from_values(std::vector<Index> shape, std::vector<Scalar> values) {
  const Index n = shape_numel(shape);
  if (n != static_cast<Index>(values.size())) {
    throw Error("SHAPE_MISMATCH", "value count " + std::to_string(values.size()) +
                                      " does not match shape " + shape_str(shape));
  }
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  return Tensor(std::move(d));
}

std::vector<Scalar>& Tensor::grad() {
  if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
  return d_->grad;
}

const std::vector<Scalar>& Tensor::grad() const {
  if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
  return d_->grad;
}

void Tensor::zero_grad() {
  if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Scalar Tensor::item() const {
  if (numel() != 1) throw Error("NOT_SCALAR", "item() on tensor of shape " + shape_str(shape()));
  return d_->values[0];
}

void Tensor::check_finite(const char* what) const { check_values_finite(d_->values, what); }

bool wants_grad(const Tensor& t) {
  return t.ptr()->requires_grad || t.ptr()->interior;
}

namespace {

std::vector<Scalar>& grad_of(const std::shared_ptr<TensorData>& d) {
  if (d->grad.empty()) d->grad.assign(d->values.size(), 0.0);
  return d->grad;
}

bool tracked(const std::shared_ptr<TensorData>& d) { return d->requires_grad || d->interior; }

}  // namespace

Tensor Graph::make_out(std::vector<Index> shape) { return Tensor::zeros(std::move(shape)); }

void Graph::record(const Tensor& out, std::function<void()> bw) {
  if (!recording_) return;
  out.ptr()->interior = true;
  nodes_.push_back(Node{out.ptr(), std::move(bw)});
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw Error("NOT_SCALAR", "backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  // Interior grads are scratch; leaves accumulate across calls.
  for (auto& node : nodes_) {
    auto& g = grad_of(node.out);
    std::fill(g.begin(), g.end(), 0.0);
  }
  grad_of(loss.ptr())[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->backward) it->backward();
  }
}

// ---------------------------------------------------------------------------
// matmul family

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.extent(1) != b.extent(0)) {
    throw Error("SHAPE_MISMATCH",
                "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const Index m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out = make_out({m, n});
  kern::bmm_nn(a.data(), b.data(), out.data(), 1, m, k, n, false);
  auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
  record(out, [ad, bd, od, m, k, n] {
    const double* dout = od->grad.data();
    if (tracked(ad)) kern::bmm_nt(dout, bd->values.data(), grad_of(ad).data(), 1, m, n, k, true);
    if (tracked(bd)) kern::bmm_tn(ad->values.data(), dout, grad_of(bd).data(), 1, k, m, n, true);
  });
  return out;
}

Tensor Graph::bmm(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.extent(0) != b.extent(0) || a.extent(2) != b.extent(1)) {
    throw Error("SHAPE_MISMATCH", "bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const Index batch = a.extent(0), m = a.extent(1), k = a.extent(2), n = b.extent(2);
  Tensor out = make_out({batch, m, n});
  kern::bmm_nn(a.data(), b.data(), out.data(), batch, m, k, n, false);
  auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
  record(out, [ad, bd, od, batch, m, k, n] {
    const double* dout = od->grad.data();
    if (tracked(ad))
      kern::bmm_nt(dout, bd->values.data(), grad_of(ad).data(), batch, m, n, k, true);
    if (tracked(bd))
      kern::bmm_tn(ad->values.data(), dout, grad_of(bd).data(), batch, k, m, n, true);
  });
  return out;
}

Tensor Graph::bmm_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.extent(0) != b.extent(0) || a.extent(2) != b.extent(2)) {
    throw Error("SHAPE_MISMATCH", "bmm_nt: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const Index batch = a.extent(0), m = a.extent(1), k = a.extent(2), n = b.extent(1);
  Tensor out = make_out({batch, m, n});
  kern::bmm_nt(a.data(), b.data(), out.data(), batch, m, k, n, false);
  auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
  record(out, [ad, bd, od, batch, m, k, n] {
    const double* dout = od->grad.data();
    // c = a b^T: da = dc b, db = dc^T a
    if (tracked(ad))
      kern::bmm_nn(dout, bd->values.data(), grad_of(ad).data(), batch, m, n, k, true);
    if (tracked(bd))
      kern::bmm_tn(dout, ad->values.data(), grad_of(bd).data(), batch, n, m, k, true);
  });
  return out;
}

// ---------------------------------------------------------------------------
// elementwise and broadcast

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error("SHAPE_MISMATCH", "add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = make_out(a.shape());
  const Index n = a.numel();
  const double* ap = a.data();
  const double* bp = b.data();
  double* op = out.data();
  for (Index i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
  auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
  record(out, [ad, bd, od, n] {
    const double* dout = od->grad.data();
    if (tracked(ad)) {
      double* g = grad_of(ad).data();
      for (Index i = 0; i < n; ++i) g[i] += dout[i];
    }
    if (tracked(bd)) {
      double* g = grad_of(bd).data();
      for (Index i = 0; i < n; ++i) g[i] += dout[i];
    }
  });
  return out;
}

Tensor Graph::bias_add(const Tensor& x, const Tensor& bias) {
  const Index d = x.extent(x.ndim() - 1);
  if (bias.ndim() != 1 || bias.extent(0) != d) {
    throw Error("SHAPE_MISMATCH",
                "bias_add: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  }
  Tensor out = make_out(x.shape());
  const Index rows = x.numel() / d;
  const double* xp = x.data();
  const double* bp = bias.data();
  double* op = out.data();
  for (Index r = 0; r < rows; ++r) {
    for (Index j = 0; j < d; ++j) op[r * d + j] = xp[r * d + j] + bp[j];
  }
  auto xd = x.ptr(), bd = bias.ptr(), od = out.ptr();
  record(out, [xd, bd, od, rows, d] {
    const double* dout = od->grad.data();
    if (tracked(xd)) {
      double* g = grad_of(xd).data();
      const Index n = rows * d;
      for (Index i = 0; i < n; ++i) g[i] += dout[i];
    }
    if (tracked(bd)) {
      double* g = grad_of(bd).data();
      for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < d; ++j) g[j] += dout[r * d + j];
    }
  });
  return out;
}

Tensor Graph::scale(const Tensor& x, Scalar c) {
  Tensor out = make_out(x.shape());
  const Index n = x.numel();
  const double* xp = x.data();
  double* op = out.data();
  for (Index i = 0; i < n; ++i) op[i] = c * xp[i];
  auto xd = x.ptr(), od = out.ptr();
  record(out, [xd, od, c, n] {
    if (!tracked(xd)) return;
    const double* dout = od->grad.data();
    double* g = grad_of(xd).data();
    for (Index i = 0; i < n; ++i) g[i] += c * dout[i];
  });
  return out;
}

Tensor Graph::gelu(const Tensor& x) {
  Tensor out = make_out(x.shape());
  const Index n = x.numel();
  kern::gelu(x.data(), out.data(), n);
  auto xd = x.ptr(), od = out.ptr();
  record(out, [xd, od, n] {
    if (!tracked(xd)) return;
    const double* dout = od->grad.data();
    const double* xp = xd->values.data();
    double* g = grad_of(xd).data();
    constexpr double inv_sqrt2 = 0.70710678118654752440084436210485;
    constexpr double inv_sqrt2pi = 0.39894228040143267793994605993438;
    for (Index i = 0; i < n; ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(xp[i] * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * xp[i] * xp[i]);
      g[i] += dout[i] * (cdf + xp[i] * pdf);
    }
  });
  return out;
}

Tensor Graph::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps) {
  const Index d = x.extent(x.ndim() - 1);
  if (gain.numel() != d || bias.numel() != d) {
    throw Error("SHAPE_MISMATCH", "layer_norm: last axis " + std::to_string(d) +
                                      " vs gain " + shape_str(gain.shape()) + ", bias " +
                                      shape_str(bias.shape()));
  }
  const Index rows = x.numel() / d;
  Tensor out = make_out(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows * d));
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  kern::layer_norm(x.data(), gain.data(), bias.data(), eps, out.data(), xhat->data(),
                   rstd->data(), rows, d);
  auto xd = x.ptr(), gd = gain.ptr(), bd = bias.ptr(), od = out.ptr();
  record(out, [xd, gd, bd, od, xhat, rstd, rows, d] {
    const double* dout = od->grad.data();
    const double* gp = gd->values.data();
    if (tracked(xd)) {
      double* gx = grad_of(xd).data();
      for (Index r = 0; r < rows; ++r) {
        const double* dy = dout + r * d;
        const double* xh = xhat->data() + r * d;
        double m1 = 0.0, m2 = 0.0;
        for (Index j = 0; j < d; ++j) {
          const double dh = dy[j] * gp[j];
          m1 += dh;
          m2 += dh * xh[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        const double rs = (*rstd)[static_cast<std::size_t>(r)];
        for (Index j = 0; j < d; ++j) {
          const double dh = dy[j] * gp[j];
          gx[r * d + j] += rs * (dh - m1 - xh[j] * m2);
        }
      }
    }
    if (tracked(gd)) {
      double* gg = grad_of(gd).data();
      for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < d; ++j) gg[j] += dout[r * d + j] * (*xhat)[r * d + j];
    }
    if (tracked(bd)) {
      double* gb = grad_of(bd).data();
      for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < d; ++j) gb[j] += dout[r * d + j];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// attention softmax

Tensor Graph::attention_softmax(const Tensor& scores, const std::vector<std::uint8_t>& key_ok,
                                Index heads) {
  if (scores.ndim() != 3 || scores.extent(1) != scores.extent(2)) {
    throw Error("SHAPE_MISMATCH", "attention_softmax: scores " + shape_str(scores.shape()));
  }
  const Index bh = scores.extent(0), seq = scores.extent(1);
  if (bh % heads != 0) throw Error("SHAPE_MISMATCH", "attention_softmax: batch*heads mismatch");
  const Index batch = bh / heads;
  if (static_cast<Index>(key_ok.size()) != batch * seq) {
    throw Error("SHAPE_MISMATCH", "attention_softmax: key mask size");
  }
  Tensor out = make_out(scores.shape());
  const double* sp = scores.data();
  double* op = out.data();
  const Index rows = bh * seq;
#pragma omp parallel for schedule(static) if (kern::parallel_enabled())
  for (Index r = 0; r < rows; ++r) {
    const Index b = r / (heads * seq);
    const std::uint8_t* ok = key_ok.data() + b * seq;
    const double* xr = sp + r * seq;
    double* yr = op + r * seq;
    double mx = -1e300;
    for (Index j = 0; j < seq; ++j)
      if (ok[j]) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (Index j = 0; j < seq; ++j) {
      yr[j] = ok[j] ? std::exp(xr[j] - mx) : 0.0;
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (Index j = 0; j < seq; ++j) yr[j] *= inv;
  }
  auto sd = scores.ptr(), od = out.ptr();
  record(out, [sd, od, rows, seq] {
    if (!tracked(sd)) return;
    const double* dout = od->grad.data();
    const double* probs = od->values.data();
    double* g = grad_of(sd).data();
#pragma omp parallel for schedule(static) if (kern::parallel_enabled())
    for (Index r = 0; r < rows; ++r) {
      const double* p = probs + r * seq;
      const double* dp = dout + r * seq;
      double dot = 0.0;
      for (Index j = 0; j < seq; ++j) dot += dp[j] * p[j];
      for (Index j = 0; j < seq; ++j) g[r * seq + j] += p[j] * (dp[j] - dot);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// dropout

Tensor Graph::dropout(const Tensor& x, Scalar rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw Error("DROPOUT_RATE", "dropout rate must be in [0,1)");
  if (!train || rate == 0.0) return x;  // eval mode is the identity
  const Index n = x.numel();
  auto mask = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(n));
  // Mask draws are sequential so the stream of random numbers is stable.
  for (Index i = 0; i < n; ++i) (*mask)[static_cast<std::size_t>(i)] = rng.uniform() >= rate;
  const double keep_inv = 1.0 / (1.0 - rate);
  Tensor out = make_out(x.shape());
  const double* xp = x.data();
  double* op = out.data();
  for (Index i = 0; i < n; ++i)
    op[i] = (*mask)[static_cast<std::size_t>(i)] ? xp[i] * keep_inv : 0.0;
  auto xd = x.ptr(), od = out.ptr();
  record(out, [xd, od, mask, keep_inv, n] {
    if (!tracked(xd)) return;
    const double* dout = od->grad.data();
    double* g = grad_of(xd).data();
    for (Index i = 0; i < n; ++i)
      if ((*mask)[static_cast<std::size_t>(i)]) g[i] += dout[i] * keep_inv;
  });
  return out;
}

// ---------------------------------------------------------------------------
// gathers

Tensor Graph::embedding(const Tensor& table, const std::vector<std::int32_t>& ids) {
  if (table.ndim() != 2) throw Error("SHAPE_MISMATCH", "embedding table must be 2-D");
  const Index vocab = table.extent(0), d = table.extent(1);
  const Index n = static_cast<Index>(ids.size());
  for (std::int32_t id : ids) {
    if (id < 0 || id >= vocab) {
      throw Error("ID_RANGE", "embedding id " + std::to_string(id) + " outside [0," +
                                  std::to_string(vocab) + ")");
    }
  }
  Tensor out = make_out({n, d});
  const double* tp = table.data();
  double* op = out.data();
  for (Index i = 0; i < n; ++i)
    std::memcpy(op + i * d, tp + static_cast<Index>(ids[static_cast<std::size_t>(i)]) * d,
                sizeof(double) * static_cast<std::size_t>(d));
  auto td = table.ptr(), od = out.ptr();
  auto ids_copy = std::make_shared<std::vector<std::int32_t>>(ids);
  record(out, [td, od, ids_copy, n, d] {
    if (!tracked(td)) return;
    const double* dout = od->grad.data();
    double* g = grad_of(td).data();
    for (Index i = 0; i < n; ++i) {
      double* grow = g + static_cast<Index>((*ids_copy)[static_cast<std::size_t>(i)]) * d;
      const double* drow = dout + i * d;
      for (Index j = 0; j < d; ++j) grow[j] += drow[j];
    }
  });
  return out;
}

Tensor Graph::gather_rows(const Tensor& x, const std::vector<Index>& rows) {
  if (x.ndim() != 2) throw Error("SHAPE_MISMATCH", "gather_rows expects a 2-D tensor");
  const Index nrows = x.extent(0), d = x.extent(1);
  for (Index r : rows) {
    if (r < 0 || r >= nrows) throw Error("ID_RANGE", "gather_rows index out of range");
  }
  const Index n = static_cast<Index>(rows.size());
  Tensor out = make_out({n, d});
  const double* xp = x.data();
  double* op = out.data();
  for (Index i = 0; i < n; ++i)
    std::memcpy(op + i * d, xp + rows[static_cast<std::size_t>(i)] * d,
                sizeof(double) * static_cast<std::size_t>(d));
  auto xd = x.ptr(), od = out.ptr();
  auto rows_copy = std::make_shared<std::vector<Index>>(rows);
  record(out, [xd, od, rows_copy, n, d] {
    if (!tracked(xd)) return;
    const double* dout = od->grad.data();
    double* g = grad_of(xd).data();
    for (Index i = 0; i < n; ++i) {
      double* grow = g + (*rows_copy)[static_cast<std::size_t>(i)] * d;
      const double* drow = dout + i * d;
      for (Index j = 0; j < d; ++j) grow[j] += drow[j];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// head reshapes

Tensor Graph::split_heads(const Tensor& x, Index batch, Index seq, Index heads) {
  if (x.ndim() != 2 || x.extent(0) != batch * seq || x.extent(1) % heads != 0) {
    throw Error("SHAPE_MISMATCH", "split_heads: " + shape_str(x.shape()));
  }
  const Index dh = x.extent(1) / heads;
  Tensor out = make_out({batch * heads, seq, dh});
  const double* xp = x.data();
  double* op = out.data();
#pragma omp parallel for schedule(static) if (kern::parallel_enabled())
  for (Index r = 0; r < batch * seq; ++r) {
    const Index b = r / seq, s = r % seq;
    for (Index h = 0; h < heads; ++h)
      std::memcpy(op + ((b * heads + h) * seq + s) * dh, xp + r * heads * dh + h * dh,
                  sizeof(double) * static_cast<std::size_t>(dh));
  }
  auto xd = x.ptr(), od = out.ptr();
  record(out, [xd, od, batch, seq, heads, dh] {
    if (!tracked(xd)) return;
    const double* dout = od->grad.data();
    double* g = grad_of(xd).data();
#pragma omp parallel for schedule(static) if (kern::parallel_enabled())
    for (Index r = 0; r < batch * seq; ++r) {
      const Index b = r / seq, s = r % seq;
      for (Index h = 0; h < heads; ++h) {
        const double* drow = dout + ((b * heads + h) * seq + s) * dh;
        double* grow = g + r * heads * dh + h * dh;
        for (Index j = 0; j < dh; ++j) grow[j] += drow[j];
      }
    }
  });
  return out;
}

Tensor Graph::merge_heads(const Tensor& x, Index batch, Index seq, Index heads) {
  if (x.ndim() != 3 || x.extent(0) != batch * heads || x.extent(1) != seq) {
    throw Error("SHAPE_MISMATCH", "merge_heads: " + shape_str(x.shape()));
  }
  const Index dh = x.extent(2);
  Tensor out = make_out({batch * seq, heads * dh});
  const double* xp = x.data();
  double* op = out.data();
#pragma omp parallel for schedule(static) if (kern::parallel_enabled())
  for (Index r = 0; r < batch * seq; ++r) {
    const Index b = r / seq, s = r % seq;
    for (Index h = 0; h < heads; ++h)
      std::memcpy(op + r * heads * dh + h * dh, xp + ((b * heads + h) * seq + s) * dh,
                  sizeof(double) * static_cast<std::size_t>(dh));
  }
  auto xd = x.ptr(), od = out.ptr();
  record(out, [xd, od, batch, seq, heads, dh] {
    if (!tracked(xd)) return;
    const double* dout = od->grad.data();
    double* g = grad_of(xd).data();
#pragma omp parallel for schedule(static) if (kern::parallel_enabled())
    for (Index r = 0; r < batch * seq; ++r) {
      const Index b = r / seq, s = r % seq;
      for (Index h = 0; h < heads; ++h) {
        const double* drow = dout + r * heads * dh + h * dh;
        double* grow = g + ((b * heads + h) * seq + s) * dh;
        for (Index j = 0; j < dh; ++j) grow[j] += drow[j];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// reductions and loss

Tensor Graph::sum(const Tensor& x) {
  Tensor out = make_out({1});
  const Index n = x.numel();
  const double* xp = x.data();
  double acc = 0.0;
  for (Index i = 0; i < n; ++i) acc += xp[i];
  out.data()[0] = acc;
  auto xd = x.ptr(), od = out.ptr();
  record(out, [xd, od, n] {
    if (!tracked(xd)) return;
    const double dout = od->grad[0];
    double* g = grad_of(xd).data();
    for (Index i = 0; i < n; ++i) g[i] += dout;
  });
  return out;
}

XentOut Graph::softmax_xent(const Tensor& logits, const std::vector<std::int32_t>& targets,
                            std::int32_t ignore_index) {
  if (logits.ndim() != 2) throw Error("SHAPE_MISMATCH", "softmax_xent expects [n, C] logits");
  const Index n = logits.extent(0), classes = logits.extent(1);
  if (static_cast<Index>(targets.size()) != n) {
    throw Error("SHAPE_MISMATCH", "softmax_xent: " + std::to_string(targets.size()) +
                                      " targets for " + std::to_string(n) + " rows");
  }
  Index supervised = 0;
  for (std::int32_t t : targets) {
    if (t == ignore_index) continue;
    if (t < 0 || t >= classes) {
      throw Error("TARGET_RANGE", "target " + std::to_string(t) + " outside [0," +
                                      std::to_string(classes) + ")");
    }
    ++supervised;
  }
  if (supervised == 0) throw Error("NO_SUPERVISED", "no supervised positions");

  Tensor probs = Tensor::zeros({n, classes});
  kern::softmax_rows(logits.data(), probs.data(), n, classes);

  double nll = 0.0;
  const double* lp = logits.data();
  for (Index r = 0; r < n; ++r) {
    const std::int32_t t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_index) continue;
    const double* row = lp + r * classes;
    double mx = row[0];
    for (Index j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
    double lse = 0.0;
    for (Index j = 0; j < classes; ++j) lse += std::exp(row[j] - mx);
    nll += std::log(lse) - (row[t] - mx);
  }
  Tensor loss = make_out({1});
  loss.data()[0] = nll / static_cast<double>(supervised);

  auto ld = logits.ptr(), od = loss.ptr(), pd = probs.ptr();
  auto targets_copy = std::make_shared<std::vector<std::int32_t>>(targets);
  record(loss, [ld, od, pd, targets_copy, n, classes, ignore_index, supervised] {
    if (!tracked(ld)) return;
    const double dloss = od->grad[0] / static_cast<double>(supervised);
    const double* pp = pd->values.data();
    double* g = grad_of(ld).data();
    for (Index r = 0; r < n; ++r) {
      const std::int32_t t = (*targets_copy)[static_cast<std::size_t>(r)];
      if (t == ignore_index) continue;
      const double* prow = pp + r * classes;
      double* grow = g + r * classes;
      for (Index j = 0; j < classes; ++j) grow[j] += dloss * prow[j];
      grow[t] -= dloss;
    }
  });
  return XentOut{loss, probs, supervised};
}

}  // namespace fel
