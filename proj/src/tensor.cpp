#include "spoofmeta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "spoofmeta/binio.hpp"
#include "spoofmeta/error.hpp"

namespace spoofmeta::tensor {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ')';
  return os.str();
}

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw ValidationError("tensor data size " + std::to_string(data_.size()) +
                          " does not match shape " + shape_str(shape_));
  }
}

double Tensor::item() const {
  if (data_.size() != 1) throw ValidationError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

const Tensor& Var::value() const {
  if (!tape) throw ValidationError("value of an unbound Var");
  return tape->value(*this);
}
const Tensor& Var::grad() const {
  if (!tape) throw ValidationError("gradient of an unbound Var");
  return tape->grad(*this);
}

// --- tape ----------------------------------------------------------------------------

Var Tape::leaf(Tensor value) {
  nodes_.push_back({std::move(value), {}, {}, {}, true, false, "leaf"});
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, {}, {}, false, false, "constant"});
  return {this, nodes_.size() - 1};
}

void Tape::check_owned(Var v, const char* op) const {
  if (v.tape != this || v.id >= nodes_.size()) {
    throw ValidationError(std::string(op) + ": value belongs to a different tape");
  }
}

Var Tape::record(const char* op, Tensor value, std::vector<Var> parents, BackwardFn fn) {
  bool needs = false;
  for (Var p : parents) {
    check_owned(p, op);
    needs = needs || nodes_[p.id].requires_grad;
  }
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + " produced a non-finite value, output shape " +
                       shape_str(value.shape()));
  }
  nodes_.push_back({std::move(value), {}, std::move(parents), needs ? std::move(fn) : BackwardFn{},
                    needs, false, op});
  return {this, nodes_.size() - 1};
}

std::span<double> Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad.data();
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    // Unreached nodes report zeros.
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  check_owned(loss, "backward");
  if (backward_done_) throw ValidationError("backward called twice without zero_grad");
  const Node& root = nodes_[loss.id];
  if (root.value.size() != 1) {
    throw ValidationError("backward needs a scalar loss, got shape " + shape_str(root.value.shape()));
  }
  if (!root.requires_grad) throw ValidationError("loss does not depend on any leaf (detached graph)");
  backward_done_ = true;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    // Copy: the callback may grow other nodes' buffers but never this one.
    const Tensor g = n.grad;
    n.backward(*this, g);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  backward_done_ = false;
}

// --- kernels -------------------------------------------------------------------------

namespace {

// C (n x m) += A (n x k) . B (k x m)
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C (n x m) += A^T . B with A stored (k x n), B (k x m)
void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * n;
    const double* bp = b + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* ci = c + i * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += api * bp[j];
    }
  }
}

// C (n x m) += A . B^T with A (n x k), B stored (m x k)
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * m + j] += s;
    }
  }
}

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw ValidationError(std::string(op) + ": " + detail);
}

void require_rank(const char* op, const Tensor& t, std::size_t rank, const char* name) {
  if (t.rank() != rank) {
    shape_error(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " +
                        shape_str(t.shape()));
  }
}

struct ConvGeom {
  std::size_t batch, channels, h, w, filters, kh, kw, stride, oh, ow;
  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_hw() const { return oh * ow; }
};

// cols (C*kh*kw, oh*ow) of batch item `x`
void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::size_t ohw = g.out_hw();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((c * g.kh + i) * g.kw + j) * ohw;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const double* src = x + (c * g.h + y * g.stride + i) * g.w + j;
          for (std::size_t xo = 0; xo < g.ow; ++xo) row[y * g.ow + xo] = src[xo * g.stride];
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeom& g, double* dx) {
  const std::size_t ohw = g.out_hw();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((c * g.kh + i) * g.kw + j) * ohw;
        for (std::size_t y = 0; y < g.oh; ++y) {
          double* dst = dx + (c * g.h + y * g.stride + i) * g.w + j;
          for (std::size_t xo = 0; xo < g.ow; ++xo) dst[xo * g.stride] += row[y * g.ow + xo];
        }
      }
    }
  }
}

}  // namespace

// --- operations ----------------------------------------------------------------------

Var dense(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  require_rank("dense", xv, 2, "x");
  require_rank("dense", wv, 2, "W");
  require_rank("dense", bv, 1, "b");
  const std::size_t n = xv.dim(0), in = xv.dim(1), out = wv.dim(1);
  if (wv.dim(0) != in || bv.dim(0) != out) {
    shape_error("dense", "x " + shape_str(xv.shape()) + ", W " + shape_str(wv.shape()) + ", b " +
                             shape_str(bv.shape()));
  }
  Tensor y({n, out});
  for (std::size_t i = 0; i < n; ++i) std::copy(bv.data().begin(), bv.data().end(), y.data().begin() + i * out);
  gemm_nn(xv.data().data(), wv.data().data(), y.data().data(), n, in, out);
  return x.tape->record("dense", std::move(y), {x, w, b}, [=](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    if (t.requires_grad(x)) gemm_nt(g.data().data(), wv.data().data(), t.grad_buffer(x).data(), n, out, in);
    if (t.requires_grad(w)) gemm_tn(xv.data().data(), g.data().data(), t.grad_buffer(w).data(), in, n, out);
    if (t.requires_grad(b)) {
      auto gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out; ++j) gb[j] += g[i * out + j];
    }
  });
}

Var conv2d(Var x, Var k, Var b, std::size_t stride) {
  const Tensor& xv = x.value();
  const Tensor& kv = k.value();
  const Tensor& bv = b.value();
  require_rank("conv2d", xv, 4, "x");
  require_rank("conv2d", kv, 4, "kernel");
  require_rank("conv2d", bv, 1, "bias");
  if (stride == 0) shape_error("conv2d", "stride must be >= 1");
  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), kv.dim(0), kv.dim(2), kv.dim(3), stride, 0, 0};
  if (kv.dim(1) != g.channels || bv.dim(0) != g.filters || g.kh > g.h || g.kw > g.w) {
    shape_error("conv2d", "x " + shape_str(xv.shape()) + ", kernel " + shape_str(kv.shape()) +
                              ", bias " + shape_str(bv.shape()));
  }
  g.oh = (g.h - g.kh) / stride + 1;
  g.ow = (g.w - g.kw) / stride + 1;
  const std::size_t in_item = g.channels * g.h * g.w;
  const std::size_t out_item = g.filters * g.out_hw();
  Tensor y({g.batch, g.filters, g.oh, g.ow});
  std::vector<double> cols(g.patch() * g.out_hw());
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col(xv.data().data() + n * in_item, g, cols.data());
    double* yn = y.data().data() + n * out_item;
    for (std::size_t f = 0; f < g.filters; ++f) std::fill(yn + f * g.out_hw(), yn + (f + 1) * g.out_hw(), bv[f]);
    gemm_nn(kv.data().data(), cols.data(), yn, g.filters, g.patch(), g.out_hw());
  }
  return x.tape->record("conv2d", std::move(y), {x, k, b}, [=](Tape& t, const Tensor& gy) {
    const Tensor& xv = t.value(x);
    const Tensor& kv = t.value(k);
    std::vector<double> cols(g.patch() * g.out_hw());
    std::vector<double> dcols(cols.size());
    const bool want_x = t.requires_grad(x), want_k = t.requires_grad(k), want_b = t.requires_grad(b);
    for (std::size_t n = 0; n < g.batch; ++n) {
      const double* gn = gy.data().data() + n * out_item;
      if (want_k) {
        im2col(xv.data().data() + n * in_item, g, cols.data());
        gemm_nt(gn, cols.data(), t.grad_buffer(k).data(), g.filters, g.out_hw(), g.patch());
      }
      if (want_x) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        gemm_tn(kv.data().data(), gn, dcols.data(), g.patch(), g.filters, g.out_hw());
        col2im_add(dcols.data(), g, t.grad_buffer(x).data() + n * in_item);
      }
      if (want_b) {
        auto gb = t.grad_buffer(b);
        for (std::size_t f = 0; f < g.filters; ++f)
          for (std::size_t i = 0; i < g.out_hw(); ++i) gb[f] += gn[f * g.out_hw() + i];
      }
    }
  });
}

Var relu(Var x) {
  Tensor y = x.value();
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return x.tape->record("relu", std::move(y), {x}, [=](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    auto gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0.0 ? g[i] : 0.0;
  });
}

Var maxpool2(Var x) {
  const Tensor& xv = x.value();
  require_rank("maxpool2", xv, 4, "x");
  const std::size_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) shape_error("maxpool2", "input too small: " + shape_str(xv.shape()));
  Tensor y({xv.dim(0), xv.dim(1), oh, ow});
  std::vector<std::size_t> arg(y.size());
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = p * h * w + (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = p * h * w + (2 * i + di) * w + 2 * j + dj;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (p * oh + i) * ow + j;
        y[o] = xv[best];
        arg[o] = best;
      }
    }
  }
  return x.tape->record("maxpool2", std::move(y), {x}, [=, arg = std::move(arg)](Tape& t, const Tensor& g) {
    auto gx = t.grad_buffer(x);
    for (std::size_t o = 0; o < g.size(); ++o) gx[arg[o]] += g[o];
  });
}

Var mean(Var x) {
  const Tensor& xv = x.value();
  if (xv.size() == 0) shape_error("mean", "empty input");
  double s = 0.0;
  for (double v : xv.data()) s += v;
  const double inv = 1.0 / static_cast<double>(xv.size());
  return x.tape->record("mean", Tensor::scalar(s * inv), {x}, [=](Tape& t, const Tensor& g) {
    auto gx = t.grad_buffer(x);
    for (double& v : gx) v += g[0] * inv;
  });
}

Var concat(Var x, Var y) {
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  require_rank("concat", xv, 2, "x");
  require_rank("concat", yv, 2, "y");
  if (xv.dim(0) != yv.dim(0)) shape_error("concat", shape_str(xv.shape()) + " vs " + shape_str(yv.shape()));
  const std::size_t n = xv.dim(0), a = xv.dim(1), b = yv.dim(1);
  Tensor out({n, a + b});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(xv.data().begin() + i * a, a, out.data().begin() + i * (a + b));
    std::copy_n(yv.data().begin() + i * b, b, out.data().begin() + i * (a + b) + a);
  }
  return x.tape->record("concat", std::move(out), {x, y}, [=](Tape& t, const Tensor& g) {
    if (t.requires_grad(x)) {
      auto gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < a; ++j) gx[i * a + j] += g[i * (a + b) + j];
    }
    if (t.requires_grad(y)) {
      auto gy = t.grad_buffer(y);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < b; ++j) gy[i * b + j] += g[i * (a + b) + a + j];
    }
  });
}

Var sq_euclidean_rows(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank("sq_euclidean_rows", av, 2, "A");
  require_rank("sq_euclidean_rows", bv, 2, "B");
  if (av.dim(1) != bv.dim(1)) {
    shape_error("sq_euclidean_rows", shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  const std::size_t n = av.dim(0), m = bv.dim(0), d = av.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = av[i * d + k] - bv[j * d + k];
        s += diff * diff;
      }
      out[i * m + j] = s;
    }
  return a.tape->record("sq_euclidean_rows", std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const bool want_a = t.requires_grad(a), want_b = t.requires_grad(b);
    std::span<double> ga, gb;
    if (want_a) ga = t.grad_buffer(a);
    if (want_b) gb = t.grad_buffer(b);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double gij = 2.0 * g[i * m + j];
        if (gij == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = av[i * d + k] - bv[j * d + k];
          if (want_a) ga[i * d + k] += gij * diff;
          if (want_b) gb[j * d + k] -= gij * diff;
        }
      }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  require_rank("softmax_cross_entropy", lv, 2, "logits");
  const std::size_t n = lv.dim(0), c = lv.dim(1);
  if (labels.size() != n || n == 0) {
    shape_error("softmax_cross_entropy", "logits " + shape_str(lv.shape()) + " with " +
                                             std::to_string(labels.size()) + " labels");
  }
  std::vector<double> probs(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      shape_error("softmax_cross_entropy", "label " + std::to_string(labels[i]) + " out of range");
    }
    const double* row = lv.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - log_z);
    loss += log_z - row[labels[i]];
  }
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape->record(
      "softmax_cross_entropy", Tensor::scalar(loss * inv), {logits},
      [=, probs = std::move(probs), lab = std::move(lab)](Tape& t, const Tensor& g) {
        auto gl = t.grad_buffer(logits);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const double target = static_cast<int>(j) == lab[i] ? 1.0 : 0.0;
            gl[i * c + j] += g[0] * inv * (probs[i * c + j] - target);
          }
      });
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank("matmul", av, 2, "A");
  require_rank("matmul", bv, 2, "B");
  if (av.dim(1) != bv.dim(0)) shape_error("matmul", shape_str(av.shape()) + " . " + shape_str(bv.shape()));
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  Tensor out({n, m});
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), n, k, m);
  return a.tape->record("matmul", std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) gemm_nt(g.data().data(), t.value(b).data().data(), t.grad_buffer(a).data(), n, m, k);
    if (t.requires_grad(b)) gemm_tn(t.value(a).data().data(), g.data().data(), t.grad_buffer(b).data(), k, n, m);
  });
}

Var reshape(Var x, Shape shape) {
  const Tensor& xv = x.value();
  if (shape_size(shape) != xv.size()) {
    shape_error("reshape", shape_str(xv.shape()) + " -> " + shape_str(shape));
  }
  return x.tape->record("reshape", Tensor(std::move(shape), xv.vec()), {x}, [=](Tape& t, const Tensor& g) {
    auto gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var scale(Var x, double c) {
  Tensor y = x.value();
  for (double& v : y.data()) v *= c;
  return x.tape->record("scale", std::move(y), {x}, [=](Tape& t, const Tensor& g) {
    auto gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

Var add(Var x, Var y) {
  if (x.shape() != y.shape()) shape_error("add", shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y.value()[i];
  return x.tape->record("add", std::move(out), {x, y}, [=](Tape& t, const Tensor& g) {
    for (Var v : {x, y}) {
      if (!t.requires_grad(v)) continue;
      auto gv = t.grad_buffer(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var mul(Var x, Var y) {
  if (x.shape() != y.shape()) shape_error("mul", shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y.value()[i];
  return x.tape->record("mul", std::move(out), {x, y}, [=](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    const Tensor& yv = t.value(y);
    if (t.requires_grad(x)) {
      auto gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i];
    }
    if (t.requires_grad(y)) {
      auto gy = t.grad_buffer(y);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * xv[i];
    }
  });
}

Var repeat_rows(Var x, std::size_t n) {
  const Tensor& xv = x.value();
  require_rank("repeat_rows", xv, 2, "x");
  if (xv.dim(0) != 1) shape_error("repeat_rows", "expects one row, got " + shape_str(xv.shape()));
  const std::size_t d = xv.dim(1);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(xv.data().begin(), d, out.data().begin() + i * d);
  return x.tape->record("repeat_rows", std::move(out), {x}, [=](Tape& t, const Tensor& g) {
    auto gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) gx[j] += g[i * d + j];
  });
}

// --- parameters ----------------------------------------------------------------------

ParamSet zeros_like(const ParamSet& p) {
  ParamSet out;
  for (const auto& [name, t] : p) out.emplace(name, Tensor(t.shape(), 0.0));
  return out;
}

void check_same_layout(const ParamSet& a, const ParamSet& b, const char* what) {
  if (a.size() != b.size()) {
    throw ValidationError(std::string(what) + ": parameter count " + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()));
  }
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) {
      throw ValidationError(std::string(what) + ": " + ia->first + shape_str(ia->second.shape()) +
                            " vs " + ib->first + shape_str(ib->second.shape()));
    }
  }
}

ParamSet axpy(const ParamSet& a, double c, const ParamSet& b) {
  check_same_layout(a, b, "axpy");
  ParamSet out = a;
  for (auto& [name, t] : out) {
    const Tensor& bt = b.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += c * bt[i];
  }
  return out;
}

double l2_norm(const ParamSet& p) {
  double s = 0.0;
  for (const auto& [_, t] : p)
    for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

bool all_finite(const ParamSet& p) {
  return std::all_of(p.begin(), p.end(), [](const auto& kv) { return kv.second.all_finite(); });
}

std::map<std::string, Var> bind(Tape& tape, const ParamSet& p) {
  std::map<std::string, Var> out;
  for (const auto& [name, t] : p) out.emplace(name, tape.leaf(t));
  return out;
}

ParamSet gradients(const Tape& tape, const std::map<std::string, Var>& vars) {
  ParamSet out;
  for (const auto& [name, v] : vars) out.emplace(name, tape.grad(v));
  return out;
}

ParamSet sgd_step(const ParamSet& params, const ParamSet& grads, double lr) {
  check_same_layout(params, grads, "sgd_step");
  ParamSet out = params;
  for (auto& [name, t] : out) {
    const Tensor& g = grads.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = t[i] - lr * g[i];
  }
  return out;
}

ParamSet adam_step(AdamState& s, const ParamSet& params, const ParamSet& grads, double lr) {
  check_same_layout(params, grads, "adam_step");
  if (s.m.empty()) {
    s.m = zeros_like(params);
    s.v = zeros_like(params);
  }
  check_same_layout(params, s.m, "adam_step state");
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  ParamSet out = params;
  for (auto& [name, p] : out) {
    const Tensor& g = grads.at(name);
    Tensor& m = s.m.at(name);
    Tensor& v = s.v.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] = p[i] - lr * m_hat / (std::sqrt(v_hat) + s.eps);
    }
  }
  return out;
}

// --- checkpoints ---------------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[4] = {'S', 'P', 'L', '1'};
}

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& p) {
  binio::Writer w;
  w.str(std::string(kCheckpointMagic, 4));
  for (const auto& [name, t] : p) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    for (double v : t.data()) w.put<double>(v);
  }
  w.put_crc();
  return std::move(w.buffer());
}

ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes) {
  const auto payload = binio::verify_crc(bytes, "checkpoint");
  binio::Reader r(payload, "checkpoint");
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic)) {
    throw DataError("checkpoint: bad magic (expected SPL1)");
  }
  ParamSet out;
  while (r.remaining() > 0) {
    const auto len = r.get<std::uint32_t>();
    const auto name_bytes = r.take(len);
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw DataError("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    const std::size_t n = shape_size(shape);
    if (n * 8 > r.remaining()) throw DataError("checkpoint: truncated tensor " + name);
    std::vector<double> data(n);
    for (auto& v : data) v = r.get<double>();
    if (!out.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw DataError("checkpoint: duplicate tensor " + name);
    }
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& p) {
  binio::write_file_atomic(path, encode_checkpoint(p));
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(binio::read_file(path));
}

}  // namespace spoofmeta::tensor
