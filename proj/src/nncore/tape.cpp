#include "pat/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "pat/errors.hpp"

namespace pat::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

MapMat as_mat(Tensor& t) {
  return MapMat(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}
CMapMat as_mat(const Tensor& t) {
  return CMapMat(t.data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}

Tape* tape_of(Var a) {
  if (!a.valid()) throw UsageError("operation on an unbound variable");
  return a.tape;
}

Tape* tape_of(Var a, Var b) {
  Tape* t = tape_of(a);
  if (tape_of(b) != t) throw UsageError("variables belong to different tapes");
  return t;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Accumulate g into the parent's gradient if it wants one.
void accumulate(Tape& t, std::size_t parent, const Tensor& g) {
  if (!t.requires_grad(parent)) return;
  Tensor& pg = t.grad_ref(parent);
  double* d = pg.data();
  const double* s = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) d[i] += s[i];
}

Tensor like(const Tensor& v) { return Tensor::matrix(v.rows(), v.cols()); }

template <class F>
Var unary_elementwise(Var a, F f, const char* /*name*/,
                      void (*deriv)(const Tensor& in, const Tensor& out, const Tensor& g,
                                    Tensor& dst)) {
  Tape* t = tape_of(a);
  const Tensor& x = a.value();
  Tensor y = like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t pa = a.id;
  return t->record(std::move(y), {pa}, [pa, deriv](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor d = like(g);
    deriv(tp.value(pa), tp.value(self), g, d);
    accumulate(tp, pa, d);
  });
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape) throw UsageError("value of an unbound variable");
  return tape->value(id);
}

const Tensor& Var::grad() const {
  if (!tape) throw UsageError("grad of an unbound variable");
  return tape->grad(id);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  n.is_input = true;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(ParamEntry& entry, bool trainable) {
  Node n;
  n.value = entry.value;
  n.requires_grad = grad_enabled_ && trainable;
  if (n.requires_grad) n.param = &entry;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

std::vector<Var> Tape::params(ParamSet& set, bool trainable) {
  std::vector<Var> out;
  out.reserve(set.size());
  for (auto& e : set) out.push_back(param(e, trainable));
  return out;
}

const Tensor& Tape::grad(std::size_t id) { return grad_ref(id); }

Tensor& Tape::grad_ref(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
    n.grad = Tensor(n.value.shape());
  }
  return n.grad;
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  bool any = false;
  if (grad_enabled_) {
    for (std::size_t p : parents) any = any || nodes_.at(p).requires_grad;
  }
  n.requires_grad = any;
  if (any) {
    n.parents = std::move(parents);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  if (loss.tape != this || nodes_.empty()) {
    throw UsageError("backward called without a recorded forward pass on this tape");
  }
  if (!grad_enabled_) throw UsageError("backward on a tape recorded without gradients");
  if (consumed_) throw UsageError("backward called twice on the same tape");
  if (nodes_.at(loss.id).value.size() != 1) {
    throw UsageError("backward requires a scalar loss, got shape " +
                     shape_str(nodes_.at(loss.id).value.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_ref(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (auto& n : nodes_) {
    if (n.param && !n.grad.empty()) {
      double* d = n.param->grad.data();
      const double* s = n.grad.data();
      for (std::size_t k = 0; k < n.grad.size(); ++k) d[k] += s[k];
    }
  }
}

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape* t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  Tensor C = Tensor::matrix(A.rows(), B.cols());
  as_mat(C).noalias() = as_mat(A) * as_mat(B);
  const std::size_t pa = a.id, pb = b.id;
  return t->record(std::move(C), {pa, pb}, [pa, pb](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_ref(self);
    if (tp.requires_grad(pa)) {
      as_mat(tp.grad_ref(pa)).noalias() += as_mat(G) * as_mat(tp.value(pb)).transpose();
    }
    if (tp.requires_grad(pb)) {
      as_mat(tp.grad_ref(pb)).noalias() += as_mat(tp.value(pa)).transpose() * as_mat(G);
    }
  });
}

Var matmul_bt(Var a, Var b) {
  Tape* t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols()) {
    throw DimensionError("matmul_bt: " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()) + "^T");
  }
  Tensor C = Tensor::matrix(A.rows(), B.rows());
  as_mat(C).noalias() = as_mat(A) * as_mat(B).transpose();
  const std::size_t pa = a.id, pb = b.id;
  return t->record(std::move(C), {pa, pb}, [pa, pb](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_ref(self);
    if (tp.requires_grad(pa)) {
      as_mat(tp.grad_ref(pa)).noalias() += as_mat(G) * as_mat(tp.value(pb));
    }
    if (tp.requires_grad(pb)) {
      as_mat(tp.grad_ref(pb)).noalias() += as_mat(G).transpose() * as_mat(tp.value(pa));
    }
  });
}

Var add(Var a, Var b) {
  Tape* t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = like(a.value());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  const std::size_t pa = a.id, pb = b.id;
  return t->record(std::move(y), {pa, pb}, [pa, pb](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    accumulate(tp, pa, g);
    accumulate(tp, pb, g);
  });
}

Var sub(Var a, Var b) {
  Tape* t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor y = like(a.value());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] - b.value()[i];
  const std::size_t pa = a.id, pb = b.id;
  return t->record(std::move(y), {pa, pb}, [pa, pb](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    accumulate(tp, pa, g);
    if (tp.requires_grad(pb)) {
      Tensor& d = tp.grad_ref(pb);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape* t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = like(a.value());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  const std::size_t pa = a.id, pb = b.id;
  return t->record(std::move(y), {pa, pb}, [pa, pb](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(pa)) {
      Tensor& d = tp.grad_ref(pa);
      const Tensor& bv = tp.value(pb);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(pb)) {
      Tensor& d = tp.grad_ref(pb);
      const Tensor& av = tp.value(pa);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var add_row(Var a, Var row) {
  Tape* t = tape_of(a, row);
  const Tensor& A = a.value();
  const Tensor& r = row.value();
  if (r.size() != A.cols()) {
    throw DimensionError("add_row: row of " + std::to_string(r.size()) + " for " +
                         std::to_string(A.cols()) + " columns");
  }
  Tensor y = like(A);
  const std::size_t n = A.cols();
  for (std::size_t i = 0; i < A.rows(); ++i) {
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = A[i * n + j] + r[j];
  }
  const std::size_t pa = a.id, pr = row.id;
  return t->record(std::move(y), {pa, pr}, [pa, pr, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    accumulate(tp, pa, g);
    if (tp.requires_grad(pr)) {
      Tensor& d = tp.grad_ref(pr);
      const std::size_t m = g.size() / n;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) d[j] += g[i * n + j];
      }
    }
  });
}

Var scale(Var a, double s) {
  Tape* t = tape_of(a);
  Tensor y = like(a.value());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * s;
  const std::size_t pa = a.id;
  return t->record(std::move(y), {pa}, [pa, s](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& d = tp.grad_ref(pa);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * s;
  });
}

Var add_scalar(Var a, double s) {
  Tape* t = tape_of(a);
  Tensor y = like(a.value());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + s;
  const std::size_t pa = a.id;
  return t->record(std::move(y), {pa}, [pa](Tape& tp, std::size_t self) {
    accumulate(tp, pa, tp.grad_ref(self));
  });
}

Var tanh(Var a) {
  return unary_elementwise(
      a, [](double x) { return std::tanh(x); }, "tanh",
      [](const Tensor&, const Tensor& y, const Tensor& g, Tensor& d) {
        for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * (1.0 - y[i] * y[i]);
      });
}

Var sigmoid(Var a) {
  return unary_elementwise(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      "sigmoid",
      [](const Tensor&, const Tensor& y, const Tensor& g, Tensor& d) {
        for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * y[i] * (1.0 - y[i]);
      });
}

Var softmax_rows(Var a) {
  Tape* t = tape_of(a);
  const Tensor& x = a.value();
  Tensor y = like(x);
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xr = x.data() + i * n;
    double* yr = y.data() + i * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  const std::size_t pa = a.id;
  return t->record(std::move(y), {pa}, [pa, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    const Tensor& yv = tp.value(self);
    Tensor& d = tp.grad_ref(pa);
    const std::size_t m = g.size() / n;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * yv[i * n + j];
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += yv[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat_cols of nothing");
  Tape* t = tape_of(parts.front());
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    if (tape_of(p) != t) throw UsageError("variables belong to different tapes");
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    ids.push_back(p.id);
    widths.push_back(p.cols());
    total += p.cols();
  }
  Tensor y = Tensor::matrix(m, total);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(v.data() + i * w, w, y.data() + i * total + off);
    }
    off += w;
  }
  return t->record(std::move(y), ids, [ids, widths, m, total](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (tp.requires_grad(ids[k])) {
        Tensor& d = tp.grad_ref(ids[k]);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < w; ++j) d[i * w + j] += g[i * total + o + j];
        }
      }
      o += w;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat_rows of nothing");
  Tape* t = tape_of(parts.front());
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  std::vector<std::size_t> ids, counts;
  for (const Var& p : parts) {
    if (tape_of(p) != t) throw UsageError("variables belong to different tapes");
    if (p.cols() != n) throw DimensionError("concat_rows: column counts differ");
    ids.push_back(p.id);
    counts.push_back(p.value().size());
    total += p.rows();
  }
  Tensor y = Tensor::matrix(total, n);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), y.data() + off);
    off += p.value().size();
  }
  return t->record(std::move(y), ids, [ids, counts](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        Tensor& d = tp.grad_ref(ids[k]);
        for (std::size_t i = 0; i < counts[k]; ++i) d[i] += g[o + i];
      }
      o += counts[k];
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t len) {
  Tape* t = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t n = x.cols();
  if (start + len > n) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") of " + std::to_string(n));
  }
  const std::size_t m = x.rows();
  Tensor y = Tensor::matrix(m, len);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x.data() + i * n + start, len, y.data() + i * len);
  const std::size_t pa = a.id;
  return t->record(std::move(y), {pa}, [pa, start, len, n, m](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& d = tp.grad_ref(pa);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < len; ++j) d[i * n + start + j] += g[i * len + j];
    }
  });
}

Var slice_rows(Var a, std::size_t start, std::size_t len) {
  Tape* t = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t n = x.cols();
  if (start + len > x.rows()) throw DimensionError("slice_rows out of range");
  Tensor y = Tensor::matrix(len, n);
  std::copy_n(x.data() + start * n, len * n, y.data());
  const std::size_t pa = a.id;
  return t->record(std::move(y), {pa}, [pa, start, len, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& d = tp.grad_ref(pa);
    for (std::size_t i = 0; i < len * n; ++i) d[start * n + i] += g[i];
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tape* t = tape_of(a);
  const Tensor& x = a.value();
  if (rows * cols != x.size()) {
    throw DimensionError("reshape: " + std::to_string(x.size()) + " values into " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
  Tensor y(Shape{rows, cols}, x.storage());
  const std::size_t pa = a.id;
  return t->record(std::move(y), {pa}, [pa](Tape& tp, std::size_t self) {
    accumulate(tp, pa, tp.grad_ref(self));
  });
}

Var row_sum(Var a) {
  Tape* t = tape_of(a);
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y = Tensor::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[i * n + j];
    y[i] = s;
  }
  const std::size_t pa = a.id;
  return t->record(std::move(y), {pa}, [pa, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    Tensor& d = tp.grad_ref(pa);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] += g[i];
    }
  });
}

Var sum(Var a) {
  Tape* t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t pa = a.id;
  return t->record(Tensor::matrix(1, 1, s), {pa}, [pa](Tape& tp, std::size_t self) {
    const double g = tp.grad_ref(self)[0];
    Tensor& d = tp.grad_ref(pa);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var gumbel_softmax(Var logits, const Tensor& noise, double temperature) {
  if (!(temperature > 0.0)) throw UsageError("gumbel_softmax: temperature must be positive");
  Tape* t = tape_of(logits);
  Var g = t->constant(noise.reshaped(Shape{logits.rows(), logits.cols()}));
  return softmax_rows(scale(add(logits, g), 1.0 / temperature));
}

}  // namespace pat::nn
