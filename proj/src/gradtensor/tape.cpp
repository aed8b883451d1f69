#include "hybridflow/tape.hpp"

#include <cmath>
#include <memory>

#include "hybridflow/errors.hpp"

namespace hybridflow::grad {

const Tensor& Var::value() const { return tape->value(id); }

GradientMap::GradientMap(std::vector<Tensor> grads, std::vector<bool> present,
                         std::unordered_map<const Tensor*, std::size_t> bound, std::vector<Shape> shapes)
    : grads_(std::move(grads)), present_(std::move(present)), bound_(std::move(bound)), shapes_(std::move(shapes)) {}

Tensor GradientMap::of(Var v) const {
  if (has(v)) return grads_[v.id];
  return Tensor(shapes_.at(v.id), 0.0);
}

Tensor GradientMap::of(const Tensor& parameter) const {
  auto it = bound_.find(&parameter);
  if (it == bound_.end() || !present_[it->second]) return Tensor::zeros_like(parameter);
  return grads_[it->second];
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const Tensor& storage) {
  if (auto it = bound_.find(&storage); it != bound_.end()) return Var{this, it->second};
  Var v = variable(storage);
  bound_.emplace(&storage, v.id);
  return v;
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (std::size_t i : inputs) needs = needs || nodes_[i].requires_grad;
  if (!needs) backward = nullptr;
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), needs});
  return Var{this, nodes_.size() - 1};
}

GradientMap Tape::backward(Var loss) const {
  if (loss.tape != this) throw ShapeError("backward: loss was recorded on a different tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(nodes_[loss.id].value.shape()));
  }
  const std::size_t n = loss.id + 1;
  std::vector<Tensor> grads(n);
  std::vector<bool> present(n, false);
  grads[loss.id] = Tensor(nodes_[loss.id].value.shape(), 1.0);
  present[loss.id] = true;

  std::vector<Tensor*> in_ptrs;
  for (std::size_t k = n; k-- > 0;) {
    const Node& node = nodes_[k];
    if (!present[k] || !node.backward) continue;
    in_ptrs.clear();
    for (std::size_t j : node.inputs) {
      if (!nodes_[j].requires_grad) {
        in_ptrs.push_back(nullptr);
        continue;
      }
      if (!present[j]) {
        grads[j] = Tensor::zeros_like(nodes_[j].value);
        present[j] = true;
      }
      in_ptrs.push_back(&grads[j]);
    }
    node.backward(grads[k], in_ptrs);
  }

  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const Node& node : nodes_) shapes.push_back(node.value.shape());
  grads.resize(nodes_.size());
  present.resize(nodes_.size(), false);
  return GradientMap(std::move(grads), std::move(present), bound_, std::move(shapes));
}

// ---------------------------------------------------------------------------

namespace {

void require_same_tape(const char* op, Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw ShapeError(std::string(op) + ": operands on different tapes");
}

void require_same_shape(const char* op, Var a, Var b) {
  require_same_tape(op, a, b);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_matrix(const char* op, Var a) {
  if (a.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_string(a.shape()));
  }
}

// Elementwise unary op; `deriv(x, y)` is dy/dx given input x and output y.
template <typename F, typename D>
Var unary(Var a, F f, D deriv) {
  Tape* t = a.tape;
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id;
  const std::size_t io = t->size();
  return t->record(std::move(y), {ia}, [t, ia, io, deriv](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& xv = t->value(ia);
    const Tensor& yv = t->value(io);
    Tensor& ga = *gin[0];
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape("matmul", a, b);
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  }
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A(i, p);
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  Tape* t = a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t->record(std::move(C), {ia, ib}, [t, ia, ib, m, k, n](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& A = t->value(ia);
    const Tensor& B = t->value(ib);
    if (gin[0]) {  // dA = g B^T
      Tensor& gA = *gin[0];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g(i, j) * B(p, j);
          gA(i, p) += s;
        }
    }
    if (gin[1]) {  // dB = A^T g
      Tensor& gB = *gin[1];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A(i, p);
          for (std::size_t j = 0; j < n; ++j) gB(p, j) += av * g(i, j);
        }
    }
  });
}

Var transpose(Var a) {
  require_matrix("transpose", a);
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor T({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) T(j, i) = A(i, j);
  return a.tape->record(std::move(T), {a.id}, [m, n](const Tensor& g, std::span<Tensor* const> gin) {
    Tensor& ga = *gin[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga(i, j) += g(j, i);
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.tape->record(std::move(y), {a.id, b.id}, [](const Tensor& g, std::span<Tensor* const> gin) {
    for (Tensor* gi : gin)
      if (gi)
        for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return a.tape->record(std::move(y), {a.id, b.id}, [](const Tensor& g, std::span<Tensor* const> gin) {
    if (gin[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
    if (gin[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  Tape* t = a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t->record(std::move(y), {ia, ib}, [t, ia, ib](const Tensor& g, std::span<Tensor* const> gin) {
    const Tensor& av = t->value(ia);
    const Tensor& bv = t->value(ib);
    if (gin[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * bv[i];
    if (gin[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * av[i];
  });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Var reduce_sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->record(Tensor::scalar(s), {a.id}, [](const Tensor& g, std::span<Tensor* const> gin) {
    const double gv = g[0];
    for (double& v : gin[0]->values()) v += gv;
  });
}

Var reduce_mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->record(Tensor::scalar(s / n), {a.id}, [n](const Tensor& g, std::span<Tensor* const> gin) {
    const double gv = g[0] / n;
    for (double& v : gin[0]->values()) v += gv;
  });
}

Var row_sum(Var a) {
  require_matrix("row_sum", a);
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor y({m, 1});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i] += A(i, j);
  return a.tape->record(std::move(y), {a.id}, [m, n](const Tensor& g, std::span<Tensor* const> gin) {
    Tensor& ga = *gin[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga(i, j) += g[i];
  });
}

Var concat_last_axis(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_last_axis: no inputs");
  Tape* t = parts[0].tape;
  const std::size_t m = parts[0].value().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (Var p : parts) {
    require_same_tape("concat_last_axis", parts[0], p);
    require_matrix("concat_last_axis", p);
    if (p.value().rows() != m) {
      throw ShapeError("concat_last_axis: leading dims differ " + shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()));
    }
    widths.push_back(p.value().cols());
    ids.push_back(p.id);
    total += p.value().cols();
  }
  Tensor y({m, total});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) y(i, off + j) = v(i, j);
    off += v.cols();
  }
  return t->record(std::move(y), ids, [m, widths](const Tensor& g, std::span<Tensor* const> gin) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (gin[k]) {
        Tensor& gk = *gin[k];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gk(i, j) += g(i, off + j);
      }
      off += widths[k];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  require_matrix("slice_cols", a);
  const std::size_t m = a.value().rows();
  Tensor y = a.value().slice_cols(begin, end);
  return a.tape->record(std::move(y), {a.id}, [m, begin, end](const Tensor& g, std::span<Tensor* const> gin) {
    Tensor& ga = *gin[0];
    const std::size_t w = end - begin;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga(i, begin + j) += g(i, j);
  });
}

Var permute_cols(Var a, std::span<const std::size_t> perm) {
  require_matrix("permute_cols", a);
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  if (perm.size() != n) throw ShapeError("permute_cols: permutation length differs from column count");
  std::vector<std::size_t> p(perm.begin(), perm.end());
  Tensor y({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y(i, j) = A(i, p[j]);
  return a.tape->record(std::move(y), {a.id}, [m, n, p](const Tensor& g, std::span<Tensor* const> gin) {
    Tensor& ga = *gin[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga(i, p[j]) += g(i, j);
  });
}

namespace {

Var affine(const char* op, Var x, Var w, const Tensor* mask, Var b) {
  require_same_tape(op, x, w);
  require_same_tape(op, x, b);
  require_matrix(op, x);
  require_matrix(op, w);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const std::size_t rows = X.rows(), in = X.cols(), out = W.rows();
  if (W.cols() != in) {
    throw ShapeError(std::string(op) + ": input " + shape_string(X.shape()) + " does not match weight " +
                     shape_string(W.shape()));
  }
  if (mask && mask->shape() != W.shape()) {
    throw ShapeError(std::string(op) + ": mask " + shape_string(mask->shape()) + " does not match weight " +
                     shape_string(W.shape()));
  }
  if (b.value().size() != out) {
    throw ShapeError(std::string(op) + ": bias " + shape_string(b.shape()) + " does not match " + std::to_string(out) +
                     " outputs");
  }
  auto eff = std::make_shared<Tensor>(W);
  if (mask)
    for (std::size_t i = 0; i < eff->size(); ++i) (*eff)[i] *= (*mask)[i];
  std::shared_ptr<const Tensor> mask_copy = mask ? std::make_shared<const Tensor>(*mask) : nullptr;

  const Tensor& B = b.value();
  Tensor Y({rows, out});
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = eff->data() + o * in;
      double s = B[o];
      for (std::size_t i = 0; i < in; ++i) s += xr[i] * wr[i];
      Y(r, o) = s;
    }
  }
  Tape* t = x.tape;
  const std::size_t ix = x.id;
  return t->record(std::move(Y), {x.id, w.id, b.id},
                   [t, ix, eff, mask_copy, rows, in, out](const Tensor& g, std::span<Tensor* const> gin) {
                     const Tensor& X = t->value(ix);
                     if (gin[0]) {
                       Tensor& gx = *gin[0];
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t o = 0; o < out; ++o) {
                           const double gv = g(r, o);
                           if (gv == 0.0) continue;
                           const double* wr = eff->data() + o * in;
                           double* gxr = gx.data() + r * in;
                           for (std::size_t i = 0; i < in; ++i) gxr[i] += gv * wr[i];
                         }
                     }
                     if (gin[1]) {
                       Tensor& gw = *gin[1];
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* xr = X.data() + r * in;
                         for (std::size_t o = 0; o < out; ++o) {
                           const double gv = g(r, o);
                           if (gv == 0.0) continue;
                           double* gwr = gw.data() + o * in;
                           for (std::size_t i = 0; i < in; ++i) gwr[i] += gv * xr[i];
                         }
                       }
                       if (mask_copy)
                         for (std::size_t i = 0; i < gw.size(); ++i) gw[i] *= (*mask_copy)[i];
                     }
                     if (gin[2]) {
                       Tensor& gb = *gin[2];
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t o = 0; o < out; ++o) gb[o] += g(r, o);
                     }
                   });
}

}  // namespace

Var masked_linear(Var x, Var weight, const Tensor& mask, Var bias) {
  return affine("masked_linear", x, weight, &mask, bias);
}

Var linear(Var x, Var weight, Var bias) { return affine("linear", x, weight, nullptr, bias); }

}  // namespace hybridflow::grad
