// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "crossmo/autograd.hpp"
#include "crossmo/errors.hpp"
#include "crossmo/simd.hpp"

namespace crossmo::ad {
namespace {

bool needs(const Node& self, std::size_t i) {
  return i < self.inputs.size() && self.inputs[i] && self.inputs[i]->requires_grad;
}

Matrix& grad_of(Node& self, std::size_t i) { return self.inputs[i]->grad_buffer(); }
const Matrix& value_of(const Node& self, std::size_t i) { return self.inputs[i]->value; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch(std::string(op) + ": shape mismatch");
}

// g (m x n) * b^T (b is k x n) accumulated into out (m x k).
void acc_mul_bt(const Matrix& g, const Matrix& b, Matrix& out) {
  const Matrix bt = transpose(b);
  simd::kernels().gemm(g.data.data(), bt.data.data(), out.data.data(), g.rows, b.rows, g.cols, true);
}

// a^T (a is m x k) * g (m x n) accumulated into out (k x n).
void acc_at_mul(const Matrix& a, const Matrix& g, Matrix& out) {
  const Matrix at = transpose(a);
  simd::kernels().gemm(at.data.data(), g.data.data(), out.data.data(), a.cols, g.cols, a.rows, true);
}

void acc_col_sums(const Matrix& g, Matrix& out) {
  for (std::size_t r = 0; r < g.rows; ++r) simd::kernels().axpy(1.0, g.row(r), out.data.data(), g.cols);
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd dfdx) {
  Matrix out(a.rows(), a.cols());
  const auto& x = a.value().data;
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = fwd(x[i]);
  return record(std::move(out), {a}, [dfdx](Node& self) {
    const auto& x = value_of(self, 0).data;
    const auto& y = self.value.data;
    const auto& g = self.grad.data;
    auto& dx = grad_of(self, 0).data;
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i] * dfdx(x[i], y[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
  Matrix out = crossmo::matmul(a.value(), b.value());
  return record(std::move(out), {a, b}, [](Node& self) {
    if (needs(self, 0)) acc_mul_bt(self.grad, value_of(self, 1), grad_of(self, 0));
    if (needs(self, 1)) acc_at_mul(value_of(self, 0), self.grad, grad_of(self, 1));
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.cols() != w.rows()) throw ShapeMismatch("linear: input width does not match weight rows");
  if (bias.defined() && (bias.rows() != 1 || bias.cols() != w.cols()))
    throw ShapeMismatch("linear: bias must be 1 x out");
  Matrix out = crossmo::matmul(x.value(), w.value());
  if (bias.defined()) {
    for (std::size_t r = 0; r < out.rows; ++r)
      simd::kernels().axpy(1.0, bias.value().data.data(), out.row(r), out.cols);
  }
  return record(std::move(out), {x, w, bias}, [](Node& self) {
    if (needs(self, 0)) acc_mul_bt(self.grad, value_of(self, 1), grad_of(self, 0));
    if (needs(self, 1)) acc_at_mul(value_of(self, 0), self.grad, grad_of(self, 1));
    if (needs(self, 2)) acc_col_sums(self.grad, grad_of(self, 2));
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Matrix out(a.rows(), a.cols());
  simd::kernels().add(a.value().data.data(), b.value().data.data(), out.data.data(), out.size());
  return record(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (needs(self, i)) simd::kernels().axpy(1.0, self.grad.data.data(), grad_of(self, i).data.data(), self.grad.size());
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] - b.value().data[i];
  return record(std::move(out), {a, b}, [](Node& self) {
    if (needs(self, 0)) simd::kernels().axpy(1.0, self.grad.data.data(), grad_of(self, 0).data.data(), self.grad.size());
    if (needs(self, 1)) simd::kernels().axpy(-1.0, self.grad.data.data(), grad_of(self, 1).data.data(), self.grad.size());
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Matrix out(a.rows(), a.cols());
  simd::kernels().mul(a.value().data.data(), b.value().data.data(), out.data.data(), out.size());
  return record(std::move(out), {a, b}, [](Node& self) {
    const std::size_t n = self.grad.size();
    if (needs(self, 0)) simd::kernels().mul_acc(self.grad.data.data(), value_of(self, 1).data.data(), grad_of(self, 0).data.data(), n);
    if (needs(self, 1)) simd::kernels().mul_acc(self.grad.data.data(), value_of(self, 0).data.data(), grad_of(self, 1).data.data(), n);
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeMismatch("add_row: row must be 1 x cols");
  Matrix out = a.value();
  for (std::size_t r = 0; r < out.rows; ++r) simd::kernels().axpy(1.0, row.value().data.data(), out.row(r), out.cols);
  return record(std::move(out), {a, row}, [](Node& self) {
    if (needs(self, 0)) simd::kernels().axpy(1.0, self.grad.data.data(), grad_of(self, 0).data.data(), self.grad.size());
    if (needs(self, 1)) acc_col_sums(self.grad, grad_of(self, 1));
  });
}

Tensor scale(const Tensor& a, double s) {
  Matrix out = a.value();
  simd::kernels().scale(s, out.data.data(), out.size());
  return record(std::move(out), {a}, [s](Node& self) {
    simd::kernels().axpy(s, self.grad.data.data(), grad_of(self, 0).data.data(), self.grad.size());
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  Matrix out = a.value();
  for (double& v : out.data) v += s;
  return record(std::move(out), {a}, [](Node& self) {
    simd::kernels().axpy(1.0, self.grad.data.data(), grad_of(self, 0).data.data(), self.grad.size());
  });
}

Tensor one_minus(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, [](double x) { return x * stable_sigmoid(x); },
      [](double x, double) {
        const double s = stable_sigmoid(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return stable_sigmoid(x); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
  Matrix out(1, 1, simd::kernels().sum(a.value().data.data(), a.value().size()));
  return record(std::move(out), {a}, [](Node& self) {
    const double g = self.grad.data[0];
    for (double& v : grad_of(self, 0).data) v += g;
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeMismatch("mean: empty tensor");
  return scale(sum(a), 1.0 / n);
}

Tensor sum_sq(const Tensor& a) {
  Matrix out(1, 1, simd::kernels().sum_sq(a.value().data.data(), a.value().size()));
  return record(std::move(out), {a}, [](Node& self) {
    const double g = self.grad.data[0];
    simd::kernels().axpy(2.0 * g, value_of(self, 0).data.data(), grad_of(self, 0).data.data(), self.inputs[0]->value.size());
  });
}

Tensor row_sum_sq(const Tensor& a) {
  Matrix out(a.rows(), 1);
  for (std::size_t r = 0; r < a.rows(); ++r) out.data[r] = simd::kernels().sum_sq(a.value().row(r), a.cols());
  return record(std::move(out), {a}, [](Node& self) {
    const Matrix& x = value_of(self, 0);
    Matrix& dx = grad_of(self, 0);
    for (std::size_t r = 0; r < x.rows; ++r) simd::kernels().axpy(2.0 * self.grad.data[r], x.row(r), dx.row(r), x.cols);
  });
}

Tensor segment_mean(const Tensor& a, const Segments& segs) {
  const std::size_t c = a.cols();
  Matrix out(segs.size(), c);
  for (std::size_t s = 0; s < segs.size(); ++s) {
    if (segs[s].length == 0) throw ShapeMismatch("segment_mean: empty segment");
    if (segs[s].offset + segs[s].length > a.rows()) throw ShapeMismatch("segment_mean: segment out of range");
    const double inv = 1.0 / static_cast<double>(segs[s].length);
    for (std::size_t r = 0; r < segs[s].length; ++r)
      simd::kernels().axpy(inv, a.value().row(segs[s].offset + r), out.row(s), c);
  }
  return record(std::move(out), {a}, [segs](Node& self) {
    Matrix& dx = grad_of(self, 0);
    for (std::size_t s = 0; s < segs.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(segs[s].length);
      for (std::size_t r = 0; r < segs[s].length; ++r)
        simd::kernels().axpy(inv, self.grad.row(s), dx.row(segs[s].offset + r), dx.cols);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = x.rows(), c = x.cols();
  if (gamma.cols() != c || beta.cols() != c) throw ShapeMismatch("layer_norm: affine width mismatch");
  Matrix out(n, c);
  auto xhat = std::make_shared<Matrix>(n, c);
  auto inv_std = std::make_shared<std::vector<double>>(n);
  const double* gm = gamma.value().data.data();
  const double* bt = beta.value().data.data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.value().row(r);
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mu) * inv;
      (*xhat)(r, j) = h;
      out(r, j) = h * gm[j] + bt[j];
    }
  }
  return record(std::move(out), {x, gamma, beta}, [xhat, inv_std](Node& self) {
    const Matrix& g = self.grad;
    const std::size_t n = g.rows, c = g.cols;
    const double* gm = value_of(self, 1).data.data();
    if (needs(self, 0)) {
      Matrix& dx = grad_of(self, 0);
      std::vector<double> dh(c);
      for (std::size_t r = 0; r < n; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          dh[j] = g(r, j) * gm[j];
          m1 += dh[j];
          m2 += dh[j] * (*xhat)(r, j);
        }
        m1 /= static_cast<double>(c);
        m2 /= static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j) dx(r, j) += (*inv_std)[r] * (dh[j] - m1 - (*xhat)(r, j) * m2);
      }
    }
    if (needs(self, 1)) {
      Matrix& dg = grad_of(self, 1);
      for (std::size_t r = 0; r < n; ++r) simd::kernels().mul_acc(g.row(r), xhat->row(r), dg.data.data(), c);
    }
    if (needs(self, 2)) acc_col_sums(g, grad_of(self, 2));
  });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  const std::size_t n = x.rows(), c = x.cols();
  Matrix out(n, c);
  auto norms = std::make_shared<std::vector<double>>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double nr = std::sqrt(simd::kernels().sum_sq(x.value().row(r), c) + eps);
    (*norms)[r] = nr;
    for (std::size_t j = 0; j < c; ++j) out(r, j) = x.value()(r, j) / nr;
  }
  return record(std::move(out), {x}, [norms](Node& self) {
    const Matrix& y = self.value;
    const Matrix& g = self.grad;
    Matrix& dx = grad_of(self, 0);
    for (std::size_t r = 0; r < y.rows; ++r) {
      const double yg = simd::kernels().dot(y.row(r), g.row(r), y.cols);
      for (std::size_t j = 0; j < y.cols; ++j) dx(r, j) += (g(r, j) - y(r, j) * yg) / (*norms)[r];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t n = 0;
  for (const Tensor& p : parts) {
    if (p.cols() != c) throw ShapeMismatch("concat_rows: column counts differ");
    n += p.rows();
  }
  Matrix out(n, c);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off * c));
    off += p.rows();
  }
  return record(std::move(out), parts, [](Node& self) {
    std::size_t off = 0;
    const std::size_t c = self.grad.cols;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      const std::size_t r = self.inputs[i]->value.rows;
      if (needs(self, i)) simd::kernels().axpy(1.0, self.grad.row(off), grad_of(self, i).data.data(), r * c);
      off += r;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t c = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != n) throw ShapeMismatch("concat_cols: row counts differ");
    c += p.cols();
  }
  Matrix out(n, c);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    for (std::size_t r = 0; r < n; ++r) std::copy(p.value().row(r), p.value().row(r) + p.cols(), out.row(r) + off);
    off += p.cols();
  }
  return record(std::move(out), parts, [](Node& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      const std::size_t pc = self.inputs[i]->value.cols;
      if (needs(self, i)) {
        Matrix& d = grad_of(self, i);
        for (std::size_t r = 0; r < d.rows; ++r) simd::kernels().axpy(1.0, self.grad.row(r) + off, d.row(r), pc);
      }
      off += pc;
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.rows()) throw ShapeMismatch("slice_rows: range out of bounds");
  const std::size_t c = a.cols();
  Matrix out(count, c);
  std::copy(a.value().row(begin), a.value().row(begin) + count * c, out.data.begin());
  return record(std::move(out), {a}, [begin](Node& self) {
    simd::kernels().axpy(1.0, self.grad.data.data(), grad_of(self, 0).row(begin), self.grad.size());
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) throw ShapeMismatch("slice_cols: range out of bounds");
  Matrix out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r) std::copy(a.value().row(r) + begin, a.value().row(r) + begin + count, out.row(r));
  return record(std::move(out), {a}, [begin](Node& self) {
    Matrix& d = grad_of(self, 0);
    for (std::size_t r = 0; r < d.rows; ++r) simd::kernels().axpy(1.0, self.grad.row(r), d.row(r) + begin, self.grad.cols);
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index) {
  const std::size_t c = a.cols();
  Matrix out(index.size(), c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.rows()) throw ShapeMismatch("gather_rows: index out of range");
    std::copy(a.value().row(index[i]), a.value().row(index[i]) + c, out.row(i));
  }
  return record(std::move(out), {a}, [index](Node& self) {
    Matrix& d = grad_of(self, 0);
    for (std::size_t i = 0; i < index.size(); ++i) simd::kernels().axpy(1.0, self.grad.row(i), d.row(index[i]), d.cols);
  });
}

Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.value().size()) throw ShapeMismatch("reshape: element count changes");
  Matrix out(rows, cols, a.value().data);
  return record(std::move(out), {a}, [](Node& self) {
    simd::kernels().axpy(1.0, self.grad.data.data(), grad_of(self, 0).data.data(), self.grad.size());
  });
}

Tensor transpose(const Tensor& a) {
  return record(crossmo::transpose(a.value()), {a}, [](Node& self) {
    Matrix& g = grad_of(self, 0);
    for (std::size_t r = 0; r < self.grad.rows; ++r)
      for (std::size_t c = 0; c < self.grad.cols; ++c) g(c, r) += self.grad(r, c);
  });
}

Tensor select_rows(const Tensor& a, const Tensor& b, const std::vector<bool>& take_b) {
  if (take_b.size() != a.rows()) throw ShapeMismatch("select_rows: flag count must equal rows");
  if (b.cols() != a.cols() || (b.rows() != 1 && b.rows() != a.rows()))
    throw ShapeMismatch("select_rows: b must be 1 x cols or match a");
  const std::size_t c = a.cols();
  const bool broadcast = b.rows() == 1;
  Matrix out = a.value();
  for (std::size_t r = 0; r < out.rows; ++r)
    if (take_b[r]) std::copy(b.value().row(broadcast ? 0 : r), b.value().row(broadcast ? 0 : r) + c, out.row(r));
  return record(std::move(out), {a, b}, [take_b, broadcast](Node& self) {
    const std::size_t c = self.grad.cols;
    for (std::size_t r = 0; r < self.grad.rows; ++r) {
      if (take_b[r]) {
        if (needs(self, 1)) simd::kernels().axpy(1.0, self.grad.row(r), grad_of(self, 1).row(broadcast ? 0 : r), c);
      } else if (needs(self, 0)) {
        simd::kernels().axpy(1.0, self.grad.row(r), grad_of(self, 0).row(r), c);
      }
    }
  });
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<std::size_t>& targets) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (targets.size() != n) throw ShapeMismatch("cross_entropy_rows: one target per row");
  auto probs = std::make_shared<Matrix>(n, c);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= c) throw ShapeMismatch("cross_entropy_rows: target out of range");
    const double* z = logits.value().row(r);
    const double mx = *std::max_element(z, z + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) (*probs)(r, j) = std::exp(z[j] - lse);
    loss += lse - z[targets[r]];
  }
  Matrix out(1, 1, loss / static_cast<double>(n));
  return record(std::move(out), {logits}, [probs, targets](Node& self) {
    const double g = self.grad.data[0] / static_cast<double>(probs->rows);
    Matrix& d = grad_of(self, 0);
    for (std::size_t r = 0; r < probs->rows; ++r) {
      for (std::size_t j = 0; j < probs->cols; ++j) d(r, j) += g * (*probs)(r, j);
      d(r, targets[r]) -= g;
    }
  });
}

}  // namespace crossmo::ad
