// SPDX-License-Identifier: Apache-2.0
// Packed-sequence ops: strided (transposed) convolution unfolding and
// segment-local multi-head attention.

#include <algorithm>
#include <cmath>
#include <optional>

#include "crossmo/autograd.hpp"
#include "crossmo/errors.hpp"
#include "crossmo/simd.hpp"

namespace crossmo::ad {
namespace {

// Source row inside a segment of `len` rows for a (possibly out-of-range)
// position; nullopt means a zero pad.
std::optional<std::size_t> resolve(long pos, std::size_t len, PadMode mode) {
  const long n = static_cast<long>(len);
  if (pos >= 0 && pos < n) return static_cast<std::size_t>(pos);
  if (mode == PadMode::kCircular) return static_cast<std::size_t>(((pos % n) + n) % n);
  return std::nullopt;
}

}  // namespace

std::size_t conv_out_length(std::size_t length, const ConvGeometry& g) {
  if (g.stride == 0 || g.kernel == 0) throw InvalidInput("conv: kernel and stride must be positive");
  if (length + 2 * g.pad < g.kernel) throw TooShort("conv: sequence shorter than kernel");
  return (length + 2 * g.pad - g.kernel) / g.stride + 1;
}

Segments conv_out_segments(const Segments& in, const ConvGeometry& g) {
  std::vector<std::size_t> lens;
  lens.reserve(in.size());
  for (const Segment& s : in) lens.push_back(conv_out_length(s.length, g));
  return pack_segments(lens);
}

Tensor im2col(const Tensor& x, const Segments& segs, const ConvGeometry& g) {
  const std::size_t c = x.cols();
  const Segments out_segs = conv_out_segments(segs, g);
  Matrix out(total_rows(out_segs), g.kernel * c);
  // Each output cell's source row (or -1 for zero padding), reused by backward.
  auto src = std::make_shared<std::vector<long>>(out.rows * g.kernel, -1);
  for (std::size_t s = 0; s < segs.size(); ++s) {
    if (segs[s].offset + segs[s].length > x.rows()) throw ShapeMismatch("im2col: segment out of range");
    for (std::size_t t = 0; t < out_segs[s].length; ++t) {
      const std::size_t orow = out_segs[s].offset + t;
      for (std::size_t k = 0; k < g.kernel; ++k) {
        const long pos = static_cast<long>(t * g.stride + k) - static_cast<long>(g.pad);
        if (auto r = resolve(pos, segs[s].length, g.mode)) {
          const std::size_t srow = segs[s].offset + *r;
          (*src)[orow * g.kernel + k] = static_cast<long>(srow);
          std::copy(x.value().row(srow), x.value().row(srow) + c, out.row(orow) + k * c);
        }
      }
    }
  }
  const std::size_t kernel = g.kernel;
  return record(std::move(out), {x}, [src, kernel, c](Node& self) {
    Matrix& dx = self.inputs[0]->grad_buffer();
    for (std::size_t orow = 0; orow < self.grad.rows; ++orow)
      for (std::size_t k = 0; k < kernel; ++k) {
        const long s = (*src)[orow * kernel + k];
        if (s >= 0) simd::kernels().axpy(1.0, self.grad.row(orow) + k * c, dx.row(static_cast<std::size_t>(s)), c);
      }
  });
}

std::size_t deconv_out_length(std::size_t length, const ConvGeometry& g) {
  if (length == 0) throw TooShort("deconv: empty sequence");
  const long n = static_cast<long>((length - 1) * g.stride + g.kernel) - 2 * static_cast<long>(g.pad);
  if (n <= 0) throw InvalidInput("deconv: geometry yields empty output");
  return static_cast<std::size_t>(n);
}

Segments deconv_out_segments(const Segments& in, const ConvGeometry& g) {
  std::vector<std::size_t> lens;
  lens.reserve(in.size());
  for (const Segment& s : in) lens.push_back(deconv_out_length(s.length, g));
  return pack_segments(lens);
}

Tensor col2im(const Tensor& y, const Segments& in_segs, std::size_t out_cols, const ConvGeometry& g) {
  if (y.cols() != g.kernel * out_cols) throw ShapeMismatch("col2im: width must be kernel * out_cols");
  const Segments out_segs = deconv_out_segments(in_segs, g);
  Matrix out(total_rows(out_segs), out_cols);
  auto dst = std::make_shared<std::vector<long>>(y.rows() * g.kernel, -1);
  for (std::size_t s = 0; s < in_segs.size(); ++s) {
    for (std::size_t t = 0; t < in_segs[s].length; ++t) {
      const std::size_t irow = in_segs[s].offset + t;
      for (std::size_t k = 0; k < g.kernel; ++k) {
        const long pos = static_cast<long>(t * g.stride + k) - static_cast<long>(g.pad);
        if (auto r = resolve(pos, out_segs[s].length, g.mode)) {
          const std::size_t orow = out_segs[s].offset + *r;
          (*dst)[irow * g.kernel + k] = static_cast<long>(orow);
          simd::kernels().axpy(1.0, y.value().row(irow) + k * out_cols, out.row(orow), out_cols);
        }
      }
    }
  }
  const std::size_t kernel = g.kernel;
  return record(std::move(out), {y}, [dst, kernel, out_cols](Node& self) {
    Matrix& dy = self.inputs[0]->grad_buffer();
    for (std::size_t irow = 0; irow < dy.rows; ++irow)
      for (std::size_t k = 0; k < kernel; ++k) {
        const long d = (*dst)[irow * kernel + k];
        if (d >= 0) simd::kernels().axpy(1.0, self.grad.row(static_cast<std::size_t>(d)), dy.row(irow) + k * out_cols, out_cols);
      }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Segments& q_segs,
                 const Segments& k_segs, std::size_t heads) {
  const std::size_t d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) throw ShapeMismatch("attention: q/k/v widths differ");
  if (heads == 0 || d % heads != 0) throw ShapeMismatch("attention: width not divisible by heads");
  if (q_segs.size() != k_segs.size()) throw ShapeMismatch("attention: segment counts differ");
  const std::size_t dh = d / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& K = simd::kernels();

  // probs[s][h] is (q_len x k_len)
  auto probs = std::make_shared<std::vector<Matrix>>(q_segs.size() * heads);
  Matrix out(q.rows(), d);
  for (std::size_t s = 0; s < q_segs.size(); ++s) {
    const Segment qs = q_segs[s], ks = k_segs[s];
    if (ks.length == 0) throw ShapeMismatch("attention: empty key segment");
    for (std::size_t h = 0; h < heads; ++h) {
      Matrix& p = (*probs)[s * heads + h];
      p = Matrix(qs.length, ks.length);
      for (std::size_t a = 0; a < qs.length; ++a) {
        const double* qa = q.value().row(qs.offset + a) + h * dh;
        double mx = -1e300;
        for (std::size_t b = 0; b < ks.length; ++b) {
          const double sc = scl * K.dot(qa, k.value().row(ks.offset + b) + h * dh, dh);
          p(a, b) = sc;
          mx = std::max(mx, sc);
        }
        double z = 0.0;
        for (std::size_t b = 0; b < ks.length; ++b) {
          p(a, b) = std::exp(p(a, b) - mx);
          z += p(a, b);
        }
        double* oa = out.row(qs.offset + a) + h * dh;
        for (std::size_t b = 0; b < ks.length; ++b) {
          p(a, b) /= z;
          K.axpy(p(a, b), v.value().row(ks.offset + b) + h * dh, oa, dh);
        }
      }
    }
  }
  return record(std::move(out), {q, k, v}, [probs, q_segs, k_segs, heads, dh, scl](Node& self) {
    const auto& K = simd::kernels();
    const Matrix& qv = self.inputs[0]->value;
    const Matrix& kv = self.inputs[1]->value;
    const Matrix& vv = self.inputs[2]->value;
    const bool nq = self.inputs[0] && self.inputs[0]->requires_grad;
    const bool nk = self.inputs[1] && self.inputs[1]->requires_grad;
    const bool nv = self.inputs[2] && self.inputs[2]->requires_grad;
    Matrix* dq = nq ? &self.inputs[0]->grad_buffer() : nullptr;
    Matrix* dk = nk ? &self.inputs[1]->grad_buffer() : nullptr;
    Matrix* dv = nv ? &self.inputs[2]->grad_buffer() : nullptr;
    std::vector<double> dp, ds;
    for (std::size_t s = 0; s < q_segs.size(); ++s) {
      const Segment qs = q_segs[s], ks = k_segs[s];
      dp.resize(ks.length);
      ds.resize(ks.length);
      for (std::size_t h = 0; h < heads; ++h) {
        const Matrix& p = (*probs)[s * heads + h];
        for (std::size_t a = 0; a < qs.length; ++a) {
          const double* go = self.grad.row(qs.offset + a) + h * dh;
          double dot_pd = 0.0;
          for (std::size_t b = 0; b < ks.length; ++b) {
            dp[b] = K.dot(go, vv.row(ks.offset + b) + h * dh, dh);
            dot_pd += p(a, b) * dp[b];
            if (dv) K.axpy(p(a, b), go, dv->row(ks.offset + b) + h * dh, dh);
          }
          for (std::size_t b = 0; b < ks.length; ++b) {
            ds[b] = scl * p(a, b) * (dp[b] - dot_pd);
            if (dq) K.axpy(ds[b], kv.row(ks.offset + b) + h * dh, dq->row(qs.offset + a) + h * dh, dh);
            if (dk) K.axpy(ds[b], qv.row(qs.offset + a) + h * dh, dk->row(ks.offset + b) + h * dh, dh);
          }
        }
      }
    }
  });
}

}  // namespace crossmo::ad
