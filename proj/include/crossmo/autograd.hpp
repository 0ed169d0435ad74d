// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tape-free reverse-mode differentiation over dense matrices. Every op
// records its inputs and a closure that pushes the output gradient back;
// backward() walks the graph in reverse topological order and then releases
// it. Leaves created with Tensor::parameter keep their gradient between
// calls until zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "crossmo/matrix.hpp"

namespace crossmo::ad {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;

  /// Gradient buffer, zero-initialised on first touch.
  Matrix& grad_buffer();
};

using NodePtr = std::shared_ptr<Node>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor constant(Matrix value);
  static Tensor parameter(Matrix value);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  /// Empty matrix when no gradient reached this tensor.
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Matrix(); }

  std::size_t rows() const { return node_->value.rows; }
  std::size_t cols() const { return node_->value.cols; }
  double item() const;

  /// Same value, cut from the graph.
  Tensor detach() const { return constant(node_->value); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Runs reverse accumulation from a 1 x 1 root. Intermediate nodes are
/// released afterwards; leaf gradients accumulate.
void backward(const Tensor& root);

bool grad_enabled();

/// Disables graph recording in scope (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. `backprop` is only stored when some input needs a
/// gradient and recording is enabled. Used by modules that define fused ops.
Tensor record(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> backprop);

/// Contiguous row ranges used for packed variable-length batches.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};
using Segments = std::vector<Segment>;

Segments pack_segments(const std::vector<std::size_t>& lengths);
std::size_t total_rows(const Segments& segs);

// --- linear algebra -----------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
/// x * w + bias (bias 1 x out, may be undefined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// --- elementwise --------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a + row broadcast over rows (row is 1 x cols).
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// 1 - a
Tensor one_minus(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);

// --- reductions ---------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_sq(const Tensor& a);
/// Per-row squared L2 norm, rows x 1.
Tensor row_sum_sq(const Tensor& a);
/// Mean over rows inside each segment: segs.size() x cols.
Tensor segment_mean(const Tensor& a, const Segments& segs);

// --- normalisation ------------------------------------------------------
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

// --- structure ----------------------------------------------------------
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
/// Row gather; indices may repeat (gradients sum).
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index);
Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols);
Tensor transpose(const Tensor& a);
/// Row i of the result is b's row (row 0 when b has one row) where
/// take_b[i] is set, otherwise a's row i.
Tensor select_rows(const Tensor& a, const Tensor& b, const std::vector<bool>& take_b);

// --- sequence ops -------------------------------------------------------
enum class PadMode { kZero, kCircular };

struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  PadMode mode = PadMode::kZero;
};

/// Output length of a strided convolution over one segment.
std::size_t conv_out_length(std::size_t length, const ConvGeometry& g);
Segments conv_out_segments(const Segments& in, const ConvGeometry& g);
/// Unfolds each segment into rows of kernel*cols patches.
Tensor im2col(const Tensor& x, const Segments& segs, const ConvGeometry& g);

/// Output length of a transposed convolution over one segment.
std::size_t deconv_out_length(std::size_t length, const ConvGeometry& g);
Segments deconv_out_segments(const Segments& in, const ConvGeometry& g);
/// Folds rows of kernel*out_cols into a transposed-convolution output.
Tensor col2im(const Tensor& y, const Segments& in_segs, std::size_t out_cols,
              const ConvGeometry& g);

/// Multi-head scaled dot-product attention on packed batches. Query segment
/// i attends to key segment i only.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Segments& q_segs,
                 const Segments& k_segs, std::size_t heads);

/// Mean over rows of softmax cross-entropy; target is a column index per row.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<std::size_t>& targets);

}  // namespace crossmo::ad
