// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <unordered_set>

#include "crossmo/autograd.hpp"
#include "crossmo/errors.hpp"
#include "crossmo/simd.hpp"

namespace crossmo {

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) t.data[c * m.rows + r] = m.data[r * m.cols + c];
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw ShapeMismatch("matmul: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  simd::kernels().gemm(a.data.data(), b.data.data(), c.data.data(), a.rows, b.cols, a.cols, false);
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw ShapeMismatch("max_abs_diff: shapes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

bool all_finite(const Matrix& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace ad {
namespace {
thread_local bool g_grad_enabled = true;
}

Matrix& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Matrix(value.rows, value.cols);
  return grad;
}

Tensor Tensor::constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Tensor(std::move(n));
}

Tensor Tensor::parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Tensor(std::move(n));
}

double Tensor::item() const {
  if (node_->value.size() != 1) throw ShapeMismatch("item: tensor is not 1 x 1");
  return node_->value.data[0];
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor record(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const Tensor& t : inputs) any = any || t.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->inputs.reserve(inputs.size());
      for (const Tensor& t : inputs) n->inputs.push_back(t.defined() ? t.node() : nullptr);
      n->backprop = std::move(backprop);
    }
  }
  return Tensor(std::move(n));
}

void backward(const Tensor& root) {
  if (!root.defined() || root.value().size() != 1) throw ShapeMismatch("backward: root must be 1 x 1");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS over nodes that need gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child != nullptr && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
  for (Node* n : order) {
    if (n->backprop || !n->inputs.empty()) {
      n->backprop = nullptr;
      n->inputs.clear();
      n->grad = Matrix();
    }
  }
}

Segments pack_segments(const std::vector<std::size_t>& lengths) {
  Segments segs;
  segs.reserve(lengths.size());
  std::size_t off = 0;
  for (std::size_t len : lengths) {
    segs.push_back({off, len});
    off += len;
  }
  return segs;
}

std::size_t total_rows(const Segments& segs) {
  return segs.empty() ? 0 : segs.back().offset + segs.back().length;
}

}  // namespace ad
}  // namespace crossmo
