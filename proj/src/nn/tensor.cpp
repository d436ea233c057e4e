#include "wagparse/nn/tensor.hpp"

#include <unordered_set>

#include "wagparse/errors.hpp"

namespace wagparse::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

Tensor Tensor::from(const std::vector<std::size_t>& shape, const std::vector<double>& values) {
  require(shape.size() == 1 || shape.size() == 2, ErrorCategory::kStructural, "tensor shape must have 1 or 2 dims");
  const std::size_t rows = shape.size() == 1 ? 1 : shape[0];
  const std::size_t cols = shape.back();
  require(rows * cols == values.size(), ErrorCategory::kStructural, "tensor value count does not match shape");
  Tensor t(rows, cols);
  std::copy(values.begin(), values.end(), t.matrix().data());
  return t;
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var param(Parameter& p) {
  auto node = std::make_shared<Node>();
  node->value = p.value.matrix();
  if (p.trainable && GradMode::enabled()) {
    node->requires_grad = true;
    node->parameter = &p;
  }
  return Var(std::move(node));
}

Var make_result(Matrix value, std::vector<NodePtr> inputs, std::function<void(Node&)> backward) {
  if (!value.allFinite()) fail(ErrorCategory::kNumeric, "non-finite value produced by an operation");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (GradMode::enabled()) {
    for (const auto& in : inputs) {
      if (in->requires_grad) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  require(loss.rows() == 1 && loss.cols() == 1, ErrorCategory::kStructural, "backward needs a scalar loss");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS over nodes that need gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad = Matrix::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->grad.size() == 0) continue;
    if (node->backward) node->backward(*node);
    if (node->parameter) node->parameter->grad.matrix() += node->grad;
  }
  // Drop intermediate gradients so the graph can be reused for inspection
  // without double counting.
  for (Node* node : order) node->grad.resize(0, 0);
}

}  // namespace wagparse::nn
