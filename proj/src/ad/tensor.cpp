#include "ad/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace storygen::ad {

namespace {

thread_local bool g_grad_enabled = true;

int64_t checked_size(const std::vector<int>& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value.assign(static_cast<size_t>(checked_size(shape)), 0.0);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::full(std::vector<int> shape, real value) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = value;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<real> data, bool requires_grad) {
  if (checked_size(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("tensor: shape does not match data length");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::scalar(real value) { return from({1}, {value}); }

real Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item: tensor is not scalar");
  return node_->value[0];
}

const std::vector<real>& Tensor::grad() const {
  if (node_->grad.empty()) throw std::runtime_error("grad: no gradient populated");
  return node_->grad;
}

void Tensor::backward() const {
  if (!defined()) throw std::invalid_argument("backward: undefined tensor");
  if (size() != 1) throw std::invalid_argument("backward: loss must be a scalar tensor");
  if (!node_->requires_grad)
    throw std::invalid_argument("backward: loss does not require gradients");

  // iterative post-order topological sort over the requires_grad subgraph
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node* parent = node->parents[next_child].get();
      ++next_child;
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
  for (Node* node : order) {
    if (!node->grad.empty()) check_all_finite("backward", node->grad);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void check_all_finite(const char* op, const std::vector<real>& values) {
  for (real v : values) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(op) + ": non-finite value produced");
  }
}

}  // namespace storygen::ad
