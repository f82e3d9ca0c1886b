#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace storygen::ad {

// Project-wide scalar precision. 64-bit keeps finite-difference gradient
// checks reliable; desk-scale workloads are small enough not to care.
using real = double;

struct Node {
  std::vector<int> shape;
  std::vector<real> value;
  std::vector<real> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  int64_t size() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<Node>;

// Dense multi-dimensional array recorded on an implicit computation tape.
// Value semantics are handle semantics: copies share the node. Tensors are
// immutable once used as an op input, except gradient accumulation;
// mutable_data() exists for parameter initialization and optimizer updates
// between steps.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, real value);
  static Tensor from(std::vector<int> shape, std::vector<real> data, bool requires_grad = false);
  static Tensor scalar(real value);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t size() const { return node_->size(); }
  // rows/cols view of the trailing axis (ops that reduce "over the last axis")
  int cols() const { return node_->shape.back(); }
  int rows() const { return static_cast<int>(node_->size() / cols()); }

  const std::vector<real>& data() const { return node_->value; }
  std::vector<real>& mutable_data() { return node_->value; }
  real item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<real>& grad() const;
  std::vector<real>& mutable_grad() { return node_->grad; }
  void clear_grad() { node_->grad.clear(); }

  // Reverse-mode sweep from a scalar loss. Gradients accumulate additively
  // into every requires_grad tensor reachable through the tape.
  void backward() const;

  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

// While a guard is alive, ops do not record the tape (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

void check_all_finite(const char* op, const std::vector<real>& values);

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real c);
// x has rows == repeat * block.rows; block added once per tile
Tensor add_tiled(const Tensor& x, const Tensor& block, int repeat);
// same, but tile i is only added where active[i] != 0
Tensor add_tiled_masked(const Tensor& x, const Tensor& block, const std::vector<uint8_t>& active);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps = 1e-5);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// Fused multi-head scaled dot-product attention. q is B blocks of
// q_block_rows rows; k/v are G blocks of kv_block_rows rows; block b attends
// to kv block kv_of_block[b]. Softmax scale is 1/sqrt(head_dim).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_head, int q_block_rows,
                 int kv_block_rows, const std::vector<int>& kv_of_block);

// per-row negative log-likelihood over the last axis
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets);
Tensor weighted_sum(const Tensor& x, const std::vector<real>& weights);  // scalar
Tensor sum(const Tensor& x);                                             // scalar
Tensor sum_squares(const Tensor& x);                                     // scalar
Tensor bce_with_logits(const Tensor& logits, const std::vector<real>& targets);  // scalar mean

// same data, new shape (sizes must agree)
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int begin, int end);
// parts[p] holds `blocks` blocks of rows_per_block[p] rows; output interleaves
// them as (block0 of part0, block0 of part1, ..., block1 of part0, ...)
Tensor interleave_blocks(const std::vector<Tensor>& parts, const std::vector<int>& rows_per_block,
                         int blocks);
Tensor detach(const Tensor& x);

// convolution over [B, C, H, W]; weight [Cout, Cin, kh, kw]
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int pad);
// transposed convolution (adjoint of conv2d); weight [Cin, Cout, kh, kw]
Tensor conv2d_transpose(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                        int pad);
// layout bridges between image tensors and row-major feature matrices
Tensor nchw_to_rows(const Tensor& x);  // [B,C,H,W] -> [B*H*W, C]
Tensor rows_to_nchw(const Tensor& x, int batch, int channels, int height, int width);

}  // namespace storygen::ad
