#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "ad/tensor.hpp"

namespace storygen::ad {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream out;
  out << "[";
  for (size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << "]";
  return out.str();
}

[[noreturn]] void shape_error(const char* op, const std::vector<int>& a,
                              const std::vector<int>& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                              shape_str(b));
}

void require(bool ok, const char* op, const char* what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

Tensor finish(const char* op, std::vector<int> shape, std::vector<real>&& value,
              std::initializer_list<Tensor> inputs, std::function<void(Node&)> backward_fn) {
  check_all_finite(op, value);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) {
      if (t.defined() && t.requires_grad()) {
        any = true;
        node->parents.push_back(t.node());
      }
    }
    if (any) {
      node->requires_grad = true;
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(node);
}

void accumulate(const NodePtr& parent, const std::vector<real>& contribution) {
  if (!parent->requires_grad) return;
  parent->ensure_grad();
  for (size_t i = 0; i < contribution.size(); ++i) parent->grad[i] += contribution[i];
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 2 && b.ndim() == 2, "matmul", "expects 2-D tensors");
  if (a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<real> out(static_cast<size_t>(m) * n);
  MapMat(out.data(), m, n).noalias() =
      CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
  auto an = a.node(), bn = b.node();
  return finish("matmul", {m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& self) {
    CMapMat g(self.grad.data(), m, n);
    if (an->requires_grad) {
      an->ensure_grad();
      MapMat(an->grad.data(), m, k).noalias() +=
          g * CMapMat(bn->value.data(), k, n).transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      MapMat(bn->grad.data(), k, n).noalias() +=
          CMapMat(an->value.data(), m, k).transpose() * g;
    }
  });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
  std::vector<real> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i], b.data()[i]);
  auto an = a.node(), bn = b.node();
  return finish(op, a.shape(), std::move(out), {a, b}, [an, bn, bwd](Node& self) {
    for (int side = 0; side < 2; ++side) {
      const NodePtr& p = side == 0 ? an : bn;
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        p->grad[i] += bwd(side, an->value[i], bn->value[i]) * self.grad[i];
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](real x, real y) { return x + y; },
      [](int, real, real) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](real x, real y) { return x - y; },
      [](int side, real, real) { return side == 0 ? 1.0 : -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](real x, real y) { return x * y; },
      [](int side, real x, real y) { return side == 0 ? y : x; });
}

Tensor scale(const Tensor& a, real c) {
  std::vector<real> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  auto an = a.node();
  return finish("scale", a.shape(), std::move(out), {a}, [an, c](Node& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += c * self.grad[i];
  });
}

Tensor add_tiled(const Tensor& x, const Tensor& block, int repeat) {
  require(repeat >= 1, "add_tiled", "repeat must be positive");
  std::vector<uint8_t> active(static_cast<size_t>(repeat), 1);
  return add_tiled_masked(x, block, active);
}

Tensor add_tiled_masked(const Tensor& x, const Tensor& block,
                        const std::vector<uint8_t>& active) {
  require(x.ndim() == 2 && block.ndim() == 2, "add_tiled", "expects 2-D tensors");
  const int repeat = static_cast<int>(active.size());
  if (x.dim(1) != block.dim(1) || x.dim(0) != repeat * block.dim(0))
    shape_error("add_tiled", x.shape(), block.shape());
  const int m = block.dim(0), n = block.dim(1);
  std::vector<real> out = x.data();
  for (int r = 0; r < repeat; ++r) {
    if (!active[static_cast<size_t>(r)]) continue;
    real* dst = out.data() + static_cast<size_t>(r) * m * n;
    const real* src = block.data().data();
    for (int i = 0; i < m * n; ++i) dst[i] += src[i];
  }
  auto xn = x.node(), bn = block.node();
  return finish("add_tiled", x.shape(), std::move(out), {x, block},
                [xn, bn, active, m, n, repeat](Node& self) {
                  if (xn->requires_grad) {
                    xn->ensure_grad();
                    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
                  }
                  if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (int r = 0; r < repeat; ++r) {
                      if (!active[static_cast<size_t>(r)]) continue;
                      const real* g = self.grad.data() + static_cast<size_t>(r) * m * n;
                      for (int i = 0; i < m * n; ++i) bn->grad[i] += g[i];
                    }
                  }
                });
}

Tensor gelu(const Tensor& x) {
  std::vector<real> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const real v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  }
  auto xn = x.node();
  return finish("gelu", x.shape(), std::move(out), {x}, [xn](Node& self) {
    xn->ensure_grad();
    constexpr real inv_sqrt_2pi = 0.3989422804014326779;
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const real v = xn->value[i];
      const real cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      const real pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      xn->grad[i] += (cdf + v * pdf) * self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<real> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const real v = x.data()[i];
    out[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  auto xn = x.node();
  return finish("sigmoid", x.shape(), std::move(out), {x}, [xn](Node& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const real y = self.value[i];
      xn->grad[i] += y * (1.0 - y) * self.grad[i];
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  const int n = x.cols(), rows = x.rows();
  std::vector<real> out(x.data().size());
  for (int r = 0; r < rows; ++r) {
    const real* src = x.data().data() + static_cast<size_t>(r) * n;
    real* dst = out.data() + static_cast<size_t>(r) * n;
    real mx = src[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, src[j]);
    real total = 0;
    for (int j = 0; j < n; ++j) total += dst[j] = std::exp(src[j] - mx);
    for (int j = 0; j < n; ++j) dst[j] /= total;
  }
  auto xn = x.node();
  return finish("softmax", x.shape(), std::move(out), {x}, [xn, rows, n](Node& self) {
    xn->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const real* y = self.value.data() + static_cast<size_t>(r) * n;
      const real* g = self.grad.data() + static_cast<size_t>(r) * n;
      real dot = 0;
      for (int j = 0; j < n; ++j) dot += y[j] * g[j];
      real* dst = xn->grad.data() + static_cast<size_t>(r) * n;
      for (int j = 0; j < n; ++j) dst[j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
  const int n = x.cols(), rows = x.rows();
  require(gamma.size() == n && beta.size() == n, "layer_norm", "gamma/beta must match last axis");
  std::vector<real> out(x.data().size());
  std::vector<real> inv_std(static_cast<size_t>(rows)), mean(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const real* src = x.data().data() + static_cast<size_t>(r) * n;
    real mu = 0;
    for (int j = 0; j < n; ++j) mu += src[j];
    mu /= n;
    real var = 0;
    for (int j = 0; j < n; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= n;
    const real is = 1.0 / std::sqrt(var + eps);
    mean[static_cast<size_t>(r)] = mu;
    inv_std[static_cast<size_t>(r)] = is;
    real* dst = out.data() + static_cast<size_t>(r) * n;
    for (int j = 0; j < n; ++j)
      dst[j] = (src[j] - mu) * is * gamma.data()[static_cast<size_t>(j)] +
               beta.data()[static_cast<size_t>(j)];
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return finish(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, rows, n, mean = std::move(mean), inv_std = std::move(inv_std)](Node& self) {
        std::vector<real> xhat(static_cast<size_t>(n));
        for (int r = 0; r < rows; ++r) {
          const real* src = xn->value.data() + static_cast<size_t>(r) * n;
          const real* g = self.grad.data() + static_cast<size_t>(r) * n;
          const real mu = mean[static_cast<size_t>(r)];
          const real is = inv_std[static_cast<size_t>(r)];
          for (int j = 0; j < n; ++j) xhat[static_cast<size_t>(j)] = (src[j] - mu) * is;
          if (gn->requires_grad) {
            gn->ensure_grad();
            for (int j = 0; j < n; ++j) gn->grad[static_cast<size_t>(j)] += g[j] * xhat[static_cast<size_t>(j)];
          }
          if (bn->requires_grad) {
            bn->ensure_grad();
            for (int j = 0; j < n; ++j) bn->grad[static_cast<size_t>(j)] += g[j];
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            real sum_dxhat = 0, sum_dxhat_xhat = 0;
            for (int j = 0; j < n; ++j) {
              const real dxh = g[j] * gn->value[static_cast<size_t>(j)];
              sum_dxhat += dxh;
              sum_dxhat_xhat += dxh * xhat[static_cast<size_t>(j)];
            }
            real* dst = xn->grad.data() + static_cast<size_t>(r) * n;
            for (int j = 0; j < n; ++j) {
              const real dxh = g[j] * gn->value[static_cast<size_t>(j)];
              dst[j] += is * (dxh - sum_dxhat / n - xhat[static_cast<size_t>(j)] * sum_dxhat_xhat / n);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  require(table.ndim() == 2, "embedding", "table must be 2-D");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw std::invalid_argument("embedding: id " + std::to_string(id) +
                                  " out of range for table of " + std::to_string(v) + " rows");
  std::vector<real> out(ids.size() * static_cast<size_t>(d));
  for (size_t i = 0; i < ids.size(); ++i) {
    const real* src = table.data().data() + static_cast<size_t>(ids[i]) * d;
    std::copy(src, src + d, out.data() + i * static_cast<size_t>(d));
  }
  auto tn = table.node();
  return finish("embedding", {static_cast<int>(ids.size()), d}, std::move(out), {table},
                [tn, ids, d](Node& self) {
                  tn->ensure_grad();
                  for (size_t i = 0; i < ids.size(); ++i) {
                    const real* g = self.grad.data() + i * static_cast<size_t>(d);
                    real* dst = tn->grad.data() + static_cast<size_t>(ids[i]) * d;
                    for (int j = 0; j < d; ++j) dst[j] += g[j];
                  }
                });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_head, int q_block_rows,
                 int kv_block_rows, const std::vector<int>& kv_of_block) {
  require(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2, "attention", "expects 2-D tensors");
  const int d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d) shape_error("attention", q.shape(), k.shape());
  if (k.shape() != v.shape()) shape_error("attention", k.shape(), v.shape());
  require(n_head >= 1 && d % n_head == 0, "attention", "hidden dim must divide by heads");
  require(q_block_rows >= 1 && q.dim(0) % q_block_rows == 0, "attention",
          "query rows must divide into blocks");
  require(kv_block_rows >= 1 && k.dim(0) % kv_block_rows == 0, "attention",
          "key/value rows must divide into blocks");
  const int blocks = q.dim(0) / q_block_rows;
  const int kv_blocks = k.dim(0) / kv_block_rows;
  require(static_cast<int>(kv_of_block.size()) == blocks, "attention",
          "kv_of_block must have one entry per query block");
  for (int g : kv_of_block)
    require(g >= 0 && g < kv_blocks, "attention", "kv_of_block entry out of range");

  const int sq = q_block_rows, sk = kv_block_rows, dh = d / n_head;
  const real att_scale = 1.0 / std::sqrt(static_cast<real>(dh));

  std::vector<real> out(q.data().size());
  // per-(block, head) softmax probabilities, kept for the backward pass
  auto probs = std::make_shared<std::vector<real>>(
      static_cast<size_t>(blocks) * n_head * sq * sk);

  CMapMat qm(q.data().data(), blocks * sq, d);
  CMapMat km(k.data().data(), kv_blocks * sk, d);
  CMapMat vm(v.data().data(), kv_blocks * sk, d);
  MapMat om(out.data(), blocks * sq, d);
  for (int b = 0; b < blocks; ++b) {
    const int g = kv_of_block[static_cast<size_t>(b)];
    for (int h = 0; h < n_head; ++h) {
      real* p_data = probs->data() + (static_cast<size_t>(b) * n_head + h) * sq * sk;
      MapMat p(p_data, sq, sk);
      p.noalias() = qm.block(b * sq, h * dh, sq, dh) *
                    km.block(g * sk, h * dh, sk, dh).transpose() * att_scale;
      // scalar softmax: bitwise reproducible regardless of buffer alignment
      for (int r = 0; r < sq; ++r) {
        real* row = p_data + static_cast<size_t>(r) * sk;
        real mx = row[0];
        for (int j = 1; j < sk; ++j) mx = std::max(mx, row[j]);
        real total = 0;
        for (int j = 0; j < sk; ++j) total += row[j] = std::exp(row[j] - mx);
        for (int j = 0; j < sk; ++j) row[j] /= total;
      }
      om.block(b * sq, h * dh, sq, dh).noalias() = p * vm.block(g * sk, h * dh, sk, dh);
    }
  }

  auto qn = q.node(), kn = k.node(), vn = v.node();
  return finish(
      "attention", q.shape(), std::move(out), {q, k, v},
      [qn, kn, vn, probs, n_head, blocks, kv_blocks, sq, sk, dh, d, att_scale,
       kv_of_block](Node& self) {
        if (qn->requires_grad) qn->ensure_grad();
        if (kn->requires_grad) kn->ensure_grad();
        if (vn->requires_grad) vn->ensure_grad();
        CMapMat qm(qn->value.data(), blocks * sq, d);
        CMapMat km(kn->value.data(), kv_blocks * sk, d);
        CMapMat vm(vn->value.data(), kv_blocks * sk, d);
        CMapMat gm(self.grad.data(), blocks * sq, d);
        RowMat dp(sq, sk), ds(sq, sk);
        for (int b = 0; b < blocks; ++b) {
          const int g = kv_of_block[static_cast<size_t>(b)];
          for (int h = 0; h < n_head; ++h) {
            CMapMat p(probs->data() + (static_cast<size_t>(b) * n_head + h) * sq * sk, sq, sk);
            auto go = gm.block(b * sq, h * dh, sq, dh);
            if (vn->requires_grad) {
              MapMat dv(vn->grad.data(), kv_blocks * sk, d);
              dv.block(g * sk, h * dh, sk, dh).noalias() += p.transpose() * go;
            }
            if (!qn->requires_grad && !kn->requires_grad) continue;
            dp.noalias() = go * vm.block(g * sk, h * dh, sk, dh).transpose();
            for (int r = 0; r < sq; ++r) {
              real dot = 0;
              for (int j = 0; j < sk; ++j) dot += dp(r, j) * p(r, j);
              ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot) * att_scale;
            }
            if (qn->requires_grad) {
              MapMat dq(qn->grad.data(), blocks * sq, d);
              dq.block(b * sq, h * dh, sq, dh).noalias() += ds * km.block(g * sk, h * dh, sk, dh);
            }
            if (kn->requires_grad) {
              MapMat dk(kn->grad.data(), kv_blocks * sk, d);
              dk.block(g * sk, h * dh, sk, dh).noalias() +=
                  ds.transpose() * qm.block(b * sq, h * dh, sq, dh);
            }
          }
        }
      });
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets) {
  const int n = logits.cols(), rows = logits.rows();
  require(static_cast<int>(targets.size()) == rows, "cross_entropy",
          "one target per logit row required");
  for (int t : targets)
    require(t >= 0 && t < n, "cross_entropy", "target id out of range");
  std::vector<real> out(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const real* src = logits.data().data() + static_cast<size_t>(r) * n;
    real mx = src[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, src[j]);
    real total = 0;
    for (int j = 0; j < n; ++j) total += std::exp(src[j] - mx);
    out[static_cast<size_t>(r)] = mx + std::log(total) - src[targets[static_cast<size_t>(r)]];
  }
  auto ln = logits.node();
  return finish("cross_entropy", {rows}, std::move(out), {logits}, [ln, targets, rows, n](Node& self) {
    ln->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const real g = self.grad[static_cast<size_t>(r)];
      if (g == 0.0) continue;
      const real* src = ln->value.data() + static_cast<size_t>(r) * n;
      real* dst = ln->grad.data() + static_cast<size_t>(r) * n;
      real mx = src[0];
      for (int j = 1; j < n; ++j) mx = std::max(mx, src[j]);
      real total = 0;
      for (int j = 0; j < n; ++j) total += std::exp(src[j] - mx);
      for (int j = 0; j < n; ++j) dst[j] += g * std::exp(src[j] - mx) / total;
      dst[targets[static_cast<size_t>(r)]] -= g;
    }
  });
}

Tensor weighted_sum(const Tensor& x, const std::vector<real>& weights) {
  require(x.data().size() == weights.size(), "weighted_sum", "weight length must match tensor");
  real total = 0;
  for (size_t i = 0; i < weights.size(); ++i) total += x.data()[i] * weights[i];
  auto xn = x.node();
  return finish("weighted_sum", {1}, {total}, {x}, [xn, weights](Node& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < weights.size(); ++i) xn->grad[i] += weights[i] * self.grad[0];
  });
}

Tensor sum(const Tensor& x) {
  real total = 0;
  for (real v : x.data()) total += v;
  auto xn = x.node();
  return finish("sum", {1}, {total}, {x}, [xn](Node& self) {
    xn->ensure_grad();
    for (auto& g : xn->grad) g += self.grad[0];
  });
}

Tensor sum_squares(const Tensor& x) {
  real total = 0;
  for (real v : x.data()) total += v * v;
  auto xn = x.node();
  return finish("sum_squares", {1}, {total}, {x}, [xn](Node& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += 2.0 * xn->value[i] * self.grad[0];
  });
}

Tensor bce_with_logits(const Tensor& logits, const std::vector<real>& targets) {
  require(logits.data().size() == targets.size(), "bce_with_logits",
          "target length must match logits");
  const size_t count = targets.size();
  real total = 0;
  for (size_t i = 0; i < count; ++i) {
    const real x = logits.data()[i], t = targets[i];
    total += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  auto ln = logits.node();
  return finish("bce_with_logits", {1}, {total / static_cast<real>(count)}, {logits},
                [ln, targets, count](Node& self) {
                  ln->ensure_grad();
                  const real g = self.grad[0] / static_cast<real>(count);
                  for (size_t i = 0; i < count; ++i) {
                    const real x = ln->value[i];
                    const real s =
                        x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                    ln->grad[i] += g * (s - targets[i]);
                  }
                });
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  int64_t count = 1;
  for (int d : shape) count *= d;
  if (count != x.size()) shape_error("reshape", x.shape(), shape);
  std::vector<real> out = x.data();
  auto xn = x.node();
  return finish("reshape", std::move(shape), std::move(out), {x}, [xn](Node& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows", "needs at least one part");
  const int n = parts.front().cols();
  int rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) shape_error("concat_rows", parts.front().shape(), p.shape());
    rows += p.rows();
  }
  std::vector<real> out;
  out.reserve(static_cast<size_t>(rows) * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  auto backward = [nodes, n](Node& self) {
    size_t offset = 0;
    for (const auto& p : nodes) {
      const size_t len = p->value.size();
      if (p->requires_grad) {
        p->ensure_grad();
        for (size_t i = 0; i < len; ++i) p->grad[i] += self.grad[offset + i];
      }
      offset += len;
    }
  };
  auto node = std::make_shared<Node>();
  node->shape = {rows, n};
  node->value = std::move(out);
  check_all_finite("concat_rows", node->value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parts)
      if (p.requires_grad()) {
        any = true;
        node->parents.push_back(p.node());
      }
    if (any) {
      node->requires_grad = true;
      node->backward_fn = std::move(backward);
    }
  }
  return Tensor(node);
}

Tensor slice_rows(const Tensor& x, int begin, int end) {
  const int n = x.cols(), rows = x.rows();
  require(0 <= begin && begin < end && end <= rows, "slice_rows", "row range out of bounds");
  std::vector<real> out(x.data().begin() + static_cast<size_t>(begin) * n,
                        x.data().begin() + static_cast<size_t>(end) * n);
  auto xn = x.node();
  return finish("slice_rows", {end - begin, n}, std::move(out), {x}, [xn, begin, n](Node& self) {
    xn->ensure_grad();
    real* dst = xn->grad.data() + static_cast<size_t>(begin) * n;
    for (size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
  });
}

Tensor interleave_blocks(const std::vector<Tensor>& parts, const std::vector<int>& rows_per_block,
                         int blocks) {
  require(!parts.empty() && parts.size() == rows_per_block.size(), "interleave_blocks",
          "one row count per part required");
  const int n = parts.front().cols();
  int stride = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    if (parts[p].cols() != n) shape_error("interleave_blocks", parts.front().shape(), parts[p].shape());
    require(parts[p].rows() == blocks * rows_per_block[p], "interleave_blocks",
            "part rows must equal blocks * rows_per_block");
    stride += rows_per_block[p];
  }
  std::vector<real> out(static_cast<size_t>(blocks) * stride * n);
  {
    size_t dst_row = 0;
    for (int b = 0; b < blocks; ++b) {
      for (size_t p = 0; p < parts.size(); ++p) {
        const int m = rows_per_block[p];
        const real* src =
            parts[p].data().data() + static_cast<size_t>(b) * m * n;
        std::copy(src, src + static_cast<size_t>(m) * n, out.data() + dst_row * n);
        dst_row += static_cast<size_t>(m);
      }
    }
  }
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  auto backward = [nodes, rows_per_block, blocks, n](Node& self) {
    size_t src_row = 0;
    for (int b = 0; b < blocks; ++b) {
      for (size_t p = 0; p < nodes.size(); ++p) {
        const int m = rows_per_block[p];
        if (nodes[p]->requires_grad) {
          nodes[p]->ensure_grad();
          real* dst = nodes[p]->grad.data() + static_cast<size_t>(b) * m * n;
          const real* g = self.grad.data() + src_row * n;
          for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) dst[i] += g[i];
        }
        src_row += static_cast<size_t>(m);
      }
    }
  };
  auto node = std::make_shared<Node>();
  node->shape = {blocks * stride, n};
  node->value = std::move(out);
  check_all_finite("interleave_blocks", node->value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parts)
      if (p.requires_grad()) {
        any = true;
        node->parents.push_back(p.node());
      }
    if (any) {
      node->requires_grad = true;
      node->backward_fn = std::move(backward);
    }
  }
  return Tensor(node);
}

Tensor detach(const Tensor& x) {
  return Tensor::from(x.shape(), x.data(), false);
}

}  // namespace storygen::ad
