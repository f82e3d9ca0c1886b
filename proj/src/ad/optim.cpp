#include "ad/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace storygen::ad {

Tensor ParameterStore::create(const std::string& name, std::vector<int> shape) {
  if (slots_.count(name))
    throw std::invalid_argument("parameter store: duplicate parameter '" + name + "'");
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  slots_[name] = Slot{t, {}, {}};
  order_.push_back(name);
  return t;
}

Tensor ParameterStore::create_normal(const std::string& name, std::vector<int> shape,
                                     RngStream& rng, real sigma) {
  Tensor t = create(name, std::move(shape));
  for (auto& v : t.mutable_data()) v = rng.normal(0.0, sigma);
  return t;
}

Tensor ParameterStore::create_constant(const std::string& name, std::vector<int> shape,
                                       real value) {
  Tensor t = create(name, std::move(shape));
  for (auto& v : t.mutable_data()) v = value;
  return t;
}

ParameterStore::Slot& ParameterStore::slot(const std::string& name) {
  auto it = slots_.find(name);
  if (it == slots_.end())
    throw std::invalid_argument("parameter store: unknown parameter '" + name + "'");
  return it->second;
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end())
    throw std::invalid_argument("parameter store: unknown parameter '" + name + "'");
  return it->second.tensor;
}

bool ParameterStore::has(const std::string& name) const { return slots_.count(name) > 0; }

int64_t ParameterStore::total_params() const {
  int64_t total = 0;
  for (const auto& [name, s] : slots_) total += s.tensor.size();
  return total;
}

void ParameterStore::adam_step(const AdamSettings& settings) {
  for (const auto& name : order_) {
    if (!slot(name).tensor.has_grad())
      throw std::runtime_error("adam_step: missing gradient for parameter '" + name + "'");
  }
  ++step_;
  const real t = static_cast<real>(step_);
  const real bc1 = 1.0 - std::pow(settings.beta1, t);
  const real bc2 = 1.0 - std::pow(settings.beta2, t);
  for (const auto& name : order_) {
    Slot& s = slot(name);
    auto& w = s.tensor.mutable_data();
    const auto& g = s.tensor.grad();
    if (s.m.empty()) {
      s.m.assign(w.size(), 0.0);
      s.v.assign(w.size(), 0.0);
    }
    for (size_t i = 0; i < w.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw std::runtime_error("adam_step: non-finite gradient in parameter '" + name + "'");
      s.m[i] = settings.beta1 * s.m[i] + (1.0 - settings.beta1) * g[i];
      s.v[i] = settings.beta2 * s.v[i] + (1.0 - settings.beta2) * g[i] * g[i];
      w[i] -= settings.lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + settings.eps);
    }
    s.tensor.clear_grad();
  }
}

void ParameterStore::zero_grads() {
  for (const auto& name : order_) slot(name).tensor.clear_grad();
}

void ParameterStore::fill_missing_grads() {
  for (const auto& name : order_) {
    Slot& s = slot(name);
    if (!s.tensor.has_grad()) s.tensor.node()->ensure_grad();
  }
}

std::vector<NamedArray> ParameterStore::export_arrays() const {
  std::vector<NamedArray> arrays;
  arrays.reserve(order_.size());
  for (const auto& name : order_) {
    const auto it = slots_.find(name);
    arrays.push_back({name, it->second.tensor.shape(), it->second.tensor.data()});
  }
  return arrays;
}

void ParameterStore::import_arrays(const std::vector<NamedArray>& arrays) {
  if (arrays.size() != order_.size())
    throw std::runtime_error("parameter store: checkpoint has " + std::to_string(arrays.size()) +
                             " tensors, expected " + std::to_string(order_.size()));
  for (const auto& a : arrays) {
    Slot& s = slot(a.name);
    if (a.shape != s.tensor.shape()) {
      auto fmt = [](const std::vector<int>& v) {
        std::string out = "[";
        for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
        return out + "]";
      };
      throw std::runtime_error("parameter store: shape mismatch for tensor '" + a.name +
                               "': checkpoint " + fmt(a.shape) + " vs model " +
                               fmt(s.tensor.shape()));
    }
    s.tensor.mutable_data() = a.data;
  }
}

}  // namespace storygen::ad
