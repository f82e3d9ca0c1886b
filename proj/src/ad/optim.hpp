#pragma once

#include <map>
#include <string>
#include <vector>

#include "ad/tensor.hpp"
#include "core/checkpoint.hpp"
#include "core/rng.hpp"

namespace storygen::ad {

struct AdamSettings {
  real lr = 1e-3;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;
};

// Named map of trainable tensors plus Adam moment state. Names are unique
// and shapes are fixed at creation.
class ParameterStore {
 public:
  Tensor create(const std::string& name, std::vector<int> shape);
  // normal(0, sigma) initialization from the given stream
  Tensor create_normal(const std::string& name, std::vector<int> shape, RngStream& rng,
                       real sigma);
  Tensor create_constant(const std::string& name, std::vector<int> shape, real value);

  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  int64_t total_params() const;

  // One Adam update over every parameter; requires every gradient populated
  // and clears them afterwards.
  void adam_step(const AdamSettings& settings);
  void zero_grads();
  // Parameters untouched by the last backward get explicit zero gradients.
  void fill_missing_grads();
  int64_t step_count() const { return step_; }

  // checkpoint bridging; load validates shapes and names strictly
  std::vector<NamedArray> export_arrays() const;
  void import_arrays(const std::vector<NamedArray>& arrays);

 private:
  struct Slot {
    Tensor tensor;
    std::vector<real> m, v;
  };
  Slot& slot(const std::string& name);
  std::map<std::string, Slot> slots_;
  std::vector<std::string> order_;
  int64_t step_ = 0;
};

}  // namespace storygen::ad
