#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ad/tensor.hpp"
#include "core/rng.hpp"

namespace storygen::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int coordinates_checked = 0;
  std::string worst_parameter;
  bool passed(double tolerance) const { return coordinates_checked > 0 && max_rel_err < tolerance; }
};

// Central finite differences against the analytic gradients of `loss_fn`.
// The loss function must rebuild its graph on every call so perturbed
// parameters take effect. Probes `total_probes` coordinates drawn uniformly
// over all given parameters. Independent of the reverse-mode path: it only
// ever evaluates the forward value.
GradCheckReport finite_difference_check(const std::function<Tensor()>& loss_fn,
                                        const std::vector<std::pair<std::string, Tensor>>& params,
                                        int total_probes, RngStream& rng, real step = 1e-5);

}  // namespace storygen::ad
