#include "ad/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace storygen::ad {

GradCheckReport finite_difference_check(const std::function<Tensor()>& loss_fn,
                                        const std::vector<std::pair<std::string, Tensor>>& params,
                                        int total_probes, RngStream& rng, real step) {
  if (params.empty()) throw std::invalid_argument("gradcheck: no parameters given");

  for (const auto& [name, p] : params) {
    Tensor handle = p;  // shared node
    handle.clear_grad();
  }
  Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<real>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) {
    if (!p.has_grad())
      throw std::runtime_error("gradcheck: loss does not reach parameter '" + name + "'");
    analytic.push_back(p.grad());
  }

  int64_t total_coords = 0;
  for (const auto& [name, p] : params) total_coords += p.size();

  GradCheckReport report;
  for (int probe = 0; probe < total_probes; ++probe) {
    int64_t flat = static_cast<int64_t>(rng.uniform() * static_cast<double>(total_coords));
    if (flat >= total_coords) flat = total_coords - 1;
    size_t which = 0;
    while (flat >= static_cast<int64_t>(params[which].second.size())) {
      flat -= params[which].second.size();
      ++which;
    }
    Tensor p = params[which].second;
    auto& data = p.mutable_data();
    const size_t i = static_cast<size_t>(flat);
    const real original = data[i];

    NoGradGuard no_grad;
    data[i] = original + step;
    const real up = loss_fn().item();
    data[i] = original - step;
    const real down = loss_fn().item();
    data[i] = original;

    const real numeric = (up - down) / (2.0 * step);
    const real a = analytic[which][i];
    const real denom = std::max({1e-3, std::abs(a), std::abs(numeric)});
    const real rel = std::abs(a - numeric) / denom;
    ++report.coordinates_checked;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_parameter =
          params[which].first + "[" + std::to_string(static_cast<long long>(flat)) + "]";
    }
  }
  return report;
}

}  // namespace storygen::ad
