#include "cimate/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cimate/error.hpp"

namespace cimate::nn {

GradCheckReport grad_check(const LossFn& loss, ParamSet<double>& params,
                           const GradCheckOptions& options) {
  std::vector<Tensor<double>> analytic;
  loss(params, &analytic);
  if (analytic.size() != params.size()) throw InvalidArgument("loss returned wrong gradient count");

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<double>& p = params[i];
    if (!p.trainable || p.value.size() == 0) continue;
    std::vector<Eigen::Index> candidates;
    if (analytic[i].size() != 0) {
      for (Eigen::Index j = 0; j < analytic[i].size(); ++j) {
        if (analytic[i].data()[j] != 0.0) candidates.push_back(j);
      }
    }
    if (candidates.empty()) {
      candidates.resize(static_cast<std::size_t>(p.value.size()));
      for (Eigen::Index j = 0; j < p.value.size(); ++j) candidates[static_cast<std::size_t>(j)] = j;
    }
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(std::min(candidates.size(), options.per_param));
    for (Eigen::Index j : candidates) {
      double& x = p.value.data()[j];
      const double saved = x;
      x = saved + options.eps;
      const double up = loss(params, nullptr);
      x = saved - options.eps;
      const double down = loss(params, nullptr);
      x = saved;
      const double fd = (up - down) / (2.0 * options.eps);
      const double ad = analytic[i].size() == 0 ? 0.0 : analytic[i].data()[j];
      const double scale = std::abs(ad) + std::abs(fd);
      const double err = std::max(std::abs(ad), std::abs(fd)) < options.abs_tol
                             ? 0.0
                             : std::abs(ad - fd) / std::max(1e-12, scale);
      ++report.coordinates;
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = p.name + "[" + std::to_string(j) + "]";
      }
    }
  }
  return report;
}

}  // namespace cimate::nn
