#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cimate/nn/tensor.hpp"

namespace cimate::nn {

// Evaluates the loss at `params`; when `grads` is non-null it also fills the
// reverse-mode gradient (one entry per parameter, empty = zero).
using LossFn = std::function<double(const ParamSet<double>& params, std::vector<Tensor<double>>* grads)>;

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t per_param = 4;  // coordinates sampled from each trainable tensor
  double abs_tol = 1e-7;      // both gradients below this count as agreeing
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_param;
};

// Central differences against the reverse-mode gradient on a random sample
// of coordinates; error = |g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|).
// Coordinates with a non-zero analytic gradient are preferred when sampling;
// a coordinate where both gradients are below abs_tol scores zero error.
GradCheckReport grad_check(const LossFn& loss, ParamSet<double>& params,
                           const GradCheckOptions& options = {});

}  // namespace cimate::nn
