#pragma once

#include <cstdint>
#include <vector>

#include "cimate/nn/tensor.hpp"

namespace cimate::nn {

// Linear warmup from 0 to peak over the first warmup_frac * total steps,
// then linear decay to 0 at total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, double peak_lr, double warmup_frac = 0.1);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
struct OptimState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::int64_t step = 0;
};

// AdamW with bias correction and decoupled weight decay. Parameters marked
// decay = false (biases, layer norms) and padding rows are not decayed;
// frozen parameters are left untouched.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // `grads` or any `grads[i]` may be empty, meaning a zero gradient. Throws
  // NonFiniteGradient before touching any parameter.
  void step(ParamSet<T>& params, const std::vector<Tensor<T>>& grads, double lr);

  const OptimState<T>& state() const { return state_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  OptimState<T> state_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace cimate::nn
