#include "cimate/nn/optim.hpp"

#include <cmath>

#include "cimate/error.hpp"

namespace cimate::nn {

double lr_at(std::int64_t step, std::int64_t total_steps, double peak_lr, double warmup_frac) {
  if (total_steps <= 0) return 0.0;
  if (step < 0 || step > total_steps) throw InvalidArgument("step outside [0, total_steps]");
  if (warmup_frac <= 0.0 || warmup_frac >= 1.0) throw InvalidArgument("warmup_frac must be in (0, 1)");
  const double warmup = warmup_frac * static_cast<double>(total_steps);
  const auto s = static_cast<double>(step);
  if (s < warmup) return peak_lr * s / warmup;
  return peak_lr * (static_cast<double>(total_steps) - s) / (static_cast<double>(total_steps) - warmup);
}

template <typename T>
void AdamW<T>::step(ParamSet<T>& params, const std::vector<Tensor<T>>& grads, double lr) {
  if (!grads.empty() && grads.size() != params.size()) throw InvalidArgument("gradient count does not match parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() == 0) continue;
    if (grads[i].rows() != params[i].value.rows() || grads[i].cols() != params[i].value.cols()) {
      throw InvalidArgument("gradient shape mismatch for " + params[i].name);
    }
    if (!all_finite(grads[i])) throw NonFiniteGradient("in " + params[i].name);
  }
  if (state_.first_moment.size() != params.size()) {
    state_.first_moment.clear();
    state_.second_moment.clear();
    for (const auto& p : params) {
      state_.first_moment.push_back(Tensor<T>::Zero(p.value.rows(), p.value.cols()));
      state_.second_moment.push_back(Tensor<T>::Zero(p.value.rows(), p.value.cols()));
    }
  }
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(config_.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(config_.beta2, t));
  const T step_size = static_cast<T>(lr);
  const T eps = static_cast<T>(config_.eps);
  const T decay = static_cast<T>(1.0 - lr * config_.weight_decay);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    if (!p.trainable) continue;
    if (p.decay && config_.weight_decay != 0.0) {
      if (p.pad_row >= 0) {
        const Tensor<T> keep = p.value.row(p.pad_row);
        p.value *= decay;
        p.value.row(p.pad_row) = keep;
      } else {
        p.value *= decay;
      }
    }
    if (grads.empty() || grads[i].size() == 0) {
      // Zero gradient still advances the moments' decay.
      state_.first_moment[i] *= b1;
      state_.second_moment[i] *= b2;
    } else {
      state_.first_moment[i] = b1 * state_.first_moment[i] + (T(1) - b1) * grads[i];
      state_.second_moment[i] =
          b2 * state_.second_moment[i] + (T(1) - b2) * grads[i].cwiseProduct(grads[i]);
    }
    p.value.array() -= step_size * (state_.first_moment[i].array() / correction1) /
                       ((state_.second_moment[i].array() / correction2).sqrt() + eps);
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace cimate::nn
