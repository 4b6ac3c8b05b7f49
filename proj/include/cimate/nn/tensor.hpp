#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace cimate::nn {

// Row-major dense matrix. Vectors are 1 x n.
template <typename T>
using Tensor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return t.allFinite();
}

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool decay = true;      // subject to decoupled weight decay
  bool trainable = true;  // frozen parameters are skipped by the optimizer
  int pad_row = -1;       // row excluded from decay (embedding padding)
};

// Ordered, named parameter store. Components keep indices into it, so two
// stores built by the same registration sequence are interchangeable.
template <typename T>
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor<T> value, bool decay = true, int pad_row = -1);

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t value_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : params_) {
      const std::size_t i = out.add(p.name, p.value.template cast<U>(), p.decay, p.pad_row);
      out[i].trainable = p.trainable;
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Normal(0, stddev) truncated to +-2 stddev.
template <typename T>
Tensor<T> truncated_normal(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<T> out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    double z = dist(rng);
    while (z < -2.0 || z > 2.0) z = dist(rng);
    out.data()[i] = static_cast<T>(z * stddev);
  }
  return out;
}

extern template class ParamSet<float>;
extern template class ParamSet<double>;

}  // namespace cimate::nn
