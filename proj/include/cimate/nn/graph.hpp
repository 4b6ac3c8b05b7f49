#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "cimate/nn/tensor.hpp"

namespace cimate::nn {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Which keys each query may attend to. Keys with key_mask = 0 are never
// attended; a positive window additionally limits |query - key| <= window.
struct AttentionMask {
  std::vector<std::uint8_t> key_mask;  // empty means all keys valid
  int window = 0;

  bool allowed(Eigen::Index query, Eigen::Index key) const {
    if (!key_mask.empty() && !key_mask[static_cast<std::size_t>(key)]) return false;
    if (window > 0) {
      const auto d = query > key ? query - key : key - query;
      if (d > window) return false;
    }
    return true;
  }
};

// Softmax attention weights of one head. `query_offset` is the absolute
// position of q's first row (keys start at 0). Rows with no admissible key
// are all zero.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, const AttentionMask& mask,
                            Eigen::Index query_offset = 0);

// Tape for reverse-mode differentiation. Nodes are appended in evaluation
// order, so replaying the tape backwards visits every consumer before its
// inputs. Parameter leaves reference the ParamSet without copying.
template <typename T>
class Graph {
 public:
  using Mat = Tensor<T>;

  // With record = false no backward closures are kept (inference mode).
  explicit Graph(const ParamSet<T>* params = nullptr, bool record = true);

  Var constant(Mat value);
  Var param(std::size_t index);
  Var embedding(std::size_t param_index, const std::vector<std::int32_t>& ids);

  const Mat& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var linear(Var x, Var w, Var b);  // x w + b, b broadcast across rows
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_row(Var a, Var row);
  Var scale(Var a, T factor);
  Var one_minus(Var a);
  Var gelu(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-12));
  // Multi-head attention over pre-projected q [m x D], k, v [n x D].
  Var attention(Var q, Var k, Var v, int heads, const AttentionMask& mask,
                Eigen::Index query_offset = 0);
  Var rows(Var x, Eigen::Index begin, Eigen::Index count);
  Var mean_rows(Var x);
  Var stack_rows(const std::vector<Var>& parts);
  Var dropout(Var x, T rate, std::mt19937_64& rng);
  Var mse(Var pred, const Mat& target);  // 1 x 1 mean squared error
  Var sum(Var x);                        // 1 x 1

  // Seeds d(root) with `seed` and propagates. Parameter gradients accumulate
  // into param_grads(); untouched parameters keep an empty matrix.
  void backward(Var root, T seed = T(1));
  const std::vector<Mat>& param_grads() const { return param_grads_; }
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }

 private:
  struct Node {
    Mat value;
    const Mat* ref = nullptr;
    Mat grad;
    bool requires_grad = false;
    int param = -1;
    std::function<void()> backward;
  };

  Var push(Mat value, bool requires_grad, std::function<void()> backward = {});
  Mat& acc(int id);
  bool any_grad(std::initializer_list<Var> vars) const;
  Mat& param_acc(std::size_t index);

  const ParamSet<T>* params_;
  bool record_;
  std::vector<Node> nodes_;
  std::vector<Mat> param_grads_;
};

extern template class Graph<float>;
extern template class Graph<double>;
extern template Tensor<float> attention_weights(const Tensor<float>&, const Tensor<float>&,
                                                const AttentionMask&, Eigen::Index);
extern template Tensor<double> attention_weights(const Tensor<double>&, const Tensor<double>&,
                                                 const AttentionMask&, Eigen::Index);

}  // namespace cimate::nn
