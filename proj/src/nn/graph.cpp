#include "cimate/nn/graph.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cimate/error.hpp"

namespace cimate::nn {

template <typename T>
std::size_t ParamSet<T>::add(std::string name, Tensor<T> value, bool decay, int pad_row) {
  if (index_.count(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
  const std::size_t i = params_.size();
  index_.emplace(name, i);
  params_.push_back(Parameter<T>{std::move(name), std::move(value), decay, true, pad_row});
  return i;
}

template <typename T>
std::optional<std::size_t> ParamSet<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

template <typename T>
std::size_t ParamSet<T>::value_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template class ParamSet<float>;
template class ParamSet<double>;

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, const AttentionMask& mask,
                            Eigen::Index query_offset) {
  const T scale = T(1) / std::sqrt(static_cast<T>(q.cols()));
  Tensor<T> scores = (q * k.transpose()) * scale;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    T max_score = -std::numeric_limits<T>::infinity();
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (mask.allowed(i + query_offset, j)) max_score = std::max(max_score, scores(i, j));
    }
    if (max_score == -std::numeric_limits<T>::infinity()) {
      scores.row(i).setZero();
      continue;
    }
    T total = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (mask.allowed(i + query_offset, j)) {
        scores(i, j) = std::exp(scores(i, j) - max_score);
        total += scores(i, j);
      } else {
        scores(i, j) = 0;
      }
    }
    scores.row(i) /= total;
  }
  return scores;
}

template Tensor<float> attention_weights(const Tensor<float>&, const Tensor<float>&,
                                         const AttentionMask&, Eigen::Index);
template Tensor<double> attention_weights(const Tensor<double>&, const Tensor<double>&,
                                          const AttentionMask&, Eigen::Index);

template <typename T>
Graph<T>::Graph(const ParamSet<T>* params, bool record) : params_(params), record_(record) {
  if (params_) param_grads_.resize(params_->size());
}

template <typename T>
Var Graph<T>::push(Mat value, bool requires_grad, std::function<void()> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && record_;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
typename Graph<T>::Mat& Graph<T>::acc(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(value(Var{id}).rows(), value(Var{id}).cols());
  return n.grad;
}

template <typename T>
typename Graph<T>::Mat& Graph<T>::param_acc(std::size_t index) {
  Mat& g = param_grads_[index];
  if (g.size() == 0) g = Mat::Zero((*params_)[index].value.rows(), (*params_)[index].value.cols());
  return g;
}

template <typename T>
bool Graph<T>::any_grad(std::initializer_list<Var> vars) const {
  if (!record_) return false;
  for (Var v : vars) {
    if (nodes_[v.id].requires_grad) return true;
  }
  return false;
}

template <typename T>
const typename Graph<T>::Mat& Graph<T>::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ref ? *n.ref : n.value;
}

template <typename T>
Var Graph<T>::constant(Mat value) {
  return push(std::move(value), false);
}

template <typename T>
Var Graph<T>::param(std::size_t index) {
  if (!params_ || index >= params_->size()) throw InvalidArgument("parameter index out of range");
  Node n;
  n.ref = &(*params_)[index].value;
  n.param = static_cast<int>(index);
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::embedding(std::size_t param_index, const std::vector<std::int32_t>& ids) {
  const Mat& table = (*params_)[param_index].value;
  Mat out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw InvalidArgument("embedding id " + std::to_string(ids[i]) + " out of range for " +
                            (*params_)[param_index].name);
    }
    out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  }
  Var result = push(std::move(out), record_);
  if (nodes_[result.id].requires_grad) {
    nodes_[result.id].backward = [this, result, param_index, ids] {
      const Mat& g = nodes_[result.id].grad;
      Mat& pg = param_acc(param_index);
      for (std::size_t i = 0; i < ids.size(); ++i) pg.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    };
  }
  return result;
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  Mat out = value(a) * value(b);
  Var r = push(std::move(out), any_grad({a, b}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, b, r] {
      const Mat& g = nodes_[r.id].grad;
      if (nodes_[a.id].requires_grad) acc(a.id).noalias() += g * value(b).transpose();
      if (nodes_[b.id].requires_grad) acc(b.id).noalias() += value(a).transpose() * g;
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::linear(Var x, Var w, Var b) {
  Mat out = value(x) * value(w);
  out.rowwise() += value(b).row(0);
  Var r = push(std::move(out), any_grad({x, w, b}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, x, w, b, r] {
      const Mat& g = nodes_[r.id].grad;
      if (nodes_[x.id].requires_grad) acc(x.id).noalias() += g * value(w).transpose();
      if (nodes_[w.id].requires_grad) acc(w.id).noalias() += value(x).transpose() * g;
      if (nodes_[b.id].requires_grad) acc(b.id) += g.colwise().sum();
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  assert(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols());
  Mat out = value(a) + value(b);
  Var r = push(std::move(out), any_grad({a, b}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, b, r] {
      const Mat& g = nodes_[r.id].grad;
      if (nodes_[a.id].requires_grad) acc(a.id) += g;
      if (nodes_[b.id].requires_grad) acc(b.id) += g;
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  Mat out = value(a) - value(b);
  Var r = push(std::move(out), any_grad({a, b}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, b, r] {
      const Mat& g = nodes_[r.id].grad;
      if (nodes_[a.id].requires_grad) acc(a.id) += g;
      if (nodes_[b.id].requires_grad) acc(b.id) -= g;
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  Mat out = value(a).cwiseProduct(value(b));
  Var r = push(std::move(out), any_grad({a, b}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, b, r] {
      const Mat& g = nodes_[r.id].grad;
      if (nodes_[a.id].requires_grad) acc(a.id) += g.cwiseProduct(value(b));
      if (nodes_[b.id].requires_grad) acc(b.id) += g.cwiseProduct(value(a));
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::add_row(Var a, Var row) {
  Mat out = value(a);
  out.rowwise() += value(row).row(0);
  Var r = push(std::move(out), any_grad({a, row}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, row, r] {
      const Mat& g = nodes_[r.id].grad;
      if (nodes_[a.id].requires_grad) acc(a.id) += g;
      if (nodes_[row.id].requires_grad) acc(row.id) += g.colwise().sum();
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
  Mat out = value(a) * factor;
  Var r = push(std::move(out), any_grad({a}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, r, factor] { acc(a.id) += nodes_[r.id].grad * factor; };
  }
  return r;
}

template <typename T>
Var Graph<T>::one_minus(Var a) {
  Mat out = (T(1) - value(a).array()).matrix();
  Var r = push(std::move(out), any_grad({a}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, r] { acc(a.id) -= nodes_[r.id].grad; };
  }
  return r;
}

template <typename T>
Var Graph<T>::gelu(Var a) {
  const Mat& x = value(a);
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  Mat out = x.unaryExpr([inv_sqrt2](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); });
  Var r = push(std::move(out), any_grad({a}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, r, inv_sqrt2] {
      const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * T(M_PI));
      const Mat d = value(a).unaryExpr([&](T v) {
        return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * std::exp(T(-0.5) * v * v) * inv_sqrt_2pi;
      });
      acc(a.id) += nodes_[r.id].grad.cwiseProduct(d);
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::tanh(Var a) {
  Mat out = value(a).array().tanh().matrix();
  Var r = push(std::move(out), any_grad({a}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, r] {
      const Mat& y = nodes_[r.id].value;
      acc(a.id) += (nodes_[r.id].grad.array() * (T(1) - y.array().square())).matrix();
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::sigmoid(Var a) {
  Mat out = value(a).unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  Var r = push(std::move(out), any_grad({a}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, a, r] {
      const Mat& y = nodes_[r.id].value;
      acc(a.id) += (nodes_[r.id].grad.array() * y.array() * (T(1) - y.array())).matrix();
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
  const Mat& in = value(x);
  const Eigen::Index n = in.cols();
  Mat normalized(in.rows(), n);
  Tensor<T> inv_std(in.rows(), 1);
  for (Eigen::Index i = 0; i < in.rows(); ++i) {
    const T mean = in.row(i).mean();
    const T var = (in.row(i).array() - mean).square().mean();
    inv_std(i, 0) = T(1) / std::sqrt(var + eps);
    normalized.row(i) = (in.row(i).array() - mean) * inv_std(i, 0);
  }
  Mat out = normalized.array().rowwise() * value(gamma).row(0).array();
  out.rowwise() += value(beta).row(0);
  Var r = push(std::move(out), any_grad({x, gamma, beta}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, x, gamma, beta, r, normalized = std::move(normalized),
                             inv_std = std::move(inv_std)] {
      const Mat& g = nodes_[r.id].grad;
      if (nodes_[gamma.id].requires_grad) acc(gamma.id) += g.cwiseProduct(normalized).colwise().sum();
      if (nodes_[beta.id].requires_grad) acc(beta.id) += g.colwise().sum();
      if (nodes_[x.id].requires_grad) {
        Mat dnorm = g.array().rowwise() * value(gamma).row(0).array();
        Mat& dx = acc(x.id);
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          const T mean_d = dnorm.row(i).mean();
          const T mean_dx = dnorm.row(i).cwiseProduct(normalized.row(i)).mean();
          dx.row(i).array() +=
              inv_std(i, 0) * (dnorm.row(i).array() - mean_d - normalized.row(i).array() * mean_dx);
        }
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::attention(Var q, Var k, Var v, int heads, const AttentionMask& mask,
                        Eigen::Index query_offset) {
  const Mat& Q = value(q);
  const Mat& K = value(k);
  const Mat& V = value(v);
  const Eigen::Index width = Q.cols();
  if (heads <= 0 || width % heads != 0) throw InvalidArgument("width must be divisible by heads");
  const Eigen::Index dh = width / heads;
  Mat out(Q.rows(), width);
  std::vector<Mat> probs(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const auto cols = Eigen::seqN(h * dh, dh);
    Mat Qh = Q(Eigen::all, cols);
    Mat Kh = K(Eigen::all, cols);
    probs[h] = attention_weights<T>(Qh, Kh, mask, query_offset);
    out(Eigen::all, cols).noalias() = probs[h] * V(Eigen::all, cols);
  }
  Var r = push(std::move(out), any_grad({q, k, v}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, q, k, v, r, heads, dh, probs = std::move(probs)] {
      const Mat& g = nodes_[r.id].grad;
      const Mat& Qv = value(q);
      const Mat& Kv = value(k);
      const Mat& Vv = value(v);
      const T scale = T(1) / std::sqrt(static_cast<T>(dh));
      const bool gq = nodes_[q.id].requires_grad;
      const bool gk = nodes_[k.id].requires_grad;
      const bool gv = nodes_[v.id].requires_grad;
      for (int h = 0; h < heads; ++h) {
        const auto cols = Eigen::seqN(h * dh, dh);
        const Mat& P = probs[h];
        Mat gh = g(Eigen::all, cols);
        if (gv) acc(v.id)(Eigen::all, cols) += P.transpose() * gh;
        Mat dP = gh * Vv(Eigen::all, cols).transpose();
        Mat dS = P.cwiseProduct(dP);
        const Tensor<T> row_dot = dS.rowwise().sum();
        dS -= P.cwiseProduct(row_dot.replicate(1, P.cols()));
        dS *= scale;
        if (gq) acc(q.id)(Eigen::all, cols) += dS * Kv(Eigen::all, cols);
        if (gk) acc(k.id)(Eigen::all, cols) += dS.transpose() * Qv(Eigen::all, cols);
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::rows(Var x, Eigen::Index begin, Eigen::Index count) {
  Mat out = value(x).middleRows(begin, count);
  Var r = push(std::move(out), any_grad({x}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, x, r, begin, count] {
      acc(x.id).middleRows(begin, count) += nodes_[r.id].grad;
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::mean_rows(Var x) {
  const Eigen::Index n = value(x).rows();
  Mat out = value(x).colwise().sum() / static_cast<T>(n);
  Var r = push(std::move(out), any_grad({x}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, x, r, n] {
      acc(x.id).rowwise() += nodes_[r.id].grad.row(0) / static_cast<T>(n);
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::stack_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("stack_rows needs at least one input");
  Eigen::Index total = 0;
  const Eigen::Index cols = value(parts[0]).cols();
  bool needs = false;
  for (Var p : parts) {
    if (value(p).cols() != cols) throw InvalidArgument("stack_rows width mismatch");
    total += value(p).rows();
    needs = needs || (record_ && nodes_[p.id].requires_grad);
  }
  Mat out(total, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  Var r = push(std::move(out), needs);
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, parts, r] {
      Eigen::Index offset = 0;
      for (Var p : parts) {
        const Eigen::Index n = value(p).rows();
        if (nodes_[p.id].requires_grad) acc(p.id) += nodes_[r.id].grad.middleRows(offset, n);
        offset += n;
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::dropout(Var x, T rate, std::mt19937_64& rng) {
  if (rate <= T(0)) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const T factor = T(1) / (T(1) - rate);
  Mat mask(value(x).rows(), value(x).cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? factor : T(0);
  Mat out = value(x).cwiseProduct(mask);
  Var r = push(std::move(out), any_grad({x}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, x, r, mask = std::move(mask)] {
      acc(x.id) += nodes_[r.id].grad.cwiseProduct(mask);
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::mse(Var pred, const Mat& target) {
  const Mat diff = value(pred) - target;
  const T n = static_cast<T>(diff.size());
  Mat out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  Var r = push(std::move(out), any_grad({pred}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, pred, r, diff, n] {
      acc(pred.id) += diff * (T(2) * nodes_[r.id].grad(0, 0) / n);
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::sum(Var x) {
  Mat out(1, 1);
  out(0, 0) = value(x).sum();
  Var r = push(std::move(out), any_grad({x}));
  if (nodes_[r.id].requires_grad) {
    nodes_[r.id].backward = [this, x, r] {
      acc(x.id).array() += nodes_[r.id].grad(0, 0);
    };
  }
  return r;
}

template <typename T>
void Graph<T>::backward(Var root, T seed) {
  if (!nodes_[root.id].requires_grad) return;
  acc(root.id).array() += seed;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.param >= 0) {
      param_acc(static_cast<std::size_t>(n.param)) += n.grad;
    } else if (n.backward) {
      n.backward();
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace cimate::nn
