#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "cimate/nn/graph.hpp"
#include "cimate/textproc.hpp"

namespace cimate::nn {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  int layers = 2;
  int heads = 4;
  int width = 128;
  int ff_width = 512;
  int max_positions = 512;
  double dropout = 0.1;  // inside the encoder, training only
  int attention_window = 0;  // 0 = full attention

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Indices of one post-norm transformer block inside a ParamSet.
struct BlockParams {
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln1_gamma, ln1_beta;
  std::size_t w1, b1, w2, b2;
  std::size_t ln2_gamma, ln2_beta;
};

template <typename T>
BlockParams register_block(ParamSet<T>& params, const std::string& prefix, int width, int ff_width,
                           std::mt19937_64& rng);

struct DenseParams {
  std::size_t weight, bias;
};

template <typename T>
DenseParams register_dense(ParamSet<T>& params, const std::string& prefix, int in, int out,
                           std::mt19937_64& rng);

template <typename T>
Var dense(Graph<T>& g, const DenseParams& p, Var x) {
  return g.linear(x, g.param(p.weight), g.param(p.bias));
}

// x = LN(x + Attn(x)); x = LN(x + FFN(x)). When `query_rows` > 0 only the
// first query_rows positions are produced (keys still span all of x).
template <typename T>
Var block_forward(Graph<T>& g, const BlockParams& p, Var x, int heads, const AttentionMask& mask,
                  T dropout, std::mt19937_64* rng, Eigen::Index query_rows = 0);

// Token + position + segment embeddings, embedding layer norm, then
// `layers` blocks. Produces the CLS (position 0) vector.
class Encoder {
 public:
  Encoder() = default;
  template <typename T>
  Encoder(const EncoderConfig& config, ParamSet<T>& params, std::mt19937_64& rng,
          const std::string& prefix = "enc");

  const EncoderConfig& config() const { return config_; }
  const std::vector<std::size_t>& param_indices() const { return indices_; }

  // CLS vector [1 x width] of one sequence. Padding past the last real
  // token is never materialized. `rng` enables dropout.
  template <typename T>
  Var cls(Graph<T>& g, const TokenSeq& seq, std::mt19937_64* rng) const;

  // Inference over a batch: [batch x width].
  template <typename T>
  Tensor<T> forward(const std::vector<TokenSeq>& batch, const ParamSet<T>& params) const;

 private:
  EncoderConfig config_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, seg_emb_ = 0, emb_ln_gamma_ = 0, emb_ln_beta_ = 0;
  std::vector<BlockParams> blocks_;
  std::vector<std::size_t> indices_;
};

// Gated recurrent unit:
//   z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br)
//   c = tanh(x Wc + (r * h) Uc + bc), h' = (1 - z) * h + z * c
class Gru {
 public:
  Gru() = default;
  template <typename T>
  Gru(int input_width, int hidden_width, ParamSet<T>& params, std::mt19937_64& rng,
      const std::string& prefix = "gru");

  int hidden_width() const { return hidden_; }

  // Final hidden state [1 x hidden] after consuming the rows of `steps` in order.
  template <typename T>
  Var aggregate(Graph<T>& g, const std::vector<Var>& steps) const;

  template <typename T>
  Tensor<T> aggregate(const Tensor<T>& seq, const ParamSet<T>& params) const;

  struct Gate {
    std::size_t w, u, b;
  };
  Gate update, reset, candidate;

 private:
  int input_ = 0, hidden_ = 0;
};

}  // namespace cimate::nn
