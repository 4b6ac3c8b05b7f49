#include "cimate/nn/layers.hpp"

#include <numeric>

#include "cimate/error.hpp"

namespace cimate::nn {

namespace {
constexpr double kInitStddev = 0.02;
}

void EncoderConfig::validate() const {
  if (vocab_size < Vocab::kReserved) throw InvalidArgument("encoder vocab_size too small");
  if (layers < 1 || heads < 1 || width < 1 || ff_width < 1 || max_positions < 1) {
    throw InvalidArgument("encoder dimensions must be positive");
  }
  if (width % heads != 0) throw InvalidArgument("encoder width must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("encoder dropout must be in [0, 1)");
}

template <typename T>
DenseParams register_dense(ParamSet<T>& params, const std::string& prefix, int in, int out,
                           std::mt19937_64& rng) {
  DenseParams p;
  p.weight = params.add(prefix + ".weight", truncated_normal<T>(in, out, kInitStddev, rng));
  p.bias = params.add(prefix + ".bias", Tensor<T>::Zero(1, out), false);
  return p;
}

template <typename T>
BlockParams register_block(ParamSet<T>& params, const std::string& prefix, int width, int ff_width,
                           std::mt19937_64& rng) {
  BlockParams b;
  auto d = [&](const char* name, int in, int out) {
    return register_dense<T>(params, prefix + "." + name, in, out, rng);
  };
  DenseParams q = d("query", width, width), k = d("key", width, width), v = d("value", width, width),
              o = d("output", width, width);
  b.wq = q.weight, b.bq = q.bias, b.wk = k.weight, b.bk = k.bias;
  b.wv = v.weight, b.bv = v.bias, b.wo = o.weight, b.bo = o.bias;
  b.ln1_gamma = params.add(prefix + ".ln1.gamma", Tensor<T>::Ones(1, width), false);
  b.ln1_beta = params.add(prefix + ".ln1.beta", Tensor<T>::Zero(1, width), false);
  DenseParams f1 = d("ff1", width, ff_width), f2 = d("ff2", ff_width, width);
  b.w1 = f1.weight, b.b1 = f1.bias, b.w2 = f2.weight, b.b2 = f2.bias;
  b.ln2_gamma = params.add(prefix + ".ln2.gamma", Tensor<T>::Ones(1, width), false);
  b.ln2_beta = params.add(prefix + ".ln2.beta", Tensor<T>::Zero(1, width), false);
  return b;
}

template <typename T>
Var block_forward(Graph<T>& g, const BlockParams& p, Var x, int heads, const AttentionMask& mask,
                  T dropout, std::mt19937_64* rng, Eigen::Index query_rows) {
  auto lin = [&](Var in, std::size_t w, std::size_t b) { return g.linear(in, g.param(w), g.param(b)); };
  auto drop = [&](Var in) { return rng ? g.dropout(in, dropout, *rng) : in; };

  const Var xq = query_rows > 0 ? g.rows(x, 0, query_rows) : x;
  const Var q = lin(xq, p.wq, p.bq);
  const Var k = lin(x, p.wk, p.bk);
  const Var v = lin(x, p.wv, p.bv);
  Var attended = lin(g.attention(q, k, v, heads, mask), p.wo, p.bo);
  const Var h = g.layer_norm(g.add(xq, drop(attended)), g.param(p.ln1_gamma), g.param(p.ln1_beta));
  Var ff = lin(g.gelu(lin(h, p.w1, p.b1)), p.w2, p.b2);
  return g.layer_norm(g.add(h, drop(ff)), g.param(p.ln2_gamma), g.param(p.ln2_beta));
}

template <typename T>
Encoder::Encoder(const EncoderConfig& config, ParamSet<T>& params, std::mt19937_64& rng,
                 const std::string& prefix)
    : config_(config) {
  config_.validate();
  const std::size_t first = params.size();
  const auto vocab = static_cast<Eigen::Index>(config.vocab_size);
  tok_emb_ = params.add(prefix + ".token_embedding",
                        truncated_normal<T>(vocab, config.width, kInitStddev, rng), true, Vocab::kPad);
  params[tok_emb_].value.row(Vocab::kPad).setZero();
  pos_emb_ = params.add(prefix + ".position_embedding",
                        truncated_normal<T>(config.max_positions, config.width, kInitStddev, rng));
  seg_emb_ = params.add(prefix + ".segment_embedding",
                        truncated_normal<T>(2, config.width, kInitStddev, rng));
  emb_ln_gamma_ = params.add(prefix + ".embedding_ln.gamma", Tensor<T>::Ones(1, config.width), false);
  emb_ln_beta_ = params.add(prefix + ".embedding_ln.beta", Tensor<T>::Zero(1, config.width), false);
  for (int l = 0; l < config.layers; ++l) {
    blocks_.push_back(register_block<T>(params, prefix + ".layer" + std::to_string(l), config.width,
                                        config.ff_width, rng));
  }
  indices_.resize(params.size() - first);
  std::iota(indices_.begin(), indices_.end(), first);
}

template <typename T>
Var Encoder::cls(Graph<T>& g, const TokenSeq& seq, std::mt19937_64* rng) const {
  std::size_t n = seq.mask.size();
  while (n > 1 && seq.mask[n - 1] == 0) --n;
  if (n == 0) throw EmptySequence("token sequence has no positions");
  if (n > static_cast<std::size_t>(config_.max_positions)) {
    throw SequenceTooLong(std::to_string(n) + " positions exceed the encoder's " +
                          std::to_string(config_.max_positions));
  }
  std::vector<std::int32_t> ids(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<std::int32_t> segments(n);
  std::vector<std::int32_t> positions(n);
  AttentionMask mask;
  mask.window = config_.attention_window;
  bool holes = false;
  for (std::size_t i = 0; i < n; ++i) {
    segments[i] = seq.segments.empty() ? 0 : seq.segments[i];
    positions[i] = static_cast<std::int32_t>(i);
    holes = holes || seq.mask[i] == 0;
  }
  if (holes) mask.key_mask.assign(seq.mask.begin(), seq.mask.begin() + static_cast<std::ptrdiff_t>(n));

  const T rate = static_cast<T>(config_.dropout);
  Var x = g.add(g.add(g.embedding(tok_emb_, ids), g.embedding(pos_emb_, positions)),
                g.embedding(seg_emb_, segments));
  x = g.layer_norm(x, g.param(emb_ln_gamma_), g.param(emb_ln_beta_));
  if (rng) x = g.dropout(x, rate, *rng);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const bool last = l + 1 == blocks_.size();
    x = block_forward<T>(g, blocks_[l], x, config_.heads, mask, rate, rng, last ? 1 : 0);
  }
  return x;
}

template <typename T>
Tensor<T> Encoder::forward(const std::vector<TokenSeq>& batch, const ParamSet<T>& params) const {
  Tensor<T> out(static_cast<Eigen::Index>(batch.size()), config_.width);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Graph<T> g(&params, false);
    out.row(static_cast<Eigen::Index>(b)) = g.value(cls(g, batch[b], nullptr));
  }
  return out;
}

template <typename T>
Gru::Gru(int input_width, int hidden_width, ParamSet<T>& params, std::mt19937_64& rng,
         const std::string& prefix)
    : input_(input_width), hidden_(hidden_width) {
  if (input_width < 1 || hidden_width < 1) throw InvalidArgument("GRU widths must be positive");
  auto gate = [&](const char* name) {
    Gate gt;
    gt.w = params.add(prefix + "." + name + ".w_input",
                      truncated_normal<T>(input_width, hidden_width, kInitStddev, rng));
    gt.u = params.add(prefix + "." + name + ".w_hidden",
                      truncated_normal<T>(hidden_width, hidden_width, kInitStddev, rng));
    gt.b = params.add(prefix + "." + name + ".bias", Tensor<T>::Zero(1, hidden_width), false);
    return gt;
  };
  update = gate("update");
  reset = gate("reset");
  candidate = gate("candidate");
}

template <typename T>
Var Gru::aggregate(Graph<T>& g, const std::vector<Var>& steps) const {
  if (steps.empty()) throw EmptySequence("GRU needs at least one step");
  Var h = g.constant(Tensor<T>::Zero(1, hidden_));
  auto pre = [&](const Gate& gt, Var x, Var state) {
    return g.add(g.linear(x, g.param(gt.w), g.param(gt.b)), g.matmul(state, g.param(gt.u)));
  };
  for (Var x : steps) {
    const Var z = g.sigmoid(pre(update, x, h));
    const Var r = g.sigmoid(pre(reset, x, h));
    const Var c = g.tanh(pre(candidate, x, g.mul(r, h)));
    h = g.add(g.mul(g.one_minus(z), h), g.mul(z, c));
  }
  return h;
}

template <typename T>
Tensor<T> Gru::aggregate(const Tensor<T>& seq, const ParamSet<T>& params) const {
  Graph<T> g(&params, false);
  const Var all = g.constant(seq);
  std::vector<Var> steps;
  for (Eigen::Index t = 0; t < seq.rows(); ++t) steps.push_back(g.rows(all, t, 1));
  return g.value(aggregate(g, steps));
}

#define CIMATE_INSTANTIATE(T)                                                                     \
  template DenseParams register_dense<T>(ParamSet<T>&, const std::string&, int, int,              \
                                         std::mt19937_64&);                                       \
  template BlockParams register_block<T>(ParamSet<T>&, const std::string&, int, int,              \
                                         std::mt19937_64&);                                       \
  template Var block_forward<T>(Graph<T>&, const BlockParams&, Var, int, const AttentionMask&, T, \
                                std::mt19937_64*, Eigen::Index);                                  \
  template Encoder::Encoder(const EncoderConfig&, ParamSet<T>&, std::mt19937_64&,                 \
                            const std::string&);                                                  \
  template Var Encoder::cls<T>(Graph<T>&, const TokenSeq&, std::mt19937_64*) const;              \
  template Tensor<T> Encoder::forward<T>(const std::vector<TokenSeq>&, const ParamSet<T>&) const; \
  template Gru::Gru(int, int, ParamSet<T>&, std::mt19937_64&, const std::string&);                \
  template Var Gru::aggregate<T>(Graph<T>&, const std::vector<Var>&) const;                      \
  template Tensor<T> Gru::aggregate<T>(const Tensor<T>&, const ParamSet<T>&) const;

CIMATE_INSTANTIATE(float)
CIMATE_INSTANTIATE(double)

#undef CIMATE_INSTANTIATE

}  // namespace cimate::nn
