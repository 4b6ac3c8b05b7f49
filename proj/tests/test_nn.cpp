#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "cimate/error.hpp"
#include "cimate/nn/checkpoint.hpp"
#include "cimate/nn/gradcheck.hpp"
#include "cimate/nn/graph.hpp"
#include "cimate/nn/layers.hpp"
#include "cimate/nn/optim.hpp"

namespace cimate::nn {
namespace {

using Mat = Tensor<double>;
using Builder = std::function<Var(Graph<double>&)>;

Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

// Loss = sum(weights .* out) so every output coordinate matters.
LossFn weighted_sum(const Builder& build, const Mat& weights) {
  return [build, weights](const ParamSet<double>& params, std::vector<Mat>* grads) {
    Graph<double> g(&params);
    const Var out = build(g);
    const Var loss = g.sum(g.mul(out, g.constant(weights)));
    if (grads) {
      g.backward(loss);
      *grads = g.param_grads();
    }
    return g.value(loss)(0, 0);
  };
}

double check_op(ParamSet<double>& params, const Builder& build, Eigen::Index out_rows, Eigen::Index out_cols,
                std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  GradCheckOptions opts;
  opts.eps = 1e-6;
  opts.per_param = 16;
  return grad_check(weighted_sum(build, random_mat(out_rows, out_cols, rng)), params, opts).max_rel_error;
}

TEST(GradCheck, QuadraticIsExact) {
  ParamSet<double> params;
  std::mt19937_64 rng(1);
  params.add("p", random_mat(3, 4, rng));
  const LossFn half_norm = [](const ParamSet<double>& ps, std::vector<Mat>* grads) {
    if (grads) *grads = {ps[0].value};
    return 0.5 * ps[0].value.squaredNorm();
  };
  EXPECT_LT(grad_check(half_norm, params).max_rel_error, 1e-10);
}

TEST(GradCheck, DetectsWrongGradient) {
  ParamSet<double> params;
  std::mt19937_64 rng(1);
  params.add("p", random_mat(2, 2, rng));
  const LossFn wrong = [](const ParamSet<double>& ps, std::vector<Mat>* grads) {
    if (grads) *grads = {2.0 * ps[0].value};
    return 0.5 * ps[0].value.squaredNorm();
  };
  EXPECT_GT(grad_check(wrong, params).max_rel_error, 0.1);
}

class GraphOps : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(42);
    a = params.add("a", random_mat(3, 4, rng));
    b = params.add("b", random_mat(4, 5, rng));
    c = params.add("c", random_mat(3, 4, rng));
    row = params.add("row", random_mat(1, 4, rng));
  }
  ParamSet<double> params;
  std::size_t a = 0, b = 0, c = 0, row = 0;
};

TEST_F(GraphOps, ElementwiseAndMatmulGradients) {
  EXPECT_LT(check_op(params, [&](Graph<double>& g) { return g.matmul(g.param(a), g.param(b)); }, 3, 5), 1e-6);
  EXPECT_LT(check_op(params, [&](Graph<double>& g) { return g.mul(g.param(a), g.param(c)); }, 3, 4), 1e-6);
  EXPECT_LT(check_op(params, [&](Graph<double>& g) { return g.sub(g.param(a), g.param(c)); }, 3, 4), 1e-6);
  EXPECT_LT(check_op(params, [&](Graph<double>& g) { return g.add_row(g.param(a), g.param(row)); }, 3, 4), 1e-6);
  EXPECT_LT(check_op(params, [&](Graph<double>& g) { return g.gelu(g.param(a)); }, 3, 4), 1e-6);
  EXPECT_LT(check_op(params, [&](Graph<double>& g) { return g.tanh(g.param(a)); }, 3, 4), 1e-6);
  EXPECT_LT(check_op(params, [&](Graph<double>& g) { return g.sigmoid(g.param(a)); }, 3, 4), 1e-6);
  EXPECT_LT(check_op(params, [&](Graph<double>& g) { return g.one_minus(g.scale(g.param(a), 0.3)); }, 3, 4), 1e-6);
  EXPECT_LT(check_op(params, [&](Graph<double>& g) { return g.mean_rows(g.param(a)); }, 1, 4), 1e-6);
  EXPECT_LT(check_op(params, [&](Graph<double>& g) { return g.rows(g.param(a), 1, 2); }, 2, 4), 1e-6);
  EXPECT_LT(check_op(params,
                     [&](Graph<double>& g) {
                       return g.stack_rows({g.param(row), g.rows(g.param(c), 2, 1), g.param(row)});
                     },
                     3, 4),
            1e-6);
}

TEST_F(GraphOps, LayerNormAndAttentionGradients) {
  EXPECT_LT(check_op(params,
                     [&](Graph<double>& g) {
                       return g.layer_norm(g.param(a), g.param(row), g.rows(g.param(c), 0, 1), 1e-12);
                     },
                     3, 4),
            1e-6);
  AttentionMask mask;
  mask.key_mask = {1, 0, 1};
  EXPECT_LT(check_op(params,
                     [&](Graph<double>& g) {
                       return g.attention(g.rows(g.param(a), 0, 2), g.param(c), g.mul(g.param(c), g.param(a)), 2,
                                          mask);
                     },
                     2, 4),
            1e-6);
}

TEST_F(GraphOps, EmbeddingAndMseGradients) {
  EXPECT_LT(check_op(params, [&](Graph<double>& g) { return g.embedding(b, {3, 0, 3, 1}); }, 4, 5), 1e-6);
  Mat target(1, 1);
  target << 0.7;
  EXPECT_LT(check_op(params, [&](Graph<double>& g) { return g.mse(g.sum(g.param(a)), target); }, 1, 1), 1e-6);
}

TEST(Attention, RowsSumToOneAndRespectMask) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat q = random_mat(4, 3, rng, 3.0);
    const Mat k = random_mat(6, 3, rng, 3.0);
    AttentionMask mask;
    mask.key_mask = {1, 1, 0, 1, 0, 1};
    mask.window = trial % 2 ? 2 : 0;
    const Mat w = attention_weights(q, k, mask);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      EXPECT_NEAR(w.row(i).sum(), 1.0, 1e-12);
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        EXPECT_GE(w(i, j), 0.0);
        if (!mask.allowed(i, j)) EXPECT_EQ(w(i, j), 0.0);
      }
    }
  }
}

TEST(LayerNorm, NormalizesRows) {
  std::mt19937_64 rng(9);
  Graph<double> g;
  const Var x = g.constant(random_mat(5, 16, rng, 4.0));
  const Var out = g.layer_norm(x, g.constant(Mat::Ones(1, 16)), g.constant(Mat::Zero(1, 16)));
  const Mat& y = g.value(out);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    EXPECT_NEAR(y.row(i).mean(), 0.0, 1e-5);
    EXPECT_NEAR((y.row(i).array() - y.row(i).mean()).square().mean(), 1.0, 1e-5);
  }
}

TEST(Dropout, InvertedScalingAndOffAtZero) {
  std::mt19937_64 rng(1);
  Graph<double> g;
  const Var x = g.constant(Mat::Ones(200, 50));
  const Mat& y = g.value(g.dropout(x, 0.25, rng));
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y.data()[i];
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-12);
  }
  EXPECT_NEAR(y.mean(), 1.0, 0.03);
  EXPECT_EQ(g.value(g.dropout(x, 0.0, rng)), Mat::Ones(200, 50));
}

// Independent re-implementation of a BERT-style encoder with plain loops.
struct Ref {
  using V = std::vector<double>;
  using M = std::vector<V>;

  static M from(const Mat& t) {
    M m(t.rows(), V(t.cols()));
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
    return m;
  }
  static V affine(const V& x, const M& w, const M& b) {
    V out(w[0].size());
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] = b[0][j];
      for (std::size_t i = 0; i < x.size(); ++i) out[j] += x[i] * w[i][j];
    }
    return out;
  }
  static V ln(const V& x, const M& gamma, const M& beta) {
    double mean = 0, var = 0;
    for (double v : x) mean += v;
    mean /= x.size();
    for (double v : x) var += (v - mean) * (v - mean);
    var /= x.size();
    V out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      out[i] = (x[i] - mean) / std::sqrt(var + 1e-12) * gamma[0][i] + beta[0][i];
    return out;
  }
  static V add(V a, const V& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
  }
};

TEST(Encoder, MatchesHandComputedTrace) {
  EncoderConfig cfg;
  cfg.vocab_size = 8;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.width = 4;
  cfg.ff_width = 6;
  cfg.max_positions = 4;
  cfg.dropout = 0.0;
  ParamSet<double> params;
  std::mt19937_64 rng(17);
  const Encoder enc(cfg, params, rng);
  // Perturb norms and biases away from their identity init.
  std::mt19937_64 noise(23);
  for (auto& p : params)
    if (!p.decay) p.value += random_mat(p.value.rows(), p.value.cols(), noise, 0.3);

  auto P = [&](const std::string& name) { return Ref::from(params[*params.find(name)].value); };
  const std::vector<int> ids = {Vocab::kCls, 5};
  const std::vector<int> segs = {0, 1};
  std::vector<Ref::V> x;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Ref::V e = Ref::add(Ref::add(P("enc.token_embedding")[ids[i]], P("enc.position_embedding")[i]),
                        P("enc.segment_embedding")[segs[i]]);
    x.push_back(Ref::ln(e, P("enc.embedding_ln.gamma"), P("enc.embedding_ln.beta")));
  }
  const std::string l = "enc.layer0.";
  const Ref::V q = Ref::affine(x[0], P(l + "query.weight"), P(l + "query.bias"));
  double scores[2], denom = 0;
  std::vector<Ref::V> vals;
  for (int j = 0; j < 2; ++j) {
    const Ref::V k = Ref::affine(x[j], P(l + "key.weight"), P(l + "key.bias"));
    vals.push_back(Ref::affine(x[j], P(l + "value.weight"), P(l + "value.bias")));
    double s = 0;
    for (int d = 0; d < 4; ++d) s += q[d] * k[d];
    scores[j] = std::exp(s / 2.0);
    denom += scores[j];
  }
  Ref::V ctx(4, 0.0);
  for (int j = 0; j < 2; ++j)
    for (int d = 0; d < 4; ++d) ctx[d] += scores[j] / denom * vals[j][d];
  const Ref::V h = Ref::ln(Ref::add(x[0], Ref::affine(ctx, P(l + "output.weight"), P(l + "output.bias"))),
                           P(l + "ln1.gamma"), P(l + "ln1.beta"));
  Ref::V mid = Ref::affine(h, P(l + "ff1.weight"), P(l + "ff1.bias"));
  for (double& v : mid) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  const Ref::V expected = Ref::ln(Ref::add(h, Ref::affine(mid, P(l + "ff2.weight"), P(l + "ff2.bias"))),
                                  P(l + "ln2.gamma"), P(l + "ln2.beta"));

  TokenSeq seq;
  seq.ids = {Vocab::kCls, 5, 0, 0};
  seq.segments = {0, 1, 0, 0};
  seq.mask = {1, 1, 0, 0};
  const Mat got = enc.forward<double>({seq}, params);
  for (int d = 0; d < 4; ++d) EXPECT_NEAR(got(0, d), expected[d], 1e-9);
}

TEST(Encoder, PaddingInvariance) {
  EncoderConfig cfg;
  cfg.vocab_size = 30;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.width = 8;
  cfg.ff_width = 16;
  cfg.max_positions = 64;
  ParamSet<float> params;
  std::mt19937_64 rng(3);
  const Encoder enc(cfg, params, rng);
  TokenSeq s;
  s.ids = {Vocab::kCls, 7, 9, 11, Vocab::kSep};
  s.segments = {0, 0, 1, 1, 1};
  s.mask = {1, 1, 1, 1, 1};
  TokenSeq padded = s;
  for (int i = 0; i < 40; ++i) {
    padded.ids.push_back(Vocab::kPad);
    padded.segments.push_back(0);
    padded.mask.push_back(0);
  }
  const auto a = enc.forward<float>({s}, params);
  const auto b = enc.forward<float>({padded}, params);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-6f);

  TokenSeq too_long = padded;
  too_long.mask.assign(too_long.ids.size() + 30, 1);
  too_long.ids.resize(too_long.mask.size(), 5);
  too_long.segments.resize(too_long.mask.size(), 0);
  EXPECT_THROW(enc.forward<float>({too_long}, params), SequenceTooLong);
}

TEST(Encoder, GradientCheck) {
  EncoderConfig cfg;
  cfg.vocab_size = 12;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.width = 8;
  cfg.ff_width = 12;
  cfg.max_positions = 8;
  cfg.dropout = 0.0;
  ParamSet<double> params;
  std::mt19937_64 rng(8);
  const Encoder enc(cfg, params, rng);
  for (auto& p : params)
    if (p.decay) p.value *= 10.0;  // leave the near-linear regime of the 0.02 init
  TokenSeq s;
  s.ids = {Vocab::kCls, 6, 7, Vocab::kSep, 9, Vocab::kSep};
  s.segments = {0, 0, 0, 0, 1, 1};
  s.mask = {1, 1, 1, 1, 1, 1};
  std::mt19937_64 wrng(2);
  const Mat w = random_mat(1, 8, wrng);
  const auto build = [&](Graph<double>& g) { return enc.cls(g, s, nullptr); };
  GradCheckOptions opts;
  opts.eps = 1e-6;
  opts.per_param = 6;
  const auto rep = grad_check(weighted_sum(build, w), params, opts);
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst_param;
}

TEST(Gru, SingleStepClosedForm) {
  ParamSet<double> params;
  std::mt19937_64 rng(4);
  const Gru gru(3, 2, params, rng);
  for (auto& p : params) p.value = random_mat(p.value.rows(), p.value.cols(), rng, 0.5);
  const Mat x = random_mat(1, 3, rng);
  auto gate = [&](const Gru::Gate& gt) {
    return (x * params[gt.w].value + params[gt.b].value).eval();
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const Mat zpre = gate(gru.update), cpre = gate(gru.candidate);
  const Mat h = gru.aggregate<double>(x, params);
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(h(0, j), sig(zpre(0, j)) * std::tanh(cpre(0, j)), 1e-12);
}

TEST(Gru, ZeroFixedPoint) {
  ParamSet<double> params;
  std::mt19937_64 rng(4);
  const Gru gru(3, 5, params, rng);
  const Mat h = gru.aggregate<double>(Mat::Zero(4, 3), params);
  EXPECT_EQ(h, Mat::Zero(1, 5));
}

TEST(Gru, TwoStepsMatchUnrolledOracle) {
  ParamSet<double> params;
  std::mt19937_64 rng(6);
  const Gru gru(3, 4, params, rng);
  for (auto& p : params) p.value = random_mat(p.value.rows(), p.value.cols(), rng, 0.5);
  const Mat xs = random_mat(2, 3, rng);
  auto sig = [](const Mat& m) { return m.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }).eval(); };
  Mat h = Mat::Zero(1, 4);
  for (int t = 0; t < 2; ++t) {
    const Mat x = xs.row(t);
    auto pre = [&](const Gru::Gate& gt, const Mat& state) {
      return (x * params[gt.w].value + state * params[gt.u].value + params[gt.b].value).eval();
    };
    const Mat z = sig(pre(gru.update, h));
    const Mat r = sig(pre(gru.reset, h));
    const Mat c = pre(gru.candidate, r.cwiseProduct(h)).array().tanh().matrix();
    h = (Mat::Ones(1, 4) - z).cwiseProduct(h) + z.cwiseProduct(c);
  }
  EXPECT_LT((gru.aggregate<double>(xs, params) - h).cwiseAbs().maxCoeff(), 1e-12);
  Graph<double> g(&params);
  EXPECT_THROW(gru.aggregate(g, {}), EmptySequence);
}

TEST(Schedule, LrAtExamples) {
  EXPECT_EQ(lr_at(0, 1000, 1e-3), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(100, 1000, 1e-3), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(550, 1000, 1e-3), 0.5e-3);
  EXPECT_DOUBLE_EQ(lr_at(1000, 1000, 1e-3), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(50, 1000, 1e-3), 0.5e-3);
}

TEST(AdamW, ZeroGradientNoDecayLeavesParameter) {
  ParamSet<double> params;
  params.add("p", Mat::Constant(2, 2, 1.5));
  AdamW<double> opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  opt.step(params, {Mat::Zero(2, 2)}, 0.1);
  EXPECT_EQ(params[0].value, Mat::Constant(2, 2, 1.5));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ParamSet<double> params;
  params.add("p", Mat::Constant(1, 1, 0.0));
  AdamW<double> opt(AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  opt.step(params, {Mat::Constant(1, 1, 1.0)}, 0.1);
  EXPECT_NEAR(params[0].value(0, 0), -0.1, 1e-6);
}

TEST(AdamW, DecoupledDecay) {
  ParamSet<double> params;
  params.add("p", Mat::Constant(1, 1, 1.0));
  params.add("bias", Mat::Constant(1, 1, 1.0), false);
  params.add("emb", Mat::Constant(2, 1, 1.0), true, 0);
  AdamW<double> opt(AdamWConfig{0.9, 0.999, 1e-8, 0.01});
  opt.step(params, {}, 0.1);
  EXPECT_NEAR(params[0].value(0, 0), 0.999, 1e-12);
  EXPECT_EQ(params[1].value(0, 0), 1.0);
  EXPECT_EQ(params[2].value(0, 0), 1.0);
  EXPECT_NEAR(params[2].value(1, 0), 0.999, 1e-12);
}

TEST(AdamW, FrozenAndNonFinite) {
  ParamSet<double> params;
  params.add("p", Mat::Constant(1, 1, 1.0));
  params.add("q", Mat::Constant(1, 1, 1.0));
  params[1].trainable = false;
  AdamW<double> opt;
  opt.step(params, {Mat::Constant(1, 1, 1.0), Mat::Constant(1, 1, 1.0)}, 0.1);
  EXPECT_EQ(params[1].value(0, 0), 1.0);
  const Mat before = params[0].value;
  EXPECT_THROW(opt.step(params, {Mat::Constant(1, 1, NAN), Mat()}, 0.1), NonFiniteGradient);
  EXPECT_EQ(params[0].value, before);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ParamSet<float> params;
  std::mt19937_64 rng(1);
  params.add("a", truncated_normal<float>(3, 5, 0.02, rng));
  params.add("b", Tensor<float>::Ones(1, 5), false);
  params.add("emb", truncated_normal<float>(4, 2, 0.02, rng), true, 0);
  params[1].trainable = false;
  std::stringstream buf;
  save_checkpoint(buf, params, nlohmann::json{{"k", 3}});
  const auto back = load_checkpoint<float>(buf);
  ASSERT_EQ(back.params.size(), 3u);
  EXPECT_EQ(back.config["k"], 3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.params[i].name, params[i].name);
    EXPECT_EQ(back.params[i].value, params[i].value);
    EXPECT_EQ(back.params[i].decay, params[i].decay);
    EXPECT_EQ(back.params[i].trainable, params[i].trainable);
    EXPECT_EQ(back.params[i].pad_row, params[i].pad_row);
  }
  std::stringstream again(buf.str());
  EXPECT_ANY_THROW(load_checkpoint<double>(again));
  std::stringstream garbage("not a checkpoint");
  EXPECT_ANY_THROW(load_checkpoint<float>(garbage));
}

TEST(Init, TruncatedNormalBounds) {
  std::mt19937_64 rng(1);
  const auto t = truncated_normal<double>(100, 100, 0.02, rng);
  EXPECT_LE(t.cwiseAbs().maxCoeff(), 0.04);
  EXPECT_NEAR(t.mean(), 0.0, 1e-3);
}

}  // namespace
}  // namespace cimate::nn
