// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "cimate/eval.hpp"
#include "cimate/trainer.hpp"
#include "oracles.hpp"

namespace cimate {
namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double time_limit_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

std::vector<double> values_of(const std::vector<std::pair<std::string, double>>& preds) {
  std::vector<double> out;
  for (const auto& p : preds) out.push_back(p.second);
  return out;
}

// 1. spearman against the brute-force rank oracle.
Outcome metric_oracle() {
  constexpr double kTol = 1e-12;
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> len(2, 100);
  double worst = 0.0;
  int checked = 0;
  while (checked < 1000) {
    const std::size_t n = len(rng);
    const auto x = oracle::tied_vector(n, rng);
    const auto y = oracle::tied_vector(n, rng);
    const bool flat_x = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; });
    const bool flat_y = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
    if (flat_x || flat_y) continue;
    worst = std::max(worst, std::abs(spearman(x, y) - oracle::spearman(x, y)));
    ++checked;
  }
  return {worst <= kTol, fmt("1000 vectors, max |rho - oracle| = %.3g (tol 1e-12)", worst)};
}

// 2. A shared constant offset is removed exactly by MSE*.
Outcome mse_star_shift() {
  constexpr double kTol = 1e-12;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(1.5, 1.0);
  std::uniform_real_distribution<double> offset(-3.0, 3.0);
  double worst_shift = 0.0, worst_zero = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> t(50), dt(20);
    for (auto& v : t) v = d(rng);
    for (auto& v : dt) v = d(rng);
    const double delta = offset(rng);
    std::vector<double> p = t, dp = dt;
    for (auto& v : p) v += delta;
    for (auto& v : dp) v += delta;
    worst_shift = std::max(worst_shift, mse_star(p, t, dp, dt));
    std::vector<double> noisy = t;
    for (auto& v : noisy) v += d(rng) - 1.5;
    worst_zero = std::max(worst_zero, std::abs(mse_star(noisy, t, dt, dt) - mse(noisy, t)));
  }
  return {worst_shift <= kTol && worst_zero == 0.0,
          fmt("max MSE* under shared offset = %.3g (tol 1e-12); max |MSE* - MSE| at delta=0 = %.3g", worst_shift,
              worst_zero)};
}

// 3. Reverse-mode against central differences for every trainable variant.
Outcome gradient_fidelity() {
  constexpr double kThreshold = 1e-4;
  PlantedOptions opts;
  opts.prefix_tokens = 150;
  opts.planted_tokens = 72;
  opts.filler_vocab = 40;
  const auto paper = generate_planted_corpus(1, 4, 3, opts)[0];
  const Vocab vocab = build_vocab({paper.record}, 100, 1);
  nn::EncoderConfig enc;
  enc.vocab_size = vocab.size();
  enc.layers = 2;
  enc.heads = 2;
  enc.width = 16;
  enc.ff_width = 32;
  enc.max_positions = 64;
  nn::GradCheckOptions options;
  options.eps = 1e-6;
  options.per_param = 4;
  std::ostringstream detail;
  bool pass = true;
  for (const char* name : {"cimate_b:mean", "cimate_b:transformer", "cimate_w:mean", "cimate_w:transformer",
                           "title_abstract", "beginning", "schubert"}) {
    VariantConfig v = make_variant(name, enc);
    v.schubert_chunk_chars = 200;
    v.schubert_overlap_chars = 40;
    const auto report = model_grad_check(v, paper.record, vocab, paper.y + 0.5, 7, options);
    pass = pass && report.max_rel_error < kThreshold && report.coordinates > 0;
    detail << name << "=" << fmt("%.2g", report.max_rel_error) << " ";
  }
  detail << "(threshold 1e-4, float64)";
  return {pass, detail.str()};
}

// 4. Chunker windows against the stride arithmetic on random pairs.
Outcome chunker_invariants() {
  std::vector<std::string> tokens;
  for (int i = 0; i < 500; ++i) tokens.push_back("t" + std::to_string(i));
  const Vocab vocab(tokens);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> word(0, 499), heading_len(0, 40), body_len(0, 4500);
  const std::size_t budgets[] = {128, 256, 512};
  std::uniform_int_distribution<int> pick_budget(0, 2);
  int violations = 0, capped = 0;
  std::string first_violation;
  auto fail = [&](const std::string& what) {
    if (violations++ == 0) first_violation = what;
  };
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<TokenId> body_ids;
    std::string heading, body;
    for (int i = heading_len(rng); i > 0; --i) heading += tokens[static_cast<std::size_t>(word(rng))] + " ";
    for (int i = body_len(rng); i > 0; --i) {
      const int w = word(rng);
      body += tokens[static_cast<std::size_t>(w)] + " ";
      body_ids.push_back(static_cast<TokenId>(w + Vocab::kReserved));
    }
    ChunkOptions opts{budgets[pick_budget(rng)], 50, 8};
    const ChunkPlan plan = chunk_section(heading, body, vocab, opts);
    const std::size_t h = std::max<std::size_t>(1, tokenize(heading).size());
    const std::size_t capacity = opts.budget - 3 - h;
    const std::size_t n = body_ids.size();

    if (plan.chunks.empty() || plan.chunks.size() > 8) fail("chunk count " + std::to_string(plan.chunks.size()));
    if (plan.windows.size() != plan.chunks.size()) fail("window/chunk mismatch");
    if (!plan.windows.empty() && plan.windows[0].first != 0) fail("coverage does not start at 0");
    for (std::size_t k = 0; k + 1 < plan.windows.size(); ++k) {
      if (plan.windows[k].second - plan.windows[k + 1].first != 50) fail("overlap != 50");
      if (plan.windows[k].second - plan.windows[k].first != capacity) fail("non-final window not full");
    }
    const std::size_t covered = plan.windows.empty() ? 0 : plan.windows.back().second;
    const std::size_t expected_cover = std::min(n, capacity + 7 * (capacity - 50));
    if (covered != expected_cover) fail("covered prefix " + std::to_string(covered));
    if (plan.truncated_tokens != n - covered) fail("truncated count");
    if (plan.chunks.size() < 8 && covered != n) fail("uncapped plan leaves text uncovered");
    capped += plan.truncated_tokens > 0;
    for (std::size_t k = 0; k < plan.chunks.size(); ++k) {
      const TokenSeq& c = plan.chunks[k];
      if (c.ids.size() != opts.budget || c.length() > opts.budget) fail("budget exceeded");
      const auto [b, e] = plan.windows[k];
      for (std::size_t i = b; i < e; ++i) {
        if (c.ids[h + 2 + (i - b)] != body_ids[i]) {
          fail("chunk content differs from the body slice");
          break;
        }
      }
    }
  }
  return {violations == 0, "10000 pairs, " + std::to_string(capped) + " hit the 8-chunk cap, " +
                               std::to_string(violations) + " violations" +
                               (first_violation.empty() ? "" : " (first: " + first_violation + ")")};
}

// 5. Memorize 32 papers with the full-width encoder.
Outcome overfit_sanity() {
  constexpr double kMaxMse = 0.01;
  PlantedOptions opts;
  opts.prefix_tokens = 30;
  opts.planted_tokens = 20;
  opts.filler_vocab = 60;
  const auto papers = generate_planted_corpus(32, 3, 5, opts);
  std::vector<PaperRecord> records;
  for (const auto& p : papers) records.push_back(p.record);
  const Vocab vocab = build_vocab(records, 200, 1);
  nn::EncoderConfig enc;
  enc.vocab_size = vocab.size();
  enc.layers = 2;
  enc.width = 128;
  enc.heads = 4;
  enc.ff_width = 512;
  enc.max_positions = 128;
  enc.dropout = 0.0;
  VariantConfig variant = make_variant("cimate_b:mean", enc);
  variant.dropout_final = 0.0;
  SplitView split;
  for (const auto& p : papers) {
    split.train.push_back(&p);
    split.eval.push_back(&p.record);
  }
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 75;  // 4 steps per epoch -> 300 steps
  cfg.peak_lr = 1e-3;
  cfg.seed = 1;
  const TrainOutcome out = train(variant, split, vocab, cfg);
  std::unordered_map<std::string, double> truth;
  for (const auto& p : papers) truth[p.record.id] = p.y;
  std::vector<double> preds, trues;
  for (const auto& [id, y] : out.result.predictions) {
    preds.push_back(y);
    trues.push_back(truth[id]);
  }
  const double train_mse = oracle::mse(preds, trues);
  return {train_mse < kMaxMse && out.step_losses.size() == 300,
          fmt("train MSE %.4g after %.0f steps (threshold 0.01; target variance %.3g)", train_mse,
              static_cast<double>(out.step_losses.size()), oracle::mse(trues, std::vector<double>(trues.size(),
                  std::accumulate(trues.begin(), trues.end(), 0.0) / static_cast<double>(trues.size()))))};
}

// 6. The planted signal is only reachable through the main text's late section.
Outcome planted_separation() {
  constexpr double kMinGapPoints = 10.0;
  const auto corpus = generate_planted_corpus(600, 6, 6);
  std::vector<PaperRecord> train_records;
  SplitView split;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (i < 500) {
      split.train.push_back(&corpus[i]);
      train_records.push_back(corpus[i].record);
    } else {
      split.eval.push_back(&corpus[i].record);
    }
  }
  std::unordered_map<std::string, double> truth;
  for (const auto& p : corpus) truth[p.record.id] = p.y;
  const Vocab vocab = build_vocab(train_records, 400, 1);
  nn::EncoderConfig enc;
  enc.vocab_size = vocab.size();
  enc.layers = 1;
  enc.heads = 2;
  enc.width = 32;
  enc.ff_width = 64;
  enc.max_positions = 512;
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 16;
  cfg.peak_lr = 1e-3;

  auto mean_rho = [&](const char* name, std::vector<double>& per_seed) {
    const VariantConfig variant = make_variant(name, enc);
    for (std::uint64_t seed : {1, 2, 3}) {
      cfg.seed = seed;
      const auto out = train(variant, split, vocab, cfg);
      std::vector<double> trues;
      for (const auto& [id, y] : out.result.predictions) trues.push_back(truth[id]);
      per_seed.push_back(spearman(values_of(out.result.predictions), trues));
    }
    return std::accumulate(per_seed.begin(), per_seed.end(), 0.0) / 3.0;
  };
  std::vector<double> rho_b, rho_beginning;
  const double b = mean_rho("cimate_b:mean", rho_b);
  const double beginning = mean_rho("beginning", rho_beginning);
  const double gap = 100.0 * (b - beginning);
  return {gap >= kMinGapPoints,
          fmt("cimate_b rho %.1f, beginning rho %.1f, gap %.1f points (need >= 10)", 100.0 * b, 100.0 * beginning,
              gap)};
}

// 7. cimate_w collapses to cimate_b when every section fits one chunk.
Outcome degeneracy_equivalence() {
  PlantedOptions opts;
  opts.prefix_tokens = 200;
  opts.planted_tokens = 40;
  const auto papers = generate_planted_corpus(100, 5, 7, opts);
  std::vector<PaperRecord> records;
  for (const auto& p : papers) records.push_back(p.record);
  const Vocab vocab = build_vocab(records, 300, 1);
  nn::EncoderConfig enc;
  enc.vocab_size = vocab.size();
  enc.layers = 2;
  enc.heads = 2;
  enc.width = 16;
  enc.ff_width = 32;
  enc.max_positions = 128;
  int compared = 0, mismatches = 0;
  for (const char* pooling : {"mean", "transformer"}) {
    const auto vb = make_variant(std::string("cimate_b:") + pooling, enc);
    const auto vw = make_variant(std::string("cimate_w:") + pooling, enc);
    const CitationModel<float> mb(vb, 9);
    const CitationModel<float> mw(vw, mb.params());
    for (const auto& r : records) {
      const PreparedPaper pw = prepare(vw, r, vocab);
      if (std::any_of(pw.group_sizes.begin(), pw.group_sizes.end(), [](std::size_t g) { return g != 1; })) {
        return {false, "paper " + r.id + " has a multi-chunk section"};
      }
      const float a = mb.predict(prepare(vb, r, vocab));
      const float b = mw.predict(pw);
      mismatches += std::memcmp(&a, &b, sizeof(float)) != 0;
      ++compared;
    }
  }
  return {mismatches == 0 && compared == 200,
          std::to_string(compared) + " predictions (100 papers x 2 poolings), " + std::to_string(mismatches) +
              " bitwise mismatches"};
}

// 8. Pooled metrics over the rolling protocol against hand computation, plus a leakage scan.
Outcome protocol_correctness() {
  constexpr double kTol = 1e-9;
  const auto corpus = generate_planted_corpus(200, 3, 8);
  const auto specs = build_subsets(corpus, 13, 5);
  std::vector<SplitView> views;
  int leaks = 0;
  for (const auto& s : specs) {
    views.push_back(materialize(corpus, s));
    std::set<std::string> eval_ids;
    for (const auto* r : views.back().eval) eval_ids.insert(r->id);
    for (const auto* p : views.back().train) {
      leaks += s.eval_month.contains(p->record.published) || eval_ids.count(p->record.id) ||
               p->record.published >= s.eval_month.first_day();
    }
  }
  std::vector<PaperRecord> records;
  for (const auto& p : corpus) records.push_back(p.record);
  const Vocab vocab = build_vocab(records, 250, 1);
  nn::EncoderConfig enc;
  enc.vocab_size = vocab.size();
  enc.layers = 1;
  enc.heads = 2;
  enc.width = 8;
  enc.ff_width = 16;
  enc.max_positions = 512;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.peak_lr = 1e-3;
  const auto variant = make_variant("cimate_b:mean", enc);
  const SeedRuns runs = run_seeds(variant, views, vocab, cfg, {1, 2, 3});
  std::unordered_map<std::string, double> truth;
  for (const auto& p : corpus) truth[p.record.id] = p.y;
  const MetricReport report = pooled_report(variant.name(), runs.test, runs.dev, truth);

  // Hand computation: concatenate each seed's test predictions, then score.
  auto top = [](const std::vector<double>& v, const std::vector<std::string>& ids, double pct) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return v[a] != v[b] ? v[a] > v[b] : ids[a] < ids[b];
    });
    const auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(pct * static_cast<double>(v.size()) / 100.0 - 1e-9)));
    std::set<std::string> out;
    for (std::size_t i = 0; i < k; ++i) out.insert(ids[idx[i]]);
    return out;
  };
  double worst = 0.0;
  std::size_t pooled_size = 0;
  const std::uint64_t seeds[] = {1, 2, 3};
  for (std::size_t si = 0; si < 3; ++si) {
    std::vector<double> p, t, dp, dt;
    std::vector<std::string> ids;
    for (const auto& r : runs.test) {
      if (r.seed != seeds[si]) continue;
      for (const auto& [id, y] : r.predictions) {
        p.push_back(y);
        t.push_back(truth[id]);
        ids.push_back(id);
      }
    }
    for (const auto& r : runs.dev) {
      if (r.seed != seeds[si]) continue;
      for (const auto& [id, y] : r.predictions) {
        dp.push_back(y);
        dt.push_back(truth[id]);
      }
    }
    pooled_size = p.size();
    double bias = 0;
    for (std::size_t i = 0; i < dp.size(); ++i) bias += dp[i] - dt[i];
    bias /= static_cast<double>(dp.size());
    std::vector<double> shifted = p;
    for (auto& v : shifted) v -= bias;
    std::map<std::string, double> hand = {{"rho", oracle::spearman(p, t)},
                                          {"mse", oracle::mse(p, t)},
                                          {"mse_star", oracle::mse(shifted, t)}};
    for (auto [key, n, k] : {std::tuple{"5@5", 5.0, 5.0}, {"5@25", 5.0, 25.0}, {"10@10", 10.0, 10.0},
                             {"10@50", 10.0, 50.0}}) {
      const auto actual = top(t, ids, n);
      const auto predicted = top(p, ids, k);
      std::size_t hit = 0;
      for (const auto& id : actual) hit += predicted.count(id);
      hand[key] = static_cast<double>(hit) / static_cast<double>(actual.size());
    }
    for (const auto& [key, value] : hand) {
      worst = std::max(worst, std::abs(report.metrics.at(key).per_seed[si] - value));
    }
  }
  const std::size_t eval_total = std::accumulate(views.begin() + 1, views.end(), std::size_t{0},
                                                 [](std::size_t acc, const SplitView& v) { return acc + v.eval.size(); });
  const bool pass = worst <= kTol && leaks == 0 && pooled_size == eval_total && runs.test.size() == 36;
  return {pass, fmt("max |pooled - hand| = %.3g over 7 metrics x 3 seeds (tol 1e-9); ", worst) +
                    std::to_string(pooled_size) + " pooled test papers over 12 subsets; leakage scan: " +
                    std::to_string(leaks) + " leaks"};
}

// 9. Schubert training never touches the encoder.
Outcome frozen_encoder() {
  PlantedOptions opts;
  opts.prefix_tokens = 60;
  opts.planted_tokens = 20;
  const auto papers = generate_planted_corpus(24, 3, 9, opts);
  std::vector<PaperRecord> records;
  for (const auto& p : papers) records.push_back(p.record);
  const Vocab vocab = build_vocab(records, 250, 1);
  nn::EncoderConfig enc;
  enc.vocab_size = vocab.size();
  enc.layers = 2;
  enc.heads = 2;
  enc.width = 16;
  enc.ff_width = 32;
  enc.max_positions = 128;
  VariantConfig variant = make_variant("schubert", enc);
  variant.schubert_chunk_chars = 300;
  variant.schubert_overlap_chars = 50;
  SplitView split;
  for (const auto& p : papers) {
    split.train.push_back(&p);
    split.eval.push_back(&p.record);
  }
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.peak_lr = 1e-2;
  const auto out = train(variant, split, vocab, cfg);
  const CitationModel<float> fresh(variant, cfg.seed);
  std::size_t changed = 0, bytes = 0;
  for (std::size_t i : fresh.encoder().param_indices()) {
    const auto& a = fresh.params()[i].value;
    const auto& b = out.model.params()[i].value;
    bytes += static_cast<std::size_t>(a.size()) * sizeof(float);
    changed += a.size() != b.size() || std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(float)) != 0;
  }
  std::size_t head_moved = 0;
  for (std::size_t i = 0; i < fresh.params().size(); ++i) head_moved += fresh.params()[i].value != out.model.params()[i].value;
  return {changed == 0 && head_moved > 0,
          std::to_string(fresh.encoder().param_indices().size()) + " encoder tensors (" + std::to_string(bytes) +
              " bytes) compared, " + std::to_string(changed) + " changed; " + std::to_string(head_moved) +
              " GRU/head tensors updated"};
}

}  // namespace
}  // namespace cimate

int main() {
  using namespace cimate;
  const Criterion criteria[] = {
      {1, "metric oracle equivalence", 10, metric_oracle},
      {2, "MSE* shift property", 10, mse_star_shift},
      {3, "gradient fidelity", 120, gradient_fidelity},
      {4, "chunker invariants", 30, chunker_invariants},
      {5, "overfit sanity", 300, overfit_sanity},
      {6, "planted-signal separation", 1800, planted_separation},
      {7, "degeneracy equivalence", 60, degeneracy_equivalence},
      {8, "protocol correctness", 300, protocol_correctness},
      {9, "frozen-encoder guarantee", 60, frozen_encoder},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.time_limit_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s [%d] %s: %s; %.1fs (limit %.0fs)%s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                secs, c.time_limit_s, in_time ? "" : " TIMEOUT");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
