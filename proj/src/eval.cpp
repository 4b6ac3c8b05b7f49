#include "cimate/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "cimate/error.hpp"

namespace cimate {

using nlohmann::json;

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> preds, std::span<const double> trues) {
  if (preds.size() != trues.size()) throw InvalidArgument("spearman needs equal-length inputs");
  if (preds.size() < 2) throw DegenerateInput("spearman needs at least two values");
  const auto rx = average_ranks(preds);
  const auto ry = average_ranks(trues);
  const double n = static_cast<double>(rx.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("spearman is undefined for a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double mse(std::span<const double> preds, std::span<const double> trues) {
  if (preds.size() != trues.size() || preds.empty()) {
    throw InvalidArgument("mse needs equal-length, non-empty inputs");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) total += (preds[i] - trues[i]) * (preds[i] - trues[i]);
  return total / static_cast<double>(preds.size());
}

double mse_star(std::span<const double> preds_test, std::span<const double> trues_test,
                std::span<const double> preds_dev, std::span<const double> trues_dev) {
  if (preds_dev.empty() || trues_dev.empty()) throw InvalidArgument("mse_star needs dev predictions");
  auto mean = [](std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const double shift = mean(preds_dev) - mean(trues_dev);
  std::vector<double> corrected(preds_test.begin(), preds_test.end());
  for (auto& p : corrected) p -= shift;
  return mse(corrected, trues_test);
}

namespace {

std::size_t top_count(double pct, std::size_t n) {
  const double raw = std::ceil(pct * static_cast<double>(n) / 100.0 - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, n);
}

std::vector<std::size_t> top_indices(std::span<const double> values, std::size_t count,
                                     std::span<const std::string> ids) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return ids.empty() ? a < b : ids[a] < ids[b];
  });
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace

double top_overlap(std::span<const double> preds, std::span<const double> trues, double n_pct,
                   double k_pct, std::span<const std::string> ids) {
  if (preds.size() != trues.size() || preds.empty()) {
    throw InvalidArgument("top_overlap needs equal-length, non-empty inputs");
  }
  if (!ids.empty() && ids.size() != preds.size()) throw InvalidArgument("top_overlap id count mismatch");
  const auto actual = top_indices(trues, top_count(n_pct, trues.size()), ids);
  const auto predicted = top_indices(preds, top_count(k_pct, preds.size()), ids);
  std::vector<std::size_t> both;
  std::set_intersection(actual.begin(), actual.end(), predicted.begin(), predicted.end(),
                        std::back_inserter(both));
  return static_cast<double>(both.size()) / static_cast<double>(actual.size());
}

void PredictionSet::add(std::string id, double pred, double truth) {
  ids.push_back(std::move(id));
  y_pred.push_back(pred);
  y_true.push_back(truth);
}

const std::vector<MetricSpec>& metric_specs() {
  static const std::vector<MetricSpec> kSpecs = {
      {"rho", "rho", true},         {"mse", "MSE", false},          {"mse_star", "MSE*", false},
      {"5@5", "5%@5%", true},       {"5@25", "5%@25%", true},       {"10@10", "10%@10%", true},
      {"10@50", "10%@50%", true}};
  return kSpecs;
}

std::map<std::string, double> score(const PredictionSet& test, const PredictionSet& dev) {
  std::map<std::string, double> out;
  out["rho"] = spearman(test.y_pred, test.y_true);
  out["mse"] = mse(test.y_pred, test.y_true);
  out["mse_star"] = mse_star(test.y_pred, test.y_true, dev.y_pred, dev.y_true);
  out["5@5"] = top_overlap(test.y_pred, test.y_true, 5, 5, test.ids);
  out["5@25"] = top_overlap(test.y_pred, test.y_true, 5, 25, test.ids);
  out["10@10"] = top_overlap(test.y_pred, test.y_true, 10, 10, test.ids);
  out["10@50"] = top_overlap(test.y_pred, test.y_true, 10, 50, test.ids);
  return out;
}

namespace {

void append(PredictionSet& set, const RunResult& run, const std::unordered_map<std::string, double>& truth) {
  for (const auto& [id, pred] : run.predictions) {
    auto it = truth.find(id);
    if (it == truth.end()) throw MissingSplit("no ground truth for paper '" + id + "'");
    set.add(id, pred, it->second);
  }
}

}  // namespace

MetricReport pooled_report(const std::string& variant, const std::vector<RunResult>& test_results,
                           const std::vector<RunResult>& dev_results,
                           const std::unordered_map<std::string, double>& truth,
                           const std::string& dataset) {
  if (test_results.empty()) throw MissingSplit("no test results for " + variant);
  std::set<std::string> split_ids;
  std::map<std::uint64_t, std::vector<const RunResult*>> by_seed;
  for (const auto& r : test_results) {
    split_ids.insert(r.split_id);
    by_seed[r.seed].push_back(&r);
  }
  std::map<std::uint64_t, const RunResult*> dev_by_seed;
  for (const auto& r : dev_results) dev_by_seed[r.seed] = &r;

  MetricReport report;
  report.dataset = dataset;
  report.variant = variant;
  for (auto& [seed, runs] : by_seed) {
    std::sort(runs.begin(), runs.end(),
              [](const RunResult* a, const RunResult* b) { return a->split_id < b->split_id; });
    std::set<std::string> present;
    for (const auto* r : runs) present.insert(r->split_id);
    for (const auto& id : split_ids) {
      if (!present.count(id)) {
        throw MissingSplit("seed " + std::to_string(seed) + " has no result for split " + id);
      }
    }
    auto dev = dev_by_seed.find(seed);
    if (dev == dev_by_seed.end()) throw MissingSplit("seed " + std::to_string(seed) + " has no dev run");

    PredictionSet test_set, dev_set;
    for (const auto* r : runs) append(test_set, *r, truth);
    append(dev_set, *dev->second, truth);
    report.seeds.push_back(seed);
    for (const auto& [key, value] : score(test_set, dev_set)) report.metrics[key].per_seed.push_back(value);
  }
  for (auto& [key, summary] : report.metrics) {
    const double n = static_cast<double>(summary.per_seed.size());
    summary.mean = std::accumulate(summary.per_seed.begin(), summary.per_seed.end(), 0.0) / n;
    double var = 0.0;
    for (double v : summary.per_seed) var += (v - summary.mean) * (v - summary.mean);
    summary.std = std::sqrt(var / n);
  }
  return report;
}

json report_to_json(const MetricReport& report) {
  json metrics = json::object();
  for (const auto& [key, s] : report.metrics) {
    metrics[key] = {{"per_seed", s.per_seed}, {"mean", s.mean}, {"std", s.std}};
  }
  return json{{"dataset", report.dataset},
              {"variant", report.variant},
              {"seeds", report.seeds},
              {"metrics", metrics}};
}

MetricReport report_from_json(const json& j) {
  MetricReport r;
  r.dataset = j.value("dataset", std::string());
  r.variant = j.at("variant").get<std::string>();
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& [key, s] : j.at("metrics").items()) {
    MetricSummary m;
    m.per_seed = s.at("per_seed").get<std::vector<double>>();
    m.mean = s.at("mean").get<double>();
    m.std = s.at("std").get<double>();
    r.metrics[key] = std::move(m);
  }
  return r;
}

std::string format_cell(const MetricSummary& summary, bool percent) {
  char buf[64];
  if (percent) {
    std::snprintf(buf, sizeof(buf), "%.1f±%.1f", summary.mean * 100.0, summary.std * 100.0);
    return buf;
  }
  char std_buf[32];
  std::snprintf(std_buf, sizeof(std_buf), "%.3f", summary.std);
  std::string std_text = std_buf;
  if (std_text.rfind("0.", 0) == 0) std_text.erase(0, 1);
  std::snprintf(buf, sizeof(buf), "%.3f±%s", summary.mean, std_text.c_str());
  return buf;
}

namespace {

std::pair<std::string, std::string> method_and_pooling(const std::string& variant) {
  const auto colon = variant.find(':');
  if (colon == std::string::npos) return {variant, "-"};
  return {variant.substr(0, colon), variant.substr(colon + 1)};
}

std::vector<std::vector<std::string>> table_rows(const std::vector<MetricReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"Dataset", "Method", "Pooling"};
  for (const auto& m : metric_specs()) header.push_back(m.label);
  rows.push_back(header);
  for (const auto& r : reports) {
    auto [method, pooling] = method_and_pooling(r.variant);
    std::vector<std::string> row = {r.dataset.empty() ? "-" : r.dataset, method, pooling};
    for (const auto& m : metric_specs()) {
      auto it = r.metrics.find(m.key);
      row.push_back(it == r.metrics.end() ? "n/a" : format_cell(it->second, m.percent));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// Display width, counting UTF-8 code points.
std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
  return n;
}

}  // namespace

std::string render_table(const std::vector<MetricReport>& reports) {
  const auto rows = table_rows(reports);
  std::vector<std::size_t> widths(rows[0].size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], display_width(row[c]));
  }
  std::ostringstream out;
  auto rule = [&] {
    std::size_t total = 0;
    for (auto w : widths) total += w + 2;
    out << std::string(total, '-') << '\n';
  };
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const std::size_t pad = widths[c] - display_width(rows[r][c]);
      if (c < 3) out << rows[r][c] << std::string(pad + 2, ' ');
      else out << std::string(pad, ' ') << rows[r][c] << "  ";
    }
    out << '\n';
    if (r == 0) rule();
  }
  out << "Scores other than MSE and MSE* are multiplied by 100.\n";
  return out.str();
}

std::string render_tsv(const std::vector<MetricReport>& reports) {
  std::ostringstream out;
  for (const auto& row : table_rows(reports)) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "\t" : "") << row[c];
    out << '\n';
  }
  return out.str();
}

std::string render_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream out;
  out << "dataset,variant,metric,seed,value\n";
  char buf[64];
  for (const auto& r : reports) {
    for (const auto& m : metric_specs()) {
      auto it = r.metrics.find(m.key);
      if (it == r.metrics.end()) continue;
      for (std::size_t s = 0; s < it->second.per_seed.size(); ++s) {
        std::snprintf(buf, sizeof(buf), "%.17g", it->second.per_seed[s]);
        out << r.dataset << ',' << r.variant << ',' << m.key << ','
            << (s < r.seeds.size() ? std::to_string(r.seeds[s]) : "") << ',' << buf << '\n';
      }
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Planted-signal corpus

double planted_target(double density, const PlantedOptions& options) {
  const double c = std::round(std::exp(options.base + options.slope * density) - 1.0);
  return std::log(std::max(c, 0.0) + 1.0);
}

std::vector<LabeledPaper> generate_planted_corpus(std::size_t n_papers, std::size_t n_sections,
                                                  std::uint64_t seed, const PlantedOptions& options) {
  if (n_sections < 3) throw InvalidArgument("planted corpus needs at least 3 sections");
  if (options.filler_vocab < 1 || options.planted_tokens < 1 || options.months < 1) {
    throw InvalidArgument("planted corpus options must be positive");
  }
  static const char* kHeadings[] = {"introduction", "background", "method",   "experiments",
                                    "results",      "analysis",   "related work"};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> word(0, options.filler_vocab - 1);
  std::uniform_int_distribution<int> month(0, options.months - 1);
  std::uniform_int_distribution<unsigned> day(1, 28);
  std::uniform_real_distribution<double> density(0.0, options.max_density);
  std::uniform_int_distribution<std::size_t> jitter(0, 8);
  char buf[32];
  auto filler = [&](std::size_t n) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
      std::snprintf(buf, sizeof(buf), "w%03zu", word(rng));
      if (i) out.push_back(' ');
      out += buf;
    }
    return out;
  };

  const std::size_t per_section = (options.prefix_tokens + n_sections - 2) / (n_sections - 1);
  const YearMonth first = YearMonth::of(options.first_day);
  std::vector<LabeledPaper> out;
  out.reserve(n_papers);
  for (std::size_t i = 0; i < n_papers; ++i) {
    LabeledPaper p;
    std::snprintf(buf, sizeof(buf), "planted-%05zu", i);
    p.record.id = buf;
    p.record.title = filler(6);
    p.record.abstract = filler(30);
    for (std::size_t s = 0; s + 1 < n_sections; ++s) {
      p.record.sections.push_back({kHeadings[s % 7], filler(per_section + jitter(rng))});
    }
    const auto markers = static_cast<std::size_t>(
        std::llround(density(rng) * static_cast<double>(options.planted_tokens)));
    std::vector<std::string> body;
    for (std::size_t k = 0; k < options.planted_tokens; ++k) {
      std::snprintf(buf, sizeof(buf), "w%03zu", word(rng));
      body.push_back(k < markers ? std::string(kPlantedMarker) : std::string(buf));
    }
    std::shuffle(body.begin(), body.end(), rng);
    std::string text;
    for (const auto& t : body) {
      if (!text.empty()) text.push_back(' ');
      text += t;
    }
    p.record.sections.push_back({"discussion", text});
    p.record.published = first.plus_months(month(rng)).first_day() + std::chrono::days{day(rng) - 1};
    const double realized = static_cast<double>(markers) / static_cast<double>(options.planted_tokens);
    p.y = planted_target(realized, options);
    p.c = std::llround(std::exp(p.y) - 1.0);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<CitationEvent> planted_citations(const std::vector<LabeledPaper>& corpus, std::uint64_t seed,
                                             int horizon_days) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> offset(0, horizon_days);
  std::vector<CitationEvent> events;
  for (const auto& p : corpus) {
    for (std::int64_t k = 0; k < p.c; ++k) {
      events.push_back({p.record.id, p.record.published + std::chrono::days{offset(rng)}});
    }
  }
  return events;
}

}  // namespace cimate
