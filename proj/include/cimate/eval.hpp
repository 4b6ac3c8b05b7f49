#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cimate/corpus.hpp"
#include "cimate/run_result.hpp"
#include "json.hpp"

namespace cimate {

// Average (fractional) ranks starting at 1; tied values share their mean rank.
std::vector<double> average_ranks(std::span<const double> values);

// Pearson correlation of average ranks. Throws DegenerateInput for fewer
// than two values or a constant side.
double spearman(std::span<const double> preds, std::span<const double> trues);

double mse(std::span<const double> preds, std::span<const double> trues);

// MSE after shifting test predictions by the dev bias mean(preds_dev) - mean(trues_dev).
double mse_star(std::span<const double> preds_test, std::span<const double> trues_test,
                std::span<const double> preds_dev, std::span<const double> trues_dev);

// Fraction of the true top ceil(n_pct N / 100) papers found among the
// predicted top ceil(k_pct N / 100). Ties rank the smaller id first; without
// ids the index serves as id.
double top_overlap(std::span<const double> preds, std::span<const double> trues, double n_pct,
                   double k_pct, std::span<const std::string> ids = {});

struct PredictionSet {
  std::vector<std::string> ids;
  std::vector<double> y_pred;
  std::vector<double> y_true;

  void add(std::string id, double pred, double truth);
  std::size_t size() const { return ids.size(); }
};

// Columns of the results table in display order.
struct MetricSpec {
  std::string key;
  std::string label;
  bool percent;  // displayed x100
};
const std::vector<MetricSpec>& metric_specs();

struct MetricSummary {
  std::vector<double> per_seed;
  double mean = 0.0;
  double std = 0.0;  // population std over seeds
};

struct MetricReport {
  std::string dataset;
  std::string variant;  // e.g. "cimate_b:transformer"
  std::vector<std::uint64_t> seeds;
  std::map<std::string, MetricSummary> metrics;
};

// All seven metrics on one pooled prediction set.
std::map<std::string, double> score(const PredictionSet& test, const PredictionSet& dev);

// Per seed: concatenate every test split's predictions, score against the
// truth, and correct MSE* with that seed's dev run. Then mean/std over seeds.
MetricReport pooled_report(const std::string& variant, const std::vector<RunResult>& test_results,
                           const std::vector<RunResult>& dev_results,
                           const std::unordered_map<std::string, double>& truth,
                           const std::string& dataset = "");

nlohmann::json report_to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

// Table layout: Dataset / Method / Pooling / seven metric columns, scores
// x100 except MSE and MSE*, each cell "mean±std".
std::string format_cell(const MetricSummary& summary, bool percent);
std::string render_table(const std::vector<MetricReport>& reports);
std::string render_tsv(const std::vector<MetricReport>& reports);
// Long format for plotting: dataset,variant,metric,seed,value.
std::string render_csv(const std::vector<MetricReport>& reports);

struct PlantedOptions {
  std::size_t filler_vocab = 200;
  std::size_t prefix_tokens = 540;   // filler tokens spread over the sections before the planted one
  std::size_t planted_tokens = 64;   // body length of the planted section
  double max_density = 0.5;
  double base = 0.0;                 // y level at density 0
  double slope = 6.0;                // y per unit marker density
  Date first_day = make_date(2014, 6, 1);
  int months = 73;                   // publication dates spread over this many months
};

inline constexpr const char* kPlantedMarker = "marker";

// Synthetic papers whose citation count depends only on the density of the
// marker token in the last section, which starts past flat-text offset
// prefix_tokens:
//   c = round(exp(base + slope * density) - 1), y = ln(c + 1).
std::vector<LabeledPaper> generate_planted_corpus(std::size_t n_papers, std::size_t n_sections,
                                                  std::uint64_t seed, const PlantedOptions& options = {});

// y for a given realized density under the generator's rule.
double planted_target(double density, const PlantedOptions& options = {});

// Citation events that reproduce each paper's c within its horizon.
std::vector<CitationEvent> planted_citations(const std::vector<LabeledPaper>& corpus,
                                             std::uint64_t seed, int horizon_days = 365);

}  // namespace cimate
