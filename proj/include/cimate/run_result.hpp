#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cimate {

// Predictions of one trained model on its split's evaluation papers.
struct RunResult {
  std::string variant;
  std::uint64_t seed = 0;
  std::string split_id;
  std::optional<double> dev_rho;
  std::vector<std::pair<std::string, double>> predictions;  // (paper id, y_pred), ordered by id
  std::string checkpoint;
};

// JSON lines {paper_id, y_pred, variant, seed, split_id}.
void write_predictions(std::ostream& out, const RunResult& result);
RunResult read_predictions(std::istream& in);

}  // namespace cimate
