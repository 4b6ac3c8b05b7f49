#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cimate/corpus.hpp"
#include "cimate/models.hpp"
#include "cimate/nn/gradcheck.hpp"
#include "cimate/run_result.hpp"
#include "cimate/textproc.hpp"

namespace cimate {

struct TrainConfig {
  int epochs = 3;
  double peak_lr = 3e-4;
  std::size_t batch_size = 32;
  double warmup_frac = 0.1;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Grid {
  std::vector<int> epochs;
  std::vector<double> lrs;

  std::size_t cells() const { return epochs.size() * lrs.size(); }
};

// Desk-scale grid: epochs {3, 4} x lr {1e-4, 3e-4, 5e-4}; schubert searches
// epochs {20, 30, 40} only, at `schubert_lr`.
Grid default_grid(Family family, double schubert_lr = 1e-3);
// The grid used with pre-trained 110M-parameter encoders: lr {2e-5, 3e-5, 5e-5}.
Grid paper_grid(Family family, double schubert_lr = 1e-3);

using Logger = std::function<void(std::string_view)>;

struct TrainOutcome {
  CitationModel<float> model;
  RunResult result;
  std::vector<double> step_losses;  // mean batch loss per optimizer step
};

// Minimizes mean (y_pred - y)^2 over seed-shuffled mini-batches with the
// warmup/decay schedule, then predicts the split's eval papers with dropout
// off. Eval papers are seen only as PaperRecords, never with labels.
TrainOutcome train(const VariantConfig& variant, const SplitView& split, const Vocab& vocab,
                   const TrainConfig& cfg, const Logger& log = {});

struct GridCell {
  int epochs = 0;
  double lr = 0.0;
  double dev_rho = 0.0;
};

struct GridResult {
  TrainConfig best;
  std::vector<GridCell> cells;
};

// Trains every cell on the dev split and keeps the one with the highest dev
// Spearman rho; ties go to fewer epochs, then lower lr.
GridResult grid_search(const VariantConfig& variant, const SplitView& dev_split, const Vocab& vocab,
                       const std::unordered_map<std::string, double>& dev_truth, const Grid& grid,
                       const TrainConfig& base, const Logger& log = {});

struct SeedRuns {
  std::vector<RunResult> test;  // one per (seed, test split)
  std::vector<RunResult> dev;   // one per seed
};

// Requires exactly one dev split and at least one test split; checked
// before any training.
SeedRuns run_seeds(const VariantConfig& variant, const std::vector<SplitView>& splits, const Vocab& vocab,
                   const TrainConfig& best, const std::vector<std::uint64_t>& seeds,
                   const Logger& log = {});

// Finite-difference check of one variant's loss on one paper in double
// precision with dropout off. Weight matrices are multiplied by
// `weight_scale` first so activations leave the near-linear regime of the
// small init; frozen parameters are not checked.
nn::GradCheckReport model_grad_check(VariantConfig variant, const PaperRecord& paper, const Vocab& vocab,
                                     double target, std::uint64_t seed, const nn::GradCheckOptions& options = {},
                                     double weight_scale = 10.0);

}  // namespace cimate
