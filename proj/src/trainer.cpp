#include "cimate/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "cimate/error.hpp"
#include "cimate/eval.hpp"
#include "cimate/nn/optim.hpp"

namespace cimate {

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (peak_lr < 0.0) throw InvalidArgument("peak_lr must be non-negative");
  if (warmup_frac <= 0.0 || warmup_frac >= 1.0) throw InvalidArgument("warmup_frac must be in (0, 1)");
}

Grid default_grid(Family family, double schubert_lr) {
  if (family == Family::kSchubert) return Grid{{20, 30, 40}, {schubert_lr}};
  return Grid{{3, 4}, {1e-4, 3e-4, 5e-4}};
}

Grid paper_grid(Family family, double schubert_lr) {
  if (family == Family::kSchubert) return Grid{{20, 30, 40}, {schubert_lr}};
  return Grid{{3, 4}, {2e-5, 3e-5, 5e-5}};
}

TrainOutcome train(const VariantConfig& variant, const SplitView& split, const Vocab& vocab,
                   const TrainConfig& cfg, const Logger& log) {
  cfg.validate();
  if (split.train.empty()) throw InvalidArgument("split " + split.spec.id() + " has no training papers");

  std::vector<PreparedPaper> papers;
  std::vector<float> targets;
  papers.reserve(split.train.size());
  for (const LabeledPaper* p : split.train) {
    papers.push_back(prepare(variant, p->record, vocab));
    targets.push_back(static_cast<float>(p->y));
  }

  TrainOutcome out{CitationModel<float>(variant, cfg.seed), {}, {}};
  CitationModel<float>& model = out.model;

  std::vector<nn::Tensor<float>> frozen;
  if (model.encoder_frozen()) {
    frozen.reserve(papers.size());
    for (const auto& p : papers) frozen.push_back(model.frozen_features(p));
  }

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5eedULL);
  std::mt19937_64 dropout_rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
  nn::AdamWConfig adam;
  adam.weight_decay = cfg.weight_decay;
  nn::AdamW<float> optimizer(adam);

  const std::size_t n = papers.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const auto total_steps = static_cast<std::int64_t>(steps_per_epoch) * cfg.epochs;
  std::vector<std::size_t> order(n);
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, n);
      const auto batch = static_cast<float>(end - begin);
      std::vector<nn::Tensor<float>> grads(model.params().size());
      double batch_loss = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t i = order[k];
        nn::Graph<float> g(&model.params());
        const nn::Var pred = model.forward(g, papers[i], &dropout_rng, frozen.empty() ? nullptr : &frozen[i]);
        const nn::Var loss = g.mse(pred, nn::Tensor<float>::Constant(1, 1, targets[i]));
        batch_loss += g.value(loss)(0, 0);
        g.backward(loss, 1.0f / batch);
        const auto& pg = g.param_grads();
        for (std::size_t j = 0; j < pg.size(); ++j) {
          if (pg[j].size() == 0) continue;
          if (grads[j].size() == 0) grads[j] = pg[j];
          else grads[j] += pg[j];
        }
      }
      batch_loss /= batch;
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << variant.name() << " seed " << cfg.seed << " epoch " << epoch << " step " << step
            << ": loss " << batch_loss << " at lr " << nn::lr_at(step, total_steps, cfg.peak_lr, cfg.warmup_frac);
        throw DivergedLoss(msg.str());
      }
      optimizer.step(model.params(), grads, nn::lr_at(step, total_steps, cfg.peak_lr, cfg.warmup_frac));
      out.step_losses.push_back(batch_loss);
      epoch_loss += batch_loss * batch;
      ++step;
    }
    if (log) {
      std::ostringstream msg;
      msg << variant.name() << " split " << split.spec.id() << " seed " << cfg.seed << " epoch "
          << epoch + 1 << "/" << cfg.epochs << " train mse " << epoch_loss / static_cast<double>(n);
      log(msg.str());
    }
  }

  out.result.variant = variant.name();
  out.result.seed = cfg.seed;
  out.result.split_id = split.spec.id();
  std::vector<const PaperRecord*> eval(split.eval.begin(), split.eval.end());
  std::sort(eval.begin(), eval.end(), [](const PaperRecord* a, const PaperRecord* b) { return a->id < b->id; });
  for (const PaperRecord* p : eval) {
    out.result.predictions.emplace_back(p->id, static_cast<double>(model.predict(prepare(variant, *p, vocab))));
  }
  return out;
}

GridResult grid_search(const VariantConfig& variant, const SplitView& dev_split, const Vocab& vocab,
                       const std::unordered_map<std::string, double>& dev_truth, const Grid& grid,
                       const TrainConfig& base, const Logger& log) {
  if (dev_split.spec.role != SplitRole::kDev) throw InvalidArgument("grid search needs the dev split");
  if (grid.cells() == 0) throw InvalidArgument("empty hyperparameter grid");
  std::vector<int> epochs = grid.epochs;
  std::vector<double> lrs = grid.lrs;
  std::sort(epochs.begin(), epochs.end());
  std::sort(lrs.begin(), lrs.end());

  GridResult result;
  bool have_best = false;
  double best_rho = 0.0;
  for (int e : epochs) {
    for (double lr : lrs) {
      TrainConfig cfg = base;
      cfg.epochs = e;
      cfg.peak_lr = lr;
      GridCell cell{e, lr, 0.0};
      if (grid.cells() > 1) {
        const TrainOutcome run = train(variant, dev_split, vocab, cfg, log);
        std::vector<double> preds, trues;
        for (const auto& [id, y] : run.result.predictions) {
          auto it = dev_truth.find(id);
          if (it == dev_truth.end()) throw MissingSplit("no dev truth for '" + id + "'");
          preds.push_back(y);
          trues.push_back(it->second);
        }
        cell.dev_rho = spearman(preds, trues);
      }
      result.cells.push_back(cell);
      if (log) {
        std::ostringstream msg;
        msg << variant.name() << " grid epochs=" << e << " lr=" << lr << " dev rho=" << cell.dev_rho;
        log(msg.str());
      }
      if (!have_best || cell.dev_rho > best_rho) {
        have_best = true;
        best_rho = cell.dev_rho;
        result.best = cfg;
      }
    }
  }
  return result;
}

SeedRuns run_seeds(const VariantConfig& variant, const std::vector<SplitView>& splits, const Vocab& vocab,
                   const TrainConfig& best, const std::vector<std::uint64_t>& seeds, const Logger& log) {
  const SplitView* dev = nullptr;
  std::vector<const SplitView*> tests;
  for (const auto& s : splits) {
    if (s.spec.role == SplitRole::kDev) {
      if (dev) throw InvalidArgument("more than one dev split");
      dev = &s;
    } else {
      tests.push_back(&s);
    }
  }
  if (!dev) throw MissingSplit("run_seeds needs a dev split");
  if (tests.empty()) throw MissingSplit("run_seeds needs at least one test split");
  if (seeds.empty()) throw InvalidArgument("no seeds given");

  SeedRuns runs;
  for (std::uint64_t seed : seeds) {
    TrainConfig cfg = best;
    cfg.seed = seed;
    runs.dev.push_back(train(variant, *dev, vocab, cfg, log).result);
    for (const SplitView* s : tests) runs.test.push_back(train(variant, *s, vocab, cfg, log).result);
  }
  return runs;
}

nn::GradCheckReport model_grad_check(VariantConfig variant, const PaperRecord& paper, const Vocab& vocab,
                                     double target, std::uint64_t seed, const nn::GradCheckOptions& options,
                                     double weight_scale) {
  variant.encoder.dropout = 0.0;
  variant.dropout_final = 0.0;
  CitationModel<double> model(variant, seed);
  for (auto& p : model.params()) {
    if (p.decay) p.value *= weight_scale;
  }
  const PreparedPaper prepared = prepare(variant, paper, vocab);
  const nn::Tensor<double> truth = nn::Tensor<double>::Constant(1, 1, target);
  const nn::LossFn loss = [&](const nn::ParamSet<double>& params, std::vector<nn::Tensor<double>>* grads) {
    nn::Graph<double> g(&params, grads != nullptr);
    const nn::Var out = g.mse(model.forward(g, prepared, nullptr), truth);
    if (grads) {
      g.backward(out);
      *grads = g.param_grads();
      grads->resize(params.size());
    }
    return g.value(out)(0, 0);
  };
  return nn::grad_check(loss, model.params(), options);
}

}  // namespace cimate
