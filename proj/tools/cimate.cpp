// cimate: corpus -> training -> evaluation pipeline.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "cimate/corpus.hpp"
#include "cimate/error.hpp"
#include "cimate/eval.hpp"
#include "cimate/nn/checkpoint.hpp"
#include "cimate/textproc.hpp"
#include "cimate/trainer.hpp"
#include "cimate/version.hpp"
#include "run_config.hpp"

namespace cimate::cli {
namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitThreshold = 3;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::string out;
};

void log_line(std::string_view msg) { std::cerr << "[cimate] " << msg << '\n'; }

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

RunConfig load_config(const Flags& flags) {
  RunConfig c = flags.config.empty() ? RunConfig::from_json(json::object(), {}) : RunConfig::load(flags.config);
  if (!flags.out.empty()) c.out = flags.out;
  if (flags.seed) c.seeds = {*flags.seed};
  return c;
}

std::vector<std::string> selected_variants(const RunConfig& c, const Flags& flags) {
  if (!flags.variant.empty()) return {flags.variant};
  return c.variants;
}

void write_manifest(const fs::path& path, const std::string& command, const RunConfig& c,
                    const std::vector<std::string>& variants, json extra = json::object()) {
  const json config = c.to_json();
  json m = {{"command", command},
            {"version", kVersion},
            {"config_hash", config_hash(config)},
            {"config", config},
            {"seeds", c.seeds},
            {"variants", variants},
            {"written_utc", utc_now()}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_json(path, m);
}

fs::path dataset_dir(const RunConfig& c) { return c.out / "dataset"; }
fs::path variant_dir(const RunConfig& c, const std::string& v) { return c.out / "runs" / variant_slug(v); }

fs::path require(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw MissingSplit(path.string() + " not found; run `cimate " + producer + "` first");
  }
  return path;
}

// ---------------------------------------------------------------------------
// Dataset bundle

struct Dataset {
  std::vector<LabeledPaper> papers;
  Vocab vocab;
  std::vector<SplitSpec> specs;
};

std::vector<PaperRecord> read_raw_corpus(const fs::path& path) {
  if (path.empty()) throw InvalidArgument("paths.corpus is not set");
  if (!fs::exists(path)) throw MalformedDocument("corpus " + path.string() + " does not exist");
  if (!fs::is_directory(path)) {
    std::ifstream in(path);
    return read_corpus(in);
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    const auto ext = entry.path().extension();
    if (ext == ".json" || ext == ".html" || ext == ".htm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<PaperRecord> out;
  std::size_t excluded = 0;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::stringstream buf;
    buf << in.rdbuf();
    const auto format = f.extension() == ".json" ? DocumentFormat::kCanonicalJson : DocumentFormat::kSimpleHtml;
    try {
      out.push_back(parse_paper(buf.str(), format));
    } catch (const Error& e) {
      std::cerr << "excluded " << f.string() << ": " << e.what() << '\n';
      ++excluded;
    }
  }
  if (excluded > 0) std::cerr << "warning: " << excluded << " unparseable document(s) excluded\n";
  if (out.empty()) throw EmptyDocument("no parseable papers under " + path.string());
  return out;
}

json spec_json(const SplitSpec& s, const SplitView& view) {
  return {{"index", s.index},
          {"id", s.id()},
          {"role", split_role_name(s.role)},
          {"train_start", format_date(s.train_start)},
          {"train_end", format_date(s.train_end)},
          {"train_size", view.train.size()},
          {"eval_size", view.eval.size()}};
}

Dataset load_dataset(const RunConfig& c) {
  const fs::path dir = dataset_dir(c);
  Dataset d;
  {
    std::ifstream in(require(dir / "labeled.jsonl", "build-dataset"));
    d.papers = read_labeled(in);
  }
  {
    std::ifstream in(require(dir / "vocab.txt", "build-dataset"));
    d.vocab = Vocab::load(in);
  }
  const json splits = read_json(require(dir / "splits.json", "build-dataset"));
  for (const auto& s : splits.at("splits")) {
    SplitSpec spec;
    spec.index = s.at("index").get<int>();
    const std::string id = s.at("id").get<std::string>();
    spec.eval_month = YearMonth{std::stoi(id.substr(0, 4)), static_cast<unsigned>(std::stoi(id.substr(5, 2)))};
    spec.train_start = parse_date(s.at("train_start").get<std::string>());
    spec.train_end = parse_date(s.at("train_end").get<std::string>());
    spec.role = s.at("role").get<std::string>() == "dev" ? SplitRole::kDev : SplitRole::kTest;
    d.specs.push_back(spec);
  }
  return d;
}

std::unordered_map<std::string, double> truth_of(const Dataset& d) {
  std::unordered_map<std::string, double> truth;
  for (const auto& p : d.papers) truth[p.record.id] = p.y;
  return truth;
}

int cmd_build_dataset(const Flags& flags) {
  const RunConfig c = load_config(flags);
  DirLock lock(c.out);
  const auto records = read_raw_corpus(c.corpus);
  if (c.citations.empty()) throw InvalidArgument("paths.citations is not set");
  if (!fs::exists(c.citations)) throw MalformedDocument("citation feed " + c.citations.string() + " does not exist");
  std::vector<CitationEvent> events;
  {
    std::ifstream in(c.citations);
    events = read_citations(in);
  }
  if (records.empty()) throw EmptyCorpus("corpus " + c.corpus.string() + " has no papers");

  Date cutoff = records.front().published;
  for (const auto& r : records) cutoff = std::max(cutoff, r.published);
  for (const auto& e : events) cutoff = std::max(cutoff, e.citing_date);
  if (c.data_cutoff) cutoff = *c.data_cutoff;

  LabelingStats stats;
  const LinearExtrapolation strategy;
  const auto labeled = label_corpus(records, events, {c.horizon_days, cutoff, &strategy}, &stats);
  const auto specs = build_subsets(labeled, c.n_subsets, c.train_years);

  // The vocabulary sees only papers inside some training window.
  std::vector<PaperRecord> vocab_source;
  for (const auto& p : labeled) {
    if (p.record.published < specs.back().train_end) vocab_source.push_back(p.record);
  }
  const Vocab vocab = build_vocab(vocab_source, c.vocab_size, c.min_freq);

  const fs::path dir = dataset_dir(c);
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "labeled.jsonl");
    write_labeled(out, labeled);
  }
  {
    std::ofstream out(dir / "vocab.txt");
    vocab.save(out);
  }
  json split_list = json::array();
  double train_total = 0, eval_total = 0;
  std::size_t test_splits = 0;
  for (const auto& s : specs) {
    const SplitView view = materialize(labeled, s);
    split_list.push_back(spec_json(s, view));
    std::cout << s.id() << "  " << split_role_name(s.role) << "  train " << view.train.size() << "  eval "
              << view.eval.size() << '\n';
    if (s.role == SplitRole::kTest) {
      train_total += static_cast<double>(view.train.size());
      eval_total += static_cast<double>(view.eval.size());
      ++test_splits;
    }
  }
  if (test_splits) {
    std::cout << "avg train " << std::llround(train_total / test_splits) << " / eval "
              << std::llround(eval_total / test_splits) << '\n';
  }
  std::cout << labeled.size() << " papers, " << stats.complemented << " complemented, " << stats.unknown_ids
            << " citation events with unknown ids skipped, " << stats.dropped_before_publication
            << " events before publication dropped\n";
  if (stats.unknown_ids > 0) log_line("warning: " + std::to_string(stats.unknown_ids) + " events cite unknown ids");
  const json stats_json = {{"papers", labeled.size()},
                           {"complemented", stats.complemented},
                           {"unknown_ids", stats.unknown_ids},
                           {"dropped_before_publication", stats.dropped_before_publication},
                           {"data_cutoff", format_date(cutoff)},
                           {"vocab_size", vocab.size()}};
  write_json(dir / "splits.json", {{"splits", split_list}, {"stats", stats_json}});
  write_manifest(dir / "manifest.json", "build-dataset", c, {}, {{"stats", stats_json}});
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Training

std::vector<SplitView> views_of(const Dataset& d) {
  std::vector<SplitView> views;
  for (const auto& s : d.specs) views.push_back(materialize(d.papers, s));
  return views;
}

TrainConfig tuned_config(const RunConfig& c, const std::string& variant) {
  TrainConfig cfg = c.train;
  const fs::path grid = variant_dir(c, variant) / "grid.json";
  if (fs::exists(grid)) {
    const json g = read_json(grid);
    cfg.epochs = g.at("best").at("epochs").get<int>();
    cfg.peak_lr = g.at("best").at("peak_lr").get<double>();
  } else {
    log_line("no grid.json for " + variant + "; using the config's train settings");
  }
  return cfg;
}

int cmd_grid_search(const Flags& flags) {
  const RunConfig c = load_config(flags);
  DirLock lock(c.out);
  const Dataset d = load_dataset(c);
  const auto views = views_of(d);
  const auto dev = std::find_if(views.begin(), views.end(), [](const SplitView& v) { return v.spec.role == SplitRole::kDev; });
  if (dev == views.end()) throw MissingSplit("dataset has no dev split");
  const auto truth = truth_of(d);
  const auto variants = selected_variants(c, flags);
  for (const auto& name : variants) {
    const VariantConfig variant = c.variant(name, d.vocab.size());
    TrainConfig base = c.train;
    base.seed = c.seeds.front();
    const GridResult r = grid_search(variant, *dev, d.vocab, truth, c.grid_for(variant.family), base, log_line);
    json cells = json::array();
    for (const auto& cell : r.cells) cells.push_back({{"epochs", cell.epochs}, {"lr", cell.lr}, {"dev_rho", cell.dev_rho}});
    const fs::path dir = variant_dir(c, variant.name());
    write_json(dir / "grid.json",
               {{"variant", variant.name()},
                {"dev_split", dev->spec.id()},
                {"best", {{"epochs", r.best.epochs}, {"peak_lr", r.best.peak_lr}}},
                {"cells", cells}});
    write_manifest(dir / "grid.manifest.json", "grid-search", c, {variant.name()});
    std::cout << variant.name() << "  best epochs=" << r.best.epochs << " lr=" << r.best.peak_lr << '\n';
  }
  return kExitOk;
}

int cmd_train(const Flags& flags) {
  const RunConfig c = load_config(flags);
  DirLock lock(c.out);
  const Dataset d = load_dataset(c);
  const auto views = views_of(d);
  const auto variants = selected_variants(c, flags);
  for (const auto& name : variants) {
    const VariantConfig variant = c.variant(name, d.vocab.size());
    const TrainConfig tuned = tuned_config(c, variant.name());
    const fs::path dir = variant_dir(c, variant.name());
    for (std::uint64_t seed : c.seeds) {
      TrainConfig cfg = tuned;
      cfg.seed = seed;
      const fs::path seed_dir = dir / ("seed" + std::to_string(seed));
      fs::create_directories(seed_dir);
      for (const auto& view : views) {
        TrainOutcome out = train(variant, view, d.vocab, cfg, log_line);
        if (c.save_checkpoints) {
          const fs::path ckpt =
              seed_dir / (variant_slug(variant.name()) + "-seed" + std::to_string(seed) + "-" + view.spec.id() + ".ckpt");
          nn::save_checkpoint_file(ckpt.string(), out.model.params(), variant.to_json());
          out.result.checkpoint = ckpt.filename().string();
        }
        std::ofstream pred(seed_dir / (view.spec.id() + ".jsonl"));
        write_predictions(pred, out.result);
      }
    }
    write_manifest(dir / "train.manifest.json", "train", c, {variant.name()},
                   {{"train", {{"epochs", tuned.epochs}, {"peak_lr", tuned.peak_lr}, {"batch_size", tuned.batch_size}}},
                    {"variant_config", variant.to_json()}});
    std::cout << variant.name() << "  trained " << c.seeds.size() << " seed(s) x " << views.size() << " split(s)\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Evaluation

int cmd_evaluate(const Flags& flags) {
  const RunConfig c = load_config(flags);
  DirLock lock(c.out);
  const Dataset d = load_dataset(c);
  const auto truth = truth_of(d);
  const auto variants = selected_variants(c, flags);
  std::vector<MetricReport> reports;
  for (const auto& name : variants) {
    const VariantConfig variant = c.variant(name, d.vocab.size());
    const fs::path dir = variant_dir(c, variant.name());
    std::vector<RunResult> test, dev;
    for (std::uint64_t seed : c.seeds) {
      for (const auto& spec : d.specs) {
        const fs::path path = dir / ("seed" + std::to_string(seed)) / (spec.id() + ".jsonl");
        if (!fs::exists(path)) {
          throw MissingSplit(path.string() + " not found; run `cimate train --variant " + variant.name() + "` first");
        }
        std::ifstream in(path);
        RunResult r = read_predictions(in);
        r.seed = seed;
        r.split_id = spec.id();
        (spec.role == SplitRole::kDev ? dev : test).push_back(std::move(r));
      }
    }
    MetricReport report = pooled_report(variant.name(), test, dev, truth, c.dataset_name);
    write_json(dir / "report.json", report_to_json(report));
    write_manifest(dir / "evaluate.manifest.json", "evaluate", c, {variant.name()});
    reports.push_back(std::move(report));
  }
  std::cout << render_table(reports);
  return kExitOk;
}

int cmd_report(const Flags& flags) {
  const RunConfig c = load_config(flags);
  DirLock lock(c.out);
  std::vector<MetricReport> reports;
  const auto variants = selected_variants(c, flags);
  for (const auto& name : variants) {
    const fs::path path = variant_dir(c, c.variant(name, 64).name()) / "report.json";
    reports.push_back(report_from_json(read_json(require(path, "evaluate --variant " + name))));
  }
  const fs::path dir = c.out / "report";
  fs::create_directories(dir);
  const std::string table = render_table(reports);
  std::ofstream(dir / "table.txt") << table;
  std::ofstream(dir / "table.tsv") << render_tsv(reports);
  std::ofstream(dir / "metrics.csv") << render_csv(reports);
  write_manifest(dir / "manifest.json", "report", c, variants);
  std::cout << table;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Gradient check and synthetic data

int cmd_grad_check(const Flags& flags) {
  const RunConfig c = load_config(flags);
  PlantedOptions opts;
  opts.prefix_tokens = 40;
  opts.planted_tokens = 16;
  opts.filler_vocab = 30;
  const auto papers = generate_planted_corpus(1, 4, c.seeds.front(), opts);
  const Vocab vocab = build_vocab({papers[0].record}, 64, 1);
  nn::GradCheckOptions options = c.gradcheck;
  options.seed = c.seeds.front();
  bool ok = true;
  for (const auto& name : selected_variants(c, flags)) {
    VariantConfig variant = c.variant(name, vocab.size());
    variant.schubert_chunk_chars = 120;
    variant.schubert_overlap_chars = 20;
    const auto report = model_grad_check(variant, papers[0].record, vocab, papers[0].y + 0.5, c.seeds.front(),
                                         options, c.gradcheck_weight_scale);
    const bool pass = report.max_rel_error < c.gradcheck_threshold;
    ok = ok && pass;
    std::cout << variant.name() << "  max rel error " << report.max_rel_error << " over " << report.coordinates
              << " coordinates (worst " << report.worst_param << ")  " << (pass ? "ok" : "FAIL") << '\n';
  }
  return ok ? kExitOk : kExitThreshold;
}

int cmd_gen_synthetic(const Flags& flags) {
  RunConfig c = load_config(flags);
  if (flags.out.empty()) throw InvalidArgument("gen-synthetic needs --out DIR");
  DirLock lock(c.out);
  const std::uint64_t seed = c.seeds.front();
  const auto corpus = generate_planted_corpus(c.synthetic_papers, c.synthetic_sections, seed);
  const auto events = planted_citations(corpus, seed + 1);
  const fs::path raw = c.out / "raw";
  fs::create_directories(raw);
  {
    std::ofstream out(raw / "corpus.jsonl");
    for (const auto& p : corpus) out << serialize_paper(p.record) << '\n';
  }
  {
    std::ofstream out(raw / "citations.jsonl");
    write_citations(out, events);
  }
  Date last = corpus.front().record.published;
  for (const auto& p : corpus) last = std::max(last, p.record.published);

  json config = c.to_json();
  config["paths"] = {{"corpus", "raw/corpus.jsonl"}, {"citations", "raw/citations.jsonl"}, {"out", "."}};
  config["subsets"]["data_cutoff"] = format_date(last + std::chrono::days{c.horizon_days + 1});
  if (!fs::exists(c.out / "config.json")) write_json(c.out / "config.json", config);
  write_manifest(raw / "manifest.json", "gen-synthetic", c, {}, {{"papers", corpus.size()}, {"events", events.size()}});
  std::cout << corpus.size() << " papers, " << events.size() << " citation events written to " << raw.string() << '\n';
  return kExitOk;
}

int exit_code_for(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::kUsage: return kExitUsage;
    case ErrorCategory::kData: return kExitData;
    case ErrorCategory::kNumeric: return kExitData;
  }
  return kExitData;
}

}  // namespace
}  // namespace cimate::cli

int main(int argc, char** argv) {
  using namespace cimate::cli;
  CLI::App app{"Citation-count prediction from paper main text"};
  app.set_version_flag("--version", std::string(cimate::kVersion));
  app.require_subcommand(1);
  Flags flags;
  std::uint64_t seed = 0;

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Flags&);
  };
  const Command commands[] = {
      {"gen-synthetic", "Write a planted-signal corpus, citation feed and starter config", cmd_gen_synthetic},
      {"build-dataset", "Label the corpus, build the vocabulary and the rolling subsets", cmd_build_dataset},
      {"grid-search", "Pick epochs and learning rate on the dev subset", cmd_grid_search},
      {"train", "Train every subset for each seed and write predictions", cmd_train},
      {"evaluate", "Pool predictions over the test subsets and score them", cmd_evaluate},
      {"report", "Render the results table from evaluated variants", cmd_report},
      {"grad-check", "Compare reverse-mode gradients with finite differences", cmd_grad_check},
  };
  std::map<CLI::App*, const Command*> by_app;
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", flags.config, "Run-config JSON file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Use only this seed");
    sub->add_option("--variant", flags.variant, "Variant, e.g. cimate_b:transformer");
    sub->add_option("--out", flags.out, "Output directory");
    by_app[sub] = &cmd;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  for (const auto& [sub, cmd] : by_app) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) flags.seed = seed;
    try {
      return cmd->run(flags);
    } catch (const cimate::Error& e) {
      std::cerr << "cimate " << cmd->name << ": " << e.what() << '\n';
      return exit_code_for(e);
    } catch (const std::filesystem::filesystem_error& e) {
      std::cerr << "cimate " << cmd->name << ": " << e.what() << '\n';
      return 2;
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "cimate " << cmd->name << ": malformed artifact: " << e.what() << '\n';
      return 2;
    }
  }
  return 1;
}
