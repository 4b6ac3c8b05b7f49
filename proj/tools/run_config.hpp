#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cimate/corpus.hpp"
#include "cimate/models.hpp"
#include "cimate/trainer.hpp"
#include "json.hpp"

namespace cimate::cli {

namespace fs = std::filesystem;

// Everything a pipeline run needs. Parsed from one JSON file; command-line
// flags override individual fields afterwards.
struct RunConfig {
  // paths (relative ones resolve against the config file's directory)
  fs::path corpus;     // .jsonl of canonical records, or a directory of .json / .html papers
  fs::path citations;  // .jsonl of {cited_id, citing_date}
  fs::path out = "cimate-out";

  std::string dataset_name = "synthetic";
  std::vector<std::string> variants = {"title_abstract", "beginning", "cimate_b:mean"};
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  // subsets and labels
  int n_subsets = 13;
  int train_years = 5;
  int horizon_days = 365;
  std::optional<Date> data_cutoff;  // default: latest citing or publication date
  std::size_t vocab_size = 8000;
  std::int64_t min_freq = 1;

  nn::EncoderConfig encoder;  // vocab_size is taken from the built vocabulary
  std::size_t long_budget = 2048;
  nlohmann::json variant_overrides = nlohmann::json::object();

  TrainConfig train;
  std::optional<Grid> grid;  // default: trainer's desk-scale grid per family
  double schubert_lr = 1e-3;
  bool save_checkpoints = false;

  double gradcheck_threshold = 1e-4;
  nn::GradCheckOptions gradcheck;
  double gradcheck_weight_scale = 10.0;

  std::size_t synthetic_papers = 600;
  std::size_t synthetic_sections = 6;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j, const fs::path& base_dir);
  static RunConfig load(const fs::path& path);

  // VariantConfig for `name` with the config's encoder and overrides.
  VariantConfig variant(const std::string& name, std::size_t vocab_size) const;
  Grid grid_for(Family family) const;
};

// FNV-1a 64 of the canonical (sorted-key) JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& config);

// Directory-safe variant name: "cimate_b:mean" -> "cimate_b-mean".
std::string variant_slug(const std::string& variant);

// Exclusive advisory lock on `<dir>/.cimate.lock`, released on destruction.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

}  // namespace cimate::cli
