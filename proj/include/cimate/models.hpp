#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cimate/corpus.hpp"
#include "cimate/nn/graph.hpp"
#include "cimate/nn/layers.hpp"
#include "cimate/textproc.hpp"
#include "json.hpp"

namespace cimate {

enum class Family { kTitleAbstract, kBeginning, kLongBeginning, kSchubert, kCimateB, kCimateW };
enum class Pooling { kNone, kMean, kTransformer };

std::string family_name(Family family);
Family parse_family(const std::string& name);
std::string pooling_name(Pooling pooling);
Pooling parse_pooling(const std::string& name);

struct VariantConfig {
  Family family = Family::kCimateB;
  Pooling pooling = Pooling::kMean;  // only meaningful for cimate_*
  std::size_t budget = 512;
  double dropout_final = 0.1;
  nn::EncoderConfig encoder;

  // cimate_w chunking
  std::size_t chunk_overlap = 50;
  std::size_t max_chunks = 8;
  // Transformer pooling: learned section-order positions
  bool pool_positions = true;
  std::size_t max_sections = 64;
  // schubert character chunking
  std::size_t schubert_chunk_chars = 2000;
  std::size_t schubert_overlap_chars = 200;

  bool is_cimate() const { return family == Family::kCimateB || family == Family::kCimateW; }
  // "cimate_b:transformer", "schubert", ...
  std::string name() const;
  void validate() const;

  nlohmann::json to_json() const;
  static VariantConfig from_json(const nlohmann::json& j);
};

// Family defaults on top of a base encoder: the long-input baseline widens
// the budget and position table, non-CiMaTe families drop pooling.
VariantConfig make_variant(const std::string& name, const nn::EncoderConfig& encoder,
                           std::size_t long_budget = 2048);

// Token sequences one paper contributes to a variant.
struct PreparedPaper {
  std::string id;
  std::vector<TokenSeq> sequences;
  // cimate_w: number of chunk sequences per section, in order.
  std::vector<std::size_t> group_sizes;
};

// Main text as a flat string over effective sections (headings included).
std::string flat_main_text(const PaperRecord& record);

// Fixed-length character windows over the section bodies only.
std::vector<std::string> character_chunks(const PaperRecord& record, std::size_t chunk_chars,
                                          std::size_t overlap_chars);

PreparedPaper prepare(const VariantConfig& variant, const PaperRecord& record, const Vocab& vocab);

template <typename T>
class CitationModel {
 public:
  // Fresh parameters, initialized from `seed`.
  CitationModel(VariantConfig variant, std::uint64_t seed);
  // Parameters restored from a checkpoint; names and shapes must match.
  CitationModel(VariantConfig variant, nn::ParamSet<T> params);

  const VariantConfig& variant() const { return variant_; }
  nn::ParamSet<T>& params() { return params_; }
  const nn::ParamSet<T>& params() const { return params_; }
  const nn::Encoder& encoder() const { return encoder_; }
  const nn::DenseParams& head() const { return head_; }
  // Encoder parameters are frozen for schubert.
  bool encoder_frozen() const { return variant_.family == Family::kSchubert; }

  // Prediction [1 x 1] on the tape. `rng` turns dropout on. For schubert,
  // `frozen_features` ([chunks x width]) skips re-encoding.
  nn::Var forward(nn::Graph<T>& g, const PreparedPaper& paper, std::mt19937_64* rng,
                  const nn::Tensor<T>* frozen_features = nullptr) const;

  T predict(const PreparedPaper& paper) const;

  // Chunk CLS vectors from the frozen encoder (schubert).
  nn::Tensor<T> frozen_features(const PreparedPaper& paper) const;

  // One row per section (cimate_b / cimate_w).
  nn::Tensor<T> section_representations(const PreparedPaper& paper) const;
  nn::Var section_representations(nn::Graph<T>& g, const PreparedPaper& paper,
                                  std::mt19937_64* rng) const;

  // Document vector [1 x width] from section rows.
  nn::Var pool(nn::Graph<T>& g, nn::Var sections, std::mt19937_64* rng) const;
  nn::Tensor<T> pool(const nn::Tensor<T>& sections) const;

  template <typename U>
  CitationModel<U> cast() const {
    return CitationModel<U>(variant_, params_.template cast<U>());
  }

 private:
  void build(std::mt19937_64& rng);

  VariantConfig variant_;
  nn::ParamSet<T> params_;
  nn::Encoder encoder_;
  std::optional<nn::Gru> gru_;
  std::optional<nn::BlockParams> pool_block_;
  std::size_t pool_positions_ = 0;
  nn::DenseParams head_{};
};

extern template class CitationModel<float>;
extern template class CitationModel<double>;

}  // namespace cimate
