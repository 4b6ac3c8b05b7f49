#include "cimate/models.hpp"

#include <algorithm>
#include <numeric>

#include "cimate/error.hpp"

namespace cimate {

using nlohmann::json;
using nn::Graph;
using nn::Tensor;
using nn::Var;

std::string family_name(Family family) {
  switch (family) {
    case Family::kTitleAbstract: return "title_abstract";
    case Family::kBeginning: return "beginning";
    case Family::kLongBeginning: return "long_beginning";
    case Family::kSchubert: return "schubert";
    case Family::kCimateB: return "cimate_b";
    case Family::kCimateW: return "cimate_w";
  }
  return "?";
}

Family parse_family(const std::string& name) {
  for (Family f : {Family::kTitleAbstract, Family::kBeginning, Family::kLongBeginning,
                   Family::kSchubert, Family::kCimateB, Family::kCimateW}) {
    if (family_name(f) == name) return f;
  }
  throw InvalidArgument("unknown model family '" + name + "'");
}

std::string pooling_name(Pooling pooling) {
  switch (pooling) {
    case Pooling::kNone: return "-";
    case Pooling::kMean: return "mean";
    case Pooling::kTransformer: return "transformer";
  }
  return "?";
}

Pooling parse_pooling(const std::string& name) {
  if (name == "mean") return Pooling::kMean;
  if (name == "transformer") return Pooling::kTransformer;
  if (name == "-" || name.empty() || name == "none") return Pooling::kNone;
  throw InvalidArgument("unknown pooling '" + name + "'");
}

std::string VariantConfig::name() const {
  if (is_cimate()) return family_name(family) + ":" + pooling_name(pooling);
  return family_name(family);
}

void VariantConfig::validate() const {
  encoder.validate();
  if (is_cimate() != (pooling != Pooling::kNone)) {
    throw InvalidArgument("pooling is defined exactly for the cimate families (" + name() + ")");
  }
  if (budget < 4 || budget > static_cast<std::size_t>(encoder.max_positions)) {
    throw InvalidArgument("budget " + std::to_string(budget) + " must be in [4, max_positions]");
  }
  if (dropout_final < 0.0 || dropout_final >= 1.0) throw InvalidArgument("dropout_final must be in [0, 1)");
  if (max_chunks == 0 || max_sections == 0) throw InvalidArgument("chunk and section caps must be positive");
  if (schubert_chunk_chars == 0 || schubert_overlap_chars >= schubert_chunk_chars) {
    throw InvalidArgument("schubert overlap must be smaller than the chunk size");
  }
}

json VariantConfig::to_json() const {
  return json{{"family", family_name(family)},
              {"pooling", pooling_name(pooling)},
              {"budget", budget},
              {"dropout_final", dropout_final},
              {"encoder",
               {{"vocab_size", encoder.vocab_size},
                {"layers", encoder.layers},
                {"heads", encoder.heads},
                {"width", encoder.width},
                {"ff_width", encoder.ff_width},
                {"max_positions", encoder.max_positions},
                {"dropout", encoder.dropout},
                {"attention_window", encoder.attention_window}}},
              {"chunk_overlap", chunk_overlap},
              {"max_chunks", max_chunks},
              {"pool_positions", pool_positions},
              {"max_sections", max_sections},
              {"schubert_chunk_chars", schubert_chunk_chars},
              {"schubert_overlap_chars", schubert_overlap_chars}};
}

VariantConfig VariantConfig::from_json(const json& j) {
  VariantConfig v;
  v.family = parse_family(j.at("family").get<std::string>());
  v.pooling = parse_pooling(j.value("pooling", std::string("-")));
  v.budget = j.value("budget", v.budget);
  v.dropout_final = j.value("dropout_final", v.dropout_final);
  const json& e = j.at("encoder");
  v.encoder.vocab_size = e.at("vocab_size").get<std::size_t>();
  v.encoder.layers = e.value("layers", v.encoder.layers);
  v.encoder.heads = e.value("heads", v.encoder.heads);
  v.encoder.width = e.value("width", v.encoder.width);
  v.encoder.ff_width = e.value("ff_width", v.encoder.ff_width);
  v.encoder.max_positions = e.value("max_positions", v.encoder.max_positions);
  v.encoder.dropout = e.value("dropout", v.encoder.dropout);
  v.encoder.attention_window = e.value("attention_window", v.encoder.attention_window);
  v.chunk_overlap = j.value("chunk_overlap", v.chunk_overlap);
  v.max_chunks = j.value("max_chunks", v.max_chunks);
  v.pool_positions = j.value("pool_positions", v.pool_positions);
  v.max_sections = j.value("max_sections", v.max_sections);
  v.schubert_chunk_chars = j.value("schubert_chunk_chars", v.schubert_chunk_chars);
  v.schubert_overlap_chars = j.value("schubert_overlap_chars", v.schubert_overlap_chars);
  v.validate();
  return v;
}

VariantConfig make_variant(const std::string& name, const nn::EncoderConfig& encoder,
                           std::size_t long_budget) {
  VariantConfig v;
  const auto colon = name.find(':');
  v.family = parse_family(name.substr(0, colon));
  v.encoder = encoder;
  if (v.is_cimate()) {
    v.pooling = colon == std::string::npos ? Pooling::kMean : parse_pooling(name.substr(colon + 1));
    if (v.pooling == Pooling::kNone) throw InvalidArgument("cimate variants need mean or transformer pooling");
  } else {
    if (colon != std::string::npos) throw InvalidArgument("'" + name + "' takes no pooling");
    v.pooling = Pooling::kNone;
  }
  if (v.family == Family::kLongBeginning) {
    v.budget = long_budget;
    v.encoder.max_positions = std::max(v.encoder.max_positions, static_cast<int>(long_budget));
  } else {
    v.budget = std::min<std::size_t>(512, static_cast<std::size_t>(encoder.max_positions));
  }
  v.validate();
  return v;
}

std::string flat_main_text(const PaperRecord& record) {
  std::string out;
  for (const auto& s : effective_sections(record)) {
    if (!out.empty()) out.push_back('\n');
    out += s.heading;
    out.push_back('\n');
    out += s.body;
  }
  return out;
}

std::vector<std::string> character_chunks(const PaperRecord& record, std::size_t chunk_chars,
                                          std::size_t overlap_chars) {
  if (chunk_chars == 0 || overlap_chars >= chunk_chars) {
    throw InvalidArgument("character chunk overlap must be smaller than the chunk");
  }
  std::string text;
  for (const auto& s : effective_sections(record)) {
    const std::string body = normalize_whitespace(s.body);
    if (body.empty()) continue;
    if (!text.empty()) text.push_back(' ');
    text += body;
  }
  // Snap to UTF-8 code point starts.
  auto snap = [&](std::size_t pos) {
    while (pos < text.size() && (static_cast<unsigned char>(text[pos]) & 0xC0) == 0x80) ++pos;
    return std::min(pos, text.size());
  };
  std::vector<std::string> chunks;
  const std::size_t stride = chunk_chars - overlap_chars;
  for (std::size_t begin = 0; begin < text.size(); begin += stride) {
    const std::size_t b = snap(begin);
    const std::size_t e = snap(std::min(begin + chunk_chars, text.size()));
    if (e > b) chunks.push_back(text.substr(b, e - b));
    if (begin + chunk_chars >= text.size()) break;
  }
  return chunks;
}

PreparedPaper prepare(const VariantConfig& variant, const PaperRecord& record, const Vocab& vocab) {
  PreparedPaper out;
  out.id = record.id;
  switch (variant.family) {
    case Family::kTitleAbstract:
      if (normalize_whitespace(record.title).empty() && normalize_whitespace(record.abstract).empty()) {
        throw EmptyInput("paper '" + record.id + "' has neither title nor abstract");
      }
      out.sequences.push_back(encode_pair(record.title, record.abstract, vocab, variant.budget));
      break;
    case Family::kBeginning:
    case Family::kLongBeginning: {
      const std::string text = flat_main_text(record);
      if (normalize_whitespace(text).empty()) throw EmptyInput("paper '" + record.id + "' has no main text");
      out.sequences.push_back(encode_pair(record.title, text, vocab, variant.budget));
      break;
    }
    case Family::kSchubert: {
      const auto chunks =
          character_chunks(record, variant.schubert_chunk_chars, variant.schubert_overlap_chars);
      if (chunks.empty()) throw EmptyInput("paper '" + record.id + "' has no main text");
      for (const auto& c : chunks) out.sequences.push_back(encode_single(c, vocab, variant.budget));
      break;
    }
    case Family::kCimateB:
    case Family::kCimateW: {
      const auto sections = effective_sections(record);
      std::size_t index = 0;
      for (const auto& s : sections) {
        if (normalize_whitespace(s.body).empty()) continue;
        if (variant.family == Family::kCimateB) {
          out.sequences.push_back(encode_pair(heading_or_default(s.heading), s.body, vocab, variant.budget));
        } else {
          ChunkOptions options{variant.budget, variant.chunk_overlap, variant.max_chunks};
          ChunkPlan plan = chunk_section(s.heading, s.body, vocab, options, index);
          out.group_sizes.push_back(plan.chunks.size());
          for (auto& c : plan.chunks) out.sequences.push_back(std::move(c));
        }
        ++index;
      }
      if (out.sequences.empty()) throw NoSections("paper '" + record.id + "' has no encodable section");
      break;
    }
  }
  return out;
}

template <typename T>
CitationModel<T>::CitationModel(VariantConfig variant, std::uint64_t seed) : variant_(std::move(variant)) {
  variant_.validate();
  std::mt19937_64 rng(seed);
  build(rng);
}

template <typename T>
CitationModel<T>::CitationModel(VariantConfig variant, nn::ParamSet<T> params)
    : variant_(std::move(variant)) {
  variant_.validate();
  std::mt19937_64 rng(0);
  build(rng);
  if (params.size() != params_.size()) {
    throw InvalidArgument("checkpoint has " + std::to_string(params.size()) + " tensors, model expects " +
                          std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& mine = params_[i];
    const auto& theirs = params[i];
    if (mine.name != theirs.name || mine.value.rows() != theirs.value.rows() ||
        mine.value.cols() != theirs.value.cols()) {
      throw InvalidArgument("checkpoint tensor '" + theirs.name + "' does not match '" + mine.name + "'");
    }
    mine.value = theirs.value;
  }
}

template <typename T>
void CitationModel<T>::build(std::mt19937_64& rng) {
  encoder_ = nn::Encoder(variant_.encoder, params_, rng, "enc");
  const int width = variant_.encoder.width;
  if (variant_.family == Family::kSchubert) {
    for (std::size_t i : encoder_.param_indices()) params_[i].trainable = false;
    gru_ = nn::Gru(width, width, params_, rng, "gru");
  }
  if (variant_.is_cimate() && variant_.pooling == Pooling::kTransformer) {
    if (variant_.pool_positions) {
      pool_positions_ = params_.add(
          "pool.section_position",
          nn::truncated_normal<T>(static_cast<Eigen::Index>(variant_.max_sections), width, 0.02, rng));
    }
    pool_block_ = nn::register_block<T>(params_, "pool.layer0", width, variant_.encoder.ff_width, rng);
  }
  head_ = nn::register_dense<T>(params_, "head", width, 1, rng);
}

template <typename T>
Tensor<T> CitationModel<T>::frozen_features(const PreparedPaper& paper) const {
  return encoder_.forward<T>(paper.sequences, params_);
}

template <typename T>
Var CitationModel<T>::section_representations(Graph<T>& g, const PreparedPaper& paper,
                                              std::mt19937_64* rng) const {
  if (!variant_.is_cimate()) throw InvalidArgument(variant_.name() + " has no section representations");
  if (paper.sequences.empty()) throw NoSections("paper '" + paper.id + "' has no sections");
  std::vector<Var> rows;
  if (variant_.family == Family::kCimateB) {
    for (const auto& seq : paper.sequences) rows.push_back(encoder_.cls<T>(g, seq, rng));
  } else {
    std::size_t at = 0;
    for (std::size_t n : paper.group_sizes) {
      if (n == 1) {
        rows.push_back(encoder_.cls<T>(g, paper.sequences[at], rng));
      } else {
        std::vector<Var> chunks;
        for (std::size_t k = 0; k < n; ++k) chunks.push_back(encoder_.cls<T>(g, paper.sequences[at + k], rng));
        rows.push_back(g.mean_rows(g.stack_rows(chunks)));
      }
      at += n;
    }
  }
  return rows.size() == 1 ? rows[0] : g.stack_rows(rows);
}

template <typename T>
Tensor<T> CitationModel<T>::section_representations(const PreparedPaper& paper) const {
  Graph<T> g(&params_, false);
  return g.value(section_representations(g, paper, nullptr));
}

template <typename T>
Var CitationModel<T>::pool(Graph<T>& g, Var sections, std::mt19937_64* rng) const {
  if (variant_.pooling == Pooling::kTransformer) {
    const auto count = static_cast<std::size_t>(g.value(sections).rows());
    Var x = sections;
    if (variant_.pool_positions) {
      std::vector<std::int32_t> positions(count);
      for (std::size_t i = 0; i < count; ++i) {
        positions[i] = static_cast<std::int32_t>(std::min(i, variant_.max_sections - 1));
      }
      x = g.add(x, g.embedding(pool_positions_, positions));
    }
    x = nn::block_forward<T>(g, *pool_block_, x, variant_.encoder.heads, nn::AttentionMask{},
                             static_cast<T>(variant_.encoder.dropout), rng);
    return g.mean_rows(x);
  }
  return g.mean_rows(sections);
}

template <typename T>
Tensor<T> CitationModel<T>::pool(const Tensor<T>& sections) const {
  Graph<T> g(&params_, false);
  return g.value(pool(g, g.constant(sections), nullptr));
}

template <typename T>
Var CitationModel<T>::forward(Graph<T>& g, const PreparedPaper& paper, std::mt19937_64* rng,
                              const Tensor<T>* frozen) const {
  if (paper.sequences.empty()) throw EmptyInput("paper '" + paper.id + "' has no input sequences");
  Var v;
  switch (variant_.family) {
    case Family::kTitleAbstract:
    case Family::kBeginning:
    case Family::kLongBeginning:
      v = encoder_.cls<T>(g, paper.sequences.front(), rng);
      break;
    case Family::kSchubert: {
      const Var features = g.constant(frozen ? *frozen : frozen_features(paper));
      std::vector<Var> steps;
      for (Eigen::Index t = 0; t < g.value(features).rows(); ++t) steps.push_back(g.rows(features, t, 1));
      v = gru_->aggregate<T>(g, steps);
      break;
    }
    case Family::kCimateB:
    case Family::kCimateW:
      v = pool(g, section_representations(g, paper, rng), rng);
      break;
  }
  if (rng) v = g.dropout(v, static_cast<T>(variant_.dropout_final), *rng);
  return nn::dense<T>(g, head_, v);
}

template <typename T>
T CitationModel<T>::predict(const PreparedPaper& paper) const {
  Graph<T> g(&params_, false);
  return g.value(forward(g, paper, nullptr))(0, 0);
}

template class CitationModel<float>;
template class CitationModel<double>;

}  // namespace cimate
