#include "cimate/textproc.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <map>
#include <ostream>

#include "cimate/error.hpp"

namespace cimate {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto uch = static_cast<unsigned char>(ch);
    if (std::isspace(uch)) {
      flush();
    } else if (uch < 0x80 && std::ispunct(uch)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(uch < 0x80 ? static_cast<char>(std::tolower(uch)) : ch);
    }
  }
  flush();
  return out;
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw InvalidArgument("empty vocabulary token");
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i) + kReserved).second) {
      throw InvalidArgument("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  static const std::string kNames[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  if (id < kReserved) return kNames[id];
  return tokens_.at(static_cast<std::size_t>(id - kReserved));
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& t : tokenize(text)) ids.push_back(id(t));
  return ids;
}

void Vocab::save(std::ostream& out) const {
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocab(std::move(tokens));
}

Vocab build_vocab(const std::vector<PaperRecord>& corpus, std::size_t max_size,
                  std::size_t min_freq) {
  if (max_size < Vocab::kReserved) {
    throw InvalidArgument("max_size must leave room for the 4 reserved ids");
  }
  if (corpus.empty()) throw EmptyCorpus("cannot build a vocabulary from no papers");
  std::map<std::string, std::size_t> counts;
  auto add = [&](std::string_view text) {
    for (auto& t : tokenize(text)) ++counts[std::move(t)];
  };
  for (const auto& p : corpus) {
    add(p.title);
    add(p.abstract);
    for (const auto& s : p.sections) {
      add(s.heading);
      add(s.body);
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, n] : counts) {
    if (n >= min_freq) ranked.emplace_back(token, n);
  }
  // std::map iteration is lexicographic, so a stable sort by count keeps ties ordered.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - Vocab::kReserved);
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(std::move(ranked[i].first));
  return Vocab(std::move(tokens));
}

std::size_t TokenSeq::length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

TokenSeq encode_pair_ids(const std::vector<TokenId>& first, const std::vector<TokenId>& second,
                         std::size_t budget) {
  if (budget < 4) throw InvalidArgument("budget must be at least 4");
  if (first.size() > budget - 3) {
    throw FirstSegmentTooLong(std::to_string(first.size()) + " tokens exceed budget " +
                              std::to_string(budget) + " - 3");
  }
  TokenSeq seq;
  seq.ids.reserve(budget);
  seq.ids.push_back(Vocab::kCls);
  seq.ids.insert(seq.ids.end(), first.begin(), first.end());
  seq.ids.push_back(Vocab::kSep);
  seq.segments.assign(seq.ids.size(), 0);
  const std::size_t room = budget - 3 - first.size();
  const std::size_t take = std::min(room, second.size());
  if (take > 0) {
    seq.ids.insert(seq.ids.end(), second.begin(), second.begin() + static_cast<std::ptrdiff_t>(take));
    seq.ids.push_back(Vocab::kSep);
    seq.segments.resize(seq.ids.size(), 1);
  }
  seq.mask.assign(seq.ids.size(), 1);
  seq.ids.resize(budget, Vocab::kPad);
  seq.segments.resize(budget, 0);
  seq.mask.resize(budget, 0);
  return seq;
}

TokenSeq encode_pair(std::string_view first, std::string_view second, const Vocab& vocab,
                     std::size_t budget) {
  return encode_pair_ids(vocab.encode(first), vocab.encode(second), budget);
}

TokenSeq encode_single(std::string_view text, const Vocab& vocab, std::size_t budget) {
  if (budget < 3) throw InvalidArgument("budget must be at least 3");
  auto ids = vocab.encode(text);
  if (ids.size() > budget - 2) ids.resize(budget - 2);
  TokenSeq seq;
  seq.ids.push_back(Vocab::kCls);
  seq.ids.insert(seq.ids.end(), ids.begin(), ids.end());
  seq.ids.push_back(Vocab::kSep);
  seq.mask.assign(seq.ids.size(), 1);
  seq.segments.assign(budget, 0);
  seq.ids.resize(budget, Vocab::kPad);
  seq.mask.resize(budget, 0);
  return seq;
}

std::string_view heading_or_default(std::string_view heading) {
  for (char ch : heading) {
    if (!std::isspace(static_cast<unsigned char>(ch))) return heading;
  }
  return kDefaultHeading;
}

ChunkPlan chunk_section_ids(const std::vector<TokenId>& heading, const std::vector<TokenId>& body,
                            const ChunkOptions& options, std::size_t section_index) {
  if (options.max_chunks == 0) throw InvalidArgument("max_chunks must be positive");
  if (options.budget < 4 || heading.size() + 3 >= options.budget ||
      options.budget - 3 - heading.size() <= options.overlap) {
    throw HeadingTooLong("heading of " + std::to_string(heading.size()) +
                         " tokens leaves no room beyond the " + std::to_string(options.overlap) +
                         "-token overlap");
  }
  const std::size_t capacity = options.budget - 3 - heading.size();
  const std::size_t stride = capacity - options.overlap;

  ChunkPlan plan;
  plan.section_index = section_index;
  plan.body_tokens = body.size();
  std::size_t covered = 0;
  for (std::size_t i = 0; i < options.max_chunks; ++i) {
    const std::size_t begin = i * stride;
    const std::size_t end = std::min(begin + capacity, body.size());
    if (i > 0 && begin >= body.size()) break;
    std::vector<TokenId> window(body.begin() + static_cast<std::ptrdiff_t>(std::min(begin, end)),
                                body.begin() + static_cast<std::ptrdiff_t>(end));
    plan.chunks.push_back(encode_pair_ids(heading, window, options.budget));
    plan.windows.emplace_back(std::min(begin, end), end);
    covered = end;
    if (end == body.size()) break;
  }
  plan.truncated_tokens = body.size() - covered;
  return plan;
}

ChunkPlan chunk_section(std::string_view heading, std::string_view body, const Vocab& vocab,
                        const ChunkOptions& options, std::size_t section_index) {
  return chunk_section_ids(vocab.encode(heading_or_default(heading)), vocab.encode(body), options,
                           section_index);
}

}  // namespace cimate
