#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cimate/corpus.hpp"

namespace cimate {

using TokenId = std::int32_t;

// Lowercases ASCII letters and splits on whitespace; every ASCII punctuation
// character becomes a token of its own.
std::vector<std::string> tokenize(std::string_view text);

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kReserved = 4;

  Vocab() = default;
  // Tokens receive ids 4, 5, ... in the given order. Duplicates are rejected.
  explicit Vocab(std::vector<std::string> tokens);

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::vector<TokenId> encode(std::string_view text) const;
  std::size_t size() const { return tokens_.size() + kReserved; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // One token per line; the first line holds id 4.
  void save(std::ostream& out) const;
  static Vocab load(std::istream& in);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

Vocab build_vocab(const std::vector<PaperRecord>& corpus, std::size_t max_size,
                  std::size_t min_freq = 1);

struct TokenSeq {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> segments;
  std::vector<std::uint8_t> mask;

  std::size_t budget() const { return ids.size(); }
  std::size_t length() const;  // count of real (mask = 1) tokens
  bool operator==(const TokenSeq&) const = default;
};

// CLS first SEP [second SEP], padded with PAD to `budget`. The second segment
// is cut from the tail to fit.
TokenSeq encode_pair(std::string_view first, std::string_view second, const Vocab& vocab,
                     std::size_t budget = 512);
TokenSeq encode_pair_ids(const std::vector<TokenId>& first, const std::vector<TokenId>& second,
                         std::size_t budget);

// CLS text SEP, truncated from the tail.
TokenSeq encode_single(std::string_view text, const Vocab& vocab, std::size_t budget = 512);

// Stand-in heading for sections that have none.
inline constexpr std::string_view kDefaultHeading = "section";
std::string_view heading_or_default(std::string_view heading);

struct ChunkPlan {
  std::size_t section_index = 0;
  std::vector<TokenSeq> chunks;
  std::vector<std::pair<std::size_t, std::size_t>> windows;  // body token [begin, end)
  std::size_t body_tokens = 0;
  std::size_t truncated_tokens = 0;
};

struct ChunkOptions {
  std::size_t budget = 512;
  std::size_t overlap = 50;
  std::size_t max_chunks = 8;
};

ChunkPlan chunk_section(std::string_view heading, std::string_view body, const Vocab& vocab,
                        const ChunkOptions& options = {}, std::size_t section_index = 0);
ChunkPlan chunk_section_ids(const std::vector<TokenId>& heading, const std::vector<TokenId>& body,
                            const ChunkOptions& options, std::size_t section_index = 0);

}  // namespace cimate
