#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cimate {

// Calendar day in UTC.
using Date = std::chrono::sys_days;

Date parse_date(std::string_view text);  // "YYYY-MM-DD", throws MalformedDocument
std::string format_date(Date date);
Date make_date(int year, unsigned month, unsigned day);

struct YearMonth {
  int year = 0;
  unsigned month = 1;  // 1..12

  Date first_day() const;
  Date end() const;  // first day of the following month
  YearMonth plus_months(int months) const;
  bool contains(Date date) const { return date >= first_day() && date < end(); }
  std::string str() const;  // "YYYY-MM"

  static YearMonth of(Date date);
  auto operator<=>(const YearMonth&) const = default;
};

struct Section {
  std::string heading;
  std::string body;
  bool operator==(const Section&) const = default;
};

struct PaperRecord {
  std::string id;
  std::string title;
  std::string abstract;
  std::vector<Section> sections;
  Date published{};
  bool operator==(const PaperRecord&) const = default;
};

struct CitationEvent {
  std::string cited_id;
  Date citing_date{};
};

struct LabeledPaper {
  PaperRecord record;
  std::int64_t c = 0;
  double y = 0.0;
  bool complemented = false;
};

enum class SplitRole { kDev, kTest };

struct SplitSpec {
  int index = 0;
  YearMonth eval_month;
  Date train_start{};
  Date train_end{};  // exclusive; equals eval_month.first_day()
  SplitRole role = SplitRole::kTest;

  std::string id() const { return eval_month.str(); }
  bool in_train(Date d) const { return d >= train_start && d < train_end; }
  bool in_eval(Date d) const { return eval_month.contains(d); }
};

enum class DocumentFormat { kCanonicalJson, kSimpleHtml };

// Collapses runs of whitespace to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

PaperRecord parse_paper(std::string_view document, DocumentFormat format);
std::string serialize_paper(const PaperRecord& record);

// Sections a structure-aware model sees; an abstract-only paper yields a
// single "Abstract" section.
std::vector<Section> effective_sections(const PaperRecord& record);

// Headings and bodies in document order, separated by newlines.
std::string main_text(const PaperRecord& record);

// Estimates the horizon count from a partially observed window.
class ComplementStrategy {
 public:
  virtual ~ComplementStrategy() = default;
  virtual std::int64_t complete(std::int64_t observed_count, int observed_days,
                                int horizon_days) const = 0;
};

// round(observed * horizon / observed_days); a zero-day window yields 0.
class LinearExtrapolation final : public ComplementStrategy {
 public:
  std::int64_t complete(std::int64_t observed_count, int observed_days,
                        int horizon_days) const override;
};

struct LabelOptions {
  int horizon_days = 365;
  Date data_cutoff{};
  const ComplementStrategy* strategy = nullptr;  // defaults to LinearExtrapolation
};

// Events citing before publication are ignored; `dropped` (if given) counts them.
LabeledPaper label(const PaperRecord& record, const std::vector<CitationEvent>& events,
                   const LabelOptions& options, std::int64_t* dropped = nullptr);

std::vector<SplitSpec> build_subsets(const std::vector<LabeledPaper>& corpus,
                                     int n_subsets = 13, int window_years = 5);

// Train papers and eval papers of one split. Eval papers carry no labels.
struct SplitView {
  SplitSpec spec;
  std::vector<const LabeledPaper*> train;
  std::vector<const PaperRecord*> eval;
};

SplitView materialize(const std::vector<LabeledPaper>& corpus, const SplitSpec& spec);

using Tokenizer = std::function<std::vector<std::string>(std::string_view)>;

double truncation_fraction(const std::vector<PaperRecord>& corpus, int token_budget,
                           const Tokenizer& tokenizer);

// JSON-lines IO. Errors carry 1-based line numbers.
std::vector<PaperRecord> read_corpus(std::istream& in);
void write_corpus(std::ostream& out, const std::vector<PaperRecord>& corpus);
std::vector<CitationEvent> read_citations(std::istream& in);
void write_citations(std::ostream& out, const std::vector<CitationEvent>& events);

std::vector<LabeledPaper> read_labeled(std::istream& in);
void write_labeled(std::ostream& out, const std::vector<LabeledPaper>& corpus);

std::string split_role_name(SplitRole role);

struct LabelingStats {
  std::int64_t dropped_before_publication = 0;
  std::int64_t unknown_ids = 0;
  std::int64_t complemented = 0;
};

// Labels every paper against its events; output ordered by id.
std::vector<LabeledPaper> label_corpus(const std::vector<PaperRecord>& corpus,
                                       const std::vector<CitationEvent>& events,
                                       const LabelOptions& options, LabelingStats* stats = nullptr);

}  // namespace cimate
