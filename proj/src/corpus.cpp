#include "cimate/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>

#include "cimate/error.hpp"
#include "json.hpp"

namespace cimate {

using json = nlohmann::json;
namespace chr = std::chrono;

// ---------------------------------------------------------------------------
// Dates

Date make_date(int year, unsigned month, unsigned day) {
  const chr::year_month_day ymd{chr::year{year}, chr::month{month}, chr::day{day}};
  if (!ymd.ok()) {
    throw MalformedDocument("invalid calendar date " + std::to_string(year) + "-" +
                            std::to_string(month) + "-" + std::to_string(day));
  }
  return chr::sys_days{ymd};
}

Date parse_date(std::string_view text) {
  auto digits = [&](size_t pos, size_t len) {
    int value = 0;
    for (size_t i = pos; i < pos + len; ++i) {
      if (!std::isdigit(static_cast<unsigned char>(text[i]))) {
        throw MalformedDocument("bad date '" + std::string(text) + "'");
      }
      value = value * 10 + (text[i] - '0');
    }
    return value;
  };
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') {
    throw MalformedDocument("bad date '" + std::string(text) + "', expected YYYY-MM-DD");
  }
  return make_date(digits(0, 4), static_cast<unsigned>(digits(5, 2)),
                   static_cast<unsigned>(digits(8, 2)));
}

std::string format_date(Date date) {
  const chr::year_month_day ymd{date};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

Date YearMonth::first_day() const { return make_date(year, month, 1); }

Date YearMonth::end() const { return plus_months(1).first_day(); }

YearMonth YearMonth::plus_months(int months) const {
  int total = year * 12 + static_cast<int>(month) - 1 + months;
  int y = total >= 0 ? total / 12 : (total - 11) / 12;
  return YearMonth{y, static_cast<unsigned>(total - y * 12 + 1)};
}

std::string YearMonth::str() const {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u", year, month);
  return buf;
}

YearMonth YearMonth::of(Date date) {
  const chr::year_month_day ymd{date};
  return YearMonth{static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month())};
}

// ---------------------------------------------------------------------------
// Parsing

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(ch);
    }
  }
  return out;
}

namespace {

bool valid_utf8(std::string_view s) {
  size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

// Drops sections whose body is blank and rejects documents left with no text.
PaperRecord finalize(PaperRecord record) {
  std::vector<Section> kept;
  for (auto& s : record.sections) {
    s.heading = normalize_whitespace(s.heading);
    if (!normalize_whitespace(s.body).empty()) kept.push_back(std::move(s));
  }
  record.sections = std::move(kept);
  if (record.sections.empty() && normalize_whitespace(record.abstract).empty()) {
    throw EmptyDocument("paper '" + record.id + "' has no abstract and no non-empty section");
  }
  return record;
}

PaperRecord from_json(const json& j) {
  if (!j.is_object()) throw MalformedDocument("expected a JSON object");
  auto str_field = [&](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
      throw MalformedDocument(std::string("missing string field '") + key + "'");
    }
    return it->get<std::string>();
  };
  PaperRecord r;
  r.id = str_field("id");
  if (r.id.empty()) throw MalformedDocument("empty id");
  r.title = str_field("title");
  r.abstract = str_field("abstract");
  r.published = parse_date(str_field("published"));
  auto it = j.find("sections");
  if (it == j.end() || !it->is_array()) throw MalformedDocument("missing array field 'sections'");
  for (const auto& s : *it) {
    if (!s.is_object() || !s.contains("heading") || !s.contains("body") ||
        !s["heading"].is_string() || !s["body"].is_string()) {
      throw MalformedDocument("section entries need string 'heading' and 'body'");
    }
    r.sections.push_back({s["heading"].get<std::string>(), s["body"].get<std::string>()});
  }
  return r;
}

json to_json(const PaperRecord& r) {
  json sections = json::array();
  for (const auto& s : r.sections) sections.push_back({{"heading", s.heading}, {"body", s.body}});
  return json{{"id", r.id},
              {"title", r.title},
              {"abstract", r.abstract},
              {"sections", std::move(sections)},
              {"published", format_date(r.published)}};
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::string decode_entities(std::string_view s) {
  static const std::map<std::string, std::string, std::less<>> kNamed = {
      {"amp", "&"}, {"lt", "<"}, {"gt", ">"}, {"quot", "\""}, {"apos", "'"}, {"nbsp", " "}};
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '&') {
      out.push_back(s[i]);
      continue;
    }
    const size_t semi = s.find(';', i);
    if (semi == std::string_view::npos || semi - i > 10) {
      out.push_back('&');
      continue;
    }
    std::string_view name = s.substr(i + 1, semi - i - 1);
    if (auto it = kNamed.find(name); it != kNamed.end()) {
      out += it->second;
      i = semi;
    } else if (name.size() > 1 && name[0] == '#') {
      unsigned long cp = 0;
      try {
        cp = (name[1] == 'x' || name[1] == 'X') ? std::stoul(std::string(name.substr(2)), nullptr, 16)
                                                : std::stoul(std::string(name.substr(1)));
      } catch (const std::exception&) {
        out.push_back('&');
        continue;
      }
      if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
      } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      }
      i = semi;
    } else {
      out.push_back('&');
    }
  }
  return out;
}

std::string attribute(std::string_view tag, std::string_view name) {
  const std::string lowered = lower(tag);
  const std::string key = std::string(name) + "=";
  size_t pos = lowered.find(key);
  if (pos == std::string::npos) return {};
  pos += key.size();
  if (pos >= tag.size()) return {};
  const char quote = tag[pos];
  if (quote == '"' || quote == '\'') {
    const size_t end = tag.find(quote, pos + 1);
    if (end == std::string_view::npos) return {};
    return decode_entities(tag.substr(pos + 1, end - pos - 1));
  }
  size_t end = pos;
  while (end < tag.size() && !std::isspace(static_cast<unsigned char>(tag[end])) && tag[end] != '>' &&
         tag[end] != '/')
    ++end;
  return decode_entities(tag.substr(pos, end - pos));
}

std::string fnv_id(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char ch : bytes) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "html-%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// h1-h3 open sections, p carries body text, <title> and <meta> carry
// metadata. Any other markup is dropped; text outside p/h/title is ignored.
PaperRecord parse_simple_html(std::string_view doc) {
  enum class Capture { kNone, kTitle, kHeading, kParagraph };
  PaperRecord r;
  std::string published;
  Capture capture = Capture::kNone;
  std::string buffer;
  bool in_abstract = false;
  bool have_section = false;
  std::vector<std::string> abstract_parts;
  std::vector<std::string> body_parts;

  auto flush_section = [&] {
    if (have_section) {
      std::string body;
      for (const auto& p : body_parts) {
        if (!body.empty()) body.push_back(' ');
        body += p;
      }
      r.sections.back().body = body;
    }
    body_parts.clear();
  };

  size_t i = 0;
  while (i < doc.size()) {
    if (doc[i] == '<') {
      if (doc.substr(i, 4) == "<!--") {
        const size_t end = doc.find("-->", i + 4);
        i = end == std::string_view::npos ? doc.size() : end + 3;
        continue;
      }
      const size_t close = doc.find('>', i);
      if (close == std::string_view::npos) throw MalformedDocument("unterminated tag");
      std::string_view tag = doc.substr(i + 1, close - i - 1);
      i = close + 1;
      const bool closing = !tag.empty() && tag[0] == '/';
      if (closing) tag.remove_prefix(1);
      size_t name_end = 0;
      while (name_end < tag.size() && std::isalnum(static_cast<unsigned char>(tag[name_end])))
        ++name_end;
      const std::string name = lower(tag.substr(0, name_end));

      if (!closing && (name == "script" || name == "style")) {
        const std::string end_tag = "</" + name;
        size_t end = i;
        while (true) {
          end = doc.find("</", end);
          if (end == std::string_view::npos) break;
          if (lower(doc.substr(end, end_tag.size())) == end_tag) break;
          end += 2;
        }
        if (end == std::string_view::npos) {
          i = doc.size();
        } else {
          const size_t gt = doc.find('>', end);
          i = gt == std::string_view::npos ? doc.size() : gt + 1;
        }
        continue;
      }
      const bool is_heading = name == "h1" || name == "h2" || name == "h3";
      if (name == "meta" && !closing) {
        const std::string meta_name = lower(attribute(tag, "name"));
        if (meta_name == "id") r.id = attribute(tag, "content");
        if (meta_name == "published") published = attribute(tag, "content");
      } else if (name == "title") {
        if (!closing) {
          capture = Capture::kTitle;
          buffer.clear();
        } else if (capture == Capture::kTitle) {
          r.title = normalize_whitespace(decode_entities(buffer));
          capture = Capture::kNone;
        }
      } else if (is_heading) {
        if (!closing) {
          if (capture == Capture::kParagraph) {
            // Unclosed paragraph ends at the next heading.
            const std::string text = normalize_whitespace(decode_entities(buffer));
            if (!text.empty()) (in_abstract ? abstract_parts : body_parts).push_back(text);
          }
          capture = Capture::kHeading;
          buffer.clear();
        } else if (capture == Capture::kHeading) {
          const std::string heading = normalize_whitespace(decode_entities(buffer));
          capture = Capture::kNone;
          flush_section();
          if (lower(heading) == "abstract") {
            in_abstract = true;
            have_section = false;
          } else {
            in_abstract = false;
            have_section = true;
            r.sections.push_back({heading, ""});
          }
        }
      } else if (name == "p") {
        if (capture == Capture::kParagraph) {
          const std::string text = normalize_whitespace(decode_entities(buffer));
          if (!text.empty()) {
            if (in_abstract) abstract_parts.push_back(text);
            else if (have_section) body_parts.push_back(text);
          }
          capture = Capture::kNone;
        }
        if (!closing && capture == Capture::kNone) {
          capture = Capture::kParagraph;
          buffer.clear();
        }
      } else if (name == "br" && capture != Capture::kNone) {
        buffer.push_back(' ');
      }
      continue;
    }
    const size_t next = doc.find('<', i);
    const size_t end = next == std::string_view::npos ? doc.size() : next;
    if (capture != Capture::kNone) buffer.append(doc.substr(i, end - i));
    i = end;
  }
  if (capture == Capture::kParagraph) {
    const std::string text = normalize_whitespace(decode_entities(buffer));
    if (!text.empty()) {
      if (in_abstract) abstract_parts.push_back(text);
      else if (have_section) body_parts.push_back(text);
    }
  }
  flush_section();

  for (const auto& p : abstract_parts) {
    if (!r.abstract.empty()) r.abstract.push_back(' ');
    r.abstract += p;
  }
  if (r.id.empty()) r.id = fnv_id(doc);
  r.published = published.empty() ? make_date(1970, 1, 1) : parse_date(published);
  return r;
}

}  // namespace

PaperRecord parse_paper(std::string_view document, DocumentFormat format) {
  if (!valid_utf8(document)) throw MalformedDocument("input is not valid UTF-8");
  if (format == DocumentFormat::kCanonicalJson) {
    json j;
    try {
      j = json::parse(document);
    } catch (const json::parse_error& e) {
      throw MalformedDocument(e.what());
    }
    return finalize(from_json(j));
  }
  return finalize(parse_simple_html(document));
}

std::string serialize_paper(const PaperRecord& record) { return to_json(record).dump(); }

std::vector<Section> effective_sections(const PaperRecord& record) {
  if (!record.sections.empty()) return record.sections;
  return {Section{"Abstract", record.abstract}};
}

std::string main_text(const PaperRecord& record) {
  std::string out;
  for (const auto& s : record.sections) {
    if (!out.empty()) out.push_back('\n');
    out += s.heading;
    out.push_back('\n');
    out += s.body;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Labels

std::int64_t LinearExtrapolation::complete(std::int64_t observed_count, int observed_days,
                                           int horizon_days) const {
  if (observed_days <= 0) return 0;
  if (observed_days >= horizon_days) return observed_count;
  return std::llround(static_cast<double>(observed_count) * horizon_days / observed_days);
}

LabeledPaper label(const PaperRecord& record, const std::vector<CitationEvent>& events,
                   const LabelOptions& options, std::int64_t* dropped) {
  if (options.data_cutoff < record.published) {
    throw NegativeWindow("data cutoff " + format_date(options.data_cutoff) +
                         " precedes publication of '" + record.id + "'");
  }
  static const LinearExtrapolation kDefault;
  const ComplementStrategy& strategy = options.strategy ? *options.strategy : kDefault;
  const Date horizon_end = record.published + chr::days{options.horizon_days};
  const bool full = options.data_cutoff >= horizon_end;
  const Date window_end = full ? horizon_end : options.data_cutoff;

  std::int64_t count = 0;
  for (const auto& e : events) {
    if (e.citing_date < record.published) {
      if (dropped) ++*dropped;
      continue;
    }
    if (e.citing_date <= window_end) ++count;
  }
  LabeledPaper out;
  out.record = record;
  if (full) {
    out.c = count;
  } else {
    const int observed_days = static_cast<int>((options.data_cutoff - record.published).count());
    out.c = strategy.complete(count, observed_days, options.horizon_days);
    out.complemented = true;
  }
  out.y = std::log(static_cast<double>(out.c) + 1.0);
  return out;
}

std::vector<LabeledPaper> label_corpus(const std::vector<PaperRecord>& corpus,
                                       const std::vector<CitationEvent>& events,
                                       const LabelOptions& options, LabelingStats* stats) {
  std::unordered_map<std::string, std::vector<CitationEvent>> by_id;
  std::set<std::string> known;
  for (const auto& p : corpus) {
    if (!known.insert(p.id).second) throw MalformedDocument("duplicate paper id '" + p.id + "'");
  }
  LabelingStats local;
  for (const auto& e : events) {
    if (!known.count(e.cited_id)) {
      ++local.unknown_ids;
      continue;
    }
    by_id[e.cited_id].push_back(e);
  }
  std::vector<LabeledPaper> out;
  out.reserve(corpus.size());
  static const std::vector<CitationEvent> kNone;
  for (const auto& p : corpus) {
    auto it = by_id.find(p.id);
    out.push_back(label(p, it == by_id.end() ? kNone : it->second, options,
                        &local.dropped_before_publication));
    if (out.back().complemented) ++local.complemented;
  }
  std::sort(out.begin(), out.end(),
            [](const LabeledPaper& a, const LabeledPaper& b) { return a.record.id < b.record.id; });
  if (stats) *stats = local;
  return out;
}

// ---------------------------------------------------------------------------
// Rolling subsets

std::vector<SplitSpec> build_subsets(const std::vector<LabeledPaper>& corpus, int n_subsets,
                                     int window_years) {
  if (n_subsets < 1 || window_years < 1) {
    throw InvalidArgument("n_subsets and window_years must be positive");
  }
  if (corpus.empty()) throw InsufficientSpan("empty corpus");
  auto [lo, hi] = std::minmax_element(
      corpus.begin(), corpus.end(),
      [](const LabeledPaper& a, const LabeledPaper& b) { return a.record.published < b.record.published; });
  const YearMonth last = YearMonth::of(hi->record.published);
  const YearMonth first_eval = last.plus_months(-(n_subsets - 1));
  const YearMonth earliest_needed = first_eval.plus_months(-12 * window_years);
  if (YearMonth::of(lo->record.published) > earliest_needed) {
    throw InsufficientSpan("corpus spans " + YearMonth::of(lo->record.published).str() + " to " +
                           last.str() + "; need data from " + earliest_needed.str());
  }
  std::vector<SplitSpec> specs;
  for (int k = 0; k < n_subsets; ++k) {
    SplitSpec s;
    s.index = k;
    s.eval_month = first_eval.plus_months(k);
    s.train_end = s.eval_month.first_day();
    s.train_start = s.eval_month.plus_months(-12 * window_years).first_day();
    s.role = k == 0 ? SplitRole::kDev : SplitRole::kTest;
    specs.push_back(s);
  }
  return specs;
}

SplitView materialize(const std::vector<LabeledPaper>& corpus, const SplitSpec& spec) {
  SplitView view{spec, {}, {}};
  for (const auto& p : corpus) {
    if (spec.in_eval(p.record.published)) {
      view.eval.push_back(&p.record);
    } else if (spec.in_train(p.record.published)) {
      view.train.push_back(&p);
    }
  }
  return view;
}

std::string split_role_name(SplitRole role) { return role == SplitRole::kDev ? "dev" : "test"; }

// ---------------------------------------------------------------------------
// Statistics

double truncation_fraction(const std::vector<PaperRecord>& corpus, int token_budget,
                           const Tokenizer& tokenizer) {
  if (token_budget <= 0) throw InvalidArgument("token_budget must be positive");
  if (corpus.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : corpus) {
    const auto n = static_cast<double>(tokenizer(main_text(p)).size());
    if (n > token_budget) total += 1.0 - token_budget / n;
  }
  return total / static_cast<double>(corpus.size());
}

// ---------------------------------------------------------------------------
// JSON lines

namespace {

template <typename F>
void for_each_line(std::istream& in, F&& f) {
  std::string line;
  size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (normalize_whitespace(line).empty()) continue;
    try {
      f(line);
    } catch (const Error& e) {
      throw MalformedDocument("line " + std::to_string(number) + ": " + e.what());
    } catch (const json::exception& e) {
      throw MalformedDocument("line " + std::to_string(number) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<PaperRecord> read_corpus(std::istream& in) {
  std::vector<PaperRecord> out;
  for_each_line(in, [&](const std::string& line) {
    out.push_back(parse_paper(line, DocumentFormat::kCanonicalJson));
  });
  return out;
}

void write_corpus(std::ostream& out, const std::vector<PaperRecord>& corpus) {
  for (const auto& p : corpus) out << serialize_paper(p) << '\n';
}

std::vector<CitationEvent> read_citations(std::istream& in) {
  std::vector<CitationEvent> out;
  for_each_line(in, [&](const std::string& line) {
    const json j = json::parse(line);
    if (!j.is_object() || !j.contains("cited_id") || !j.contains("citing_date")) {
      throw MalformedDocument("citation entries need 'cited_id' and 'citing_date'");
    }
    out.push_back({j.at("cited_id").get<std::string>(),
                   parse_date(j.at("citing_date").get<std::string>())});
  });
  return out;
}

void write_citations(std::ostream& out, const std::vector<CitationEvent>& events) {
  for (const auto& e : events) {
    out << json{{"cited_id", e.cited_id}, {"citing_date", format_date(e.citing_date)}}.dump()
        << '\n';
  }
}

std::vector<LabeledPaper> read_labeled(std::istream& in) {
  std::vector<LabeledPaper> out;
  for_each_line(in, [&](const std::string& line) {
    const json j = json::parse(line);
    LabeledPaper p;
    p.record = finalize(from_json(j));
    p.c = j.at("c").get<std::int64_t>();
    p.y = j.at("y").get<double>();
    p.complemented = j.at("complemented").get<bool>();
    out.push_back(std::move(p));
  });
  return out;
}

void write_labeled(std::ostream& out, const std::vector<LabeledPaper>& corpus) {
  for (const auto& p : corpus) {
    json j = to_json(p.record);
    j["c"] = p.c;
    j["y"] = p.y;
    j["complemented"] = p.complemented;
    out << j.dump() << '\n';
  }
}

}  // namespace cimate
