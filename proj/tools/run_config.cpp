#include "run_config.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "cimate/error.hpp"

namespace cimate::cli {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw InvalidArgument("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& into) {
  if (j.contains(key)) into = j.at(key).get<T>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["paths"] = {{"corpus", corpus.string()}, {"citations", citations.string()}, {"out", out.string()}};
  j["dataset_name"] = dataset_name;
  j["variants"] = variants;
  j["seeds"] = seeds;
  j["subsets"] = {{"n_subsets", n_subsets},
                  {"train_years", train_years},
                  {"horizon_days", horizon_days},
                  {"data_cutoff", data_cutoff ? format_date(*data_cutoff) : ""}};
  j["vocab"] = {{"size", vocab_size}, {"min_freq", min_freq}};
  j["encoder"] = {{"layers", encoder.layers},       {"heads", encoder.heads},
                  {"width", encoder.width},         {"ff_width", encoder.ff_width},
                  {"max_positions", encoder.max_positions}, {"dropout", encoder.dropout},
                  {"attention_window", encoder.attention_window}};
  j["long_budget"] = long_budget;
  j["variant_overrides"] = variant_overrides;
  j["train"] = {{"epochs", train.epochs},       {"peak_lr", train.peak_lr},
                {"batch_size", train.batch_size}, {"warmup_frac", train.warmup_frac},
                {"weight_decay", train.weight_decay}};
  if (grid) j["grid"] = {{"epochs", grid->epochs}, {"lrs", grid->lrs}};
  j["schubert_lr"] = schubert_lr;
  j["save_checkpoints"] = save_checkpoints;
  j["gradcheck"] = {{"threshold", gradcheck_threshold},
                    {"eps", gradcheck.eps},
                    {"per_param", gradcheck.per_param},
                    {"weight_scale", gradcheck_weight_scale}};
  j["synthetic"] = {{"papers", synthetic_papers}, {"sections", synthetic_sections}};
  return j;
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  reject_unknown(j,
                 {"paths", "dataset_name", "variants", "seeds", "subsets", "vocab", "encoder", "long_budget",
                  "variant_overrides", "train", "grid", "schubert_lr", "save_checkpoints", "gradcheck",
                  "synthetic"},
                 "config");
  RunConfig c;
  try {
    if (j.contains("paths")) {
      const json& p = j.at("paths");
      reject_unknown(p, {"corpus", "citations", "out"}, "paths");
      if (p.contains("corpus")) c.corpus = resolve(base_dir, p.at("corpus").get<std::string>());
      if (p.contains("citations")) c.citations = resolve(base_dir, p.at("citations").get<std::string>());
      if (p.contains("out")) c.out = resolve(base_dir, p.at("out").get<std::string>());
    }
    read(j, "dataset_name", c.dataset_name);
    read(j, "variants", c.variants);
    read(j, "seeds", c.seeds);
    if (j.contains("subsets")) {
      const json& s = j.at("subsets");
      reject_unknown(s, {"n_subsets", "train_years", "horizon_days", "data_cutoff"}, "subsets");
      read(s, "n_subsets", c.n_subsets);
      read(s, "train_years", c.train_years);
      read(s, "horizon_days", c.horizon_days);
      const std::string cutoff = s.value("data_cutoff", std::string());
      if (!cutoff.empty()) c.data_cutoff = parse_date(cutoff);
    }
    if (j.contains("vocab")) {
      const json& v = j.at("vocab");
      reject_unknown(v, {"size", "min_freq"}, "vocab");
      read(v, "size", c.vocab_size);
      read(v, "min_freq", c.min_freq);
    }
    if (j.contains("encoder")) {
      const json& e = j.at("encoder");
      reject_unknown(e, {"layers", "heads", "width", "ff_width", "max_positions", "dropout", "attention_window"},
                     "encoder");
      read(e, "layers", c.encoder.layers);
      read(e, "heads", c.encoder.heads);
      read(e, "width", c.encoder.width);
      read(e, "ff_width", c.encoder.ff_width);
      read(e, "max_positions", c.encoder.max_positions);
      read(e, "dropout", c.encoder.dropout);
      read(e, "attention_window", c.encoder.attention_window);
    }
    read(j, "long_budget", c.long_budget);
    if (j.contains("variant_overrides")) {
      c.variant_overrides = j.at("variant_overrides");
      reject_unknown(c.variant_overrides,
                     {"dropout_final", "chunk_overlap", "max_chunks", "pool_positions", "max_sections",
                      "schubert_chunk_chars", "schubert_overlap_chars"},
                     "variant_overrides");
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      reject_unknown(t, {"epochs", "peak_lr", "batch_size", "warmup_frac", "weight_decay"}, "train");
      read(t, "epochs", c.train.epochs);
      read(t, "peak_lr", c.train.peak_lr);
      read(t, "batch_size", c.train.batch_size);
      read(t, "warmup_frac", c.train.warmup_frac);
      read(t, "weight_decay", c.train.weight_decay);
    }
    if (j.contains("grid")) {
      const json& g = j.at("grid");
      reject_unknown(g, {"epochs", "lrs"}, "grid");
      c.grid = Grid{g.at("epochs").get<std::vector<int>>(), g.at("lrs").get<std::vector<double>>()};
    }
    read(j, "schubert_lr", c.schubert_lr);
    read(j, "save_checkpoints", c.save_checkpoints);
    if (j.contains("gradcheck")) {
      const json& g = j.at("gradcheck");
      reject_unknown(g, {"threshold", "eps", "per_param", "weight_scale"}, "gradcheck");
      read(g, "threshold", c.gradcheck_threshold);
      read(g, "eps", c.gradcheck.eps);
      read(g, "per_param", c.gradcheck.per_param);
      read(g, "weight_scale", c.gradcheck_weight_scale);
    }
    if (j.contains("synthetic")) {
      const json& s = j.at("synthetic");
      reject_unknown(s, {"papers", "sections"}, "synthetic");
      read(s, "papers", c.synthetic_papers);
      read(s, "sections", c.synthetic_sections);
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  if (c.variants.empty()) throw InvalidArgument("config lists no variants");
  if (c.seeds.empty()) throw InvalidArgument("config lists no seeds");
  if (c.n_subsets < 1 || c.train_years < 1 || c.horizon_days < 1) {
    throw InvalidArgument("subset parameters must be positive");
  }
  if (c.grid && c.grid->cells() == 0) throw InvalidArgument("grid has no cells");
  c.train.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config " + path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

VariantConfig RunConfig::variant(const std::string& name, std::size_t vocab) const {
  nn::EncoderConfig enc = encoder;
  enc.vocab_size = vocab;
  VariantConfig v = make_variant(name, enc, long_budget);
  const json& o = variant_overrides;
  read(o, "dropout_final", v.dropout_final);
  read(o, "chunk_overlap", v.chunk_overlap);
  read(o, "max_chunks", v.max_chunks);
  read(o, "pool_positions", v.pool_positions);
  read(o, "max_sections", v.max_sections);
  read(o, "schubert_chunk_chars", v.schubert_chunk_chars);
  read(o, "schubert_overlap_chars", v.schubert_overlap_chars);
  v.validate();
  return v;
}

Grid RunConfig::grid_for(Family family) const {
  if (grid && family != Family::kSchubert) return *grid;
  return default_grid(family, schubert_lr);
}

std::string config_hash(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string variant_slug(const std::string& variant) {
  std::string s = variant;
  for (char& c : s) {
    if (c == ':') c = '-';
  }
  return s;
}

DirLock::DirLock(const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path path = dir / ".cimate.lock";
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw InvalidArgument("cannot open lock " + path.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw InvalidArgument("output directory " + dir.string() + " is locked by another cimate process");
  }
}

DirLock::~DirLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw InvalidArgument("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MalformedDocument("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw MalformedDocument(path.string() + ": " + e.what());
  }
}

}  // namespace cimate::cli
