#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "cimate/corpus.hpp"
#include "cimate/error.hpp"
#include "cimate/eval.hpp"
#include "cimate/models.hpp"
#include "cimate/nn/optim.hpp"
#include "cimate/textproc.hpp"
#include "cimate/trainer.hpp"
#include "cimate/version.hpp"

namespace py = pybind11;
using namespace cimate;

namespace {

// Dates cross the boundary as "YYYY-MM-DD" strings.
std::string date_get(const Date& d) { return format_date(d); }

nn::EncoderConfig encoder_config(std::size_t vocab_size, int layers, int heads, int width, int ff_width,
                                 int max_positions, double dropout) {
  nn::EncoderConfig c;
  c.vocab_size = vocab_size;
  c.layers = layers;
  c.heads = heads;
  c.width = width;
  c.ff_width = ff_width;
  c.max_positions = max_positions;
  c.dropout = dropout;
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Citation-count prediction from the main text of papers";
  m.attr("__version__") = kVersion;

  static py::exception<Error> error(m, "CimateError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InvalidArgument& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  py::class_<Section>(m, "Section")
      .def(py::init<>())
      .def(py::init([](std::string heading, std::string body) { return Section{std::move(heading), std::move(body)}; }),
           py::arg("heading"), py::arg("body"))
      .def_readwrite("heading", &Section::heading)
      .def_readwrite("body", &Section::body)
      .def("__eq__", [](const Section& a, const Section& b) { return a == b; });

  py::class_<PaperRecord>(m, "PaperRecord")
      .def(py::init<>())
      .def_readwrite("id", &PaperRecord::id)
      .def_readwrite("title", &PaperRecord::title)
      .def_readwrite("abstract", &PaperRecord::abstract)
      .def_readwrite("sections", &PaperRecord::sections)
      .def_property(
          "published", [](const PaperRecord& r) { return date_get(r.published); },
          [](PaperRecord& r, const std::string& s) { r.published = parse_date(s); })
      .def("__eq__", [](const PaperRecord& a, const PaperRecord& b) { return a == b; });

  py::class_<CitationEvent>(m, "CitationEvent")
      .def(py::init([](std::string id, const std::string& date) { return CitationEvent{std::move(id), parse_date(date)}; }),
           py::arg("cited_id"), py::arg("citing_date"))
      .def_readwrite("cited_id", &CitationEvent::cited_id)
      .def_property(
          "citing_date", [](const CitationEvent& e) { return date_get(e.citing_date); },
          [](CitationEvent& e, const std::string& s) { e.citing_date = parse_date(s); });

  py::class_<LabeledPaper>(m, "LabeledPaper")
      .def_readonly("record", &LabeledPaper::record)
      .def_readonly("c", &LabeledPaper::c)
      .def_readonly("y", &LabeledPaper::y)
      .def_readonly("complemented", &LabeledPaper::complemented);

  py::class_<SplitSpec>(m, "SplitSpec")
      .def_readonly("index", &SplitSpec::index)
      .def_property_readonly("eval_month", [](const SplitSpec& s) { return s.eval_month.str(); })
      .def_property_readonly("role", [](const SplitSpec& s) { return split_role_name(s.role); });

  m.def(
      "parse_paper",
      [](const std::string& document, const std::string& format) {
        if (format != "json" && format != "html") throw InvalidArgument("format must be 'json' or 'html'");
        return parse_paper(document, format == "json" ? DocumentFormat::kCanonicalJson : DocumentFormat::kSimpleHtml);
      },
      py::arg("document"), py::arg("format") = "json");
  m.def("serialize_paper", &serialize_paper);
  m.def("main_text", &main_text);

  m.def(
      "label",
      [](const PaperRecord& record, const std::vector<CitationEvent>& events, const std::string& data_cutoff,
         int horizon_days) {
        LabelOptions opts;
        opts.horizon_days = horizon_days;
        opts.data_cutoff = parse_date(data_cutoff);
        return label(record, events, opts);
      },
      py::arg("record"), py::arg("events"), py::arg("data_cutoff"), py::arg("horizon_days") = 365);
  m.def("build_subsets", &build_subsets, py::arg("corpus"), py::arg("n_subsets") = 13, py::arg("window_years") = 5);
  m.def(
      "truncation_fraction",
      [](const std::vector<PaperRecord>& corpus, int budget) { return truncation_fraction(corpus, budget, tokenize); },
      py::arg("corpus"), py::arg("token_budget") = 512);

  m.def("tokenize", &tokenize);
  py::class_<Vocab>(m, "Vocab")
      .def(py::init<std::vector<std::string>>(), py::arg("tokens"))
      .def("id", &Vocab::id)
      .def("token", &Vocab::token)
      .def("encode", &Vocab::encode)
      .def("__len__", &Vocab::size)
      .def_property_readonly("tokens", &Vocab::tokens);
  m.def("build_vocab", &build_vocab, py::arg("corpus"), py::arg("max_size"), py::arg("min_freq") = 1);

  py::class_<TokenSeq>(m, "TokenSeq")
      .def_readonly("ids", &TokenSeq::ids)
      .def_readonly("segments", &TokenSeq::segments)
      .def_readonly("mask", &TokenSeq::mask)
      .def("__len__", &TokenSeq::length);
  m.def("encode_pair", &encode_pair, py::arg("first"), py::arg("second"), py::arg("vocab"), py::arg("budget") = 512);

  py::class_<ChunkPlan>(m, "ChunkPlan")
      .def_readonly("chunks", &ChunkPlan::chunks)
      .def_readonly("windows", &ChunkPlan::windows)
      .def_readonly("body_tokens", &ChunkPlan::body_tokens)
      .def_readonly("truncated_tokens", &ChunkPlan::truncated_tokens);
  m.def(
      "chunk_section",
      [](const std::string& heading, const std::string& body, const Vocab& vocab, std::size_t budget,
         std::size_t overlap, std::size_t max_chunks) {
        return chunk_section(heading, body, vocab, ChunkOptions{budget, overlap, max_chunks});
      },
      py::arg("heading"), py::arg("body"), py::arg("vocab"), py::arg("budget") = 512, py::arg("overlap") = 50,
      py::arg("max_chunks") = 8);

  m.def("lr_at", &nn::lr_at, py::arg("step"), py::arg("total_steps"), py::arg("peak_lr"),
        py::arg("warmup_frac") = 0.1);

  m.def("spearman", [](const std::vector<double>& p, const std::vector<double>& t) { return spearman(p, t); });
  m.def("mse", [](const std::vector<double>& p, const std::vector<double>& t) { return mse(p, t); });
  m.def(
      "mse_star",
      [](const std::vector<double>& p, const std::vector<double>& t, const std::vector<double>& dp,
         const std::vector<double>& dt) { return mse_star(p, t, dp, dt); },
      py::arg("preds_test"), py::arg("trues_test"), py::arg("preds_dev"), py::arg("trues_dev"));
  m.def(
      "top_overlap",
      [](const std::vector<double>& p, const std::vector<double>& t, double n_pct, double k_pct,
         const std::vector<std::string>& ids) { return top_overlap(p, t, n_pct, k_pct, ids); },
      py::arg("preds"), py::arg("trues"), py::arg("n_pct"), py::arg("k_pct"),
      py::arg("ids") = std::vector<std::string>{});

  m.def(
      "generate_planted_corpus",
      [](std::size_t n, std::size_t sections, std::uint64_t seed) { return generate_planted_corpus(n, sections, seed); },
      py::arg("n_papers"), py::arg("n_sections"), py::arg("seed"));

  py::class_<nn::EncoderConfig>(m, "EncoderConfig")
      .def(py::init(&encoder_config), py::arg("vocab_size"), py::arg("layers") = 2, py::arg("heads") = 4,
           py::arg("width") = 128, py::arg("ff_width") = 512, py::arg("max_positions") = 512,
           py::arg("dropout") = 0.1)
      .def_readonly("vocab_size", &nn::EncoderConfig::vocab_size)
      .def_readonly("layers", &nn::EncoderConfig::layers)
      .def_readonly("width", &nn::EncoderConfig::width);

  py::class_<VariantConfig>(m, "VariantConfig")
      .def(py::init([](const std::string& name, const nn::EncoderConfig& enc, std::size_t long_budget) {
             return make_variant(name, enc, long_budget);
           }),
           py::arg("name"), py::arg("encoder"), py::arg("long_budget") = 2048)
      .def_property_readonly("name", &VariantConfig::name)
      .def_readwrite("budget", &VariantConfig::budget)
      .def_readwrite("dropout_final", &VariantConfig::dropout_final)
      .def_readwrite("schubert_chunk_chars", &VariantConfig::schubert_chunk_chars)
      .def_readwrite("schubert_overlap_chars", &VariantConfig::schubert_overlap_chars);

  py::class_<nn::GradCheckReport>(m, "GradCheckReport")
      .def_readonly("max_rel_error", &nn::GradCheckReport::max_rel_error)
      .def_readonly("coordinates", &nn::GradCheckReport::coordinates)
      .def_readonly("worst_param", &nn::GradCheckReport::worst_param);
  m.def(
      "model_grad_check",
      [](const VariantConfig& variant, const PaperRecord& paper, const Vocab& vocab, double target,
         std::uint64_t seed, double eps, std::size_t per_param) {
        nn::GradCheckOptions opts;
        opts.eps = eps;
        opts.per_param = per_param;
        return model_grad_check(variant, paper, vocab, target, seed, opts);
      },
      py::arg("variant"), py::arg("paper"), py::arg("vocab"), py::arg("target"), py::arg("seed") = 1,
      py::arg("eps") = 1e-6, py::arg("per_param") = 4);

  // Trains on `train` and returns (paper id, prediction) pairs for `eval`, ordered by id.
  m.def(
      "train_predict",
      [](const VariantConfig& variant, const std::vector<LabeledPaper>& train_papers,
         const std::vector<PaperRecord>& eval_papers, const Vocab& vocab, int epochs, double peak_lr,
         std::size_t batch_size, std::uint64_t seed) {
        SplitView split;
        for (const auto& p : train_papers) split.train.push_back(&p);
        for (const auto& r : eval_papers) split.eval.push_back(&r);
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.peak_lr = peak_lr;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        py::gil_scoped_release release;
        return train(variant, split, vocab, cfg).result.predictions;
      },
      py::arg("variant"), py::arg("train"), py::arg("eval"), py::arg("vocab"), py::arg("epochs") = 3,
      py::arg("peak_lr") = 3e-4, py::arg("batch_size") = 32, py::arg("seed") = 1);
}
