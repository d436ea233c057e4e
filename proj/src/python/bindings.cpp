// Python surface. Structured values cross the boundary as JSON text; the
// package's __init__ turns them into dicts.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "wagparse/corpus.hpp"
#include "wagparse/decode.hpp"
#include "wagparse/errors.hpp"
#include "wagparse/grammar.hpp"
#include "wagparse/linearize.hpp"
#include "wagparse/smatch.hpp"
#include "wagparse/training.hpp"
#include "wagparse/wag.hpp"

namespace py = pybind11;
using namespace wagparse;

namespace {

AmrGraph graph_from_text(const std::string& text) { return graph_from_json(nlohmann::json::parse(text)); }

std::string generate_corpus(std::size_t n, std::uint64_t seed, const std::string& spec_json) {
  const auto spec = spec_json.empty() ? GrammarSpec::builtin() : GrammarSpec::from_json(nlohmann::json::parse(spec_json));
  auto out = nlohmann::json::array();
  for (const auto& r : generate(spec, n, seed)) out.push_back(record_to_json(r));
  return out.dump();
}

std::string linearize_graph(const std::string& graph_json) { return linearize(graph_from_text(graph_json)).to_string(); }

py::tuple delinearize_text(const std::string& text) {
  const auto r = delinearize(LinearizedGraph::from_string(text));
  return py::make_tuple(graph_to_json(r.graph).dump(), r.report.actions);
}

std::string wag_of(const std::string& record_json, const std::string& variant) {
  const auto r = record_from_json(nlohmann::json::parse(record_json));
  return wag_to_json(build_wag(r.graph, r.alignment, parse_wag_variant(variant)), r.tokens).dump();
}

py::dict smatch(const std::string& pred_json, const std::string& gold_json, int restarts, std::uint64_t seed) {
  const auto pred = graph_from_text(pred_json);
  const auto gold = graph_from_text(gold_json);
  const SmatchOptions options{restarts, seed};
  const auto labeled = score(pred, gold, options);
  const auto unlabeled = score_unlabeled(pred, gold, options);
  py::dict d;
  d["precision"] = labeled.precision();
  d["recall"] = labeled.recall();
  d["f1"] = labeled.f1();
  d["matched"] = labeled.matched;
  d["unlabeled_f1"] = unlabeled.f1();
  return d;
}

double smatch_exact(const std::string& pred_json, const std::string& gold_json, bool unlabeled) {
  return score_exact(graph_from_text(pred_json), graph_from_text(gold_json), unlabeled).f1();
}

double beta(double start, double end, std::int64_t steps, std::int64_t step) {
  return beta_at(BetaSchedule{start, end, steps}, step);
}

double kl(const std::vector<double>& student_logits, const std::vector<double>& teacher_logits, double tau) {
  require(student_logits.size() == teacher_logits.size() && !student_logits.empty(), ErrorCategory::kStructural,
          "kl: logit vectors must be non-empty and equally long");
  const auto n = static_cast<Eigen::Index>(student_logits.size());
  const nn::Matrix p = Eigen::Map<const nn::Matrix>(student_logits.data(), 1, n);
  const nn::Matrix q = Eigen::Map<const nn::Matrix>(teacher_logits.data(), 1, n);
  return kl_div(nn::constant(p), nn::constant(q), tau, {1.0}, 1).scalar();
}

std::vector<py::tuple> grad_check_all(const std::string& config_json, std::size_t samples) {
  const auto config = config_json.empty() ? TrainConfig{} : TrainConfig::from_json(nlohmann::json::parse(config_json));
  nn::GradCheckOptions options;
  options.samples_per_parameter = samples;
  std::vector<py::tuple> out;
  for (const auto& r : grad_check_losses(config, options)) {
    out.push_back(py::make_tuple(r.loss, r.result.max_relative_error, r.result.coordinates));
  }
  return out;
}

class Parser {
 public:
  explicit Parser(const std::string& dir) : model_(Seq2SeqModel::load(dir)) {}

  py::tuple parse(const std::string& sentence, int beam) const {
    DecodeOptions options;
    options.beam = beam;
    const auto r = parse_sentence(*model_, split_words(sentence), options);
    const std::string lin = r.graph.empty() ? "" : linearize(r.graph).to_string();
    return py::make_tuple(lin, graph_to_json(r.graph).dump());
  }

 private:
  std::unique_ptr<Seq2SeqModel> model_;
};

}  // namespace

PYBIND11_MODULE(_wagparse, m) {
  m.doc() = "Seq2seq graph parsing with word-aligned graph leakage";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), (std::string(category_name(e.category())) + ": " + e.what()).c_str());
    }
  });

  m.def("generate_corpus", &generate_corpus, py::arg("n"), py::arg("seed") = 7, py::arg("spec_json") = "");
  m.def("linearize", &linearize_graph, py::arg("graph_json"));
  m.def("delinearize", &delinearize_text, py::arg("text"));
  m.def("wag", &wag_of, py::arg("record_json"), py::arg("variant") = "full");
  m.def("smatch", &smatch, py::arg("pred_json"), py::arg("gold_json"), py::arg("restarts") = 10, py::arg("seed") = 1);
  m.def("smatch_exact", &smatch_exact, py::arg("pred_json"), py::arg("gold_json"), py::arg("unlabeled") = false);
  m.def("beta_at", &beta, py::arg("start"), py::arg("end"), py::arg("steps"), py::arg("step"));
  m.def("kl_div", &kl, py::arg("student_logits"), py::arg("teacher_logits"), py::arg("tau") = 1.0);
  m.def("grad_check", &grad_check_all, py::arg("config_json") = "", py::arg("samples") = 6);

  py::class_<Parser>(m, "Parser")
      .def(py::init<const std::string&>(), py::arg("model_dir"))
      .def("parse", &Parser::parse, py::arg("sentence"), py::arg("beam") = 4);
}
