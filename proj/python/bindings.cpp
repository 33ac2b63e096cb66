#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "dynhd/error.hpp"
#include "dynhd/evidence.hpp"
#include "dynhd/metrics.hpp"
#include "dynhd/simulator.hpp"
#include "dynhd/training.hpp"

namespace py = pybind11;
using namespace dynhd;
using nlohmann::json;

namespace {

json parse_json(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

nn::Matrix evidence_matrix(const EvidenceTrajectory& e) {
    nn::Matrix m(static_cast<Eigen::Index>(e.size()), kEvidenceDim);
    for (std::size_t j = 0; j < e.size(); ++j) {
        for (int d = 0; d < kEvidenceDim; ++d) m(static_cast<Eigen::Index>(j), d) = e.vectors[j][d];
    }
    return m;
}

}  // namespace

PYBIND11_MODULE(_dynhd, m) {
    m.doc() = "Hallucination detection from diffusion-LM entropy trajectories (C++ core).";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<TrainingError>(m, "TrainingError", base.ptr());

    py::enum_<TokenClass>(m, "TokenClass")
        .value("control", TokenClass::control)
        .value("lexical_noise", TokenClass::lexical_noise)
        .value("boilerplate", TokenClass::boilerplate)
        .value("stopword", TokenClass::stopword)
        .value("subword_fragment", TokenClass::subword_fragment)
        .value("semantic", TokenClass::semantic);

    py::enum_<Label>(m, "Label")
        .value("factual", Label::factual)
        .value("hallucinated", Label::hallucinated)
        .value("unlabeled", Label::unlabeled);

    py::class_<TokenRecord>(m, "TokenRecord")
        .def(py::init<>())
        .def(py::init([](int position, std::string text, TokenClass cls, double entropy) {
                 return TokenRecord{position, std::move(text), cls, entropy};
             }),
             py::arg("position"), py::arg("token_text"), py::arg("token_class") = TokenClass::semantic,
             py::arg("entropy") = 0.0)
        .def_readwrite("position", &TokenRecord::position)
        .def_readwrite("token_text", &TokenRecord::token_text)
        .def_readwrite("token_class", &TokenRecord::token_class)
        .def_readwrite("entropy", &TokenRecord::entropy);

    py::class_<StepRecord>(m, "StepRecord")
        .def(py::init<>())
        .def(py::init([](int step, std::vector<TokenRecord> tokens) { return StepRecord{step, std::move(tokens)}; }),
             py::arg("step"), py::arg("tokens"))
        .def_readwrite("step", &StepRecord::step)
        .def_readwrite("tokens", &StepRecord::tokens);

    py::class_<RawTrajectory>(m, "RawTrajectory")
        .def(py::init<>())
        .def_readwrite("id", &RawTrajectory::id)
        .def_readwrite("question", &RawTrajectory::question)
        .def_readwrite("response", &RawTrajectory::response)
        .def_readwrite("query_embedding", &RawTrajectory::query_embedding)
        .def_readwrite("label", &RawTrajectory::label)
        .def_readwrite("steps", &RawTrajectory::steps)
        .def_readwrite("meta", &RawTrajectory::meta)
        .def_property_readonly("T", &RawTrajectory::num_steps);

    py::class_<DatasetHeader>(m, "DatasetHeader")
        .def(py::init([](int d_q, int T, int l, std::optional<int> vocab_size) {
                 return DatasetHeader{.d_q = d_q, .T = T, .l = l, .vocab_size = vocab_size};
             }),
             py::arg("d_q"), py::arg("T"), py::arg("l"), py::arg("vocab_size") = py::none())
        .def_readwrite("d_q", &DatasetHeader::d_q)
        .def_readwrite("T", &DatasetHeader::T)
        .def_readwrite("l", &DatasetHeader::l)
        .def_readwrite("vocab_size", &DatasetHeader::vocab_size)
        .def_readonly("schema_version", &DatasetHeader::schema_version);

    py::class_<Dataset>(m, "Dataset")
        .def(py::init([](DatasetHeader h, std::vector<RawTrajectory> t) { return Dataset{std::move(h), std::move(t)}; }),
             py::arg("header"), py::arg("trajectories"))
        .def_readwrite("header", &Dataset::header)
        .def_readwrite("trajectories", &Dataset::trajectories)
        .def("__len__", [](const Dataset& d) { return d.trajectories.size(); })
        .def("labels", [](const Dataset& d) {
            std::vector<int> out;
            for (const auto& t : d.trajectories) out.push_back(static_cast<int>(t.label));
            return out;
        });

    m.def("read_dataset", &read_dataset, py::arg("path"), "Read and validate a dataset file (.gz allowed).");
    m.def(
        "write_dataset",
        [](const Dataset& d, const std::string& path) { write_dataset(d.header, d.trajectories, path); },
        py::arg("dataset"), py::arg("path"));
    m.def(
        "parse_dataset",
        [](const std::string& text) {
            std::istringstream in(text);
            return parse_dataset(in);
        },
        py::arg("text"));
    m.def(
        "validate",
        [](const Dataset& d) {
            validate_header(d.header);
            for (const auto& t : d.trajectories) validate_trajectory(d.header, t);
        },
        py::arg("dataset"));

    py::class_<IgnoreSpec>(m, "IgnoreSpec")
        .def(py::init<>())
        .def_static("defaults", &IgnoreSpec::defaults)
        .def_static("from_json", [](const std::string& s) { return IgnoreSpec::from_json(json::parse(s)); })
        .def("to_json", [](const IgnoreSpec& s) { return s.to_json().dump(); })
        .def_readwrite("use_token_class", &IgnoreSpec::use_token_class)
        .def_readwrite("filter_punctuation", &IgnoreSpec::filter_punctuation);

    m.def(
        "classify_token",
        [](const TokenRecord& t, const IgnoreSpec& s) {
            const auto d = classify_token(t, s);
            return d.category;
        },
        py::arg("token"), py::arg("spec"), "Category of the token; TokenClass.semantic means kept.");
    m.def("valid_positions", &valid_positions, py::arg("step"), py::arg("spec"));

    m.def("shannon_entropy", [](std::vector<double> p) { return shannon_entropy(p); }, py::arg("probs"));
    m.def("entropy_from_logits", [](std::vector<double> l) { return entropy_from_logits(l); }, py::arg("logits"));
    m.def(
        "step_evidence",
        [](std::vector<double> v, int k) {
            const auto e = step_evidence(v, k);
            return py::make_tuple(e.mean_entropy, e.max_entropy, e.topk_mean_entropy);
        },
        py::arg("entropies"), py::arg("k") = kDefaultTopK, "(mean, max, top-k mean) of one step.");
    m.def(
        "build_evidence",
        [](const RawTrajectory& r, const IgnoreSpec& s, int k) {
            const auto e = build_trajectory(r, s, k);
            return py::make_tuple(evidence_matrix(e), e.kept_counts);
        },
        py::arg("trajectory"), py::arg("spec"), py::arg("k") = kDefaultTopK,
        "Evidence as a (T+1) x 3 array, row j holding step T - j, plus kept counts.");

    m.def(
        "simulate",
        [](const std::string& config) { return sim::simulate_dataset(sim::SimulationConfig::from_json(parse_json(config))); },
        py::arg("config") = "", "Synthetic dataset; config is a JSON string, empty for defaults.");
    m.def(
        "default_simulation_config", [] { return sim::SimulationConfig::defaults().to_json().dump(); });
    m.def("default_train_config", [] { return TrainConfig{}.to_json().dump(); });

    m.def(
        "auroc", [](std::vector<double> s, std::vector<int> y) { return auroc(s, y); }, py::arg("scores"),
        py::arg("labels"));

    py::class_<SampleScore>(m, "SampleScore")
        .def_readonly("logit", &SampleScore::logit)
        .def_readonly("probability", &SampleScore::probability)
        .def_readonly("s_path", &SampleScore::s_path)
        .def_readonly("s_reb", &SampleScore::s_reb)
        .def_readonly("omega", &SampleScore::omega);

    py::class_<TrainedModel>(m, "Model")
        .def_static("load", &TrainedModel::load, py::arg("path"))
        .def("save", &TrainedModel::save, py::arg("path"))
        .def("config", [](const TrainedModel& t) { return t.config.to_json().dump(); })
        .def(
            "score", [](const TrainedModel& t, const Dataset& d) { return score_trajectories(t, d.trajectories); },
            py::arg("dataset"))
        .def(
            "evaluate", [](const TrainedModel& t, const Dataset& d) { return cross_eval(t, d.trajectories); },
            py::arg("dataset"), "AUROC on a labeled dataset without retraining.")
        .def(
            "reference",
            [](const TrainedModel& t, std::vector<double> q, int T) {
                return evidence_matrix(t.generator.predict_trajectory(q, T));
            },
            py::arg("query"), py::arg("T"), "Reference evidence the generator expects for a query.");

    m.def(
        "train",
        [](const Dataset& d, const std::string& config) {
            const auto cfg = TrainConfig::from_json(parse_json(config));
            RunResult r = [&] {
                py::gil_scoped_release release;
                return run_two_stage(cfg, d);
            }();
            return py::make_tuple(std::move(r.model), r.report.to_text());
        },
        py::arg("dataset"), py::arg("config") = "",
        "Two-stage training. Returns (model, report JSON text); config is a JSON string.");
}
