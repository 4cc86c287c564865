#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "expsolve/bpe.hpp"
#include "expsolve/cooccurrence.hpp"
#include "expsolve/explicit_solver.hpp"
#include "expsolve/harness.hpp"
#include "expsolve/lm.hpp"
#include "expsolve/mnist.hpp"
#include "expsolve/multilayer.hpp"
#include "expsolve/softmax.hpp"
#include "expsolve/trainer.hpp"

namespace py = pybind11;
using namespace expsolve;

namespace {

SampleStream make_stream(const Matrix& features, const std::vector<TokenId>& targets, Index classes) {
  return SampleStream::from_dense(features, targets, classes);
}

ExplicitOptions make_options(std::optional<double> floor, double delta, const std::string& empty) {
  ExplicitOptions o;
  o.floor = floor;
  o.delta = delta;
  if (empty == "reject") o.empty_columns = EmptyColumns::kReject;
  else if (empty == "floor") o.empty_columns = EmptyColumns::kFloor;
  else throw py::value_error("empty_columns must be 'reject' or 'floor'");
  return o;
}

py::list history_to_list(const TrainHistory& h) {
  py::list out;
  for (const auto& r : h.records) {
    py::dict d;
    d["epoch"] = r.epoch;
    d["train_loss"] = r.train_loss;
    d["train_metric"] = r.train_metric;
    d["dev_loss"] = r.dev_loss ? py::cast(*r.dev_loss) : py::none();
    d["dev_metric"] = r.dev_metric ? py::cast(*r.dev_metric) : py::none();
    out.append(d);
  }
  return out;
}

py::dict history_to_dict(const TrainHistory& h) {
  py::dict d;
  d["metric"] = h.metric == Metric::kAccuracy ? "accuracy" : "perplexity";
  d["records"] = history_to_list(h);
  d["stopped_early"] = h.stopped_early;
  d["epochs_run"] = h.epochs_run;
  d["returned_epoch"] = h.returned_epoch;
  return d;
}

std::optional<Split> parse_split(const std::string& s) {
  if (s == "none") return std::nullopt;
  if (s == "train") return Split::kTrain;
  if (s == "dev") return Split::kDev;
  throw py::value_error("early_stop must be 'none', 'train' or 'dev'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Explicit softmax decoder solutions, warm-started training and the experiment harness.";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<harness::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "cooccurrence",
      [](const Matrix& features, const std::vector<TokenId>& targets, Index classes, int shards) {
        return accumulate(make_stream(features, targets, classes), shards).values();
      },
      py::arg("features"), py::arg("targets"), py::arg("num_classes"), py::arg("shards") = 1,
      "F = H^T Y accumulated sample by sample.");

  m.def(
      "estimate_priming", [](const Matrix& features) {
        return estimate_priming(make_stream(features, std::vector<TokenId>(features.rows(), 0), 1));
      },
      py::arg("features"), "Average 1-norm of the feature rows.");

  m.def(
      "explicit_solution",
      [](const Matrix& F, double priming, Index samples, std::optional<double> floor, double delta,
         const std::string& empty) {
        const CooccurrenceMatrix cooc(F, samples > 0 ? samples : 1);
        return explicit_solution(cooc, priming, make_options(floor, delta, empty)).values;
      },
      py::arg("F"), py::arg("priming"), py::arg("samples") = 0, py::arg("floor") = py::none(),
      py::arg("delta") = 0.0, py::arg("empty_columns") = "reject",
      "U = log max(F, floor) + ((1 - K - delta) / K) log f.");

  m.def("softmax", [](Matrix logits) { softmax_rows(logits); return logits; }, py::arg("logits"));
  m.def("forward", &forward, py::arg("features"), py::arg("decoder"));
  m.def(
      "cross_entropy",
      [](const Matrix& probs, const std::vector<TokenId>& targets) { return cross_entropy(probs, targets).loss; },
      py::arg("probs"), py::arg("targets"));
  m.def("perplexity", &perplexity, py::arg("loss"), py::arg("count"));
  m.def(
      "gradient",
      [](const Matrix& features, const Matrix& decoder, const std::vector<TokenId>& targets) {
        return gradient(features, decoder, targets);
      },
      py::arg("features"), py::arg("decoder"), py::arg("targets"));

  m.def(
      "train",
      [](const Matrix& features, const std::vector<TokenId>& targets, Index classes,
         std::optional<Matrix> warm, double priming, int epochs, double learning_rate, Index batch_size,
         std::uint64_t seed, double init_scale, const std::string& early_stop, const std::string& metric,
         std::optional<Matrix> dev_features, std::optional<std::vector<TokenId>> dev_targets) {
        const SampleStream train_stream = make_stream(features, targets, classes);
        std::optional<SampleStream> dev;
        if (dev_features && dev_targets) dev.emplace(make_stream(*dev_features, *dev_targets, classes));
        TrainConfig c;
        c.epochs = epochs;
        c.learning_rate = learning_rate;
        c.batch_size = batch_size;
        c.early_stop = parse_split(early_stop);
        c.metric = metric == "accuracy" ? Metric::kAccuracy : Metric::kPerplexity;
        if (warm) c.init = WarmInit{DecoderMatrix{*warm, priming}};
        else c.init = ColdInit{seed, init_scale};
        py::gil_scoped_release release;
        const TrainResult r = train(train_stream, dev ? &*dev : nullptr, c);
        py::gil_scoped_acquire acquire;
        return py::make_tuple(r.decoder.values, history_to_dict(r.history));
      },
      py::arg("features"), py::arg("targets"), py::arg("num_classes"), py::arg("warm") = py::none(),
      py::arg("priming") = 1.0, py::arg("epochs") = 32, py::arg("learning_rate") = 0.01,
      py::arg("batch_size") = 0, py::arg("seed") = 0, py::arg("init_scale") = 0.01,
      py::arg("early_stop") = "none", py::arg("metric") = "perplexity", py::arg("dev_features") = py::none(),
      py::arg("dev_targets") = py::none(),
      "Adagrad training from a warm decoder or a seeded cold start. Returns (decoder, history).");

  m.def(
      "local_warm_start",
      [](const Matrix& features, const std::vector<TokenId>& targets, Index classes) {
        WarmStartReport report;
        const TwoLayerModel model = local_warm_start(make_stream(features, targets, classes), &report);
        return py::make_tuple(model.u1, model.u2, report.priming1);
      },
      py::arg("features"), py::arg("targets"), py::arg("num_classes"),
      "Layer-wise explicit solutions. Returns (U1, U2, priming1).");
  m.def(
      "forward_2layer",
      [](const Matrix& features, const Matrix& u1, const Matrix& u2) {
        return forward_2layer(features, TwoLayerModel{u1, u2});
      },
      py::arg("features"), py::arg("u1"), py::arg("u2"));

  py::class_<TokenizerModel>(m, "Tokenizer")
      .def_static("train", &TokenizerModel::train, py::arg("documents"),
                  py::arg("vocab") = TokenizerModel::kDefaultVocab)
      .def_static("load", py::overload_cast<const std::filesystem::path&>(&TokenizerModel::load), py::arg("path"))
      .def("save", py::overload_cast<const std::filesystem::path&>(&TokenizerModel::save, py::const_),
           py::arg("path"))
      .def("encode", &TokenizerModel::encode, py::arg("text"))
      .def("segment_word", &TokenizerModel::segment_word, py::arg("word"))
      .def("symbol", &TokenizerModel::symbol, py::arg("id"))
      .def_property_readonly("vocab_size", &TokenizerModel::vocab_size)
      .def_property_readonly("merges", &TokenizerModel::merges)
      .def_property_readonly("pad_id", &TokenizerModel::pad_id)
      .def_property_readonly("oov_id", &TokenizerModel::oov_id);

  m.def(
      "noise_embeddings",
      [](const std::vector<TokenId>& ids, Index vocab) {
        return densify(build_noise_model(std::span<const TokenId>(ids), vocab)).matrix();
      },
      py::arg("ids"), py::arg("vocab"), "Dense rows q_n e_n + (1 - q_n) p.");

  m.def(
      "window_features",
      [](const std::vector<std::vector<TokenId>>& docs, Index vocab, int radius, const std::string& mode,
         TokenId pad_id) {
        const auto noise = build_noise_model(std::span<const std::vector<TokenId>>(docs), vocab);
        auto table = std::make_shared<const DenseEmbeddingTable>(densify(noise));
        WindowSpec spec{radius, mode == "cat" ? WindowMode::kCat : WindowMode::kSum};
        if (mode != "cat" && mode != "sum") throw py::value_error("mode must be 'sum' or 'cat'");
        const SampleStream s = featurize(std::span<const std::vector<TokenId>>(docs), table, spec, pad_id);
        std::vector<TokenId> targets(s.targets().begin(), s.targets().end());
        return py::make_tuple(s.features().materialize(0, s.size()), targets);
      },
      py::arg("documents"), py::arg("vocab"), py::arg("radius"), py::arg("mode") = "sum",
      py::arg("pad_id") = TokenizerModel::kPadId,
      "Materialized Sum/Cat window features and targets (small corpora only).");

  m.def(
      "load_mnist",
      [](const std::filesystem::path& dir) {
        const harness::MnistData d = harness::load_mnist(dir);
        return py::make_tuple(d.train.features, d.train.labels, d.test.features, d.test.labels);
      },
      py::arg("directory"), "(train_X, train_y, test_X, test_y) with pixels mapped to (x + 1) / 256.");

  m.def(
      "prime_scan",
      [](const Matrix& train_x, const std::vector<TokenId>& train_y, const Matrix& test_x,
         const std::vector<TokenId>& test_y, int k_min, int k_max, int threads) {
        const Index classes = mnist::kClasses;
        const CooccurrenceMatrix F = accumulate(make_stream(train_x, train_y, classes));
        const auto r = mnist::prime_scan(F, make_stream(test_x, test_y, classes), k_min, k_max, threads);
        std::vector<std::pair<int, double>> rows;
        for (const auto& row : r.rows) rows.emplace_back(row.k, row.accuracy);
        return rows;
      },
      py::arg("train_x"), py::arg("train_y"), py::arg("test_x"), py::arg("test_y"), py::arg("k_min") = 1,
      py::arg("k_max") = 784, py::arg("threads") = 1, "Test accuracy of the explicit solution for each k.");

  m.def(
      "run_command",
      [](const std::string& command, const std::string& config_text,
         const std::map<std::string, std::string>& overrides) {
        auto ini = harness::IniConfig::parse(config_text);
        for (const auto& [k, v] : overrides) ini.set(k, v);
        if (!ini.get("experiment.task")) {
          if (command == "lm" || command == "tokenize") ini.set("experiment.task", "lm");
          if (command == "mnist" || command == "scan-prime") ini.set("experiment.task", "mnist");
        }
        const auto config = harness::ExperimentConfig::from_ini(ini);
        nlohmann::json raw = nlohmann::json::object();
        for (const auto& [k, v] : ini.entries()) raw[k] = v;
        py::gil_scoped_release release;
        return harness::run_command(command, config, raw);
      },
      py::arg("command"), py::arg("config") = "", py::arg("overrides") = std::map<std::string, std::string>{},
      "Runs a harness command from INI text plus 'section.key' overrides; returns the exit code.");
}
