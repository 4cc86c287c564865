#include "expsolve/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <Eigen/Core>

#include "expsolve/cooccurrence.hpp"
#include "expsolve/explicit_solver.hpp"
#include "expsolve/svg.hpp"

namespace expsolve::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size() || !std::isfinite(v)) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = lower(value);
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("failed writing " + path.string());
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json record_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_loss", r.train_loss},
          {"train_metric", r.train_metric},
          {"dev_loss", optional_json(r.dev_loss)},
          {"dev_metric", optional_json(r.dev_metric)},
          {"clamped", r.clamped}};
}

json history_json(const TrainHistory& h) {
  return {{"metric", h.metric == Metric::kAccuracy ? "accuracy" : "perplexity"},
          {"epoch0", record_json(h.records.front())},
          {"final", record_json(h.records.at(static_cast<std::size_t>(h.returned_epoch)))},
          {"epochs_run", h.epochs_run},
          {"returned_epoch", h.returned_epoch},
          {"stopped_early", h.stopped_early}};
}

std::string history_csv(const TrainHistory& h) {
  std::ostringstream out;
  h.write_csv(out);
  return out.str();
}

std::string history_svg(const TrainHistory& h, const std::string& title, bool log_y) {
  svg::Series train{"train", {}, {}};
  svg::Series dev{h.metric == Metric::kAccuracy ? "test" : "dev", {}, {}};
  for (const auto& r : h.records) {
    // Epoch 0 is drawn at 0.5 so it stays visible on a log x axis.
    const double x = r.epoch == 0 ? 0.5 : static_cast<double>(r.epoch);
    train.x.push_back(x);
    train.y.push_back(r.train_metric);
    if (r.dev_metric) {
      dev.x.push_back(x);
      dev.y.push_back(*r.dev_metric);
    }
  }
  std::vector<svg::Series> series{train};
  if (!dev.x.empty()) series.push_back(dev);
  svg::PlotOptions opt;
  opt.title = title;
  opt.x_label = "epoch";
  opt.y_label = h.metric == Metric::kAccuracy ? "accuracy" : "perplexity";
  opt.log_x = true;
  opt.log_y = log_y;
  return svg::line_chart(series, opt);
}

std::vector<std::string> check_known(const IniConfig& ini) {
  static const std::vector<std::string> known = {
      "experiment.name",   "experiment.task",     "experiment.mode",     "experiment.model",
      "experiment.seed",   "experiment.threads",  "data.root",           "data.train",
      "data.dev",          "data.mnist",          "data.tokenizer",      "lm.radius",
      "lm.vocab",          "lm.dev_fraction",     "lm.train_fraction",     "mnist.priming",       "scan.k_min",
      "scan.k_max",        "train.learning_rate", "train.epochs",        "train.adagrad_epsilon",
      "train.init_scale",  "train.early_stop",    "train.batch_size",    "train.block_rows",
      "train.freeze_layer1", "output.dir",        "output.plot",         "output.save_model"};
  std::vector<std::string> unknown;
  for (const auto& [k, v] : ini.entries()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) unknown.push_back(k);
  }
  return unknown;
}

fs::path resolve(const fs::path& root, const std::string& value) {
  const fs::path p(value);
  return p.is_absolute() ? p : root / p;
}

}  // namespace

IniConfig IniConfig::parse(std::string_view text, const std::string& origin) {
  IniConfig ini;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    std::string line(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (const auto c = line.find_first_of("#;"); c != std::string::npos) line.resize(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": unterminated section header");
      }
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    ini.set(section.empty() ? key : section + "." + key,
            trim(std::string_view(line).substr(eq + 1)));
  }
  return ini;
}

IniConfig IniConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

std::optional<std::string> IniConfig::get(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

const char* to_string(Task task) { return task == Task::kLm ? "lm" : "mnist"; }

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::kExplicit: return "explicit";
    case Mode::kCold: return "cold";
    case Mode::kWarm: return "warm";
  }
  return "?";
}

const char* to_string(Model model) {
  switch (model) {
    case Model::kSum: return "sum";
    case Model::kCat: return "cat";
    case Model::kOneLayer: return "1layer";
    case Model::kTwoLayer: return "2layer";
  }
  return "?";
}

ExperimentConfig ExperimentConfig::from_ini(const IniConfig& ini) {
  if (const auto unknown = check_known(ini); !unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config keys: " + list);
  }
  ExperimentConfig c;
  auto str = [&](const std::string& key) { return ini.get(key); };
  auto integer = [&](const std::string& key, long long fallback) {
    const auto v = str(key);
    return v ? parse_int(key, *v) : fallback;
  };
  auto number = [&](const std::string& key, double fallback) {
    const auto v = str(key);
    return v ? parse_double(key, *v) : fallback;
  };
  auto flag = [&](const std::string& key, bool fallback) {
    const auto v = str(key);
    return v ? parse_bool(key, *v) : fallback;
  };

  if (auto v = str("experiment.name")) c.name = *v;
  std::optional<Model> model;
  if (auto v = str("experiment.model")) {
    const std::string m = lower(*v);
    if (m == "sum") model = Model::kSum;
    else if (m == "cat") model = Model::kCat;
    else if (m == "1layer") model = Model::kOneLayer;
    else if (m == "2layer") model = Model::kTwoLayer;
    else throw ConfigError("experiment.model: expected sum, cat, 1layer or 2layer");
  }
  if (auto v = str("experiment.task")) {
    const std::string t = lower(*v);
    if (t == "lm") c.task = Task::kLm;
    else if (t == "mnist") c.task = Task::kMnist;
    else throw ConfigError("experiment.task: expected lm or mnist");
  } else if (model == Model::kSum || model == Model::kCat) {
    c.task = Task::kLm;
  }
  c.model = model.value_or(c.task == Task::kLm ? Model::kSum : Model::kOneLayer);
  const bool lm_model = c.model == Model::kSum || c.model == Model::kCat;
  if (lm_model != (c.task == Task::kLm)) {
    throw ConfigError(std::string("model '") + to_string(c.model) + "' does not fit task '" +
                      to_string(c.task) + "'");
  }
  if (auto v = str("experiment.mode")) {
    const std::string m = lower(*v);
    if (m == "explicit") c.mode = Mode::kExplicit;
    else if (m == "cold") c.mode = Mode::kCold;
    else if (m == "warm") c.mode = Mode::kWarm;
    else throw ConfigError("experiment.mode: expected explicit, cold or warm");
  }
  const long long seed = integer("experiment.seed", 0);
  if (seed < 0) throw ConfigError("experiment.seed must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.threads = static_cast<int>(integer("experiment.threads", 1));
  if (c.threads < 1) throw ConfigError("experiment.threads must be >= 1");

  if (auto v = str("data.root")) {
    c.data_root = *v;
  } else if (const char* env = std::getenv("EXPSOLVE_DATA_DIR"); env && *env) {
    c.data_root = env;
  } else {
    c.data_root = "data";
  }
  c.train_text = resolve(c.data_root, str("data.train").value_or("text/train.txt"));
  c.dev_text = resolve(c.data_root, str("data.dev").value_or("text/dev.txt"));
  c.mnist_dir = resolve(c.data_root, str("data.mnist").value_or("mnist"));
  if (auto v = str("data.tokenizer")) c.tokenizer = *v;

  c.radius = static_cast<int>(integer("lm.radius", 1));
  if (c.radius < 1) throw ConfigError("lm.radius must be >= 1");
  c.vocab = static_cast<Index>(integer("lm.vocab", TokenizerModel::kDefaultVocab));
  if (c.vocab < 3) throw ConfigError("lm.vocab must be >= 3");
  c.dev_fraction = number("lm.dev_fraction", 0.1);
  if (!(c.dev_fraction >= 0.0 && c.dev_fraction <= 1.0)) {
    throw ConfigError("lm.dev_fraction must be in [0, 1]");
  }
  c.train_fraction = number("lm.train_fraction", 1.0);
  if (!(c.train_fraction > 0.0 && c.train_fraction <= 1.0)) {
    throw ConfigError("lm.train_fraction must be in (0, 1]");
  }
  if (auto v = str("mnist.priming")) {
    c.priming = parse_double("mnist.priming", *v);
    if (!(*c.priming > 0.0)) throw ConfigError("mnist.priming must be positive");
  }
  c.k_min = static_cast<int>(integer("scan.k_min", 1));
  c.k_max = static_cast<int>(integer("scan.k_max", 784));
  if (c.k_min < 1 || c.k_max < c.k_min) throw ConfigError("scan needs 1 <= k_min <= k_max");

  c.train.learning_rate = number("train.learning_rate", 0.01);
  c.train.epochs = static_cast<int>(integer("train.epochs", 32));
  c.train.adagrad_epsilon = number("train.adagrad_epsilon", 1e-10);
  c.init_scale = number("train.init_scale", 0.01);
  c.train.batch_size = static_cast<Index>(integer("train.batch_size", 0));
  c.train.block_rows = static_cast<Index>(integer("train.block_rows", kDefaultBlockRows));
  c.freeze_layer1 = flag("train.freeze_layer1", false);
  const std::string stop =
      lower(str("train.early_stop").value_or(c.task == Task::kMnist ? "train" : "none"));
  if (stop == "train") c.train.early_stop = Split::kTrain;
  else if (stop == "dev") c.train.early_stop = Split::kDev;
  else if (stop != "none") throw ConfigError("train.early_stop: expected none, train or dev");
  c.train.metric = c.task == Task::kMnist ? Metric::kAccuracy : Metric::kPerplexity;
  c.train.init = ColdInit{c.seed, c.init_scale};
  try {
    c.train.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  if (c.freeze_layer1 && c.model != Model::kTwoLayer) {
    throw ConfigError("train.freeze_layer1 only applies to the 2layer model");
  }

  c.out_dir = str("output.dir").value_or("runs/" + c.name);
  c.plot = flag("output.plot", false);
  c.save_model = flag("output.save_model", true);
  return c;
}

json ExperimentConfig::to_json() const {
  json j = {{"name", name},
            {"task", to_string(task)},
            {"mode", to_string(mode)},
            {"model", to_string(model)},
            {"seed", seed},
            {"threads", threads},
            {"data_root", data_root.string()},
            {"out_dir", out_dir.string()},
            {"plot", plot},
            {"save_model", save_model},
            {"train",
             {{"learning_rate", train.learning_rate},
              {"epochs", train.epochs},
              {"adagrad_epsilon", train.adagrad_epsilon},
              {"init_scale", init_scale},
              {"batch_size", train.batch_size},
              {"block_rows", train.block_rows},
              {"early_stop", !train.early_stop                    ? "none"
                             : *train.early_stop == Split::kTrain ? "train"
                                                                  : "dev"},
              {"freeze_layer1", freeze_layer1}}}};
  if (task == Task::kLm) {
    j["lm"] = {{"train", train_text.string()}, {"dev", dev_text.string()},
               {"tokenizer", tokenizer.string()}, {"radius", radius},
               {"vocab", vocab},               {"dev_fraction", dev_fraction},
               {"train_fraction", train_fraction}};
  } else {
    j["mnist"] = {{"dir", mnist_dir.string()},
                  {"priming", optional_json(priming)},
                  {"k_min", k_min},
                  {"k_max", k_max}};
  }
  return j;
}

WindowSpec ExperimentConfig::window() const {
  return WindowSpec{radius, model == Model::kCat ? WindowMode::kCat : WindowMode::kSum};
}

std::string read_text(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) throw DataError("missing data: " + path.string());
  std::vector<fs::path> files;
  if (fs::is_directory(path, ec)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("missing data: no files in " + path.string());
  } else {
    files.push_back(path);
  }
  std::string text;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw DataError("cannot read " + f.string());
    std::stringstream buf;
    buf << in.rdbuf();
    if (!text.empty()) text += "\n\n";
    text += buf.str();
  }
  return text;
}

Index LmCorpus::train_tokens() const {
  Index n = 0;
  for (const auto& d : train) n += static_cast<Index>(d.size());
  return n;
}

Index LmCorpus::dev_tokens() const {
  Index n = 0;
  for (const auto& d : dev) n += static_cast<Index>(d.size());
  return n;
}

LmCorpus prepare_lm_corpus(std::string_view train_text, std::string_view dev_text, Index vocab,
                           double dev_fraction, std::uint64_t seed, const TokenizerModel* cached,
                           double train_fraction) {
  auto train_docs = split_documents(train_text);
  if (train_fraction < 1.0) train_docs = sample_documents(train_docs, train_fraction, seed + 1);
  if (train_docs.empty()) throw DataError("training text has no documents");
  const auto dev_docs = sample_documents(split_documents(dev_text), dev_fraction, seed);
  LmCorpus corpus;
  corpus.tokenizer = cached ? *cached : TokenizerModel::train(train_docs, vocab);
  corpus.train = corpus.tokenizer.encode_documents(train_docs);
  corpus.dev = corpus.tokenizer.encode_documents(dev_docs);
  corpus.noise = build_noise_model(std::span<const std::vector<TokenId>>(corpus.train),
                                   corpus.tokenizer.vocab_size());
  corpus.table = std::make_shared<const DenseEmbeddingTable>(densify(corpus.noise));
  return corpus;
}

LmRunResult run_lm(const LmCorpus& corpus, const WindowSpec& window, Mode mode,
                   const TrainConfig& train_config, const ColdInit& cold, int threads,
                   bool keep_decoder) {
  const TokenId pad = corpus.tokenizer.pad_id();
  const SampleStream train_stream =
      featurize(std::span<const std::vector<TokenId>>(corpus.train), corpus.table, window, pad);
  std::optional<SampleStream> dev_stream;
  if (corpus.dev_tokens() > 0) {
    dev_stream.emplace(
        featurize(std::span<const std::vector<TokenId>>(corpus.dev), corpus.table, window, pad));
  }
  TrainConfig config = train_config;
  config.metric = Metric::kPerplexity;
  if (mode == Mode::kCold) {
    config.init = cold;
  } else {
    ExplicitOptions options;
    options.empty_columns = EmptyColumns::kFloor;
    DecoderMatrix decoder;
    {
      const CooccurrenceMatrix F = accumulate(train_stream, threads);
      decoder = explicit_solution(F, static_cast<double>(window.radius), options);
    }
    config.init = WarmInit{std::move(decoder)};
    if (mode == Mode::kExplicit) config.epochs = 0;
  }
  TrainResult result = train(train_stream, dev_stream ? &*dev_stream : nullptr, config);
  LmRunResult out;
  out.window = window;
  out.mode = mode;
  out.history = std::move(result.history);
  if (keep_decoder) out.decoder = std::move(result.decoder);
  return out;
}

MnistData load_mnist(const fs::path& dir) {
  auto find = [&](const std::string& stem) {
    for (const auto& name : {stem, stem + ".gz"}) {
      const fs::path p = dir / name;
      if (fs::exists(p)) return p;
    }
    throw DataError("missing data: " + (dir / stem).string() + "[.gz]");
  };
  MnistData data;
  data.train = mnist::preprocess(
      mnist::load_idx(find("train-images-idx3-ubyte"), find("train-labels-idx1-ubyte")),
      mnist::SplitTag::kTrain);
  data.test = mnist::preprocess(
      mnist::load_idx(find("t10k-images-idx3-ubyte"), find("t10k-labels-idx1-ubyte")),
      mnist::SplitTag::kTest);
  return data;
}

double MnistRunResult::test_accuracy() const {
  const auto& r = history.records.at(static_cast<std::size_t>(history.returned_epoch));
  return r.dev_metric.value_or(0.0);
}

MnistRunResult run_mnist(const MnistData& data, Model model, Mode mode,
                         const TrainConfig& train_config, const ColdInit& cold,
                         std::optional<double> priming, bool freeze_layer1) {
  const SampleStream train_stream = mnist::to_stream(data.train);
  const SampleStream test_stream = mnist::to_stream(data.test);
  TrainConfig config = train_config;
  config.metric = Metric::kAccuracy;
  if (mode == Mode::kExplicit) config.epochs = 0;
  MnistRunResult out;
  out.model = model;
  out.mode = mode;

  if (model == Model::kOneLayer) {
    if (mode == Mode::kCold) {
      config.init = cold;
    } else {
      const CooccurrenceMatrix F = accumulate(train_stream);
      out.priming = priming.value_or(estimate_priming(F));
      config.init = WarmInit{explicit_solution(F, out.priming)};
    }
    TrainResult result = train(train_stream, &test_stream, config);
    out.history = std::move(result.history);
    out.decoder = std::move(result.decoder);
    return out;
  }
  if (model != Model::kTwoLayer) throw ConfigError("mnist runs use the 1layer or 2layer model");
  TwoLayerInit init = cold;
  if (mode != Mode::kCold) {
    if (priming) throw ConfigError("mnist.priming is not used by the 2layer warm start");
    WarmStartReport report;
    init = local_warm_start(train_stream, &report);
    out.priming = report.priming1;
  }
  TwoLayerResult result = train_2layer(train_stream, &test_stream, init, config, freeze_layer1);
  out.history = std::move(result.history);
  out.two_layer = std::move(result.model);
  return out;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("fit_line: length mismatch");
  LineFit fit;
  fit.points = x.size();
  if (x.size() < 2) throw DomainError("fit_line needs at least two points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw DomainError("fit_line needs two distinct x values");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

namespace {

struct RunContext {
  const ExperimentConfig& config;
  std::vector<std::string> artifacts;
  json summary = json::object();

  void write(const std::string& name, const std::string& content) {
    write_file(config.out_dir / name, content);
    artifacts.push_back(name);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
};

TokenizerModel obtain_tokenizer(const ExperimentConfig& c, const std::vector<std::string>& docs) {
  if (!c.tokenizer.empty() && fs::exists(c.tokenizer)) return TokenizerModel::load(c.tokenizer);
  TokenizerModel model = TokenizerModel::train(docs, c.vocab);
  if (!c.tokenizer.empty()) model.save(c.tokenizer);
  return model;
}

LmCorpus load_corpus(const ExperimentConfig& c) {
  const std::string train_text = read_text(c.train_text);
  const std::string dev_text = read_text(c.dev_text);
  auto docs = split_documents(train_text);
  if (c.train_fraction < 1.0) docs = sample_documents(docs, c.train_fraction, c.seed + 1);
  const TokenizerModel tokenizer = obtain_tokenizer(c, docs);
  return prepare_lm_corpus(train_text, dev_text, c.vocab, c.dev_fraction, c.seed, &tokenizer,
                           c.train_fraction);
}

void save_decoder(RunContext& ctx, const std::string& name, const DecoderMatrix& decoder) {
  std::ofstream out(ctx.config.out_dir / name, std::ios::binary);
  if (!out) throw Error("cannot write " + (ctx.config.out_dir / name).string());
  write_matrix_block(out, decoder.values, 0);
  ctx.artifacts.push_back(name);
}

void cmd_lm(RunContext& ctx) {
  const auto& c = ctx.config;
  const LmCorpus corpus = load_corpus(c);
  {
    std::ostringstream tok;
    corpus.tokenizer.save(tok);
    ctx.write("tokenizer.bpe", tok.str());
  }
  const LmRunResult run = run_lm(corpus, c.window(), c.mode, c.train,
                                 ColdInit{c.seed, c.init_scale}, c.threads, c.save_model);
  ctx.write("history.csv", history_csv(run.history));
  json metrics = history_json(run.history);
  metrics["task"] = "lm";
  metrics["mode"] = to_string(c.mode);
  metrics["model"] = to_string(c.model);
  metrics["radius"] = c.radius;
  metrics["vocab_size"] = corpus.tokenizer.vocab_size();
  metrics["train_tokens"] = corpus.train_tokens();
  metrics["dev_tokens"] = corpus.dev_tokens();
  ctx.write_json("metrics.json", metrics);
  ctx.summary = metrics;
  if (run.decoder) save_decoder(ctx, "decoder.cooc", *run.decoder);
  if (c.plot) {
    ctx.write("history.svg",
              history_svg(run.history, std::string(to_string(c.model)) + " K=" +
                                           std::to_string(c.radius) + " " + to_string(c.mode),
                          true));
  }
}

void cmd_mnist(RunContext& ctx) {
  const auto& c = ctx.config;
  const MnistData data = load_mnist(c.mnist_dir);
  const MnistRunResult run = run_mnist(data, c.model, c.mode, c.train,
                                       ColdInit{c.seed, c.init_scale}, c.priming, c.freeze_layer1);
  ctx.write("history.csv", history_csv(run.history));
  json metrics = history_json(run.history);
  metrics["task"] = "mnist";
  metrics["mode"] = to_string(c.mode);
  metrics["model"] = to_string(c.model);
  metrics["priming"] = run.priming;
  metrics["test_accuracy"] = run.test_accuracy();
  metrics["epoch0_test_accuracy"] = run.history.records.front().dev_metric.value_or(0.0);
  ctx.write_json("metrics.json", metrics);
  ctx.summary = metrics;
  if (c.save_model) {
    if (run.decoder) save_decoder(ctx, "decoder.cooc", *run.decoder);
    if (run.two_layer) {
      run.two_layer->save(c.out_dir / "model2.cooc");
      ctx.artifacts.push_back("model2.cooc");
      ctx.artifacts.push_back("model2.cooc.json");
    }
  }
  if (c.plot) {
    ctx.write("history.svg",
              history_svg(run.history,
                          std::string("MNIST ") + to_string(c.model) + " " + to_string(c.mode),
                          false));
  }
}

void cmd_scan_prime(RunContext& ctx) {
  const auto& c = ctx.config;
  if (c.task != Task::kMnist) throw ConfigError("scan-prime runs on the mnist task");
  const MnistData data = load_mnist(c.mnist_dir);
  const SampleStream train_stream = mnist::to_stream(data.train);
  const CooccurrenceMatrix F = accumulate(train_stream, c.threads);
  const double k_hat = estimate_priming(F);
  const auto scan = mnist::prime_scan(F, mnist::to_stream(data.test), c.k_min, c.k_max, c.threads);
  std::ostringstream csv;
  scan.write_csv(csv);
  ctx.write("scan.csv", csv.str());
  double best = 0.0;
  for (const auto& r : scan.rows) best = std::max(best, r.accuracy);
  const int rounded = static_cast<int>(std::lround(k_hat));
  json summary = {{"k_hat", k_hat},
                  {"round_k_hat", rounded},
                  {"argmax_k", scan.argmax_k},
                  {"max_accuracy", best},
                  {"k_min", c.k_min},
                  {"k_max", c.k_max},
                  {"rows", scan.rows.size()}};
  summary["accuracy_at_round_k_hat"] =
      rounded >= c.k_min && rounded <= c.k_max ? json(scan.accuracy_at(rounded)) : json(nullptr);
  ctx.write_json("summary.json", summary);
  ctx.summary = summary;
  if (c.plot) {
    svg::Series s{"test accuracy", {}, {}};
    for (const auto& r : scan.rows) {
      s.x.push_back(r.k);
      s.y.push_back(r.accuracy);
    }
    svg::PlotOptions opt;
    opt.title = "priming-number scan";
    opt.x_label = "k";
    opt.y_label = "test accuracy";
    opt.log_x = true;
    ctx.write("scan.svg", svg::line_chart({s}, opt));
  }
}

void cmd_diagnose_scaling(RunContext& ctx) {
  const auto& c = ctx.config;
  std::vector<ScalingRow> rows;
  double priming = 0.0;
  if (c.task == Task::kLm) {
    const LmCorpus corpus = load_corpus(c);
    const SampleStream stream =
        featurize(std::span<const std::vector<TokenId>>(corpus.train), corpus.table, c.window(),
                  corpus.tokenizer.pad_id());
    const CooccurrenceMatrix F = accumulate(stream, c.threads);
    priming = static_cast<double>(c.radius);
    rows = scaling_diagnostic(F, stream, priming);
  } else {
    const MnistData data = load_mnist(c.mnist_dir);
    const SampleStream stream = mnist::to_stream(data.train);
    const CooccurrenceMatrix F = accumulate(stream, c.threads);
    priming = c.priming.value_or(estimate_priming(F));
    rows = scaling_diagnostic(F, stream, priming);
  }
  std::ostringstream csv;
  csv << "index,count,power_mean,log_count,log_power_mean\n" << std::setprecision(17);
  std::vector<double> xs, ys;
  std::size_t excluded = 0;
  for (const auto& r : rows) {
    const bool empty = !(r.count > 0.0);
    csv << r.index << ',' << r.count << ',' << r.power_mean() << ',';
    if (!empty) csv << std::log(r.count);
    csv << ',' << r.log_power_mean << '\n';
    if (empty) {
      ++excluded;
    } else {
      xs.push_back(std::log(r.count));
      ys.push_back(r.log_power_mean);
    }
  }
  ctx.write("scaling.csv", csv.str());
  json summary = {{"priming", priming}, {"columns", rows.size()}, {"excluded_empty", excluded}};
  if (xs.size() >= 2) {
    const LineFit fit = fit_line(xs, ys);
    summary["slope"] = fit.slope;
    summary["intercept"] = fit.intercept;
    summary["points"] = fit.points;
  } else {
    summary["slope"] = nullptr;
    summary["points"] = xs.size();
  }
  ctx.write_json("summary.json", summary);
  ctx.summary = summary;
  if (c.plot) {
    svg::Series s{"columns", {}, {}};
    for (const auto& r : rows) {
      if (r.count > 0.0) {
        s.x.push_back(r.count);
        s.y.push_back(r.power_mean());
      }
    }
    svg::PlotOptions opt;
    opt.title = "power mean of geometric co-occurrence averages vs count";
    opt.x_label = "column count f_i";
    opt.y_label = "power mean";
    opt.log_x = true;
    opt.log_y = true;
    ctx.write("scaling.svg", svg::scatter_chart(s, opt));
  }
}

void cmd_tokenize(RunContext& ctx) {
  const auto& c = ctx.config;
  if (c.task != Task::kLm) throw ConfigError("tokenize runs on the lm task");
  const LmCorpus corpus = load_corpus(c);
  std::ostringstream tok;
  corpus.tokenizer.save(tok);
  ctx.write("tokenizer.bpe", tok.str());
  json summary = {{"vocab_size", corpus.tokenizer.vocab_size()},
                  {"target_vocab", c.vocab},
                  {"merges", corpus.tokenizer.merges().size()},
                  {"alphabet", corpus.tokenizer.alphabet().size()},
                  {"train_documents", corpus.train.size()},
                  {"dev_documents", corpus.dev.size()},
                  {"train_tokens", corpus.train_tokens()},
                  {"dev_tokens", corpus.dev_tokens()}};
  ctx.write_json("summary.json", summary);
  ctx.summary = summary;
}

}  // namespace

int run_command(const std::string& command, const ExperimentConfig& config,
                const json& raw_config) {
  const auto started = std::chrono::steady_clock::now();
  const std::string started_at = utc_now();
  RunContext ctx{config, {}, json::object()};
  int code = kExitOk;
  std::string error;
  try {
    std::error_code ec;
    fs::create_directories(config.out_dir, ec);
    if (ec) throw Error("cannot create output directory " + config.out_dir.string());
    if (command == "lm") {
      if (config.task != Task::kLm) throw ConfigError("the lm command needs task = lm");
      cmd_lm(ctx);
    } else if (command == "mnist") {
      if (config.task != Task::kMnist) throw ConfigError("the mnist command needs task = mnist");
      cmd_mnist(ctx);
    } else if (command == "scan-prime") {
      cmd_scan_prime(ctx);
    } else if (command == "diagnose-scaling") {
      cmd_diagnose_scaling(ctx);
    } else if (command == "tokenize") {
      cmd_tokenize(ctx);
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
  } catch (const ConfigError& e) {
    code = kExitConfig;
    error = e.what();
  } catch (const DataError& e) {
    code = kExitData;
    error = e.what();
  } catch (const std::exception& e) {
    code = kExitRuntime;
    error = e.what();
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  json manifest = {{"command", command},
                   {"name", config.name},
                   {"exit_code", code},
                   {"config", raw_config},
                   {"resolved", config.to_json()},
                   {"seed", config.seed},
                   {"threads", config.threads},
                   {"versions",
                    {{"expsolve", kVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"compiler", __VERSION__},
                     {"cxx", __cplusplus}}},
                   {"started_at", started_at},
                   {"wall_seconds", wall},
                   {"artifacts", ctx.artifacts},
                   {"summary", ctx.summary}};
  if (!error.empty()) manifest["error"] = error;
  try {
    std::error_code ec;
    if (fs::is_directory(config.out_dir, ec)) {
      write_file(config.out_dir / "manifest.json", manifest.dump(2) + "\n");
    }
  } catch (const std::exception& e) {
    if (code == kExitOk) {
      code = kExitRuntime;
      error = e.what();
    }
  }
  if (!error.empty()) std::cerr << "expsolve " << command << ": " << error << '\n';
  return code;
}

}  // namespace expsolve::harness
