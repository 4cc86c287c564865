#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "expsolve/bpe.hpp"
#include "expsolve/lm.hpp"
#include "expsolve/mnist.hpp"
#include "expsolve/multilayer.hpp"
#include "expsolve/trainer.hpp"

namespace expsolve::harness {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitRuntime = 3;

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// key = value lines grouped under [section] headers; '#' and ';' start
/// comments. Keys are stored as "section.key".
class IniConfig {
 public:
  static IniConfig parse(std::string_view text, const std::string& origin = "<string>");
  static IniConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  std::optional<std::string> get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

enum class Task { kLm, kMnist };
enum class Mode { kExplicit, kCold, kWarm };
enum class Model { kSum, kCat, kOneLayer, kTwoLayer };

const char* to_string(Task task);
const char* to_string(Mode mode);
const char* to_string(Model model);

struct ExperimentConfig {
  std::string name = "experiment";
  Task task = Task::kMnist;
  Mode mode = Mode::kExplicit;
  Model model = Model::kOneLayer;

  std::filesystem::path data_root;
  std::filesystem::path train_text;  ///< lm: file or directory of files
  std::filesystem::path dev_text;
  std::filesystem::path mnist_dir;
  std::filesystem::path tokenizer;  ///< lm: optional cached tokenizer

  int radius = 1;
  Index vocab = TokenizerModel::kDefaultVocab;
  double dev_fraction = 0.1;
  double train_fraction = 1.0;  ///< seeded document sample of the train text
  std::optional<double> priming;  ///< mnist explicit/scaling: defaults to the estimate
  int k_min = 1;
  int k_max = 784;

  std::uint64_t seed = 0;
  int threads = 1;
  TrainConfig train;
  double init_scale = 0.01;
  bool freeze_layer1 = false;

  std::filesystem::path out_dir = "runs/experiment";
  bool plot = false;
  bool save_model = true;

  /// Known keys only; throws ConfigError on unknown keys, bad values or
  /// inconsistent combinations (e.g. sum/cat outside lm).
  static ExperimentConfig from_ini(const IniConfig& ini);
  nlohmann::json to_json() const;
  WindowSpec window() const;
};

/// Contents of a text file, or of every regular file in a directory (sorted
/// by name) joined with blank lines. Throws DataError when missing.
std::string read_text(const std::filesystem::path& path);

struct LmCorpus {
  TokenizerModel tokenizer;
  std::vector<std::vector<TokenId>> train;
  std::vector<std::vector<TokenId>> dev;
  NoiseModel noise;
  std::shared_ptr<const DenseEmbeddingTable> table;

  Index train_tokens() const;
  Index dev_tokens() const;
};

/// Documents, dev sample, tokenizer (trained on the train documents unless
/// `cached` is given), ids and the noise model of the train ids.
/// train_fraction < 1 keeps a seeded sample of the train documents.
LmCorpus prepare_lm_corpus(std::string_view train_text, std::string_view dev_text, Index vocab,
                           double dev_fraction, std::uint64_t seed,
                           const TokenizerModel* cached = nullptr, double train_fraction = 1.0);

struct LmRunResult {
  WindowSpec window;
  Mode mode = Mode::kExplicit;
  TrainHistory history;  ///< explicit mode: the single epoch-0 record
  std::optional<DecoderMatrix> decoder;
};

/// Explicit, cold or warm run of one window model. Explicit and warm
/// decoders use priming = radius.
LmRunResult run_lm(const LmCorpus& corpus, const WindowSpec& window, Mode mode,
                   const TrainConfig& train, const ColdInit& cold, int threads = 1,
                   bool keep_decoder = false);

struct MnistData {
  mnist::DigitDataset train;
  mnist::DigitDataset test;
};

/// Canonical IDX names under dir, raw or with a .gz suffix.
MnistData load_mnist(const std::filesystem::path& dir);

struct MnistRunResult {
  Model model = Model::kOneLayer;
  Mode mode = Mode::kExplicit;
  double priming = 0.0;
  TrainHistory history;  ///< dev columns hold the test split
  std::optional<DecoderMatrix> decoder;
  std::optional<TwoLayerModel> two_layer;
  double test_accuracy() const;
};

/// History metric is accuracy; early stopping follows `train.early_stop`.
MnistRunResult run_mnist(const MnistData& data, Model model, Mode mode, const TrainConfig& train,
                         const ColdInit& cold, std::optional<double> priming = std::nullopt,
                         bool freeze_layer1 = false);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t points = 0;
};

/// Ordinary least squares y = slope * x + intercept; needs two distinct x.
LineFit fit_line(std::span<const double> x, std::span<const double> y);

/// Runs one CLI command ("lm", "mnist", "scan-prime", "diagnose-scaling",
/// "tokenize"), writing artifacts and manifest.json under config.out_dir.
/// Returns the process exit code; errors are reported on stderr.
int run_command(const std::string& command, const ExperimentConfig& config,
                const nlohmann::json& raw_config = nlohmann::json::object());

}  // namespace expsolve::harness
