#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "expsolve/harness.hpp"

namespace h = expsolve::harness;

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<long long> seed;
  std::optional<int> threads;
  bool plot = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, CommonArgs& args) {
  app->add_option("-c,--config", args.config, "INI experiment config");
  app->add_option("-o,--out", args.out, "output directory (output.dir)");
  app->add_option("--seed", args.seed, "experiment.seed");
  app->add_option("--threads", args.threads, "experiment.threads");
  app->add_flag("--plot", args.plot, "also write SVG figures");
  app->add_option("-s,--set", args.overrides, "override a config key: section.key=value");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explicit-solution softmax decoders: LM and MNIST experiments"};
  app.require_subcommand(1);
  CommonArgs args;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"lm", "train or solve a window language model"},
      {"mnist", "train or solve a 1- or 2-layer MNIST classifier"},
      {"scan-prime", "test accuracy of explicit solutions over a range of priming numbers"},
      {"diagnose-scaling", "power-mean vs column-count diagnostic"},
      {"tokenize", "train the BPE tokenizer and report corpus statistics"}};
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? h::kExitOk : h::kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  h::IniConfig ini;
  h::ExperimentConfig config;
  try {
    if (!args.config.empty()) ini = h::IniConfig::load(args.config);
    for (const auto& kv : args.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw h::ConfigError("--set expects section.key=value, got '" + kv + "'");
      }
      ini.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!args.out.empty()) ini.set("output.dir", args.out);
    if (args.seed) ini.set("experiment.seed", std::to_string(*args.seed));
    if (args.threads) ini.set("experiment.threads", std::to_string(*args.threads));
    if (args.plot) ini.set("output.plot", "true");
    if (!ini.get("experiment.task")) {
      if (command == "lm" || command == "tokenize") ini.set("experiment.task", "lm");
      if (command == "mnist" || command == "scan-prime") ini.set("experiment.task", "mnist");
    }
    config = h::ExperimentConfig::from_ini(ini);
  } catch (const h::ConfigError& e) {
    std::cerr << "expsolve " << command << ": " << e.what() << '\n';
    return h::kExitConfig;
  }
  nlohmann::json raw = nlohmann::json::object();
  for (const auto& [k, v] : ini.entries()) raw[k] = v;
  return h::run_command(command, config, raw);
}
