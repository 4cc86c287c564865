#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "expsolve/harness.hpp"
#include "test_support.hpp"

using namespace expsolve;
using namespace expsolve::harness;
using nlohmann::json;
using testing::Gen;

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

void write_idx_pair(const fs::path& dir, const std::string& prefix, const mnist::IdxImages& raw) {
  std::ofstream img(dir / (prefix + "-images-idx3-ubyte"), std::ios::binary);
  mnist::write_idx_images(img, raw);
  std::ofstream lab(dir / (prefix + "-labels-idx1-ubyte"), std::ios::binary);
  mnist::write_idx_labels(lab, raw);
}

mnist::IdxImages digits(Gen& gen, Index count) {
  mnist::IdxImages raw;
  raw.count = count;
  raw.height = 4;
  raw.width = 4;
  raw.pixels.resize(static_cast<std::size_t>(count * 16));
  raw.labels.resize(static_cast<std::size_t>(count));
  for (Index m = 0; m < count; ++m) {
    const int label = static_cast<int>(m % 10);
    raw.labels[static_cast<std::size_t>(m)] = static_cast<std::uint8_t>(label);
    for (int i = 0; i < 16; ++i) {
      const bool lit = i % 10 == label || (i + 4) % 10 == label;
      raw.pixels[static_cast<std::size_t>(m * 16 + i)] =
          static_cast<std::uint8_t>(lit ? gen.uniform(150, 255) : gen.uniform(0, 120));
    }
  }
  return raw;
}

std::string text_docs(Gen& gen, int docs) {
  const std::vector<std::string> lexicon{"the", "cat", "sat", "on", "a", "mat", "dog",
                                         "ran", "to", "hill", "and", "then", "slept"};
  std::string out;
  for (int d = 0; d < docs; ++d) {
    for (int w = 0; w < 60; ++w) {
      out += lexicon[static_cast<std::size_t>(gen.integer(0, 12))];
      out += w % 12 == 11 ? "\n" : " ";
    }
    out += "\n\n";
  }
  return out;
}

// Data root with mnist/ and text/ fixtures.
struct Fixture {
  fs::path root;
  Fixture() : root(testing::scratch_dir("cli")) {
    Gen gen(11);
    fs::create_directories(root / "mnist");
    write_idx_pair(root / "mnist", "train", digits(gen, 300));
    write_idx_pair(root / "mnist", "t10k", digits(gen, 80));
    fs::create_directories(root / "text");
    std::ofstream(root / "text" / "train.txt") << text_docs(gen, 12);
    std::ofstream(root / "text" / "dev.txt") << text_docs(gen, 4);
  }
  ~Fixture() { fs::remove_all(root); }

  ExperimentConfig config(const std::string& ini_text, const std::string& out) const {
    auto ini = IniConfig::parse(ini_text);
    ini.set("data.root", root.string());
    ini.set("output.dir", (root / out).string());
    return ExperimentConfig::from_ini(ini);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_SUITE("cli_harness") {

TEST_CASE("ini parsing: sections, comments, whitespace") {
  const auto ini = IniConfig::parse(
      "# comment\n[experiment]\nname = demo ; trailing\n  model=1layer\n\n[train]\nepochs = 5\n; x\n");
  CHECK(ini.get("experiment.name") == "demo");
  CHECK(ini.get("experiment.model") == "1layer");
  CHECK(ini.get("train.epochs") == "5");
  CHECK(!ini.get("train.batch_size"));
  CHECK_THROWS_AS(IniConfig::parse("[broken\n"), ConfigError);
  try {
    IniConfig::parse("[a]\nok = 1\nno equals sign\n", "cfg.ini");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("cfg.ini:3") != std::string::npos);
  }
}

TEST_CASE("config validation rejects unknown keys and bad combinations") {
  auto make = [](const std::string& text) { return ExperimentConfig::from_ini(IniConfig::parse(text)); };
  CHECK_THROWS_AS(make("[train]\nepoch = 3\n"), ConfigError);
  CHECK_THROWS_AS(make("[experiment]\ntask = mnist\nmodel = cat\n"), ConfigError);
  CHECK_THROWS_AS(make("[experiment]\nmodel = 1layer\n[train]\nfreeze_layer1 = true\n"), ConfigError);
  CHECK_THROWS_AS(make("[train]\nepochs = many\n"), ConfigError);
  CHECK_THROWS_AS(make("[train]\nearly_stop = sometimes\n"), ConfigError);
  CHECK_THROWS_AS(make("[lm]\nradius = 0\n"), ConfigError);

  const auto lm = make("[experiment]\nmodel = cat\nmode = warm\n[lm]\nradius = 3\n");
  CHECK(lm.task == Task::kLm);
  CHECK(lm.window().radius == 3);
  CHECK(lm.window().mode == WindowMode::kCat);
  CHECK(!lm.train.early_stop);
  const auto mn = make("[experiment]\nname = x\nmodel = 2layer\n");
  CHECK(mn.task == Task::kMnist);
  CHECK(mn.train.early_stop == Split::kTrain);
  CHECK(mn.out_dir == fs::path("runs/x"));
}

TEST_CASE("every shipped config parses") {
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(fs::path(EXPSOLVE_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".conf") continue;
    ++seen;
    INFO(entry.path().string());
    auto ini = IniConfig::load(entry.path());
    const auto name = entry.path().stem().string();
    if (!ini.get("experiment.task")) ini.set("experiment.task", name.rfind("lm", 0) == 0 || name == "tokenize" ? "lm" : "mnist");
    CHECK_NOTHROW(ExperimentConfig::from_ini(ini));
  }
  CHECK(seen >= 10);
}

TEST_CASE("line fit matches the closed-form regression") {
  Gen gen(1);
  std::vector<double> x, y;
  for (int i = 0; i < 40; ++i) {
    x.push_back(gen.uniform(0, 5));
    y.push_back(-0.7 * x.back() + 2.0 + gen.uniform(-0.1, 0.1));
  }
  long double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += (long double)x[i] * x[i];
    sxy += (long double)x[i] * y[i];
  }
  const long double n = x.size();
  const long double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const auto fit = fit_line(x, y);
  CHECK(fit.slope == doctest::Approx((double)slope).epsilon(1e-10));
  CHECK(fit.intercept == doctest::Approx((double)((sy - slope * sx) / n)).epsilon(1e-10));
  CHECK(fit.points == 40);
  const std::vector<double> same{1, 1};
  CHECK_THROWS_AS(fit_line(same, same), DomainError);
}

TEST_CASE("mnist explicit run writes artifacts and a manifest") {
  const auto& f = fixture();
  const auto c = f.config("[experiment]\nname = e\nmodel = 1layer\nmode = explicit\n[output]\nplot = true\n", "explicit");
  REQUIRE(run_command("mnist", c) == kExitOk);
  for (const char* a : {"history.csv", "metrics.json", "decoder.cooc", "history.svg", "manifest.json"})
    CHECK(fs::exists(c.out_dir / a));
  const auto m = read_json(c.out_dir / "manifest.json");
  CHECK(m["command"] == "mnist");
  CHECK(m["exit_code"] == 0);
  CHECK(m["resolved"]["model"] == "1layer");
  const auto metrics = read_json(c.out_dir / "metrics.json");
  CHECK(metrics["test_accuracy"].get<double>() > 0.5);
  CHECK(metrics["epochs_run"] == 0);
}

TEST_CASE("runs are deterministic and report early stopping") {
  const auto& f = fixture();
  const std::string ini =
      "[experiment]\nmodel = 1layer\nmode = cold\nseed = 4\n[train]\nepochs = 30\nlearning_rate = 2.0\n"
      "early_stop = train\n[output]\nsave_model = false\n";
  const auto a = f.config(ini, "det_a");
  const auto b = f.config(ini, "det_b");
  REQUIRE(run_command("mnist", a) == kExitOk);
  REQUIRE(run_command("mnist", b) == kExitOk);
  CHECK(slurp(a.out_dir / "history.csv") == slurp(b.out_dir / "history.csv"));
  CHECK(!fs::exists(a.out_dir / "decoder.cooc"));
  const auto metrics = read_json(a.out_dir / "metrics.json");
  const std::string csv = slurp(a.out_dir / "history.csv");
  const auto lines = std::count(csv.begin(), csv.end(), '\n');
  CHECK(metrics["epochs_run"].get<long>() == lines - 2);
  if (metrics["stopped_early"].get<bool>())
    CHECK(metrics["returned_epoch"].get<int>() == metrics["epochs_run"].get<int>() - 1);
  else
    CHECK(metrics["epochs_run"] == 30);
}

TEST_CASE("scan-prime writes the scan table and summary") {
  const auto& f = fixture();
  const auto c = f.config("[experiment]\nmodel = 1layer\n[scan]\nk_min = 1\nk_max = 20\n", "scan");
  REQUIRE(run_command("scan-prime", c) == kExitOk);
  const std::string csv = slurp(c.out_dir / "scan.csv");
  CHECK(csv.rfind("k,accuracy\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 21);
  const auto s = read_json(c.out_dir / "summary.json");
  // argmax recomputed from the table.
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  double best = -1;
  int arg = 0;
  while (std::getline(in, line)) {
    const int k = std::stoi(line.substr(0, line.find(',')));
    const double acc = std::stod(line.substr(line.find(',') + 1));
    if (acc > best) { best = acc; arg = k; }
  }
  CHECK(s["argmax_k"] == arg);
  CHECK(s["max_accuracy"].get<double>() == doctest::Approx(best));
  CHECK(s["k_hat"].get<double>() > 1.0);
}

TEST_CASE("diagnose-scaling slope agrees with an independent fit of its own table") {
  const auto& f = fixture();
  for (const char* model : {"1layer", "sum"}) {
    const auto c = f.config(std::string("[experiment]\nmodel = ") + model + "\n[lm]\nvocab = 40\n",
                            std::string("scaling_") + model);
    REQUIRE(run_command("diagnose-scaling", c) == kExitOk);
    std::istringstream in(slurp(c.out_dir / "scaling.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "index,count,power_mean,log_count,log_power_mean");
    long double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
    std::size_t empty = 0;
    while (std::getline(in, line)) {
      std::vector<std::string> cols;
      std::stringstream ls(line);
      for (std::string cell; std::getline(ls, cell, ',');) cols.push_back(cell);
      const double count = std::stod(cols[1]);
      if (!(count > 0)) { ++empty; continue; }
      const long double x = std::log((long double)count), y = std::stod(cols.at(4));
      sx += x; sy += y; sxx += x * x; sxy += x * y; n += 1;
    }
    const auto s = read_json(c.out_dir / "summary.json");
    CHECK(s["excluded_empty"] == empty);
    CHECK(s["points"] == (std::size_t)n);
    CHECK(s["slope"].get<double>() == doctest::Approx((double)((n * sxy - sx * sy) / (n * sxx - sx * sx))).epsilon(1e-6));
    if (std::string(model) == "sum") CHECK(empty >= 2);  // <pad> and <oov> never occur as targets
  }
}

TEST_CASE("lm warm run and tokenize") {
  const auto& f = fixture();
  const auto c = f.config(
      "[experiment]\nmodel = sum\nmode = warm\n[lm]\nradius = 2\nvocab = 40\n[train]\nepochs = 2\n", "lm");
  REQUIRE(run_command("lm", c) == kExitOk);
  const auto metrics = read_json(c.out_dir / "metrics.json");
  CHECK(metrics["epochs_run"] == 2);
  CHECK(metrics["final"]["train_metric"].get<double>() > 1.0);
  CHECK(fs::exists(c.out_dir / "decoder.cooc"));
  const auto t = f.config("[experiment]\nmodel = sum\n[lm]\nvocab = 40\n", "tok");
  REQUIRE(run_command("tokenize", t) == kExitOk);
  CHECK(read_json(t.out_dir / "summary.json")["vocab_size"].get<int>() <= 40);
  CHECK(slurp(t.out_dir / "tokenizer.bpe") == slurp(c.out_dir / "tokenizer.bpe"));
}

TEST_CASE("exit codes: missing data is 2, wrong command for the task is 1") {
  const auto& f = fixture();
  auto c = f.config("[experiment]\nmodel = 1layer\n", "missing");
  c.mnist_dir = f.root / "nowhere";
  CHECK(run_command("mnist", c) == kExitData);
  CHECK(read_json(c.out_dir / "manifest.json")["exit_code"] == kExitData);
  const auto lm = f.config("[experiment]\nmodel = sum\n", "wrong");
  CHECK(run_command("scan-prime", lm) == kExitConfig);
}

TEST_CASE("CLI binary end to end") {
  const auto& f = fixture();
  const std::string cli = EXPSOLVE_CLI_PATH;
  const fs::path cfg = f.root / "run.conf";
  std::ofstream(cfg) << "[experiment]\nmodel = 1layer\nmode = explicit\n[data]\nroot = " << f.root.string() << "\n";
  const fs::path out = f.root / "cli_out";
  auto run = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " > \"" + (f.root / "log.txt").string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  CHECK(run("mnist -c " + cfg.string() + " -o " + out.string()) == 0);
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(run("mnist -c " + cfg.string() + " -o " + out.string() + " --set train.bogus=1") == 1);
  CHECK(run("mnist -c " + (f.root / "absent.conf").string()) == 1);
  CHECK(run("mnist -c " + cfg.string() + " -o " + out.string() + " --set data.mnist=nowhere") == 2);
  CHECK(run("--help") == 0);
}

}  // TEST_SUITE
