#include <doctest.h>

#include <zlib.h>

#include <fstream>
#include <sstream>

#include "expsolve/explicit_solver.hpp"
#include "expsolve/mnist.hpp"
#include "expsolve/softmax.hpp"
#include "test_support.hpp"

using namespace expsolve;
using namespace expsolve::mnist;
using testing::Gen;

namespace {

// Each class lights its own pixel block; noise elsewhere.
IdxImages synthetic_digits(Gen& gen, Index count, Index side = 5) {
  IdxImages raw;
  raw.count = count;
  raw.height = side;
  raw.width = side;
  const Index px = side * side;
  raw.pixels.resize(static_cast<std::size_t>(count * px));
  raw.labels.resize(static_cast<std::size_t>(count));
  for (Index m = 0; m < count; ++m) {
    const auto label = static_cast<std::uint8_t>(m % kClasses);
    raw.labels[static_cast<std::size_t>(m)] = label;
    for (Index i = 0; i < px; ++i) {
      const bool lit = (i % kClasses) == label || ((i + 3) % kClasses) == label;
      const double base = lit ? gen.uniform(120, 255) : gen.uniform(0, 140);
      raw.pixels[static_cast<std::size_t>(m * px + i)] = static_cast<std::uint8_t>(base);
    }
  }
  return raw;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_gzip(const std::filesystem::path& path, const std::string& bytes) {
  gzFile f = gzopen(path.string().c_str(), "wb");
  REQUIRE(f != nullptr);
  gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
}

std::pair<std::string, std::string> serialize(const IdxImages& raw) {
  std::ostringstream img, lab;
  write_idx_images(img, raw);
  write_idx_labels(lab, raw);
  return {img.str(), lab.str()};
}

double direct_accuracy(const CooccurrenceMatrix& F, const SampleStream& test, double k) {
  const auto U = explicit_solution(F, k);
  const Matrix H = test.features().materialize(0, test.size());
  return accuracy(Matrix(H * U.values), test.targets());
}

}  // namespace

TEST_SUITE("mnist_pipeline") {

TEST_CASE("IDX round trip, raw and gzip") {
  Gen gen(1);
  const auto raw = synthetic_digits(gen, 23, 4);
  const auto [img, lab] = serialize(raw);
  CHECK(img.size() == 16 + 23 * 16);
  CHECK(lab.size() == 8 + 23);
  CHECK(static_cast<unsigned char>(img[3]) == 0x03);
  CHECK(static_cast<unsigned char>(lab[3]) == 0x01);
  const auto dir = testing::scratch_dir("idx");
  write_file(dir / "img", img);
  write_file(dir / "lab", lab);
  write_gzip(dir / "img.gz", img);
  write_gzip(dir / "lab.gz", lab);
  for (const auto& [i, l] : {std::pair{"img", "lab"}, std::pair{"img.gz", "lab.gz"}}) {
    const auto back = load_idx(dir / i, dir / l);
    CHECK(back.count == 23);
    CHECK(back.height == 4);
    CHECK(back.width == 4);
    CHECK(back.pixels == raw.pixels);
    CHECK(back.labels == raw.labels);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("IDX errors: bad magic, truncation, count mismatch, missing file") {
  Gen gen(2);
  const auto raw = synthetic_digits(gen, 5, 3);
  const auto [img, lab] = serialize(raw);
  const auto dir = testing::scratch_dir("idxbad");
  write_file(dir / "lab", lab);

  std::string bad = img;
  bad[3] = 0x01;
  write_file(dir / "bad", bad);
  CHECK_THROWS_AS(load_idx(dir / "bad", dir / "lab"), FormatError);

  write_file(dir / "short", img.substr(0, img.size() - 1));
  CHECK_THROWS_AS(load_idx(dir / "short", dir / "lab"), FormatError);
  write_file(dir / "tiny", img.substr(0, 7));
  CHECK_THROWS_AS(load_idx(dir / "tiny", dir / "lab"), FormatError);

  auto fewer = raw;
  fewer.count = 4;
  fewer.labels.pop_back();
  std::ostringstream lab4;
  write_idx_labels(lab4, fewer);
  write_file(dir / "img", img);
  write_file(dir / "lab4", lab4.str());
  CHECK_THROWS_AS(load_idx(dir / "img", dir / "lab4"), FormatError);
  CHECK_THROWS_AS(load_idx(dir / "absent", dir / "lab"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("preprocessing maps 0 to 1/256 and 255 to 1, row-major") {
  IdxImages raw;
  raw.count = 2;
  raw.height = 2;
  raw.width = 3;
  raw.pixels = {0, 255, 7, 1, 2, 3, 0, 0, 0, 0, 0, 0};
  raw.labels = {4, 9};
  const auto ds = preprocess(raw, SplitTag::kTest);
  CHECK(ds.split == SplitTag::kTest);
  REQUIRE(ds.features.rows() == 2);
  REQUIRE(ds.features.cols() == 6);
  CHECK(ds.features(0, 0) == 1.0 / 256.0);
  CHECK(ds.features(0, 1) == 1.0);
  CHECK(ds.features(0, 2) == 8.0 / 256.0);
  CHECK(ds.features(0, 3) == 2.0 / 256.0);  // row 1, column 0
  CHECK(ds.labels == std::vector<TokenId>{4, 9});
  CHECK(ds.features.minCoeff() > 0.0);
  CHECK(ds.features.maxCoeff() <= 1.0);

  IdxImages blank;
  blank.count = 1;
  blank.height = 28;
  blank.width = 28;
  blank.pixels.assign(784, 0);
  blank.labels = {0};
  CHECK(preprocess(blank, SplitTag::kTrain).features.sum() == doctest::Approx(3.0625).epsilon(1e-15));

  raw.labels[1] = 10;
  CHECK_THROWS_AS(preprocess(raw, SplitTag::kTrain), DomainError);
}

TEST_CASE("accuracy counts argmax with ties to the smallest index") {
  Matrix s(3, 3);
  s << 1, 1, 0,
       0, 2, 5,
       3, 0, 3;
  CHECK(accuracy(s, std::vector<TokenId>{0, 2, 2}) == doctest::Approx(2.0 / 3.0));
  CHECK(accuracy(std::vector<TokenId>{1, 2}, std::vector<TokenId>{1, 1}) == 0.5);
  CHECK_THROWS_AS(accuracy(std::vector<TokenId>{1}, std::vector<TokenId>{1, 1}), ShapeError);
}

TEST_CASE("prime scan covers every k and matches direct explicit solutions") {
  Gen gen(3);
  const auto train = preprocess(synthetic_digits(gen, 400), SplitTag::kTrain);
  const auto test = preprocess(synthetic_digits(gen, 150), SplitTag::kTest);
  const auto F = accumulate(to_stream(train));
  const auto ts = to_stream(test);
  const auto scan = prime_scan(F, ts, 1, 25, 1);
  REQUIRE(scan.rows.size() == 25);
  for (int k = 1; k <= 25; ++k) {
    CHECK(scan.rows[static_cast<std::size_t>(k - 1)].k == k);
    CHECK(scan.accuracy_at(k) == doctest::Approx(direct_accuracy(F, ts, k)).epsilon(1e-12));
  }
  // k = 1 is plain log F.
  const Matrix H = ts.features().materialize(0, ts.size());
  const Matrix logF = F.values().array().log().matrix();
  CHECK(scan.accuracy_at(1) == accuracy(Matrix(H * logF), ts.targets()));

  double best = 0.0;
  int arg = 0;
  for (const auto& r : scan.rows)
    if (r.accuracy > best) { best = r.accuracy; arg = r.k; }
  CHECK(scan.argmax_k == arg);
  CHECK_THROWS_AS(scan.accuracy_at(26), DomainError);
  CHECK_THROWS_AS(prime_scan(F, ts, 0, 3), DomainError);
}

TEST_CASE("prime scan is bitwise reproducible across thread counts") {
  Gen gen(4);
  const auto train = preprocess(synthetic_digits(gen, 300), SplitTag::kTrain);
  const auto test = preprocess(synthetic_digits(gen, 100), SplitTag::kTest);
  const auto a = prime_scan(train, test, 1, 40, 1);
  const auto b = prime_scan(train, test, 1, 40, 3);
  const auto c = prime_scan(train, test, 1, 40, 1);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].accuracy == b.rows[i].accuracy);
    CHECK(a.rows[i].accuracy == c.rows[i].accuracy);
  }
  std::ostringstream csv;
  a.write_csv(csv);
  CHECK(csv.str().rfind("k,accuracy\n1,", 0) == 0);
}

TEST_CASE("stream from dataset keeps shape and labels") {
  Gen gen(5);
  const auto ds = preprocess(synthetic_digits(gen, 30), SplitTag::kTrain);
  const auto s = to_stream(ds);
  CHECK(s.size() == 30);
  CHECK(s.dim() == 25);
  CHECK(s.num_classes() == kClasses);
  CHECK(s.features().materialize(0, 30) == ds.features);
  // Estimated priming is the mean pixel mass.
  CHECK(estimate_priming(s) == doctest::Approx(ds.features.rowwise().sum().mean()).epsilon(1e-12));
}

}  // TEST_SUITE
