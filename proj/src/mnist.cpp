#include "expsolve/mnist.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <thread>

#include "expsolve/explicit_solver.hpp"
#include "expsolve/softmax.hpp"

namespace expsolve::mnist {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw FormatError("cannot open " + path.string());
  std::array<unsigned char, 2> head{};
  probe.read(reinterpret_cast<char*>(head.data()), 2);
  const bool gz = probe.gcount() == 2 && head[0] == 0x1f && head[1] == 0x8b;
  probe.close();

  std::vector<std::uint8_t> bytes;
  if (!gz) {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return bytes;
  }
  gzFile file = gzopen(path.string().c_str(), "rb");
  if (file == nullptr) throw FormatError("cannot open gzip stream " + path.string());
  std::array<std::uint8_t, 1 << 16> chunk{};
  for (;;) {
    const int got = gzread(file, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (got < 0) {
      gzclose(file);
      throw FormatError("corrupt gzip data in " + path.string());
    }
    if (got == 0) break;
    bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + got);
  }
  gzclose(file);
  return bytes;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::string& what) {
  if (b.size() < at + 4) throw FormatError(what + ": header truncated");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                 static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace

IdxImages load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_maybe_gzip(images);
  const auto lab = read_maybe_gzip(labels);
  const std::string img_name = images.filename().string();
  const std::string lab_name = labels.filename().string();

  if (const auto magic = be32(img, 0, img_name); magic != kImageMagic) {
    throw FormatError(img_name + ": bad magic (expected 0x00000803)");
  }
  if (const auto magic = be32(lab, 0, lab_name); magic != kLabelMagic) {
    throw FormatError(lab_name + ": bad magic (expected 0x00000801)");
  }
  IdxImages out;
  out.count = be32(img, 4, img_name);
  out.height = be32(img, 8, img_name);
  out.width = be32(img, 12, img_name);
  const Index label_count = be32(lab, 4, lab_name);
  if (label_count != out.count) {
    throw FormatError("image count " + std::to_string(out.count) + " != label count " +
                      std::to_string(label_count));
  }
  const std::size_t pixel_bytes = static_cast<std::size_t>(out.count * out.height * out.width);
  if (img.size() < 16 + pixel_bytes) throw FormatError(img_name + ": pixel payload truncated");
  if (lab.size() < 8 + static_cast<std::size_t>(label_count)) {
    throw FormatError(lab_name + ": label payload truncated");
  }
  out.pixels.assign(img.begin() + 16, img.begin() + 16 + static_cast<std::ptrdiff_t>(pixel_bytes));
  out.labels.assign(lab.begin() + 8, lab.begin() + 8 + label_count);
  return out;
}

void write_idx_images(std::ostream& out, const IdxImages& data) {
  put_be32(out, kImageMagic);
  put_be32(out, static_cast<std::uint32_t>(data.count));
  put_be32(out, static_cast<std::uint32_t>(data.height));
  put_be32(out, static_cast<std::uint32_t>(data.width));
  out.write(reinterpret_cast<const char*>(data.pixels.data()),
            static_cast<std::streamsize>(data.pixels.size()));
}

void write_idx_labels(std::ostream& out, const IdxImages& data) {
  put_be32(out, kLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(data.labels.size()));
  out.write(reinterpret_cast<const char*>(data.labels.data()),
            static_cast<std::streamsize>(data.labels.size()));
}

DigitDataset preprocess(const IdxImages& raw, SplitTag split) {
  const Index dim = raw.height * raw.width;
  if (static_cast<Index>(raw.pixels.size()) != raw.count * dim ||
      static_cast<Index>(raw.labels.size()) != raw.count) {
    throw ShapeError("raw image buffers do not match the declared shape");
  }
  DigitDataset out;
  out.split = split;
  out.features.resize(raw.count, dim);
  out.labels.resize(static_cast<std::size_t>(raw.count));
  for (Index m = 0; m < raw.count; ++m) {
    for (Index d = 0; d < dim; ++d) {
      const auto pixel = raw.pixels[static_cast<std::size_t>(m * dim + d)];
      out.features(m, d) = (static_cast<double>(pixel) + 1.0) / 256.0;
    }
    const auto label = raw.labels[static_cast<std::size_t>(m)];
    if (label >= kClasses) {
      throw DomainError("label " + std::to_string(label) + " of image " + std::to_string(m) +
                        " is not a digit");
    }
    out.labels[static_cast<std::size_t>(m)] = label;
  }
  return out;
}

SampleStream to_stream(const DigitDataset& data) {
  return SampleStream::from_dense(data.features, data.labels, kClasses);
}

double accuracy(std::span<const TokenId> predictions, std::span<const TokenId> labels) {
  if (predictions.size() != labels.size()) throw ShapeError("accuracy: length mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t m = 0; m < labels.size(); ++m) hits += predictions[m] == labels[m] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const Matrix& scores, std::span<const TokenId> labels) {
  const auto predicted = argmax_rows(scores);
  return accuracy(std::span<const TokenId>(predicted), labels);
}

double PrimeScanResult::accuracy_at(int k) const {
  for (const auto& r : rows) {
    if (r.k == k) return r.accuracy;
  }
  throw DomainError("k = " + std::to_string(k) + " is not in the scan");
}

void PrimeScanResult::write_csv(std::ostream& out) const {
  out << "k,accuracy\n" << std::setprecision(17);
  for (const auto& r : rows) out << r.k << ',' << r.accuracy << '\n';
}

PrimeScanResult prime_scan(const CooccurrenceMatrix& F, const SampleStream& test, int k_min,
                           int k_max, int threads) {
  if (k_min < 1 || k_max < k_min) throw DomainError("prime scan needs 1 <= k_min <= k_max");
  if (test.dim() != F.dim() || test.num_classes() != F.classes()) {
    throw ShapeError("test stream shape does not match the co-occurrence matrix");
  }
  const FlooredLog floored = floored_log(F, ExplicitOptions{});
  const RowVector log_counts = floored.col_sums.array().log().matrix().transpose();

  const Index m_rows = test.size();
  Matrix base(m_rows, F.classes());
  Vector mass(m_rows);
  {
    auto map = test.features().bind(floored.log_values);
    Matrix block;
    test.for_each_batch(kDefaultBlockRows, [&](Index b, Index e) {
      map->apply(b, e, block);
      base.middleRows(b, e - b) = block;
      for (Index m = b; m < e; ++m) mass(m) = test.features().row_mass(m);
    });
  }
  const auto labels = test.targets();

  PrimeScanResult result;
  result.rows.resize(static_cast<std::size_t>(k_max - k_min + 1));
  auto score_k = [&](int k) {
    const double weight = (1.0 - static_cast<double>(k)) / static_cast<double>(k);
    Index hits = 0;
    RowVector logits(F.classes());
    for (Index m = 0; m < m_rows; ++m) {
      logits = base.row(m) + (weight * mass(m)) * log_counts;
      Index best = 0;
      logits.maxCoeff(&best);
      hits += best == labels[static_cast<std::size_t>(m)] ? 1 : 0;
    }
    return m_rows > 0 ? static_cast<double>(hits) / static_cast<double>(m_rows) : 0.0;
  };

  const int count = k_max - k_min + 1;
  threads = std::clamp(threads, 1, count);
  std::vector<std::thread> workers;
  for (int t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      for (int j = t; j < count; j += threads) {
        result.rows[static_cast<std::size_t>(j)] = {k_min + j, score_k(k_min + j)};
      }
    });
  }
  for (auto& w : workers) w.join();

  result.argmax_k = result.rows.front().k;
  double best = result.rows.front().accuracy;
  for (const auto& r : result.rows) {
    if (r.accuracy > best) {
      best = r.accuracy;
      result.argmax_k = r.k;
    }
  }
  return result;
}

PrimeScanResult prime_scan(const DigitDataset& train, const DigitDataset& test, int k_min,
                           int k_max, int threads) {
  const SampleStream train_stream = to_stream(train);
  const CooccurrenceMatrix F = accumulate(train_stream);
  return prime_scan(F, to_stream(test), k_min, k_max, threads);
}

}  // namespace expsolve::mnist
