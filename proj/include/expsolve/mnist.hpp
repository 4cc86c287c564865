#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "expsolve/cooccurrence.hpp"
#include "expsolve/features.hpp"
#include "expsolve/types.hpp"

namespace expsolve::mnist {

inline constexpr Index kClasses = 10;

/// Raw IDX contents: unsigned-byte images plus labels.
struct IdxImages {
  Index count = 0;
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> pixels;  ///< count * height * width, row-major per image
  std::vector<std::uint8_t> labels;
};

/// Reads an IDX3 image file (magic 0x00000803) and IDX1 label file
/// (0x00000801), raw or gzip-compressed. Throws FormatError on bad magic,
/// truncation or count mismatch.
IdxImages load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Serializes IDX files; used to build fixtures.
void write_idx_images(std::ostream& out, const IdxImages& data);
void write_idx_labels(std::ostream& out, const IdxImages& data);

enum class SplitTag { kTrain, kTest };

struct DigitDataset {
  Matrix features;  ///< M x (height*width), entries in (0, 1]
  std::vector<TokenId> labels;
  SplitTag split = SplitTag::kTrain;
};

/// features = flatten((pixel + 1) / 256), row r / column c -> index width*r + c.
DigitDataset preprocess(const IdxImages& raw, SplitTag split);

SampleStream to_stream(const DigitDataset& data);

/// Fraction of rows whose argmax (ties to the smallest index) equals the label.
double accuracy(const Matrix& scores, std::span<const TokenId> labels);
double accuracy(std::span<const TokenId> predictions, std::span<const TokenId> labels);

struct PrimeScanRow {
  int k = 0;
  double accuracy = 0.0;
};

struct PrimeScanResult {
  std::vector<PrimeScanRow> rows;
  int argmax_k = 0;  ///< first k reaching the best accuracy

  double accuracy_at(int k) const;
  void write_csv(std::ostream& out) const;  ///< header "k,accuracy"
};

/// Test accuracy of explicit_solution(F, k) for every integer k in [k_min, k_max].
///
/// F is accumulated once; since the solution only translates columns, test
/// logits for each k are H log F - ((k-1)/k) |H_m|_1 log f, so each scan point
/// costs O(M N) after one product. Scan points are split across `threads`.
PrimeScanResult prime_scan(const CooccurrenceMatrix& F, const SampleStream& test, int k_min,
                           int k_max, int threads = 1);

PrimeScanResult prime_scan(const DigitDataset& train, const DigitDataset& test, int k_min,
                           int k_max, int threads = 1);

}  // namespace expsolve::mnist
