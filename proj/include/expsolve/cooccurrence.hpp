#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "expsolve/features.hpp"
#include "expsolve/types.hpp"

namespace expsolve {

/// Generalized co-occurrences F(H, Y) = H^T Y with cached column sums.
///
/// Invariants: entries >= 0, col_sums_i = sum_d F(d, i), and
/// sum_i col_sums_i = feature_mass (each target row of Y has unit 1-norm).
class CooccurrenceMatrix {
 public:
  CooccurrenceMatrix() = default;
  CooccurrenceMatrix(Index dim, Index classes);
  /// Adopts precomputed values; recomputes column sums and takes
  /// feature_mass from the total.
  CooccurrenceMatrix(Matrix values, std::int64_t num_samples);
  CooccurrenceMatrix(Matrix values, std::int64_t num_samples, double feature_mass);

  Index dim() const { return values_.rows(); }
  Index classes() const { return values_.cols(); }
  const Matrix& values() const { return values_; }
  const Vector& col_sums() const { return col_sums_; }
  std::int64_t num_samples() const { return num_samples_; }
  double feature_mass() const { return feature_mass_; }

  /// Entrywise sum; shapes must agree.
  CooccurrenceMatrix& operator+=(const CooccurrenceMatrix& other);

  /// Throws DomainError if any stated invariant is violated.
  void check_invariants(double rel_tol = 1e-9) const;

  /// Smallest strictly positive entry, or 0 if there is none.
  double min_positive() const;

  // COOC1 binary: "COOC1", D, N, M as uint64 LE, then D*N row-major float64.
  void save(const std::filesystem::path& path) const;
  static CooccurrenceMatrix load(const std::filesystem::path& path);
  void write_csv(std::ostream& out) const;

 private:
  friend class CooccurrenceAccumulator;
  void refresh_sums();

  Matrix values_;
  Vector col_sums_;
  std::int64_t num_samples_ = 0;
  double feature_mass_ = 0.0;
};

/// Incremental builder for item-by-item accumulation with validation.
class CooccurrenceAccumulator {
 public:
  CooccurrenceAccumulator(Index dim, Index classes);

  /// Rejects items whose length differs from dim, whose target is out of
  /// range, or that contain negative or non-finite entries. Errors name the
  /// zero-based item index.
  void add(std::span<const double> features, TokenId target);

  std::int64_t items() const { return result_.num_samples_; }
  CooccurrenceMatrix finish() &&;

 private:
  CooccurrenceMatrix result_;
};

struct Sample {
  std::vector<double> features;
  TokenId target = 0;
};

/// F = sum_m H_m (x) e(i_m) over explicit items.
CooccurrenceMatrix accumulate(std::span<const Sample> items, Index dim, Index classes);

/// F over a stream in one pass. With shards > 1 the stream is cut into
/// contiguous slices accumulated on separate threads and merged in slice
/// order, so the result does not depend on thread scheduling.
CooccurrenceMatrix accumulate(const SampleStream& stream, int shards = 1);

/// Writes one COOC1 block (header + row-major doubles) for any matrix; the
/// count field is free-form (samples for F, 0 for decoders).
void write_matrix_block(std::ostream& out, const Matrix& values, std::uint64_t count);
Matrix read_matrix_block(std::istream& in, std::uint64_t* count = nullptr);

}  // namespace expsolve
