#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "expsolve/features.hpp"
#include "expsolve/types.hpp"

namespace expsolve {

/// Blank-line separated blocks; lines inside a block are joined with '\n'.
std::vector<std::string> split_documents(std::string_view text);

/// Seeded uniform sample of round(fraction * size) documents, kept in
/// their original order.
std::vector<std::string> sample_documents(const std::vector<std::string>& docs, double fraction,
                                          std::uint64_t seed);

/// Unigram statistics behind the noisy embedding rows.
struct NoiseModel {
  Vector q;  ///< f_n / (f_n + 1)
  Vector p;  ///< (1 - f/M) / |1 - f/M|_1
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;

  Index vocab() const { return q.size(); }
};

/// Counts ids < vocab over every sequence. Throws DomainError when vocab < 2
/// or no token is present.
NoiseModel build_noise_model(std::span<const std::vector<TokenId>> sequences, Index vocab);
NoiseModel build_noise_model(std::span<const TokenId> ids, Index vocab);

/// Rows E_n = q_n e_n + (1 - q_n) p, kept as (q, p) and expanded on demand.
class DenseEmbeddingTable {
 public:
  explicit DenseEmbeddingTable(const NoiseModel& noise);

  Index vocab() const { return q_.size(); }
  double q(TokenId n) const { return q_(n); }
  const Vector& q() const { return q_; }
  const Vector& p() const { return p_; }
  /// Exact 1-norm of each row, q_n + (1 - q_n) |p|_1.
  double row_mass(TokenId n) const { return q_(n) + (1.0 - q_(n)) * p_mass_; }

  void row(TokenId n, std::span<double> out) const;
  RowVector row(TokenId n) const;
  Matrix matrix() const;

 private:
  Vector q_;
  Vector p_;
  double p_mass_;
};

DenseEmbeddingTable densify(const NoiseModel& noise);

enum class WindowMode { kSum, kCat };

struct WindowSpec {
  int radius = 1;
  WindowMode mode = WindowMode::kSum;

  /// Throws DomainError unless radius >= 1.
  void validate() const;
  Index feature_dim(Index vocab) const {
    return mode == WindowMode::kCat ? vocab * radius : vocab;
  }
};

const char* to_string(WindowMode mode);

/// Features of the K previous tokens of every position, never materialized.
///
/// Sum: H_m = sum_k E_{c_k}. Cat: block k of H_m is E_{c_k}, with c_1 the
/// nearest previous token. Positions before a document start read <pad>.
class WindowFeatures final : public FeatureSource {
 public:
  WindowFeatures(std::shared_ptr<const DenseEmbeddingTable> table, WindowSpec spec,
                 std::vector<TokenId> contexts);

  Index rows() const override { return static_cast<Index>(contexts_.size()) / spec_.radius; }
  Index dim() const override { return spec_.feature_dim(table_->vocab()); }
  void row(Index m, std::span<double> out) const override;
  double row_mass(Index m) const override;
  std::unique_ptr<LinearMap> bind(const Matrix& weights) const override;
  std::unique_ptr<AdjointAccumulator> adjoint(Matrix& target) const override;

  const WindowSpec& spec() const { return spec_; }
  const DenseEmbeddingTable& table() const { return *table_; }
  /// Context ids of position m, nearest previous first.
  std::span<const TokenId> context(Index m) const {
    return std::span<const TokenId>(contexts_).subspan(static_cast<std::size_t>(m * spec_.radius),
                                                       static_cast<std::size_t>(spec_.radius));
  }

 private:
  std::shared_ptr<const DenseEmbeddingTable> table_;
  WindowSpec spec_;
  std::vector<TokenId> contexts_;  ///< rows() x radius
};

/// One sample per token of every document: target = the token, features =
/// window over the `radius` previous tokens with padding reset per document.
SampleStream featurize(std::span<const std::vector<TokenId>> documents,
                       std::shared_ptr<const DenseEmbeddingTable> table, const WindowSpec& spec,
                       TokenId pad_id);

}  // namespace expsolve
