#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "expsolve/types.hpp"

namespace expsolve {

/// Row-range product H[begin, end) * W for a fixed weight matrix W.
///
/// Implementations may cache per-W quantities at construction, so a LinearMap
/// must not outlive the weights it was bound to. apply() is const and safe to
/// call concurrently on disjoint output buffers.
class LinearMap {
 public:
  virtual ~LinearMap() = default;
  /// out is resized to (end - begin) x cols(W).
  virtual void apply(Index begin, Index end, Matrix& out) const = 0;
};

/// Accumulates H^T R into a caller-owned D x N target.
///
/// Some feature layouts defer part of the product (shared background
/// vectors) until finish(); the target is only complete after finish().
class AdjointAccumulator {
 public:
  virtual ~AdjointAccumulator() = default;
  /// target += H[begin, end)^T * residual, residual is (end - begin) x N.
  virtual void add(Index begin, Index end, const Matrix& residual) = 0;
  /// target(:, targets[m]) += H[m, :]^T for m in [begin, end).
  virtual void add_onehot(Index begin, Index end, std::span<const TokenId> targets) = 0;
  virtual void finish() = 0;
};

/// Read-only M x D matrix of nonnegative features, possibly stored implicitly.
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;

  virtual Index rows() const = 0;
  virtual Index dim() const = 0;

  /// Materializes row m into out (length dim()).
  virtual void row(Index m, std::span<double> out) const = 0;
  /// 1-norm of row m (entries are nonnegative).
  virtual double row_mass(Index m) const = 0;

  virtual std::unique_ptr<LinearMap> bind(const Matrix& weights) const = 0;
  virtual std::unique_ptr<AdjointAccumulator> adjoint(Matrix& target) const = 0;

  /// Dense copy of rows [begin, end); intended for small slices and tests.
  Matrix materialize(Index begin, Index end) const;
};

/// Features held as an explicit dense matrix (MNIST pixels, softmax outputs).
class DenseFeatures final : public FeatureSource {
 public:
  /// Throws DomainError on negative or non-finite entries.
  explicit DenseFeatures(Matrix values);

  Index rows() const override { return values_.rows(); }
  Index dim() const override { return values_.cols(); }
  void row(Index m, std::span<double> out) const override;
  double row_mass(Index m) const override;
  std::unique_ptr<LinearMap> bind(const Matrix& weights) const override;
  std::unique_ptr<AdjointAccumulator> adjoint(Matrix& target) const override;

  const Matrix& values() const { return values_; }

 private:
  Matrix values_;
};

/// Ordered (feature row, target index) pairs over a shared FeatureSource.
///
/// Every full traversal goes through for_each_batch(), which counts passes so
/// callers can verify single-pass algorithms.
class SampleStream {
 public:
  SampleStream(std::shared_ptr<const FeatureSource> features,
               std::vector<TokenId> targets, Index num_classes);

  static SampleStream from_dense(Matrix features, std::vector<TokenId> targets,
                                 Index num_classes);

  Index size() const { return static_cast<Index>(targets_.size()); }
  Index dim() const { return features_->dim(); }
  Index num_classes() const { return num_classes_; }
  const FeatureSource& features() const { return *features_; }
  std::shared_ptr<const FeatureSource> shared_features() const { return features_; }
  std::span<const TokenId> targets() const { return targets_; }

  template <typename Fn>
  void for_each_batch(Index batch_size, Fn&& fn) const {
    ++passes_;
    const Index n = size();
    const Index step = batch_size > 0 ? batch_size : (n > 0 ? n : 1);
    for (Index begin = 0; begin < n; begin += step) {
      fn(begin, std::min(n, begin + step));
    }
  }

  std::size_t passes() const { return passes_; }
  void reset_pass_count() const { passes_ = 0; }

 private:
  std::shared_ptr<const FeatureSource> features_;
  std::vector<TokenId> targets_;
  Index num_classes_;
  mutable std::size_t passes_ = 0;
};

/// Default row block used when walking a stream in bounded memory.
inline constexpr Index kDefaultBlockRows = 2048;

}  // namespace expsolve
