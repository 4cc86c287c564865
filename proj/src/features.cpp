#include "expsolve/features.hpp"

#include <cmath>
#include <string>

namespace expsolve {

Matrix FeatureSource::materialize(Index begin, Index end) const {
  Matrix out(end - begin, dim());
  for (Index m = begin; m < end; ++m) {
    row(m, std::span<double>(out.row(m - begin).data(), static_cast<std::size_t>(dim())));
  }
  return out;
}

namespace {

class DenseLinearMap final : public LinearMap {
 public:
  DenseLinearMap(const Matrix& features, const Matrix& weights)
      : features_(features), weights_(weights) {}

  void apply(Index begin, Index end, Matrix& out) const override {
    out.resize(end - begin, weights_.cols());
    out.noalias() = features_.middleRows(begin, end - begin) * weights_;
  }

 private:
  const Matrix& features_;
  const Matrix& weights_;
};

class DenseAdjoint final : public AdjointAccumulator {
 public:
  DenseAdjoint(const Matrix& features, Matrix& target) : features_(features), target_(target) {}

  void add(Index begin, Index end, const Matrix& residual) override {
    target_.noalias() += features_.middleRows(begin, end - begin).transpose() * residual;
  }

  void add_onehot(Index begin, Index end, std::span<const TokenId> targets) override {
    for (Index m = begin; m < end; ++m) {
      target_.col(targets[static_cast<std::size_t>(m - begin)]) += features_.row(m).transpose();
    }
  }

  void finish() override {}

 private:
  const Matrix& features_;
  Matrix& target_;
};

}  // namespace

DenseFeatures::DenseFeatures(Matrix values) : values_(std::move(values)) {
  for (Index m = 0; m < values_.rows(); ++m) {
    for (Index d = 0; d < values_.cols(); ++d) {
      const double v = values_(m, d);
      if (!std::isfinite(v) || v < 0.0) {
        throw DomainError("feature row " + std::to_string(m) + ", column " + std::to_string(d) +
                          " is negative or non-finite");
      }
    }
  }
}

void DenseFeatures::row(Index m, std::span<double> out) const {
  Eigen::Map<RowVector>(out.data(), values_.cols()) = values_.row(m);
}

double DenseFeatures::row_mass(Index m) const { return values_.row(m).sum(); }

std::unique_ptr<LinearMap> DenseFeatures::bind(const Matrix& weights) const {
  if (weights.rows() != values_.cols()) {
    throw ShapeError("weights have " + std::to_string(weights.rows()) + " rows, features have dim " +
                     std::to_string(values_.cols()));
  }
  return std::make_unique<DenseLinearMap>(values_, weights);
}

std::unique_ptr<AdjointAccumulator> DenseFeatures::adjoint(Matrix& target) const {
  if (target.rows() != values_.cols()) {
    throw ShapeError("adjoint target has " + std::to_string(target.rows()) +
                     " rows, features have dim " + std::to_string(values_.cols()));
  }
  return std::make_unique<DenseAdjoint>(values_, target);
}

SampleStream::SampleStream(std::shared_ptr<const FeatureSource> features,
                           std::vector<TokenId> targets, Index num_classes)
    : features_(std::move(features)), targets_(std::move(targets)), num_classes_(num_classes) {
  if (!features_) throw ShapeError("sample stream needs a feature source");
  if (num_classes_ <= 0) throw ShapeError("sample stream needs at least one class");
  if (features_->rows() != size()) {
    throw ShapeError("feature rows (" + std::to_string(features_->rows()) +
                     ") and targets (" + std::to_string(size()) + ") differ");
  }
  for (std::size_t m = 0; m < targets_.size(); ++m) {
    if (targets_[m] < 0 || targets_[m] >= num_classes_) {
      throw ShapeError("target " + std::to_string(targets_[m]) + " of item " + std::to_string(m) +
                       " outside [0, " + std::to_string(num_classes_) + ")");
    }
  }
}

SampleStream SampleStream::from_dense(Matrix features, std::vector<TokenId> targets,
                                      Index num_classes) {
  return SampleStream(std::make_shared<DenseFeatures>(std::move(features)), std::move(targets),
                      num_classes);
}

}  // namespace expsolve
