#include "expsolve/explicit_solver.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace expsolve {

double default_floor(const CooccurrenceMatrix& F) {
  const double smallest = F.min_positive();
  if (smallest <= 0.0) throw DomainError("co-occurrence matrix has no positive entry");
  return 1e-10 * smallest;
}

FlooredLog floored_log(const CooccurrenceMatrix& F, const ExplicitOptions& options) {
  const double floor = options.floor ? *options.floor : default_floor(F);
  if (!(floor > 0.0) || !std::isfinite(floor)) throw DomainError("floor must be positive");
  if (options.empty_columns == EmptyColumns::kReject) {
    for (Index i = 0; i < F.classes(); ++i) {
      if (F.col_sums()(i) <= 0.0) {
        throw DomainError("column " + std::to_string(i) +
                          " has zero co-occurrence mass (class never observed)");
      }
    }
  }
  FlooredLog out;
  out.log_values = F.values().cwiseMax(floor);
  out.col_sums = out.log_values.colwise().sum().transpose();
  out.log_values = out.log_values.array().log().matrix();
  return out;
}

Vector translation_weights(const Vector& floored_col_sums, double priming, double delta) {
  if (!(priming > 0.0)) throw DomainError("priming number must be positive");
  const double exponent = (1.0 - priming - delta) / priming;
  return (exponent * floored_col_sums.array().log()).matrix();
}

DecoderMatrix explicit_solution(const CooccurrenceMatrix& F, double priming,
                                const ExplicitOptions& options) {
  if (!(priming > 0.0) || !std::isfinite(priming)) {
    throw DomainError("priming number must be positive");
  }
  FlooredLog floored = floored_log(F, options);
  const Vector w = translation_weights(floored.col_sums, priming, options.delta);
  DecoderMatrix U{std::move(floored.log_values), priming};
  U.values.rowwise() += w.transpose();
  if (!U.finite()) throw DomainError("explicit solution produced non-finite parameters");
  return U;
}

double estimate_priming(const SampleStream& stream) {
  if (stream.size() == 0) throw DomainError("cannot estimate priming from an empty stream");
  double mass = 0.0;
  stream.for_each_batch(kDefaultBlockRows, [&](Index b, Index e) {
    for (Index m = b; m < e; ++m) mass += stream.features().row_mass(m);
  });
  return mass / static_cast<double>(stream.size());
}

double estimate_priming(const CooccurrenceMatrix& F) {
  if (F.num_samples() == 0) throw DomainError("cannot estimate priming from an empty matrix");
  return F.feature_mass() / static_cast<double>(F.num_samples());
}

double ScalingRow::power_mean() const { return std::exp(log_power_mean); }

std::vector<ScalingRow> scaling_diagnostic(const CooccurrenceMatrix& F, const SampleStream& stream,
                                           double priming, const ExplicitOptions& options) {
  if (!(priming > 0.0)) throw DomainError("priming number must be positive");
  if (stream.dim() != F.dim() || stream.num_classes() != F.classes()) {
    throw ShapeError("stream shape does not match the co-occurrence matrix");
  }
  if (stream.size() == 0) throw DomainError("scaling diagnostic needs a non-empty stream");
  ExplicitOptions opts = options;
  opts.empty_columns = EmptyColumns::kFloor;
  const FlooredLog floored = floored_log(F, opts);

  // Column-wise streaming log-sum-exp of A = H log F, since E_G^K = exp(A).
  const Index n = F.classes();
  RowVector running_max = RowVector::Constant(n, -std::numeric_limits<double>::infinity());
  RowVector running_sum = RowVector::Zero(n);
  auto map = stream.features().bind(floored.log_values);
  Matrix block;
  stream.for_each_batch(kDefaultBlockRows, [&](Index b, Index e) {
    map->apply(b, e, block);
    const RowVector next_max = running_max.cwiseMax(block.colwise().maxCoeff());
    running_sum = running_sum.cwiseProduct((running_max - next_max).array().exp().matrix()) +
                  (block.rowwise() - next_max).array().exp().matrix().colwise().sum();
    running_max = next_max;
  });

  const double log_m = std::log(static_cast<double>(stream.size()));
  std::vector<ScalingRow> rows(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const double lse = running_max(i) + std::log(running_sum(i));
    rows[static_cast<std::size_t>(i)] = {i, F.col_sums()(i), (lse - log_m) / priming};
  }
  return rows;
}

}  // namespace expsolve
