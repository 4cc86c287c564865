#pragma once

#include <optional>
#include <vector>

#include "expsolve/cooccurrence.hpp"
#include "expsolve/features.hpp"
#include "expsolve/types.hpp"

namespace expsolve {

/// D x N softmax decoder in log space, plus the priming number it was built with.
struct DecoderMatrix {
  Matrix values;
  double priming = 1.0;

  Index dim() const { return values.rows(); }
  Index classes() const { return values.cols(); }
  bool finite() const { return values.allFinite(); }
};

/// What to do with a column whose raw co-occurrence sum is zero.
enum class EmptyColumns {
  kReject,  ///< throw DomainError naming the column
  kFloor,   ///< treat like any other column after flooring (predicts ~0 mass)
};

struct ExplicitOptions {
  /// Replaces entries below it before taking logs. Unset means
  /// 1e-10 * (smallest positive entry of F).
  std::optional<double> floor;
  /// Exponent correction: weights f_i^((1 - K - delta) / K). 0 gives the
  /// proven case.
  double delta = 0.0;
  EmptyColumns empty_columns = EmptyColumns::kReject;
};

/// Default floor for F: 1e-10 times its smallest positive entry.
double default_floor(const CooccurrenceMatrix& F);

/// U(j, i) = log max(F(j, i), floor) - ((K - 1 + delta) / K) * log f_i, with
/// f_i the column sum of the floored matrix.
DecoderMatrix explicit_solution(const CooccurrenceMatrix& F, double priming,
                                const ExplicitOptions& options = {});

/// Translation weights log w_i = ((1 - K - delta) / K) * log f_i for the
/// floored column sums; U = log F_floored + w (broadcast over rows).
Vector translation_weights(const Vector& floored_col_sums, double priming, double delta = 0.0);

/// log max(F, floor) and its column sums; shared by the solver and prime scans.
struct FlooredLog {
  Matrix log_values;
  Vector col_sums;
};
FlooredLog floored_log(const CooccurrenceMatrix& F, const ExplicitOptions& options);

/// Average feature 1-norm over the stream: sum_m sum_d H(m, d) / M.
double estimate_priming(const SampleStream& stream);
/// Same quantity read off an accumulated F (feature_mass / num_samples).
double estimate_priming(const CooccurrenceMatrix& F);

struct ScalingRow {
  Index index = 0;
  double count = 0.0;           ///< f_i, raw column sum of F
  double log_power_mean = 0.0;  ///< log of the K-power mean over m of E_G[F(., i) | H_m]
  double power_mean() const;
};

/// For each output i: E_G[F(., i) | H_m] = exp(sum_d H(m, d) log F(d, i) / K)
/// per sample, and its K-power mean (sum_m E_G^K / M)^(1/K) over all samples.
/// F is floored as in explicit_solution before the logs.
std::vector<ScalingRow> scaling_diagnostic(const CooccurrenceMatrix& F, const SampleStream& stream,
                                           double priming, const ExplicitOptions& options = {});

}  // namespace expsolve
