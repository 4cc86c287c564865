#pragma once

#include <cstddef>
#include <filesystem>
#include <variant>

#include "expsolve/explicit_solver.hpp"
#include "expsolve/trainer.hpp"

namespace expsolve {

/// softmax(softmax(H U1) U2).
struct TwoLayerModel {
  Matrix u1;  ///< D x N
  Matrix u2;  ///< N x N
  double priming1 = 1.0;
  double priming2 = 1.0;

  Index dim() const { return u1.rows(); }
  Index classes() const { return u2.cols(); }

  /// Two COOC1 blocks in `path` plus `path` + ".json" with dims and primings.
  void save(const std::filesystem::path& path) const;
  static TwoLayerModel load(const std::filesystem::path& path);
};

struct WarmStartReport {
  double priming1 = 0.0;           ///< estimated from F(H, Y)
  double priming2_estimate = 0.0;  ///< average 1-norm of layer-2 inputs
  std::size_t passes_layer1 = 0;
  std::size_t passes_layer2 = 0;
};

/// Layer-wise explicit solutions: U1 from F(H, Y) at the estimated priming
/// number, then U2 from F(softmax(H U1), Y) at priming 1. One stream pass per
/// layer. Throws DomainError if the layer-2 inputs are not unit-norm within 1e-9.
TwoLayerModel local_warm_start(const SampleStream& stream, WarmStartReport* report = nullptr,
                               const ExplicitOptions& options = {});

/// Output probabilities. Throws ShapeError on mismatched shapes.
Matrix forward_2layer(const Matrix& features, const TwoLayerModel& model);

/// Loss and exact gradients over every row of the stream.
struct TwoLayerGradient {
  PassStats stats;
  Matrix u1;
  Matrix u2;
};
TwoLayerGradient gradient_2layer(const SampleStream& stream, const TwoLayerModel& model,
                                 Index block_rows = kDefaultBlockRows);

PassStats evaluate_2layer(const SampleStream& stream, const TwoLayerModel& model,
                          Index block_rows = kDefaultBlockRows);

/// Objective over params {U1, U2} for run_training().
class TwoLayerObjective final : public Objective {
 public:
  explicit TwoLayerObjective(Index block_rows = kDefaultBlockRows) : block_rows_(block_rows) {}
  PassStats evaluate(const std::vector<Matrix>& params, const SampleStream& stream) override;
  PassStats loss_and_gradient(const std::vector<Matrix>& params, const SampleStream& stream,
                              Index begin, Index end, std::vector<Matrix>& grads) override;

 private:
  Index block_rows_;
};

struct TwoLayerResult {
  TwoLayerModel model;
  TrainHistory history;
};

using TwoLayerInit = std::variant<ColdInit, TwoLayerModel>;

/// Joint Adagrad training of both layers. config.init is not used; the
/// starting point comes from `init` (a cold start draws U1 with init.seed and
/// U2 with init.seed + 1).
TwoLayerResult train_2layer(const SampleStream& train, const SampleStream* dev,
                            const TwoLayerInit& init, const TrainConfig& config,
                            bool freeze_layer1 = false);

}  // namespace expsolve
