#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <variant>
#include <vector>

#include "expsolve/explicit_solver.hpp"
#include "expsolve/softmax.hpp"

namespace expsolve {

enum class Split { kTrain, kDev };
enum class Metric { kPerplexity, kAccuracy };

/// Entries i.i.d. uniform on [-scale, scale] from a seeded engine.
struct ColdInit {
  std::uint64_t seed = 0;
  double scale = 0.01;
};

struct WarmInit {
  DecoderMatrix decoder;
};

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 32;
  double adagrad_epsilon = 1e-10;
  std::variant<ColdInit, WarmInit> init = ColdInit{};
  /// Stop the first epoch the monitored loss rises; unset disables.
  std::optional<Split> early_stop;
  /// Rows per Adagrad step; 0 means one full-batch step per epoch.
  Index batch_size = 0;
  /// Rows per block when streaming forward/gradient passes.
  Index block_rows = kDefaultBlockRows;
  Metric metric = Metric::kPerplexity;

  /// Throws DomainError on an invalid combination.
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  ///< mean cross-entropy per prediction (nats)
  double train_metric = 0.0;
  std::optional<double> dev_loss;
  std::optional<double> dev_metric;
  bool clamped = false;
};

/// Per-epoch evaluations; records[0] is taken before any update.
struct TrainHistory {
  Metric metric = Metric::kPerplexity;
  std::vector<EpochRecord> records;
  bool stopped_early = false;
  int epochs_run = 0;      ///< update epochs actually applied
  int returned_epoch = 0;  ///< record index whose parameters are returned

  /// epoch,train_loss,train_ppl_or_acc,dev_loss,dev_ppl_or_acc; empty dev
  /// cells when no dev split was given.
  void write_csv(std::ostream& out) const;
};

struct TrainResult {
  DecoderMatrix decoder;
  TrainHistory history;
};

/// Fills a D x N matrix with the cold-start distribution.
Matrix cold_matrix(Index rows, Index cols, const ColdInit& init);

/// Parameter blocks plus a loss with gradient; lets one loop drive 1- and
/// 2-layer models.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual PassStats evaluate(const std::vector<Matrix>& params, const SampleStream& stream) = 0;
  /// Overwrites grads (same shapes as params) with the gradient over [begin, end).
  virtual PassStats loss_and_gradient(const std::vector<Matrix>& params, const SampleStream& stream,
                                      Index begin, Index end, std::vector<Matrix>& grads) = 0;
};

struct LoopOptions {
  /// Parameter blocks that receive no updates.
  std::vector<bool> frozen;
};

/// Shared epoch loop: epoch-0 evaluation, full- or mini-batch Adagrad,
/// optional early stopping with rollback to the previous epoch.
TrainHistory run_training(Objective& objective, std::vector<Matrix>& params,
                          const SampleStream& train, const SampleStream* dev,
                          const TrainConfig& config, const LoopOptions& options = {});

/// Single-layer softmax regression trained with Adagrad.
TrainResult train(const SampleStream& train, const SampleStream* dev, const TrainConfig& config);

}  // namespace expsolve
