#include "expsolve/trainer.hpp"

#include <iomanip>
#include <ostream>
#include <random>

namespace expsolve {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw DomainError("learning_rate must be positive");
  if (epochs < 0) throw DomainError("epochs must be >= 0");
  if (!(adagrad_epsilon > 0.0)) throw DomainError("adagrad_epsilon must be positive");
  if (batch_size < 0) throw DomainError("batch_size must be >= 0");
  if (block_rows <= 0) throw DomainError("block_rows must be positive");
  if (const auto* cold = std::get_if<ColdInit>(&init); cold && !(cold->scale >= 0.0)) {
    throw DomainError("cold-start scale must be >= 0");
  }
  if (const auto* warm = std::get_if<WarmInit>(&init); warm && !warm->decoder.finite()) {
    throw DomainError("warm-start decoder has non-finite entries");
  }
}

void TrainHistory::write_csv(std::ostream& out) const {
  out << "epoch,train_loss,train_ppl_or_acc,dev_loss,dev_ppl_or_acc\n" << std::setprecision(17);
  for (const auto& r : records) {
    out << r.epoch << ',' << r.train_loss << ',' << r.train_metric << ',';
    if (r.dev_loss) out << *r.dev_loss;
    out << ',';
    if (r.dev_metric) out << *r.dev_metric;
    out << '\n';
  }
}

Matrix cold_matrix(Index rows, Index cols, const ColdInit& init) {
  std::mt19937_64 engine(init.seed);
  std::uniform_real_distribution<double> dist(-init.scale, init.scale);
  Matrix out(rows, cols);
  for (Index k = 0; k < out.size(); ++k) out.data()[k] = init.scale > 0.0 ? dist(engine) : 0.0;
  return out;
}

namespace {

double metric_of(const PassStats& stats, Metric metric) {
  return metric == Metric::kAccuracy ? stats.accuracy() : stats.perplexity();
}

class SingleLayer final : public Objective {
 public:
  explicit SingleLayer(Index block_rows) : block_rows_(block_rows) {}

  PassStats evaluate(const std::vector<Matrix>& params, const SampleStream& stream) override {
    return expsolve::evaluate(stream, params[0], block_rows_);
  }

  PassStats loss_and_gradient(const std::vector<Matrix>& params, const SampleStream& stream,
                              Index begin, Index end, std::vector<Matrix>& grads) override {
    return expsolve::loss_and_gradient(stream, params[0], begin, end, grads[0], block_rows_);
  }

 private:
  Index block_rows_;
};

}  // namespace

TrainHistory run_training(Objective& objective, std::vector<Matrix>& params,
                          const SampleStream& train, const SampleStream* dev,
                          const TrainConfig& config, const LoopOptions& options) {
  config.validate();
  if (train.size() == 0) throw DomainError("training stream is empty");
  const bool early = config.early_stop.has_value();
  if (early && *config.early_stop == Split::kDev && dev == nullptr) {
    throw DomainError("early stopping on the dev split needs a dev stream");
  }
  auto frozen = [&](std::size_t k) { return k < options.frozen.size() && options.frozen[k]; };

  std::vector<Adagrad> optimizers;
  std::vector<Matrix> grads(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    optimizers.emplace_back(params[k].rows(), params[k].cols(), config.learning_rate,
                            config.adagrad_epsilon);
    grads[k].setZero(params[k].rows(), params[k].cols());
  }

  const bool full_batch = config.batch_size == 0 || config.batch_size >= train.size();
  TrainHistory history;
  history.metric = config.metric;
  std::vector<Matrix> previous;

  for (int epoch = 0;; ++epoch) {
    const bool will_update = epoch < config.epochs;
    PassStats train_stats;
    if (full_batch && will_update) {
      train_stats = objective.loss_and_gradient(params, train, 0, train.size(), grads);
    } else {
      train_stats = objective.evaluate(params, train);
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = train_stats.mean_loss();
    record.train_metric = metric_of(train_stats, config.metric);
    record.clamped = train_stats.clamped;
    if (dev != nullptr) {
      const PassStats dev_stats = objective.evaluate(params, *dev);
      record.dev_loss = dev_stats.mean_loss();
      record.dev_metric = metric_of(dev_stats, config.metric);
      record.clamped = record.clamped || dev_stats.clamped;
    }
    history.records.push_back(record);
    history.returned_epoch = epoch;

    if (early && epoch > 0) {
      const auto& prev = history.records[static_cast<std::size_t>(epoch - 1)];
      const bool rose = *config.early_stop == Split::kTrain
                            ? record.train_loss > prev.train_loss
                            : *record.dev_loss > *prev.dev_loss;
      if (rose) {
        history.stopped_early = true;
        history.returned_epoch = epoch - 1;
        params = std::move(previous);
        break;
      }
    }
    if (!will_update) break;
    if (early) previous = params;

    if (full_batch) {
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (!frozen(k)) optimizers[k].step(params[k], grads[k]);
      }
    } else {
      for (Index b = 0; b < train.size(); b += config.batch_size) {
        const Index e = std::min(train.size(), b + config.batch_size);
        objective.loss_and_gradient(params, train, b, e, grads);
        for (std::size_t k = 0; k < params.size(); ++k) {
          if (!frozen(k)) optimizers[k].step(params[k], grads[k]);
        }
      }
    }
    history.epochs_run = epoch + 1;
  }
  return history;
}

TrainResult train(const SampleStream& train_stream, const SampleStream* dev,
                  const TrainConfig& config) {
  config.validate();
  std::vector<Matrix> params(1);
  double priming = 1.0;
  if (const auto* warm = std::get_if<WarmInit>(&config.init)) {
    if (warm->decoder.dim() != train_stream.dim() ||
        warm->decoder.classes() != train_stream.num_classes()) {
      throw ShapeError("warm-start decoder shape does not match the training stream");
    }
    params[0] = warm->decoder.values;
    priming = warm->decoder.priming;
  } else {
    params[0] = cold_matrix(train_stream.dim(), train_stream.num_classes(),
                            std::get<ColdInit>(config.init));
  }
  SingleLayer objective(config.block_rows);
  TrainHistory history = run_training(objective, params, train_stream, dev, config);
  return {DecoderMatrix{std::move(params[0]), priming}, std::move(history)};
}

}  // namespace expsolve
