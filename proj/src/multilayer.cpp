#include "expsolve/multilayer.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "expsolve/cooccurrence.hpp"

namespace expsolve {

namespace {

void check_model(const TwoLayerModel& model, Index dim) {
  if (model.u1.rows() != dim) {
    throw ShapeError("layer-1 decoder has " + std::to_string(model.u1.rows()) +
                     " rows, features have dim " + std::to_string(dim));
  }
  if (model.u2.rows() != model.u1.cols()) {
    throw ShapeError("layer-2 decoder has " + std::to_string(model.u2.rows()) +
                     " rows, layer 1 emits " + std::to_string(model.u1.cols()));
  }
}

// Hidden activations S and output logits S U2 for rows [begin, end).
void forward_block(const LinearMap& layer1, const Matrix& u2, Index begin, Index end, Matrix& hidden,
                   Matrix& logits) {
  layer1.apply(begin, end, hidden);
  softmax_rows(hidden);
  logits.resize(hidden.rows(), u2.cols());
  logits.noalias() = hidden * u2;
}

PassStats evaluate_params(const SampleStream& stream, const Matrix& u1, const Matrix& u2,
                          Index block_rows) {
  auto map = stream.features().bind(u1);
  PassStats total;
  Matrix hidden;
  Matrix logits;
  stream.for_each_batch(block_rows, [&](Index b, Index e) {
    forward_block(*map, u2, b, e, hidden, logits);
    total += score_block(logits, stream.targets().subspan(static_cast<std::size_t>(b),
                                                          static_cast<std::size_t>(e - b)),
                         nullptr);
  });
  return total;
}

PassStats gradient_params(const SampleStream& stream, const Matrix& u1, const Matrix& u2,
                          Index begin, Index end, Matrix& g1, Matrix& g2, Index block_rows) {
  g1.setZero(u1.rows(), u1.cols());
  g2.setZero(u2.rows(), u2.cols());
  auto map = stream.features().bind(u1);
  auto adj = stream.features().adjoint(g1);
  PassStats total;
  Matrix hidden;
  Matrix logits;
  Matrix residual;
  Matrix delta;
  for (Index b = begin; b < end; b += block_rows) {
    const Index e = std::min(end, b + block_rows);
    forward_block(*map, u2, b, e, hidden, logits);
    total += score_block(logits, stream.targets().subspan(static_cast<std::size_t>(b),
                                                          static_cast<std::size_t>(e - b)),
                         &residual);
    g2.noalias() += hidden.transpose() * residual;
    delta.noalias() = residual * u2.transpose();
    // Softmax Jacobian action: S * (delta - <delta, S>).
    const Vector inner = delta.cwiseProduct(hidden).rowwise().sum();
    delta.colwise() -= inner;
    delta.array() *= hidden.array();
    adj->add(b, e, delta);
  }
  adj->finish();
  if (!g1.allFinite() || !g2.allFinite()) throw DomainError("2-layer gradient is non-finite");
  return total;
}

}  // namespace

TwoLayerModel local_warm_start(const SampleStream& stream, WarmStartReport* report,
                               const ExplicitOptions& options) {
  const std::size_t start = stream.passes();
  const CooccurrenceMatrix f1 = accumulate(stream);
  const std::size_t after1 = stream.passes();
  TwoLayerModel model;
  model.priming1 = estimate_priming(f1);
  model.u1 = explicit_solution(f1, model.priming1, options).values;

  const Index n = model.u1.cols();
  Matrix f2 = Matrix::Zero(n, stream.num_classes());
  double mass = 0.0;
  {
    auto map = stream.features().bind(model.u1);
    Matrix hidden;
    const auto targets = stream.targets();
    stream.for_each_batch(kDefaultBlockRows, [&](Index b, Index e) {
      map->apply(b, e, hidden);
      softmax_rows(hidden);
      for (Index m = b; m < e; ++m) {
        const auto s = hidden.row(m - b);
        f2.col(targets[static_cast<std::size_t>(m)]) += s.transpose();
        mass += s.sum();
      }
    });
  }
  const std::size_t after2 = stream.passes();
  const CooccurrenceMatrix f2_matrix(std::move(f2), stream.size(), mass);
  const double estimate = estimate_priming(f2_matrix);
  if (std::abs(estimate - 1.0) > 1e-9) {
    throw DomainError("layer-2 inputs average 1-norm " + std::to_string(estimate) +
                      ", expected 1");
  }
  model.priming2 = 1.0;
  model.u2 = explicit_solution(f2_matrix, model.priming2, options).values;

  if (report) {
    report->priming1 = model.priming1;
    report->priming2_estimate = estimate;
    report->passes_layer1 = after1 - start;
    report->passes_layer2 = after2 - after1;
  }
  return model;
}

Matrix forward_2layer(const Matrix& features, const TwoLayerModel& model) {
  check_model(model, features.cols());
  return forward(forward(features, model.u1), model.u2);
}

TwoLayerGradient gradient_2layer(const SampleStream& stream, const TwoLayerModel& model,
                                 Index block_rows) {
  check_model(model, stream.dim());
  TwoLayerGradient out;
  out.stats =
      gradient_params(stream, model.u1, model.u2, 0, stream.size(), out.u1, out.u2, block_rows);
  return out;
}

PassStats evaluate_2layer(const SampleStream& stream, const TwoLayerModel& model,
                          Index block_rows) {
  check_model(model, stream.dim());
  return evaluate_params(stream, model.u1, model.u2, block_rows);
}

PassStats TwoLayerObjective::evaluate(const std::vector<Matrix>& params,
                                      const SampleStream& stream) {
  return evaluate_params(stream, params[0], params[1], block_rows_);
}

PassStats TwoLayerObjective::loss_and_gradient(const std::vector<Matrix>& params,
                                               const SampleStream& stream, Index begin, Index end,
                                               std::vector<Matrix>& grads) {
  return gradient_params(stream, params[0], params[1], begin, end, grads[0], grads[1],
                         block_rows_);
}

TwoLayerResult train_2layer(const SampleStream& train, const SampleStream* dev,
                            const TwoLayerInit& init, const TrainConfig& config,
                            bool freeze_layer1) {
  TwoLayerModel start;
  if (const auto* cold = std::get_if<ColdInit>(&init)) {
    const Index n = train.num_classes();
    start.u1 = cold_matrix(train.dim(), n, *cold);
    start.u2 = cold_matrix(n, n, ColdInit{cold->seed + 1, cold->scale});
  } else {
    start = std::get<TwoLayerModel>(init);
  }
  check_model(start, train.dim());
  if (start.classes() != train.num_classes()) {
    throw ShapeError("layer-2 decoder does not emit the stream's classes");
  }
  std::vector<Matrix> params{std::move(start.u1), std::move(start.u2)};
  TwoLayerObjective objective(config.block_rows);
  LoopOptions loop;
  loop.frozen = {freeze_layer1, false};
  TrainHistory history = run_training(objective, params, train, dev, config, loop);
  start.u1 = std::move(params[0]);
  start.u2 = std::move(params[1]);
  return {std::move(start), std::move(history)};
}

void TwoLayerModel::save(const std::filesystem::path& path) const {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    write_matrix_block(out, u1, 0);
    write_matrix_block(out, u2, 0);
  }
  nlohmann::json meta = {{"dim", u1.rows()},           {"hidden", u1.cols()},
                         {"classes", u2.cols()},       {"priming1", priming1},
                         {"priming2", priming2},       {"blocks", 2}};
  std::ofstream side(path.string() + ".json");
  if (!side) throw FormatError("cannot write " + path.string() + ".json");
  side << meta.dump(2) << '\n';
}

TwoLayerModel TwoLayerModel::load(const std::filesystem::path& path) {
  std::ifstream side(path.string() + ".json");
  if (!side) throw FormatError("cannot open " + path.string() + ".json");
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ".json: " + e.what());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  TwoLayerModel model;
  model.u1 = read_matrix_block(in);
  model.u2 = read_matrix_block(in);
  model.priming1 = meta.at("priming1").get<double>();
  model.priming2 = meta.at("priming2").get<double>();
  if (model.u1.rows() != meta.at("dim").get<Index>() ||
      model.u1.cols() != meta.at("hidden").get<Index>() ||
      model.u2.cols() != meta.at("classes").get<Index>() || model.u2.rows() != model.u1.cols()) {
    throw FormatError(path.string() + ": blocks disagree with the sidecar dims");
  }
  return model;
}

}  // namespace expsolve
