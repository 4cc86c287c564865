#include "expsolve/softmax.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#if defined(__GNUC__) && !defined(__clang__) && defined(__GLIBC__) && defined(__x86_64__)
// Lets the row loop below call glibc's vector exp (libmvec).
extern "C" double exp(double) noexcept __attribute__((simd("notinbranch")));
#endif

namespace expsolve {

namespace {

// x[i] = exp(x[i] - shift) over one contiguous row.
void exp_shifted(double* x, Index n, double shift) {
  for (Index i = 0; i < n; ++i) x[i] = std::exp(x[i] - shift);
}

}  // namespace

void softmax_rows(Matrix& logits) {
  for (Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    exp_shifted(row.data(), row.size(), row.maxCoeff());
    row /= row.sum();
  }
}

Matrix forward(const Matrix& features, const Matrix& decoder) {
  if (features.cols() != decoder.rows()) {
    throw ShapeError("features have " + std::to_string(features.cols()) + " columns, decoder has " +
                     std::to_string(decoder.rows()) + " rows");
  }
  if (!features.allFinite() || !decoder.allFinite()) {
    throw DomainError("forward pass received non-finite input");
  }
  Matrix probs = features * decoder;
  softmax_rows(probs);
  return probs;
}

CrossEntropy cross_entropy(const Matrix& probs, std::span<const TokenId> targets) {
  if (static_cast<Index>(targets.size()) != probs.rows()) {
    throw ShapeError("cross entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(probs.rows()) + " rows");
  }
  CrossEntropy out;
  for (Index m = 0; m < probs.rows(); ++m) {
    const TokenId t = targets[static_cast<std::size_t>(m)];
    if (t < 0 || t >= probs.cols()) throw ShapeError("cross entropy: target out of range");
    double p = probs(m, t);
    if (p <= 0.0) {
      p = 1e-300;
      out.clamped = true;
    }
    out.loss -= std::log(p);
  }
  return out;
}

double perplexity(double loss, Index count) {
  if (count < 1) throw DomainError("perplexity needs at least one prediction");
  return std::exp(loss / static_cast<double>(count));
}

Matrix gradient(const Matrix& features, const Matrix& decoder, std::span<const TokenId> targets) {
  Matrix residual = forward(features, decoder);
  if (static_cast<Index>(targets.size()) != residual.rows()) {
    throw ShapeError("gradient: target count does not match feature rows");
  }
  for (Index m = 0; m < residual.rows(); ++m) residual(m, targets[static_cast<std::size_t>(m)]) -= 1.0;
  Matrix grad = features.transpose() * residual;
  if (!grad.allFinite()) throw DomainError("gradient is non-finite");
  return grad;
}

std::vector<TokenId> argmax_rows(const Matrix& scores) {
  std::vector<TokenId> out(static_cast<std::size_t>(scores.rows()));
  for (Index r = 0; r < scores.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < scores.cols(); ++c) {
      if (scores(r, c) > scores(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<TokenId>(best);
  }
  return out;
}

Adagrad::Adagrad(Index rows, Index cols, double learning_rate, double epsilon)
    : state_(Matrix::Zero(rows, cols)), learning_rate_(learning_rate), epsilon_(epsilon) {
  if (!(learning_rate > 0.0)) throw DomainError("learning rate must be positive");
  if (!(epsilon > 0.0)) throw DomainError("adagrad epsilon must be positive");
}

void Adagrad::step(Matrix& params, const Matrix& grad) {
  if (params.rows() != state_.rows() || params.cols() != state_.cols() ||
      grad.rows() != state_.rows() || grad.cols() != state_.cols()) {
    throw ShapeError("adagrad step: shape mismatch");
  }
  state_.array() += grad.array().square();
  params.array() -= learning_rate_ * grad.array() / (state_.array().sqrt() + epsilon_);
}

PassStats& PassStats::operator+=(const PassStats& other) {
  loss += other.loss;
  correct += other.correct;
  count += other.count;
  clamped = clamped || other.clamped;
  return *this;
}

PassStats score_block(Matrix& logits, std::span<const TokenId> targets, Matrix* residual) {
  PassStats stats;
  stats.count = logits.rows();
  for (Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const TokenId t = targets[static_cast<std::size_t>(r)];
    const double peak = row.maxCoeff();
    const double* first = row.data();
    // First maximum, matching argmax_rows.
    if (std::find(first, first + row.size(), peak) - first == t) ++stats.correct;
    exp_shifted(row.data(), row.size(), peak);
    const double total = row.sum();
    double p = row(t) / total;
    if (p <= 0.0) {
      p = 1e-300;
      stats.clamped = true;
    }
    stats.loss -= std::log(p);
    if (residual) row /= total;
  }
  if (residual) {
    residual->swap(logits);
    for (Index r = 0; r < residual->rows(); ++r) (*residual)(r, targets[static_cast<std::size_t>(r)]) -= 1.0;
  }
  return stats;
}

PassStats evaluate(const SampleStream& stream, const Matrix& decoder, Index block_rows) {
  auto map = stream.features().bind(decoder);
  PassStats total;
  Matrix block;
  stream.for_each_batch(block_rows, [&](Index b, Index e) {
    map->apply(b, e, block);
    total += score_block(block, stream.targets().subspan(static_cast<std::size_t>(b),
                                                         static_cast<std::size_t>(e - b)),
                         nullptr);
  });
  return total;
}

PassStats loss_and_gradient(const SampleStream& stream, const Matrix& decoder, Index begin,
                            Index end, Matrix& grad, Index block_rows) {
  grad.setZero(decoder.rows(), decoder.cols());
  auto map = stream.features().bind(decoder);
  auto adj = stream.features().adjoint(grad);
  PassStats total;
  Matrix block;
  Matrix residual;
  for (Index b = begin; b < end; b += block_rows) {
    const Index e = std::min(end, b + block_rows);
    map->apply(b, e, block);
    total += score_block(block, stream.targets().subspan(static_cast<std::size_t>(b),
                                                         static_cast<std::size_t>(e - b)),
                         &residual);
    adj->add(b, e, residual);
  }
  adj->finish();
  if (!grad.allFinite()) throw DomainError("gradient is non-finite");
  return total;
}

}  // namespace expsolve
