#pragma once

#include <span>

#include "expsolve/explicit_solver.hpp"
#include "expsolve/features.hpp"
#include "expsolve/types.hpp"

namespace expsolve {

/// In-place row softmax with max subtraction.
void softmax_rows(Matrix& logits);

/// Probabilities phi(H U), one row per sample. Throws DomainError on
/// non-finite input and ShapeError on mismatched shapes.
Matrix forward(const Matrix& features, const Matrix& decoder);

struct CrossEntropy {
  double loss = 0.0;    ///< -sum_m log p(m, i_m)
  bool clamped = false; ///< some target probability was 0 and was clamped to 1e-300
};

CrossEntropy cross_entropy(const Matrix& probs, std::span<const TokenId> targets);

/// exp(L / M).
double perplexity(double loss, Index count);

/// H^T (P - Y) for P = phi(H U) and one-hot Y.
Matrix gradient(const Matrix& features, const Matrix& decoder, std::span<const TokenId> targets);

/// Index of the largest entry per row, ties to the smallest index.
std::vector<TokenId> argmax_rows(const Matrix& scores);

/// Elementwise Adagrad: state += g^2; U -= lr * g / (sqrt(state) + eps).
class Adagrad {
 public:
  Adagrad(Index rows, Index cols, double learning_rate, double epsilon);

  void step(Matrix& params, const Matrix& grad);
  const Matrix& state() const { return state_; }
  double learning_rate() const { return learning_rate_; }

 private:
  Matrix state_;
  double learning_rate_;
  double epsilon_;
};

/// Loss, hit count and optional gradient of one pass over a row range.
struct PassStats {
  double loss = 0.0;
  Index correct = 0;
  Index count = 0;
  bool clamped = false;

  PassStats& operator+=(const PassStats& other);
  double mean_loss() const { return count > 0 ? loss / static_cast<double>(count) : 0.0; }
  double accuracy() const {
    return count > 0 ? static_cast<double>(correct) / static_cast<double>(count) : 0.0;
  }
  double perplexity() const { return expsolve::perplexity(loss, count); }
};

/// Turns a block of logits into probabilities in place and scores it against
/// targets. If residual is set it receives P - Y.
PassStats score_block(Matrix& logits, std::span<const TokenId> targets, Matrix* residual);

/// Loss/accuracy of decoder over the whole stream (one pass).
PassStats evaluate(const SampleStream& stream, const Matrix& decoder,
                   Index block_rows = kDefaultBlockRows);

/// Loss and gradient over rows [begin, end); grad is overwritten.
PassStats loss_and_gradient(const SampleStream& stream, const Matrix& decoder, Index begin,
                            Index end, Matrix& grad, Index block_rows = kDefaultBlockRows);

}  // namespace expsolve
