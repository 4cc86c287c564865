#include "expsolve/lm.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <random>
#include <string>

namespace expsolve {

std::vector<std::string> split_documents(std::string_view text) {
  std::vector<std::string> docs;
  std::string current;
  bool in_doc = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const bool blank = line.find_first_not_of(" \t\f\v") == std::string_view::npos;
    if (blank) {
      if (in_doc) docs.push_back(std::move(current));
      current.clear();
      in_doc = false;
    } else {
      if (in_doc) current += '\n';
      current.append(line);
      in_doc = true;
    }
    pos = nl + 1;
  }
  if (in_doc) docs.push_back(std::move(current));
  return docs;
}

std::vector<std::string> sample_documents(const std::vector<std::string>& docs, double fraction,
                                          std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw DomainError("sample fraction must be in [0, 1]");
  const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(docs.size())));
  std::vector<std::size_t> index(docs.size());
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
  std::mt19937_64 engine(seed);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < want; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(engine() % (index.size() - i));
    std::swap(index[i], index[j]);
  }
  index.resize(want);
  std::sort(index.begin(), index.end());
  std::vector<std::string> out;
  out.reserve(want);
  for (auto i : index) out.push_back(docs[i]);
  return out;
}

NoiseModel build_noise_model(std::span<const std::vector<TokenId>> sequences, Index vocab) {
  if (vocab < 2) throw DomainError("noise model needs a vocabulary of at least 2 ids");
  NoiseModel noise;
  noise.counts.assign(static_cast<std::size_t>(vocab), 0);
  for (const auto& seq : sequences) {
    for (TokenId id : seq) {
      if (id < 0 || id >= vocab) {
        throw ShapeError("token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(vocab));
      }
      ++noise.counts[static_cast<std::size_t>(id)];
    }
    noise.total += static_cast<std::int64_t>(seq.size());
  }
  if (noise.total == 0) throw DomainError("noise model needs a non-empty token sequence");

  const double total = static_cast<double>(noise.total);
  noise.q.resize(vocab);
  noise.p.resize(vocab);
  for (Index n = 0; n < vocab; ++n) {
    const double f = static_cast<double>(noise.counts[static_cast<std::size_t>(n)]);
    noise.q(n) = f / (f + 1.0);
    noise.p(n) = 1.0 - f / total;
  }
  noise.p /= noise.p.sum();
  return noise;
}

NoiseModel build_noise_model(std::span<const TokenId> ids, Index vocab) {
  const std::vector<std::vector<TokenId>> one{std::vector<TokenId>(ids.begin(), ids.end())};
  return build_noise_model(std::span<const std::vector<TokenId>>(one), vocab);
}

DenseEmbeddingTable::DenseEmbeddingTable(const NoiseModel& noise)
    : q_(noise.q), p_(noise.p), p_mass_(noise.p.sum()) {
  if (q_.size() != p_.size()) throw ShapeError("noise model q and p differ in length");
}

void DenseEmbeddingTable::row(TokenId n, std::span<double> out) const {
  if (static_cast<Index>(out.size()) != vocab()) throw ShapeError("embedding row buffer size");
  Eigen::Map<RowVector> dst(out.data(), vocab());
  dst = (1.0 - q_(n)) * p_.transpose();
  dst(n) += q_(n);
}

RowVector DenseEmbeddingTable::row(TokenId n) const {
  RowVector out(vocab());
  row(n, std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
  return out;
}

Matrix DenseEmbeddingTable::matrix() const {
  Matrix out(vocab(), vocab());
  for (Index n = 0; n < vocab(); ++n) {
    row(static_cast<TokenId>(n),
        std::span<double>(out.row(n).data(), static_cast<std::size_t>(vocab())));
  }
  return out;
}

DenseEmbeddingTable densify(const NoiseModel& noise) { return DenseEmbeddingTable(noise); }

void WindowSpec::validate() const {
  if (radius < 1) throw DomainError("window radius must be >= 1");
}

const char* to_string(WindowMode mode) { return mode == WindowMode::kCat ? "cat" : "sum"; }

namespace {

// Sum keeps one background block, Cat one per window slot.
Index background_blocks(const WindowSpec& spec) {
  return spec.mode == WindowMode::kCat ? spec.radius : 1;
}

class WindowMap final : public LinearMap {
 public:
  WindowMap(const WindowFeatures& features, const Matrix& weights)
      : features_(features), weights_(weights) {
    const Index vocab = features.table().vocab();
    const Index blocks = background_blocks(features.spec());
    background_.resize(blocks, weights.cols());
    for (Index k = 0; k < blocks; ++k) {
      background_.row(k).noalias() =
          features.table().p().transpose() * weights.middleRows(k * vocab, vocab);
    }
  }

  void apply(Index begin, Index end, Matrix& out) const override {
    const auto& spec = features_.spec();
    const auto& table = features_.table();
    const Index vocab = table.vocab();
    const bool cat = spec.mode == WindowMode::kCat;
    out.resize(end - begin, weights_.cols());
    for (Index m = begin; m < end; ++m) {
      auto o = out.row(m - begin);
      o.setZero();
      const auto ctx = features_.context(m);
      double rest = 0.0;
      for (int k = 0; k < spec.radius; ++k) {
        const TokenId c = ctx[static_cast<std::size_t>(k)];
        const Index offset = cat ? k * vocab : 0;
        o.noalias() += table.q(c) * weights_.row(offset + c);
        if (cat) {
          o.noalias() += (1.0 - table.q(c)) * background_.row(k);
        } else {
          rest += 1.0 - table.q(c);
        }
      }
      if (!cat) o.noalias() += rest * background_.row(0);
    }
  }

 private:
  const WindowFeatures& features_;
  const Matrix& weights_;
  Matrix background_;
};

class WindowAdjoint final : public AdjointAccumulator {
 public:
  WindowAdjoint(const WindowFeatures& features, Matrix& target)
      : features_(features), target_(target) {
    pending_.setZero(background_blocks(features.spec()), target.cols());
  }

  void add(Index begin, Index end, const Matrix& residual) override {
    const auto& spec = features_.spec();
    const auto& table = features_.table();
    const Index vocab = table.vocab();
    const bool cat = spec.mode == WindowMode::kCat;
    for (Index m = begin; m < end; ++m) {
      const auto r = residual.row(m - begin);
      const auto ctx = features_.context(m);
      double rest = 0.0;
      for (int k = 0; k < spec.radius; ++k) {
        const TokenId c = ctx[static_cast<std::size_t>(k)];
        const Index offset = cat ? k * vocab : 0;
        target_.row(offset + c).noalias() += table.q(c) * r;
        if (cat) {
          pending_.row(k).noalias() += (1.0 - table.q(c)) * r;
        } else {
          rest += 1.0 - table.q(c);
        }
      }
      if (!cat) pending_.row(0).noalias() += rest * r;
    }
  }

  void add_onehot(Index begin, Index end, std::span<const TokenId> targets) override {
    const auto& spec = features_.spec();
    const auto& table = features_.table();
    const Index vocab = table.vocab();
    const bool cat = spec.mode == WindowMode::kCat;
    for (Index m = begin; m < end; ++m) {
      const TokenId t = targets[static_cast<std::size_t>(m - begin)];
      const auto ctx = features_.context(m);
      double rest = 0.0;
      for (int k = 0; k < spec.radius; ++k) {
        const TokenId c = ctx[static_cast<std::size_t>(k)];
        const Index offset = cat ? k * vocab : 0;
        target_(offset + c, t) += table.q(c);
        if (cat) {
          pending_(k, t) += 1.0 - table.q(c);
        } else {
          rest += 1.0 - table.q(c);
        }
      }
      if (!cat) pending_(0, t) += rest;
    }
  }

  void finish() override {
    const auto& p = features_.table().p();
    const Index vocab = features_.table().vocab();
    for (Index k = 0; k < pending_.rows(); ++k) {
      target_.middleRows(k * vocab, vocab).noalias() += p * pending_.row(k);
    }
    pending_.setZero();
  }

 private:
  const WindowFeatures& features_;
  Matrix& target_;
  Matrix pending_;
};

}  // namespace

WindowFeatures::WindowFeatures(std::shared_ptr<const DenseEmbeddingTable> table, WindowSpec spec,
                               std::vector<TokenId> contexts)
    : table_(std::move(table)), spec_(spec), contexts_(std::move(contexts)) {
  spec_.validate();
  if (!table_) throw ShapeError("window features need an embedding table");
  if (contexts_.size() % static_cast<std::size_t>(spec_.radius) != 0) {
    throw ShapeError("context buffer is not a multiple of the window radius");
  }
  for (TokenId c : contexts_) {
    if (c < 0 || c >= table_->vocab()) {
      throw ShapeError("context id " + std::to_string(c) + " outside vocabulary of " +
                       std::to_string(table_->vocab()));
    }
  }
}

void WindowFeatures::row(Index m, std::span<double> out) const {
  if (static_cast<Index>(out.size()) != dim()) throw ShapeError("feature row buffer size");
  Eigen::Map<RowVector> dst(out.data(), dim());
  dst.setZero();
  const Index vocab = table_->vocab();
  const auto ctx = context(m);
  for (int k = 0; k < spec_.radius; ++k) {
    const TokenId c = ctx[static_cast<std::size_t>(k)];
    const Index offset = spec_.mode == WindowMode::kCat ? k * vocab : 0;
    dst.segment(offset, vocab) += (1.0 - table_->q(c)) * table_->p().transpose();
    dst(offset + c) += table_->q(c);
  }
}

double WindowFeatures::row_mass(Index m) const {
  double mass = 0.0;
  for (TokenId c : context(m)) mass += table_->row_mass(c);
  return mass;
}

std::unique_ptr<LinearMap> WindowFeatures::bind(const Matrix& weights) const {
  if (weights.rows() != dim()) {
    throw ShapeError("weights have " + std::to_string(weights.rows()) + " rows, features have dim " +
                     std::to_string(dim()));
  }
  return std::make_unique<WindowMap>(*this, weights);
}

std::unique_ptr<AdjointAccumulator> WindowFeatures::adjoint(Matrix& target) const {
  if (target.rows() != dim()) {
    throw ShapeError("adjoint target has " + std::to_string(target.rows()) +
                     " rows, features have dim " + std::to_string(dim()));
  }
  return std::make_unique<WindowAdjoint>(*this, target);
}

SampleStream featurize(std::span<const std::vector<TokenId>> documents,
                       std::shared_ptr<const DenseEmbeddingTable> table, const WindowSpec& spec,
                       TokenId pad_id) {
  spec.validate();
  if (!table) throw ShapeError("featurize needs an embedding table");
  std::size_t total = 0;
  for (const auto& doc : documents) total += doc.size();
  std::vector<TokenId> contexts;
  contexts.reserve(total * static_cast<std::size_t>(spec.radius));
  std::vector<TokenId> targets;
  targets.reserve(total);
  for (const auto& doc : documents) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      targets.push_back(doc[i]);
      for (int k = 1; k <= spec.radius; ++k) {
        const auto back = static_cast<std::size_t>(k);
        contexts.push_back(i >= back ? doc[i - back] : pad_id);
      }
    }
  }
  const Index vocab = table->vocab();
  auto features = std::make_shared<WindowFeatures>(std::move(table), spec, std::move(contexts));
  return SampleStream(std::move(features), std::move(targets), vocab);
}

}  // namespace expsolve
