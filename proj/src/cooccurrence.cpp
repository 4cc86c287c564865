#include "expsolve/cooccurrence.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <thread>

namespace expsolve {

namespace {

constexpr std::array<char, 5> kMagic = {'C', 'O', 'O', 'C', '1'};

static_assert(std::endian::native == std::endian::little,
              "COOC1 I/O assumes a little-endian host");

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError("COOC1 header truncated");
  return v;
}

}  // namespace

CooccurrenceMatrix::CooccurrenceMatrix(Index dim, Index classes)
    : values_(Matrix::Zero(dim, classes)), col_sums_(Vector::Zero(classes)) {}

CooccurrenceMatrix::CooccurrenceMatrix(Matrix values, std::int64_t num_samples)
    : values_(std::move(values)), num_samples_(num_samples) {
  refresh_sums();
  feature_mass_ = col_sums_.sum();
}

CooccurrenceMatrix::CooccurrenceMatrix(Matrix values, std::int64_t num_samples,
                                       double feature_mass)
    : values_(std::move(values)), num_samples_(num_samples), feature_mass_(feature_mass) {
  refresh_sums();
}

void CooccurrenceMatrix::refresh_sums() { col_sums_ = values_.colwise().sum().transpose(); }

CooccurrenceMatrix& CooccurrenceMatrix::operator+=(const CooccurrenceMatrix& other) {
  if (other.dim() != dim() || other.classes() != classes()) {
    throw ShapeError("cannot merge co-occurrence matrices of different shapes");
  }
  values_ += other.values_;
  col_sums_ += other.col_sums_;
  num_samples_ += other.num_samples_;
  feature_mass_ += other.feature_mass_;
  return *this;
}

void CooccurrenceMatrix::check_invariants(double rel_tol) const {
  if ((values_.array() < 0.0).any() || !values_.allFinite()) {
    throw DomainError("co-occurrence matrix has negative or non-finite entries");
  }
  const Vector recomputed = values_.colwise().sum().transpose();
  for (Index i = 0; i < classes(); ++i) {
    const double scale = std::max(std::abs(recomputed(i)), 1.0);
    if (std::abs(recomputed(i) - col_sums_(i)) > rel_tol * scale) {
      throw DomainError("cached column sum " + std::to_string(i) + " is stale");
    }
  }
  const double total = col_sums_.sum();
  if (std::abs(total - feature_mass_) > rel_tol * std::max(std::abs(feature_mass_), 1.0)) {
    throw DomainError("column sums do not add up to the accumulated feature mass");
  }
}

double CooccurrenceMatrix::min_positive() const {
  double best = std::numeric_limits<double>::infinity();
  const double* data = values_.data();
  for (Index k = 0; k < values_.size(); ++k) {
    if (data[k] > 0.0 && data[k] < best) best = data[k];
  }
  return std::isfinite(best) ? best : 0.0;
}

void write_matrix_block(std::ostream& out, const Matrix& values, std::uint64_t count) {
  out.write(kMagic.data(), kMagic.size());
  write_u64(out, static_cast<std::uint64_t>(values.rows()));
  write_u64(out, static_cast<std::uint64_t>(values.cols()));
  write_u64(out, count);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

Matrix read_matrix_block(std::istream& in, std::uint64_t* count) {
  std::array<char, 5> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("missing COOC1 magic");
  const std::uint64_t rows = read_u64(in);
  const std::uint64_t cols = read_u64(in);
  const std::uint64_t m = read_u64(in);
  if (rows > (1u << 26) || cols > (1u << 26)) throw FormatError("COOC1 dimensions implausible");
  Matrix values(static_cast<Index>(rows), static_cast<Index>(cols));
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw FormatError("COOC1 payload truncated");
  if (count) *count = m;
  return values;
}

void CooccurrenceMatrix::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_matrix_block(out, values_, static_cast<std::uint64_t>(num_samples_));
  if (!out) throw FormatError("failed writing " + path.string());
}

CooccurrenceMatrix CooccurrenceMatrix::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::uint64_t m = 0;
  Matrix values = read_matrix_block(in, &m);
  if (in.peek() != std::ifstream::traits_type::eof()) {
    throw FormatError(path.string() + " has trailing bytes after the COOC1 payload");
  }
  return CooccurrenceMatrix(std::move(values), static_cast<std::int64_t>(m));
}

void CooccurrenceMatrix::write_csv(std::ostream& out) const {
  out << "row";
  for (Index i = 0; i < classes(); ++i) out << ",c" << i;
  out << '\n' << std::setprecision(17);
  for (Index d = 0; d < dim(); ++d) {
    out << d;
    for (Index i = 0; i < classes(); ++i) out << ',' << values_(d, i);
    out << '\n';
  }
}

CooccurrenceAccumulator::CooccurrenceAccumulator(Index dim, Index classes)
    : result_(dim, classes) {}

void CooccurrenceAccumulator::add(std::span<const double> features, TokenId target) {
  const std::int64_t item = result_.num_samples_;
  const Index dim = result_.dim();
  if (static_cast<Index>(features.size()) != dim) {
    throw ShapeError("item " + std::to_string(item) + ": feature length " +
                     std::to_string(features.size()) + " != " + std::to_string(dim));
  }
  if (target < 0 || target >= result_.classes()) {
    throw ShapeError("item " + std::to_string(item) + ": target " + std::to_string(target) +
                     " outside [0, " + std::to_string(result_.classes()) + ")");
  }
  double mass = 0.0;
  for (Index d = 0; d < dim; ++d) {
    const double v = features[static_cast<std::size_t>(d)];
    if (!std::isfinite(v) || v < 0.0) {
      throw DomainError("item " + std::to_string(item) + ": feature " + std::to_string(d) +
                        " is negative or non-finite");
    }
    mass += v;
  }
  for (Index d = 0; d < dim; ++d) result_.values_(d, target) += features[static_cast<std::size_t>(d)];
  result_.col_sums_(target) += mass;
  result_.feature_mass_ += mass;
  ++result_.num_samples_;
}

CooccurrenceMatrix CooccurrenceAccumulator::finish() && {
  result_.refresh_sums();
  return std::move(result_);
}

CooccurrenceMatrix accumulate(std::span<const Sample> items, Index dim, Index classes) {
  CooccurrenceAccumulator acc(dim, classes);
  for (const auto& item : items) acc.add(item.features, item.target);
  return std::move(acc).finish();
}

namespace {

CooccurrenceMatrix accumulate_range(const SampleStream& stream, Index begin, Index end) {
  Matrix values = Matrix::Zero(stream.dim(), stream.num_classes());
  auto adj = stream.features().adjoint(values);
  double mass = 0.0;
  for (Index b = begin; b < end; b += kDefaultBlockRows) {
    const Index e = std::min(end, b + kDefaultBlockRows);
    adj->add_onehot(b, e, stream.targets().subspan(static_cast<std::size_t>(b),
                                                   static_cast<std::size_t>(e - b)));
    for (Index m = b; m < e; ++m) mass += stream.features().row_mass(m);
  }
  adj->finish();
  // feature_mass comes from row norms, independently of the column totals,
  // so check_invariants() compares two separate routes.
  return CooccurrenceMatrix(std::move(values), end - begin, mass);
}

}  // namespace

CooccurrenceMatrix accumulate(const SampleStream& stream, int shards) {
  const Index n = stream.size();
  shards = std::max(1, std::min<int>(shards, static_cast<int>(std::max<Index>(n, 1))));
  std::vector<CooccurrenceMatrix> parts(static_cast<std::size_t>(shards));
  std::vector<std::pair<Index, Index>> ranges;
  stream.for_each_batch((n + shards - 1) / std::max(1, shards),
                        [&](Index b, Index e) { ranges.emplace_back(b, e); });
  if (ranges.empty()) return CooccurrenceMatrix(stream.dim(), stream.num_classes());
  parts.resize(ranges.size());
  if (ranges.size() == 1) {
    parts[0] = accumulate_range(stream, ranges[0].first, ranges[0].second);
  } else {
    std::vector<std::exception_ptr> errors(ranges.size());
    std::vector<std::thread> workers;
    for (std::size_t s = 0; s < ranges.size(); ++s) {
      workers.emplace_back([&, s] {
        try {
          parts[s] = accumulate_range(stream, ranges[s].first, ranges[s].second);
        } catch (...) {
          errors[s] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }
  CooccurrenceMatrix total = std::move(parts[0]);
  for (std::size_t s = 1; s < parts.size(); ++s) total += parts[s];
  return total;
}

}  // namespace expsolve
