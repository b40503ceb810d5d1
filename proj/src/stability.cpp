#include "decs/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace decs {

void StabilityParams::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("alpha must be positive, got " + std::to_string(alpha));
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw std::invalid_argument("lambda must be non-negative, got " + std::to_string(lambda));
  }
  if (!(t > 0.0 && t < 1.0)) {
    throw std::invalid_argument("threshold t must lie in (0, 1), got " + std::to_string(t));
  }
}

double StabilityVector::mean() const noexcept {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (const double v : values) s += v;
  return s / static_cast<double>(values.size());
}

AssignmentMatrix AssignmentMatrix::from_values(Matrix q) {
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double s = 0.0;
    for (const double v : q.row(i)) {
      if (!(v > 0.0 && v <= 1.0)) {
        throw std::invalid_argument("assignment entries must lie in (0, 1]");
      }
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw std::invalid_argument("assignment row " + std::to_string(i) + " sums to " +
                                  std::to_string(s));
    }
  }
  return AssignmentMatrix(std::move(q));
}

void validate_batch(const EmbeddingBatch& z, const CentroidSet& m, double alpha) {
  if (z.rows() == 0 || z.cols() == 0) throw DimensionError("embedding batch is empty");
  if (m.rows() == 0) throw DimensionError("centroid set is empty");
  if (z.cols() != m.cols()) {
    throw DimensionError("embedding dimension " + std::to_string(z.cols()) +
                         " does not match centroid dimension " + std::to_string(m.cols()));
  }
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("alpha must be positive");
  }
  require_finite(z, "embedding batch");
  require_finite(m, "centroid set");
}

void co_association_row(std::span<const double> z_row, const CentroidSet& m, double alpha,
                        std::span<double> q_row) {
  // Kernel evaluated in log space so that large alpha or far centroids do not
  // underflow every weight of a row.
  const double exponent = -(alpha + 1.0) / 2.0;
  const std::size_t k = m.rows();
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < k; ++j) {
    const double d2 = squared_distance(z_row, m.row(j));
    q_row[j] = exponent * std::log1p(d2 / alpha);
    max_log = std::max(max_log, q_row[j]);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    q_row[j] = std::exp(q_row[j] - max_log);
    total += q_row[j];
  }
  for (std::size_t j = 0; j < k; ++j) q_row[j] /= total;
}

AssignmentMatrix co_association(const EmbeddingBatch& z, const CentroidSet& m, double alpha) {
  validate_batch(z, m, alpha);
  Matrix q(z.rows(), m.rows());
  const auto n = static_cast<std::ptrdiff_t>(z.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    co_association_row(z.row(static_cast<std::size_t>(i)), m, alpha,
                       q.row(static_cast<std::size_t>(i)));
  }
  return AssignmentMatrix(std::move(q));
}

AssignmentMatrix co_association_serial(const EmbeddingBatch& z, const CentroidSet& m,
                                       double alpha) {
  validate_batch(z, m, alpha);
  Matrix q(z.rows(), m.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) co_association_row(z.row(i), m, alpha, q.row(i));
  return AssignmentMatrix(std::move(q));
}

std::size_t probability_bin(double v) noexcept {
  if (!(v > 0.0)) return 0;
  const double scaled = std::floor(v * static_cast<double>(kOtsuBins));
  if (scaled >= static_cast<double>(kOtsuBins - 1)) return kOtsuBins - 1;
  return static_cast<std::size_t>(scaled);
}

ProbabilityHistogram probability_histogram(std::span<const double> values) {
  ProbabilityHistogram h{};
  for (const double v : values) ++h[probability_bin(v)];
  return h;
}

OtsuResult otsu_threshold(const ProbabilityHistogram& histogram) {
  // Bin indices stand in for bin centers; between-class variance is invariant
  // (up to a positive factor) under that affine change, so the argmax is too.
  // Counts and moments stay integral; only the final ratio is floating point.
  std::int64_t total = 0;
  std::int64_t total_moment = 0;
  for (std::size_t b = 0; b < kOtsuBins; ++b) {
    total += static_cast<std::int64_t>(histogram[b]);
    total_moment += static_cast<std::int64_t>(b) * static_cast<std::int64_t>(histogram[b]);
  }
  if (total == 0) throw std::invalid_argument("otsu_threshold: empty input");

  OtsuResult result;
  result.degenerate = true;
  double best = -1.0;
  std::int64_t below = 0;
  std::int64_t below_moment = 0;
  for (std::size_t edge = 1; edge < kOtsuBins; ++edge) {
    below += static_cast<std::int64_t>(histogram[edge - 1]);
    below_moment += static_cast<std::int64_t>(edge - 1) * static_cast<std::int64_t>(histogram[edge - 1]);
    const std::int64_t above = total - below;
    if (below == 0 || above == 0) continue;
    const double spread = static_cast<double>(total * below_moment - below * total_moment);
    const double score =
        spread * spread / (static_cast<double>(below) * static_cast<double>(above));
    if (score > best) {
      best = score;
      result.edge = edge;
      result.degenerate = false;
    }
  }
  if (result.degenerate) {
    result.threshold = 0.5;
    return result;
  }
  const double edge_value = static_cast<double>(result.edge) / static_cast<double>(kOtsuBins);
  result.threshold = std::clamp(edge_value, kThresholdMin, kThresholdMax);
  return result;
}

OtsuResult otsu_threshold(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("otsu_threshold: empty input");
  return otsu_threshold(probability_histogram(values));
}

OtsuResult otsu_threshold(const AssignmentMatrix& q) { return otsu_threshold(q.values().flat()); }

double determinacy(double q, double t) {
  if (!(t > 0.0 && t < 1.0)) {
    throw std::invalid_argument("determinacy: t must lie in (0, 1), got " + std::to_string(t));
  }
  const double offset = q - t;
  const double scale = q < t ? t : 1.0 - t;
  return (offset * offset) / (scale * scale);
}

DeterminacyMatrix determinacy(const AssignmentMatrix& q, double t) {
  if (!(t > 0.0 && t < 1.0)) {
    throw std::invalid_argument("determinacy: t must lie in (0, 1), got " + std::to_string(t));
  }
  const Matrix& qv = q.values();
  Matrix fq(qv.rows(), qv.cols());
  const auto n = static_cast<std::ptrdiff_t>(qv.size());
  const double* src = qv.data();
  double* dst = fq.data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t e = 0; e < n; ++e) dst[e] = determinacy(src[e], t);
  return DeterminacyMatrix(std::move(fq));
}

double row_stability(std::span<const double> fq_row, double lambda) noexcept {
  const auto k = static_cast<double>(fq_row.size());
  double mean = 0.0;
  for (const double v : fq_row) mean += v;
  mean /= k;
  double variance = 0.0;
  for (const double v : fq_row) variance += (v - mean) * (v - mean);
  variance /= k;
  return mean - lambda * variance;
}

StabilityVector sample_stability(const DeterminacyMatrix& fq, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("sample_stability: lambda must be >= 0");
  StabilityVector sq;
  sq.values.resize(fq.rows());
  const auto n = static_cast<std::ptrdiff_t>(fq.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    sq.values[static_cast<std::size_t>(i)] = row_stability(fq.row(static_cast<std::size_t>(i)), lambda);
  }
  return sq;
}

double clustering_loss(const StabilityVector& sq) {
  if (sq.values.empty()) throw std::invalid_argument("clustering_loss: empty stability vector");
  return 1.0 - sq.mean();
}

StabilityForward stability_forward(const EmbeddingBatch& z, const CentroidSet& m,
                                   const StabilityParams& params) {
  params.validate();
  StabilityForward out;
  out.q = co_association(z, m, params.alpha);
  out.fq = determinacy(out.q, params.t);
  out.sq = sample_stability(out.fq, params.lambda);
  out.loss = clustering_loss(out.sq);
  return out;
}

}  // namespace decs
