#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "decs/matrix.hpp"

namespace decs {

/// n x d latent vectors, one row per sample.
using EmbeddingBatch = Matrix;
/// k x d cluster centers, one row per cluster.
using CentroidSet = Matrix;

/// Hyperparameters of the stability objective.
struct StabilityParams {
  double alpha = 1.0;   ///< Student's-t degrees of freedom, > 0
  double lambda = 0.8;  ///< weight of the determinacy variance, >= 0
  double t = 0.5;       ///< determinacy threshold, in (0, 1)

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

/// Row-stochastic n x k matrix of sample-to-centroid co-association
/// probabilities. Only produced by co_association().
class AssignmentMatrix {
 public:
  AssignmentMatrix() = default;
  const Matrix& values() const noexcept { return q_; }
  std::size_t rows() const noexcept { return q_.rows(); }
  std::size_t cols() const noexcept { return q_.cols(); }
  double operator()(std::size_t i, std::size_t j) const noexcept { return q_(i, j); }
  std::span<const double> row(std::size_t i) const noexcept { return q_.row(i); }

  /// Wraps an externally built matrix after checking entries lie in (0, 1]
  /// and rows sum to one within 1e-9.
  static AssignmentMatrix from_values(Matrix q);

 private:
  explicit AssignmentMatrix(Matrix q) : q_(std::move(q)) {}
  friend AssignmentMatrix co_association(const EmbeddingBatch&, const CentroidSet&, double);
  friend AssignmentMatrix co_association_serial(const EmbeddingBatch&, const CentroidSet&, double);
  Matrix q_;
};

/// n x k determinacies in [0, 1].
class DeterminacyMatrix {
 public:
  DeterminacyMatrix() = default;
  explicit DeterminacyMatrix(Matrix fq) : fq_(std::move(fq)) {}
  const Matrix& values() const noexcept { return fq_; }
  std::size_t rows() const noexcept { return fq_.rows(); }
  std::size_t cols() const noexcept { return fq_.cols(); }
  double operator()(std::size_t i, std::size_t j) const noexcept { return fq_(i, j); }
  std::span<const double> row(std::size_t i) const noexcept { return fq_.row(i); }

 private:
  Matrix fq_;
};

/// Per-sample stabilities, each <= 1.
struct StabilityVector {
  std::vector<double> values;
  double mean() const noexcept;
};

/// Otsu threshold over the co-association population.
struct OtsuResult {
  double threshold = 0.5;
  /// Histogram edge index in [1, 255] before clamping; 0 when degenerate.
  std::size_t edge = 0;
  /// True when no edge separates two non-empty classes.
  bool degenerate = false;
};

inline constexpr std::size_t kOtsuBins = 256;
inline constexpr double kThresholdMin = 0.05;
inline constexpr double kThresholdMax = 0.95;

using ProbabilityHistogram = std::array<std::uint64_t, kOtsuBins>;

/// Bin of a probability: floor(v * 256) clipped to [0, 255].
std::size_t probability_bin(double v) noexcept;
ProbabilityHistogram probability_histogram(std::span<const double> values);

/// Student's-t soft assignment, rows normalized to one. Row-parallel; results
/// do not depend on the thread count.
AssignmentMatrix co_association(const EmbeddingBatch& z, const CentroidSet& m, double alpha);
/// Single-threaded reference of co_association().
AssignmentMatrix co_association_serial(const EmbeddingBatch& z, const CentroidSet& m, double alpha);

/// One row of co_association() written into `q_row`. Exposed so that the
/// gradient code evaluates exactly the same arithmetic.
void co_association_row(std::span<const double> z_row, const CentroidSet& m, double alpha,
                        std::span<double> q_row);

/// Threshold maximizing the between-class variance of the 256-bin histogram of
/// all entries, reported as a bin edge and clamped to [0.05, 0.95].
OtsuResult otsu_threshold(const AssignmentMatrix& q);
OtsuResult otsu_threshold(std::span<const double> values);
OtsuResult otsu_threshold(const ProbabilityHistogram& histogram);

/// Scalar determinacy: (q-t)^2/t^2 below t, (q-t)^2/(1-t)^2 at or above.
double determinacy(double q, double t);
DeterminacyMatrix determinacy(const AssignmentMatrix& q, double t);

/// Row mean minus lambda times the row's population variance.
double row_stability(std::span<const double> fq_row, double lambda) noexcept;
StabilityVector sample_stability(const DeterminacyMatrix& fq, double lambda);

/// 1 - mean(sq), summed in index order.
double clustering_loss(const StabilityVector& sq);

/// Everything the forward pass produces, kept for the backward pass and for
/// invariant checks.
struct StabilityForward {
  AssignmentMatrix q;
  DeterminacyMatrix fq;
  StabilityVector sq;
  double loss = 0.0;
};

StabilityForward stability_forward(const EmbeddingBatch& z, const CentroidSet& m,
                                   const StabilityParams& params);

/// Throws DimensionError/NonFiniteError/std::invalid_argument for bad inputs.
void validate_batch(const EmbeddingBatch& z, const CentroidSet& m, double alpha);

}  // namespace decs
