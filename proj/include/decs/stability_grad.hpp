#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "decs/gradcheck.hpp"
#include "decs/stability.hpp"

namespace decs {

/// Gradients of the clustering loss.
struct ClusteringGradients {
  Matrix d_loss_d_z;  ///< n x d
  Matrix d_loss_d_m;  ///< k x d

  /// Euclidean norm of each centroid's gradient row.
  std::vector<double> centroid_norms() const;
  double max_centroid_norm() const;
};

struct ClusteringBackward {
  double loss = 0.0;
  ClusteringGradients grads;
};

// Local factors of the chain. Each is the derivative of one stage of the
// forward pass with every other stage held fixed.

/// dL/dsq: every entry -1/n.
std::vector<double> grad_loss_wrt_stability(std::size_t n);

/// dsq_i/dfq_ij = 1/k - (2 lambda / k)(fq_ij - mean_j fq_ij).
std::vector<double> grad_stability_wrt_determinacy(std::span<const double> fq_row, double lambda);

/// dfq/dq: 2(q - t)/t^2 below t, 2(q - t)/(1 - t)^2 at or above.
std::vector<double> grad_determinacy_wrt_assignment(std::span<const double> q_row, double t);

/// Jacobian of one normalized assignment row with respect to its embedding:
/// row l holds dq_l/dz (k x d). Built with the quotient rule over the
/// unnormalized kernel weights.
Matrix grad_assignment_wrt_embedding(std::span<const double> z_row, const CentroidSet& m,
                                     double alpha);

/// The same Jacobian assembled from the diagonal matrix expression
/// (A = diag(1 + ||z - m_j||^2), B with rows -2(z - m_j)), valid for alpha = 1:
///   (A^-2 B * sum(A^-1) - A^-1 1 * 1^T A^-2 B) / sum(A^-1)^2
Matrix grad_assignment_wrt_embedding_matrix_form(std::span<const double> z_row,
                                                 const CentroidSet& m);

/// Full k x k x d Jacobian of one assignment row with respect to every
/// centroid, including the cross terms from the shared normalizer.
class CentroidJacobian {
 public:
  CentroidJacobian(std::size_t k, std::size_t d) : k_(k), d_(d), data_(k * k * d, 0.0) {}
  /// dq_l / dm_{j,c}
  double& operator()(std::size_t l, std::size_t j, std::size_t c) noexcept {
    return data_[(l * k_ + j) * d_ + c];
  }
  double operator()(std::size_t l, std::size_t j, std::size_t c) const noexcept {
    return data_[(l * k_ + j) * d_ + c];
  }
  std::size_t clusters() const noexcept { return k_; }
  std::size_t dim() const noexcept { return d_; }

 private:
  std::size_t k_;
  std::size_t d_;
  std::vector<double> data_;
};

CentroidJacobian grad_assignment_wrt_centroids(std::span<const double> z_row,
                                               const CentroidSet& m, double alpha);

/// The single-direction centroid expression (same shape as the embedding
/// form, with C = -B). It equals sum_j dq/dm_j, the response to moving every
/// centroid together, i.e. the negated embedding Jacobian. Valid for alpha = 1.
Matrix grad_assignment_centroid_matrix_form(std::span<const double> z_row, const CentroidSet& m);

/// Loss and gradients of the clustering objective. The loss is produced by
/// stability_forward() and is therefore bit-identical to it. Per-sample work
/// runs in parallel; the centroid reduction sums samples in index order.
ClusteringBackward clustering_backward(const EmbeddingBatch& z, const CentroidSet& m,
                                       const StabilityParams& params);

/// Serial reference: per sample, multiplies the explicit local factors and
/// Jacobians above. Slower, structurally independent of the fused path.
ClusteringBackward clustering_backward_serial(const EmbeddingBatch& z, const CentroidSet& m,
                                              const StabilityParams& params);

/// Upper bound on every per-centroid gradient norm:
///   2(1 + 2 lambda)(alpha + 1) / (4 n k t^2 alpha) * max_ij ||z_i - m_j||
double lipschitz_bound(const EmbeddingBatch& z, const CentroidSet& m,
                       const StabilityParams& params);

/// Random problem for finite_difference_check().
struct GradCheckConfig {
  std::uint64_t seed = 0;
  std::size_t n = 16;
  std::size_t d = 8;
  std::size_t k = 5;
  StabilityParams params{};
  double step = 1e-6;
  /// Coordinates whose perturbation touches a q within this band of t are
  /// skipped (the second derivative jumps there).
  double kink_band = 1e-4;
  /// Relative errors are taken against max(|a|, |n|, floor); with the default
  /// tolerance 1e-5 this is an absolute criterion of 1e-8 near zero.
  double magnitude_floor = 1e-3;
};

using ClusteringBackwardFn =
    std::function<ClusteringBackward(const EmbeddingBatch&, const CentroidSet&, const StabilityParams&)>;

/// Draws z ~ N(0, I) (n x d) and m ~ N(0, I) (k x d) from `seed`.
void random_clustering_problem(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t k,
                               EmbeddingBatch& z, CentroidSet& m);

/// Central differences of the forward loss on every coordinate of z and m,
/// compared to `backward` (clustering_backward unless overridden).
GradCheckReport finite_difference_check(const GradCheckConfig& config, double tolerance,
                                        const ClusteringBackwardFn& backward = clustering_backward);

/// Same check on a caller-supplied problem.
GradCheckReport finite_difference_check(const EmbeddingBatch& z, const CentroidSet& m,
                                        const GradCheckConfig& config, double tolerance,
                                        const ClusteringBackwardFn& backward = clustering_backward);

}  // namespace decs
