#include "decs/stability_grad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace decs {
namespace {

void require_threshold(double t) {
  if (!(t > 0.0 && t < 1.0)) {
    throw std::invalid_argument("threshold t must lie in (0, 1), got " + std::to_string(t));
  }
}

void require_row(std::span<const double> z_row, const CentroidSet& m, double alpha) {
  if (m.rows() == 0) throw DimensionError("centroid set is empty");
  if (z_row.size() != m.cols()) {
    throw DimensionError("embedding length " + std::to_string(z_row.size()) +
                         " does not match centroid dimension " + std::to_string(m.cols()));
  }
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
}

// Kernel weights scaled by a common factor (the quotient rule is invariant to it).
std::vector<double> scaled_weights(std::span<const double> z_row, const CentroidSet& m,
                                   double alpha) {
  const std::size_t k = m.rows();
  std::vector<double> logw(k);
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < k; ++j) {
    logw[j] = -(alpha + 1.0) / 2.0 * std::log1p(squared_distance(z_row, m.row(j)) / alpha);
    max_log = std::max(max_log, logw[j]);
  }
  for (auto& v : logw) v = std::exp(v - max_log);
  return logw;
}

// d log w_j / d|z - m_j|^2 scaled: the factor (alpha+1)/alpha / (1 + d^2/alpha).
double kernel_slope(double d2, double alpha) noexcept {
  return (alpha + 1.0) / alpha / (1.0 + d2 / alpha);
}

}  // namespace

std::vector<double> ClusteringGradients::centroid_norms() const {
  std::vector<double> norms(d_loss_d_m.rows());
  for (std::size_t j = 0; j < norms.size(); ++j) norms[j] = l2_norm(d_loss_d_m.row(j));
  return norms;
}

double ClusteringGradients::max_centroid_norm() const {
  const auto norms = centroid_norms();
  return norms.empty() ? 0.0 : *std::max_element(norms.begin(), norms.end());
}

std::vector<double> grad_loss_wrt_stability(std::size_t n) {
  if (n == 0) throw std::invalid_argument("grad_loss_wrt_stability: n must be positive");
  return std::vector<double>(n, -1.0 / static_cast<double>(n));
}

std::vector<double> grad_stability_wrt_determinacy(std::span<const double> fq_row, double lambda) {
  const auto k = static_cast<double>(fq_row.size());
  double mean = 0.0;
  for (const double v : fq_row) mean += v;
  mean /= k;
  std::vector<double> out(fq_row.size());
  for (std::size_t j = 0; j < fq_row.size(); ++j) {
    out[j] = 1.0 / k - (2.0 * lambda / k) * (fq_row[j] - mean);
  }
  return out;
}

std::vector<double> grad_determinacy_wrt_assignment(std::span<const double> q_row, double t) {
  require_threshold(t);
  std::vector<double> out(q_row.size());
  for (std::size_t j = 0; j < q_row.size(); ++j) {
    const double scale = q_row[j] < t ? t : 1.0 - t;
    out[j] = 2.0 * (q_row[j] - t) / (scale * scale);
  }
  return out;
}

Matrix grad_assignment_wrt_embedding(std::span<const double> z_row, const CentroidSet& m,
                                     double alpha) {
  require_row(z_row, m, alpha);
  const std::size_t k = m.rows();
  const std::size_t d = m.cols();
  const auto w = scaled_weights(z_row, m, alpha);
  double total = 0.0;
  for (const double v : w) total += v;

  // dw_l/dz = -slope_l * (z - m_l) * w_l
  Matrix dw(k, d);
  std::vector<double> dtotal(d, 0.0);
  for (std::size_t l = 0; l < k; ++l) {
    const auto ml = m.row(l);
    const double slope = kernel_slope(squared_distance(z_row, ml), alpha);
    for (std::size_t c = 0; c < d; ++c) {
      dw(l, c) = -slope * (z_row[c] - ml[c]) * w[l];
      dtotal[c] += dw(l, c);
    }
  }
  Matrix jac(k, d);
  for (std::size_t l = 0; l < k; ++l) {
    for (std::size_t c = 0; c < d; ++c) {
      jac(l, c) = (dw(l, c) * total - w[l] * dtotal[c]) / (total * total);
    }
  }
  return jac;
}

namespace {

// Shared body of the two diagonal-matrix expressions; `sign` selects B (-1)
// or C (+1) as the derivative of the squared distance.
Matrix matrix_form(std::span<const double> z_row, const CentroidSet& m, double sign) {
  require_row(z_row, m, 1.0);
  const std::size_t k = m.rows();
  const std::size_t d = m.cols();
  std::vector<double> a(k);
  double sum_inv = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    a[j] = 1.0 + squared_distance(z_row, m.row(j));
    sum_inv += 1.0 / a[j];
  }
  // A^-2 B: row j is sign * 2 (z - m_j) / a_j^2  (B = -diag(2Z - 2m) => -2(z - m_j))
  Matrix a2b(k, d);
  std::vector<double> column_sum(d, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const auto mj = m.row(j);
    for (std::size_t c = 0; c < d; ++c) {
      a2b(j, c) = sign * 2.0 * (z_row[c] - mj[c]) / (a[j] * a[j]);
      column_sum[c] += a2b(j, c);
    }
  }
  Matrix out(k, d);
  for (std::size_t l = 0; l < k; ++l) {
    for (std::size_t c = 0; c < d; ++c) {
      out(l, c) = (a2b(l, c) * sum_inv - (1.0 / a[l]) * column_sum[c]) / (sum_inv * sum_inv);
    }
  }
  return out;
}

}  // namespace

Matrix grad_assignment_wrt_embedding_matrix_form(std::span<const double> z_row,
                                                 const CentroidSet& m) {
  return matrix_form(z_row, m, -1.0);
}

Matrix grad_assignment_centroid_matrix_form(std::span<const double> z_row, const CentroidSet& m) {
  return matrix_form(z_row, m, +1.0);
}

CentroidJacobian grad_assignment_wrt_centroids(std::span<const double> z_row,
                                               const CentroidSet& m, double alpha) {
  require_row(z_row, m, alpha);
  const std::size_t k = m.rows();
  const std::size_t d = m.cols();
  const auto w = scaled_weights(z_row, m, alpha);
  double total = 0.0;
  for (const double v : w) total += v;

  CentroidJacobian jac(k, d);
  for (std::size_t j = 0; j < k; ++j) {
    const auto mj = m.row(j);
    const double slope = kernel_slope(squared_distance(z_row, mj), alpha);
    for (std::size_t c = 0; c < d; ++c) {
      // Only w_j depends on m_j: dw_j/dm_j = slope_j (z - m_j) w_j.
      const double dwj = slope * (z_row[c] - mj[c]) * w[j];
      for (std::size_t l = 0; l < k; ++l) {
        const double own = l == j ? dwj * total : 0.0;
        jac(l, j, c) = (own - w[l] * dwj) / (total * total);
      }
    }
  }
  return jac;
}

ClusteringBackward clustering_backward(const EmbeddingBatch& z, const CentroidSet& m,
                                       const StabilityParams& params) {
  auto forward = stability_forward(z, m, params);
  const std::size_t n = z.rows();
  const std::size_t k = m.rows();
  const std::size_t d = m.cols();
  const double dloss_dsq = -1.0 / static_cast<double>(n);
  const double t = params.t;
  const double alpha = params.alpha;
  const double lambda = params.lambda;
  const auto kd = static_cast<double>(k);

  ClusteringBackward out;
  out.loss = forward.loss;
  out.grads.d_loss_d_z = Matrix(n, d);
  out.grads.d_loss_d_m = Matrix(k, d);
  // coef(i, j) = slope_ij * q_ij * (g_ij - sum_l g_il q_il): the weight of
  // (z_i - m_j) in dL/dm_j, and minus its weight in dL/dz_i.
  Matrix coef(n, k);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto zi = z.row(i);
    const auto qi = forward.q.row(i);
    const auto fqi = forward.fq.row(i);
    double mean_fq = 0.0;
    for (const double v : fqi) mean_fq += v;
    mean_fq /= kd;

    auto ci = coef.row(i);
    double weighted = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double dsq = 1.0 / kd - (2.0 * lambda / kd) * (fqi[j] - mean_fq);
      const double scale = qi[j] < t ? t : 1.0 - t;
      const double dfq = 2.0 * (qi[j] - t) / (scale * scale);
      ci[j] = dloss_dsq * dsq * dfq;  // dL/dq_ij for now
      weighted += ci[j] * qi[j];
    }
    auto dzi = out.grads.d_loss_d_z.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      const auto mj = m.row(j);
      const double slope = kernel_slope(squared_distance(zi, mj), alpha);
      ci[j] = slope * qi[j] * (ci[j] - weighted);
      for (std::size_t c = 0; c < d; ++c) dzi[c] -= ci[j] * (zi[c] - mj[c]);
    }
  }

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t jj = 0; jj < static_cast<std::ptrdiff_t>(k); ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    const auto mj = m.row(j);
    auto dmj = out.grads.d_loss_d_m.row(j);
    for (std::size_t i = 0; i < n; ++i) {
      const auto zi = z.row(i);
      const double w = coef(i, j);
      for (std::size_t c = 0; c < d; ++c) dmj[c] += w * (zi[c] - mj[c]);
    }
  }
  return out;
}

ClusteringBackward clustering_backward_serial(const EmbeddingBatch& z, const CentroidSet& m,
                                              const StabilityParams& params) {
  auto forward = stability_forward(z, m, params);
  const std::size_t n = z.rows();
  const std::size_t k = m.rows();
  const std::size_t d = m.cols();
  const auto dloss_dsq = grad_loss_wrt_stability(n);

  ClusteringBackward out;
  out.loss = forward.loss;
  out.grads.d_loss_d_z = Matrix(n, d);
  out.grads.d_loss_d_m = Matrix(k, d);
  std::vector<double> dloss_dq(k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto dsq = grad_stability_wrt_determinacy(forward.fq.row(i), params.lambda);
    const auto dfq = grad_determinacy_wrt_assignment(forward.q.row(i), params.t);
    for (std::size_t l = 0; l < k; ++l) dloss_dq[l] = dloss_dsq[i] * dsq[l] * dfq[l];

    const Matrix jz = grad_assignment_wrt_embedding(z.row(i), m, params.alpha);
    const CentroidJacobian jm = grad_assignment_wrt_centroids(z.row(i), m, params.alpha);
    for (std::size_t l = 0; l < k; ++l) {
      for (std::size_t c = 0; c < d; ++c) out.grads.d_loss_d_z(i, c) += dloss_dq[l] * jz(l, c);
      for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t c = 0; c < d; ++c) {
          out.grads.d_loss_d_m(j, c) += dloss_dq[l] * jm(l, j, c);
        }
      }
    }
  }
  return out;
}

double lipschitz_bound(const EmbeddingBatch& z, const CentroidSet& m,
                       const StabilityParams& params) {
  validate_batch(z, m, params.alpha);
  params.validate();
  double max_d2 = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < m.rows(); ++j) {
      max_d2 = std::max(max_d2, squared_distance(z.row(i), m.row(j)));
    }
  }
  const auto n = static_cast<double>(z.rows());
  const auto k = static_cast<double>(m.rows());
  const double t = params.t;
  const double factor = 2.0 * (1.0 + 2.0 * params.lambda) * (params.alpha + 1.0) /
                        (4.0 * n * k * t * t * params.alpha);
  return factor * std::sqrt(max_d2);
}

void random_clustering_problem(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t k,
                               EmbeddingBatch& z, CentroidSet& m) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  z = Matrix(n, d);
  m = Matrix(k, d);
  for (auto& v : z.flat()) v = normal(rng);
  for (auto& v : m.flat()) v = normal(rng);
}

GradCheckReport finite_difference_check(const GradCheckConfig& config, double tolerance,
                                        const ClusteringBackwardFn& backward) {
  EmbeddingBatch z;
  CentroidSet m;
  random_clustering_problem(config.seed, config.n, config.d, config.k, z, m);
  return finite_difference_check(z, m, config, tolerance, backward);
}

GradCheckReport finite_difference_check(const EmbeddingBatch& z, const CentroidSet& m,
                                        const GradCheckConfig& config, double tolerance,
                                        const ClusteringBackwardFn& backward) {
  if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
  config.params.validate();
  const auto analytic = backward(z, m, config.params);
  const double t = config.params.t;

  EmbeddingBatch zp = z;
  CentroidSet mp = m;
  Matrix q_up, q_down;
  const auto loss_at = [&](Matrix& q_out) {
    auto f = stability_forward(zp, mp, config.params);
    q_out = f.q.values();
    return f.loss;
  };
  const auto near_kink = [&](const Matrix& q, std::size_t first_row, std::size_t last_row) {
    for (std::size_t i = first_row; i < last_row; ++i) {
      for (const double v : q.row(i)) {
        if (std::abs(v - t) < config.kink_band) return true;
      }
    }
    return false;
  };
  const Matrix q_base = stability_forward(z, m, config.params).q.values();

  GradCheckBuilder builder(tolerance, config.magnitude_floor);
  const auto check = [&](double& coordinate, double analytic_value, std::size_t first_row,
                         std::size_t last_row, const std::string& path) {
    const double saved = coordinate;
    coordinate = saved + config.step;
    const double up = loss_at(q_up);
    coordinate = saved - config.step;
    const double down = loss_at(q_down);
    coordinate = saved;
    if (near_kink(q_base, first_row, last_row) || near_kink(q_up, first_row, last_row) ||
        near_kink(q_down, first_row, last_row)) {
      builder.exclude();
      return;
    }
    builder.add(path, analytic_value, (up - down) / (2.0 * config.step));
  };

  builder.begin_block("dLc/dz");
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t c = 0; c < z.cols(); ++c) {
      check(zp(i, c), analytic.grads.d_loss_d_z(i, c), i, i + 1,
            "[" + std::to_string(i) + "][" + std::to_string(c) + "]");
    }
  }
  builder.begin_block("dLc/dm");
  for (std::size_t j = 0; j < m.rows(); ++j) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      check(mp(j, c), analytic.grads.d_loss_d_m(j, c), 0, z.rows(),
            "[" + std::to_string(j) + "][" + std::to_string(c) + "]");
    }
  }
  return builder.finish();
}

}  // namespace decs
