#include "decs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace decs {

namespace {

std::vector<int> sorted_unique(std::span<const int> v) {
  std::vector<int> u(v.begin(), v.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

std::size_t index_of(const std::vector<int>& sorted, int v) {
  return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
}

}  // namespace

ContingencyTable contingency(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) {
    throw DimensionError("label length mismatch: " + std::to_string(pred.size()) + " predicted vs " +
                         std::to_string(truth.size()) + " true");
  }
  ContingencyTable t;
  t.pred_labels = sorted_unique(pred);
  t.true_labels = sorted_unique(truth);
  t.n = pred.size();
  t.counts.assign(t.rows() * t.cols(), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ++t.counts[index_of(t.pred_labels, pred[i]) * t.cols() + index_of(t.true_labels, truth[i])];
  }
  return t;
}

std::vector<std::size_t> hungarian(const Matrix& cost) {
  const std::size_t n = cost.rows();
  if (cost.cols() != n) throw DimensionError("hungarian: cost matrix must be square");
  if (n == 0) return {};
  // Shortest augmenting paths with row/column potentials; index 0 is a sentinel.
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[col0] = 1;
      const std::size_t r0 = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double cur = cost(r0 - 1, c - 1) - u[r0] - v[c];
        if (cur < minv[c]) {
          minv[c] = cur;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t c = 1; c <= n; ++c) assignment[match[c] - 1] = c - 1;
  return assignment;
}

double accuracy(std::span<const int> pred, std::span<const int> truth) {
  const auto t = contingency(pred, truth);
  if (t.n == 0) throw DimensionError("accuracy: empty labeling");
  const std::size_t k = std::max(t.rows(), t.cols());
  Matrix cost(k, k, 0.0);
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) cost(r, c) = -static_cast<double>(t(r, c));
  const auto match = hungarian(cost);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (match[r] < t.cols()) hits += t(r, match[r]);
  }
  return static_cast<double>(hits) / static_cast<double>(t.n);
}

double nmi(std::span<const int> pred, std::span<const int> truth) {
  const auto t = contingency(pred, truth);
  if (t.n == 0) throw DimensionError("nmi: empty labeling");
  const double n = static_cast<double>(t.n);
  std::vector<double> row(t.rows(), 0.0), col(t.cols(), 0.0);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) {
      row[r] += static_cast<double>(t(r, c));
      col[c] += static_cast<double>(t(r, c));
    }
  }
  const auto entropy = [n](const std::vector<double>& counts) {
    double h = 0.0;
    for (const double c : counts) h -= c / n * std::log(c / n);
    return h;
  };
  const double hp = entropy(row), ht = entropy(col);
  if (t.rows() == 1 && t.cols() == 1) return 1.0;
  if (t.rows() == 1 || t.cols() == 1) return 0.0;
  double mi = 0.0;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) {
      const double nij = static_cast<double>(t(r, c));
      if (nij > 0.0) mi += nij / n * std::log(n * nij / (row[r] * col[c]));
    }
  }
  return std::clamp(mi / std::sqrt(hp * ht), 0.0, 1.0);
}

EvaluationReport evaluate(std::span<const int> pred, std::span<const int> truth) {
  const auto t = contingency(pred, truth);
  return {t.n, t.rows(), t.cols(), accuracy(pred, truth), nmi(pred, truth)};
}

void write_text(std::ostream& os, const EvaluationReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "n=%zu k_pred=%zu k_true=%zu ACC=%.6f NMI=%.6f\n", r.n, r.k_pred,
                r.k_true, r.acc, r.nmi);
  os << buf;
}

void write_csv(std::ostream& os, const EvaluationReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "n,k_pred,k_true,acc,nmi\n%zu,%zu,%zu,%.17g,%.17g\n", r.n, r.k_pred,
                r.k_true, r.acc, r.nmi);
  os << buf;
}

}  // namespace decs
