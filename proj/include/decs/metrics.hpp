#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "decs/matrix.hpp"

namespace decs {

/// One cluster index per sample.
using AssignmentLabels = std::vector<int>;

/// Counts of (predicted, true) label pairs. Label values are arbitrary
/// integers; rows and columns follow their sorted order.
struct ContingencyTable {
  std::vector<int> pred_labels;
  std::vector<int> true_labels;
  std::vector<std::size_t> counts;  ///< row-major, pred_labels.size() x true_labels.size()
  std::size_t n = 0;

  std::size_t rows() const noexcept { return pred_labels.size(); }
  std::size_t cols() const noexcept { return true_labels.size(); }
  std::size_t operator()(std::size_t r, std::size_t c) const noexcept { return counts[r * cols() + c]; }
};

/// Throws DimensionError on a length mismatch.
ContingencyTable contingency(std::span<const int> pred, std::span<const int> truth);

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// O(n^3)). Returns column assigned to each row.
std::vector<std::size_t> hungarian(const Matrix& cost);

/// Best matched fraction over bijections between predicted and true labels.
/// The contingency table is padded square with zeros when the counts differ.
double accuracy(std::span<const int> pred, std::span<const int> truth);

/// I(pred; truth) / sqrt(H(pred) H(truth)) with natural logs. Defined as 1
/// when both labelings have a single cluster and 0 when only one does.
double nmi(std::span<const int> pred, std::span<const int> truth);

struct EvaluationReport {
  std::size_t n = 0;
  std::size_t k_pred = 0;
  std::size_t k_true = 0;
  double acc = 0.0;
  double nmi = 0.0;
};

EvaluationReport evaluate(std::span<const int> pred, std::span<const int> truth);

/// "n=... k_pred=... k_true=... ACC=... NMI=..." on one line.
void write_text(std::ostream& os, const EvaluationReport& r);
/// Header "n,k_pred,k_true,acc,nmi" and one data row.
void write_csv(std::ostream& os, const EvaluationReport& r);

}  // namespace decs
