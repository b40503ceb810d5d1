#include "decs/matrix.hpp"

#include <cmath>

namespace decs {

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) {
      throw DimensionError("gather_rows: row index " + std::to_string(indices[i]) +
                           " out of range " + std::to_string(rows_));
    }
    const auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

bool Matrix::all_finite() const noexcept {
  for (const double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_finite(const Matrix& m, const std::string& what) {
  if (!m.all_finite()) throw NonFiniteError(what + " contains non-finite values");
}

double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double diff = a[c] - b[c];
    s += diff * diff;
  }
  return s;
}

double l2_norm(std::span<const double> v) noexcept {
  double s = 0.0;
  for (const double x : v) s += x * x;
  return std::sqrt(s);
}

double frobenius_norm(const Matrix& m) noexcept { return l2_norm(m.flat()); }

}  // namespace decs
