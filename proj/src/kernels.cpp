#include "decs/kernels.hpp"

#include <algorithm>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace decs {
namespace {

constexpr std::size_t kTileRows = 6;
constexpr std::size_t kTileCols = 16;
constexpr std::size_t kRowBlock = 48;

void check_inner(std::size_t lhs, std::size_t rhs, const char* op) {
  if (lhs != rhs) {
    throw DimensionError(std::string(op) + ": inner dimensions differ (" + std::to_string(lhs) +
                         " vs " + std::to_string(rhs) + ")");
  }
}

void reshape(Matrix& c, std::size_t rows, std::size_t cols) {
  if (c.rows() != rows || c.cols() != cols) c = Matrix(rows, cols);
}

// B (k x n, row-major) repacked into column panels of width kTileCols:
// panel t holds B(p, t * kTileCols + c) at [t][p][c], zero-padded past n.
std::vector<double> pack_panels(const Matrix& b) {
  const std::size_t k = b.rows();
  const std::size_t n = b.cols();
  const std::size_t panels = (n + kTileCols - 1) / kTileCols;
  std::vector<double> packed(panels * k * kTileCols, 0.0);
  for (std::size_t t = 0; t < panels; ++t) {
    const std::size_t j0 = t * kTileCols;
    const std::size_t width = std::min(kTileCols, n - j0);
    double* dst = packed.data() + t * k * kTileCols;
    for (std::size_t p = 0; p < k; ++p) {
      const double* src = b.data() + p * n + j0;
      for (std::size_t c = 0; c < width; ++c) dst[p * kTileCols + c] = src[c];
    }
  }
  return packed;
}

// C = A * B with A m x k and B given as packed panels.
void multiply_packed(const Matrix& a, const std::vector<double>& panels, std::size_t n, Matrix& c) {
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t num_panels = (n + kTileCols - 1) / kTileCols;
  const std::size_t row_blocks = (m + kRowBlock - 1) / kRowBlock;
  const double* a_data = a.data();
  double* c_data = c.data();

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t rb = 0; rb < static_cast<std::ptrdiff_t>(row_blocks); ++rb) {
    const std::size_t i_begin = static_cast<std::size_t>(rb) * kRowBlock;
    const std::size_t i_end = std::min(m, i_begin + kRowBlock);
    for (std::size_t t = 0; t < num_panels; ++t) {
      const double* panel = panels.data() + t * k * kTileCols;
      const std::size_t j0 = t * kTileCols;
      const std::size_t width = std::min(kTileCols, n - j0);
      std::size_t i = i_begin;
      for (; i + kTileRows <= i_end; i += kTileRows) {
        double acc[kTileRows][kTileCols] = {};
        const double* a_tile = a_data + i * k;
        for (std::size_t p = 0; p < k; ++p) {
          const double* bp = panel + p * kTileCols;
          for (std::size_t r = 0; r < kTileRows; ++r) {
            const double v = a_tile[r * k + p];
#pragma omp simd
            for (std::size_t cc = 0; cc < kTileCols; ++cc) acc[r][cc] += v * bp[cc];
          }
        }
        for (std::size_t r = 0; r < kTileRows; ++r) {
          double* dst = c_data + (i + r) * n + j0;
          for (std::size_t cc = 0; cc < width; ++cc) dst[cc] = acc[r][cc];
        }
      }
      for (; i < i_end; ++i) {
        double acc[kTileCols] = {};
        const double* ai = a_data + i * k;
        for (std::size_t p = 0; p < k; ++p) {
          const double* bp = panel + p * kTileCols;
          const double v = ai[p];
#pragma omp simd
          for (std::size_t cc = 0; cc < kTileCols; ++cc) acc[cc] += v * bp[cc];
        }
        double* dst = c_data + i * n + j0;
        for (std::size_t cc = 0; cc < width; ++cc) dst[cc] = acc[cc];
      }
    }
  }
}

}  // namespace

namespace kernels {

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < a.rows(); r0 += kBlock) {
    for (std::size_t c0 = 0; c0 < a.cols(); c0 += kBlock) {
      const std::size_t r1 = std::min(a.rows(), r0 + kBlock);
      const std::size_t c1 = std::min(a.cols(), c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) t(c, r) = a(r, c);
      }
    }
  }
  return t;
}

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c) {
  check_inner(a.cols(), b.rows(), "gemm_nn");
  reshape(c, a.rows(), b.cols());
  multiply_packed(a, pack_panels(b), b.cols(), c);
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  check_inner(a.cols(), b.cols(), "gemm_nt");
  reshape(c, a.rows(), b.rows());
  multiply_packed(a, pack_panels(transpose(b)), b.rows(), c);
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  check_inner(a.rows(), b.rows(), "gemm_tn");
  reshape(c, a.cols(), b.cols());
  multiply_packed(transpose(a), pack_panels(b), b.cols(), c);
}

}  // namespace kernels

namespace reference {

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c) {
  check_inner(a.cols(), b.rows(), "gemm_nn");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      out(i, j) = s;
    }
  }
  c = std::move(out);
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  check_inner(a.cols(), b.cols(), "gemm_nt");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(j, p);
      out(i, j) = s;
    }
  }
  c = std::move(out);
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  check_inner(a.rows(), b.rows(), "gemm_tn");
  Matrix out(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.rows(); ++p) s += a(p, i) * b(p, j);
      out(i, j) = s;
    }
  }
  c = std::move(out);
}

}  // namespace reference
}  // namespace decs
