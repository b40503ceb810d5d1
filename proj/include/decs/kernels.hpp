#pragma once

#include "decs/matrix.hpp"

// Dense products used by the network layers. Two implementations share one
// signature set: `kernels` is the OpenMP-parallel, register-blocked path used
// in training, `reference` is the plain triple loop kept as the test oracle
// and benchmark baseline. All functions overwrite `c` (resizing it if needed).

namespace decs::kernels {

/// c = a * b      (a: m x k, b: k x n)
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c);
/// c = a * b^T    (a: m x k, b: n x k)
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c);
/// c = a^T * b    (a: k x m, b: k x n)
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c);

Matrix transpose(const Matrix& a);

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads() noexcept;

}  // namespace decs::kernels

namespace decs::reference {

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c);

}  // namespace decs::reference
