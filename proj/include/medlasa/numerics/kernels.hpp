#pragma once

// Dense GEMM kernels. The default entry points split output rows across
// OpenMP threads; `reference` holds the plain triple loops they are tested
// against. Every output element accumulates its inner products in ascending
// index order in both versions, so results are bit-identical regardless of
// thread count.

#include "medlasa/numerics/matrix.hpp"

namespace medlasa::kernels {

/// out (+)= a * b
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
/// out (+)= a * b^T
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
/// out (+)= a^T * b
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

/// Number of OpenMP threads the kernels will use (1 when built without OpenMP).
int max_threads();

namespace reference {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

}  // namespace reference
}  // namespace medlasa::kernels
