#include "medlasa/numerics/kernels.hpp"

#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "medlasa/errors.hpp"

namespace medlasa::kernels {
namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 16;

void check(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

void prepare(Matrix& out, std::size_t rows, std::size_t cols, bool accumulate) {
  if (accumulate) {
    if (out.rows() != rows || out.cols() != cols) throw ShapeError("gemm: accumulator shape mismatch");
  } else if (out.rows() != rows || out.cols() != cols) {
    out = Matrix(rows, cols);
  } else {
    std::fill(out.values().begin(), out.values().end(), 0.0);
  }
}

// c[i, :] += sum_p a[i, p] * b[p, :] for rows [i0, i0 + 4), sharing each b row load.
inline void block4_nn(const double* a, std::size_t lda, const double* b, std::size_t k,
                      std::size_t m, double* c) {
  double* c0 = c;
  double* c1 = c + m;
  double* c2 = c + 2 * m;
  double* c3 = c + 3 * m;
  for (std::size_t p = 0; p < k; ++p) {
    const double a0 = a[p];
    const double a1 = a[lda + p];
    const double a2 = a[2 * lda + p];
    const double a3 = a[3 * lda + p];
    const double* bp = b + p * m;
#pragma omp simd
    for (std::size_t j = 0; j < m; ++j) {
      const double bv = bp[j];
      c0[j] += a0 * bv;
      c1[j] += a1 * bv;
      c2[j] += a2 * bv;
      c3[j] += a3 * bv;
    }
  }
}

inline void row_nn(const double* a, const double* b, std::size_t k, std::size_t m, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    const double* bp = b + p * m;
#pragma omp simd
    for (std::size_t j = 0; j < m; ++j) c[j] += av * bp[j];
  }
}

void nn_into(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const std::size_t blocks = n / 4;
  const bool parallel = n * k * m >= kParallelWork;
  const double* ad = a.data();
  const double* bd = b.data();
  double* cd = out.data();
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t blk = 0; blk < static_cast<std::ptrdiff_t>(blocks); ++blk) {
    const std::size_t i = static_cast<std::size_t>(blk) * 4;
    block4_nn(ad + i * k, k, bd, k, m, cd + i * m);
  }
  for (std::size_t i = blocks * 4; i < n; ++i) row_nn(ad + i * k, bd, k, m, cd + i * m);
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.cols() == b.rows(), "matmul", a, b);
  prepare(out, a.rows(), b.cols(), accumulate);
  nn_into(a, b, out);
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.cols() == b.cols(), "matmul_nt", a, b);
  prepare(out, a.rows(), b.rows(), accumulate);
  nn_into(a, transpose(b), out);
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  check(a.rows() == b.rows(), "matmul_tn", a, b);
  const std::size_t n = a.rows(), ka = a.cols(), m = b.cols();
  prepare(out, ka, m, accumulate);
  const bool parallel = n * ka * m >= kParallelWork;
  const double* ad = a.data();
  const double* bd = b.data();
  double* cd = out.data();
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(ka); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    double* c = cd + i * m;
    for (std::size_t r = 0; r < n; ++r) {
      const double av = ad[r * ka + i];
      if (av == 0.0) continue;
      const double* br = bd + r * m;
#pragma omp simd
      for (std::size_t j = 0; j < m; ++j) c[j] += av * br[j];
    }
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out;
  gemm_nn(a, b, out);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix out;
  gemm_nt(a, b, out);
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out;
  gemm_tn(a, b, out);
  return out;
}

namespace reference {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check(a.cols() == b.rows(), "matmul", a, b);
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      out(i, j) = acc;
    }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  check(a.cols() == b.cols(), "matmul_nt", a, b);
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(j, p);
      out(i, j) = acc;
    }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  check(a.rows() == b.rows(), "matmul_tn", a, b);
  Matrix out(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.rows(); ++p) acc += a(p, i) * b(p, j);
      out(i, j) = acc;
    }
  return out;
}

}  // namespace reference
}  // namespace medlasa::kernels
