#include "incrprobe/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "incrprobe/error.hpp"

namespace incrprobe::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

void check_gemm(std::size_t ar, std::size_t ac, std::size_t br, std::size_t bc, const Matrix& c,
                const char* what, const Matrix& a, const Matrix& b) {
  if (ac != br || c.rows() != ar || c.cols() != bc) {
    throw DimensionError(std::string(what) + " shape mismatch: " + a.shape_string() + ", " +
                         b.shape_string() + " -> " + c.shape_string());
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

}  // namespace

double distance(std::span<const double> a, std::span<const double> b, Distance metric) {
  if (a.size() != b.size()) throw DimensionError("distance: length mismatch");
  if (metric == Distance::euclidean) return l2_distance(a, b);
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  // Cosine similarity of a zero vector is taken as 0.
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot(a.data(), b.data(), a.size()) / (na * nb);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_max_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace serial {

void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_gemm(a.rows(), a.cols(), b.rows(), b.cols(), c, "gemm", a, b);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = accumulate ? c(i, j) + s : s;
    }
}

void gemm_at_b(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_gemm(a.cols(), a.rows(), b.rows(), b.cols(), c, "gemm_at_b", a, b);
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
      c(i, j) = accumulate ? c(i, j) + s : s;
    }
}

void gemm_a_bt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_gemm(a.rows(), a.cols(), b.cols(), b.rows(), c, "gemm_a_bt", a, b);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
      c(i, j) = accumulate ? c(i, j) + s : s;
    }
}

double mean_pairwise_distance(const Matrix& states, Distance metric) {
  const std::size_t n = states.rows();
  if (n < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) sum += distance(states.row(i), states.row(j), metric);
  return sum / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

}  // namespace serial

namespace omp {

namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 32;

// c[rows, :] (+)= Σ_k x(r, k) · b[k, :] for the rows of one block, where
// x(r, k) = a[(row0 + r) * a_row_stride + k * a_col_stride]. The 4×32
// accumulator tile stays in registers.
void gemm_block(const double* a, std::size_t a_row_stride, std::size_t a_col_stride,
                const double* b, double* c, std::size_t row0, std::size_t rows, std::size_t kk,
                std::size_t n, bool accumulate) {
  for (std::size_t j0 = 0; j0 < n; j0 += kColBlock) {
    const std::size_t nb = std::min(kColBlock, n - j0);
    double acc[kRowBlock][kColBlock] = {};
    for (std::size_t k = 0; k < kk; ++k) {
      const double* brow = b + k * n + j0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double x = a[(row0 + r) * a_row_stride + k * a_col_stride];
        for (std::size_t j = 0; j < nb; ++j) acc[r][j] += x * brow[j];
      }
    }
    for (std::size_t r = 0; r < rows; ++r) {
      double* crow = c + (row0 + r) * n + j0;
      for (std::size_t j = 0; j < nb; ++j) crow[j] = accumulate ? crow[j] + acc[r][j] : acc[r][j];
    }
  }
}

void blocked_gemm(const double* a, std::size_t a_row_stride, std::size_t a_col_stride,
                  const double* b, double* c, std::size_t m, std::size_t kk, std::size_t n,
                  bool accumulate) {
  const long blocks = static_cast<long>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static) if (m * kk * n > kParallelWork)
  for (long blk = 0; blk < blocks; ++blk) {
    const std::size_t row0 = static_cast<std::size_t>(blk) * kRowBlock;
    gemm_block(a, a_row_stride, a_col_stride, b, c, row0, std::min(kRowBlock, m - row0), kk, n,
               accumulate);
  }
}

}  // namespace

void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_gemm(a.rows(), a.cols(), b.rows(), b.cols(), c, "gemm", a, b);
  blocked_gemm(a.data(), a.cols(), 1, b.data(), c.data(), a.rows(), a.cols(), b.cols(),
               accumulate);
}

void gemm_at_b(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_gemm(a.cols(), a.rows(), b.rows(), b.cols(), c, "gemm_at_b", a, b);
  // Row r of aᵀ is column r of a: stride 1 between rows, a.cols() along k.
  blocked_gemm(a.data(), 1, a.cols(), b.data(), c.data(), a.cols(), a.rows(), b.cols(),
               accumulate);
}

void gemm_a_bt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_gemm(a.rows(), a.cols(), b.cols(), b.rows(), c, "gemm_a_bt", a, b);
  const Matrix bt = transpose(b);
  blocked_gemm(a.data(), a.cols(), 1, bt.data(), c.data(), a.rows(), a.cols(), bt.cols(),
               accumulate);
}

double mean_pairwise_distance(const Matrix& states, Distance metric) {
  const std::size_t n = states.rows();
  if (n < 2) return 0.0;
  // Per-row partial sums reduced serially afterwards: the result does not
  // depend on the thread count.
  std::vector<double> partial(n, 0.0);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic, 16) if (n * states.cols() * n > 2 * kParallelWork)
  for (long i = 0; i < rows; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    double s = 0.0;
    for (std::size_t j = ui + 1; j < n; ++j) s += distance(states.row(ui), states.row(j), metric);
    partial[ui] = s;
  }
  double sum = 0.0;
  for (double p : partial) sum += p;
  return sum / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

}  // namespace omp

}  // namespace incrprobe::kernels
