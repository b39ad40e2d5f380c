#pragma once

#include <cstddef>

#include "incrprobe/matrix.hpp"

// Hot loops used by the autodiff tape and the metrics. Two implementations
// live side by side:
//
//   kernels::serial  straightforward loops, kept as the reference for tests
//                    and the benchmark baseline
//   kernels::omp     OpenMP-parallel versions used on the hot path
//
// The parallel kernels split work over output rows only, so every output
// element is accumulated in the same order regardless of thread count and
// results are bit-identical between 1 and N threads.

namespace incrprobe::kernels {

enum class Distance { euclidean, cosine };

namespace serial {

/// c = a·b, or c += a·b when accumulate is set.
void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate);
/// c = aᵀ·b (+=).
void gemm_at_b(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate);
/// c = a·bᵀ (+=).
void gemm_a_bt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate);
/// Mean distance over all unordered row pairs of `states`; 0 for < 2 rows.
double mean_pairwise_distance(const Matrix& states, Distance metric);

}  // namespace serial

namespace omp {

void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate);
void gemm_at_b(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate);
void gemm_a_bt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate);
double mean_pairwise_distance(const Matrix& states, Distance metric);

}  // namespace omp

double distance(std::span<const double> a, std::span<const double> b, Distance metric);

/// Number of OpenMP threads the parallel kernels may use (1 without OpenMP).
int max_threads();
void set_max_threads(int n);

}  // namespace incrprobe::kernels
