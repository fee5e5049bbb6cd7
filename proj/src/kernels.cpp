#include "curricula/kernels.hpp"

#include <vector>

namespace curricula::kernels {

namespace {

inline void row_axpy(double a, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += a * x[j];
}

}  // namespace

namespace serial {

void gemm_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t k = 0; k < K; ++k) row_axpy(A[m * K + k], B + k * N, C + m * N, N);
}

void gemm_tn_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t k = 0; k < K; ++k) row_axpy(A[m * K + k], B + m * N, C + k * N, N);
}

void gemm_nt_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N) {
  // Direct dot products; reference only.
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t k = 0; k < K; ++k) {
      double acc = C[m * K + k];
      for (std::size_t n = 0; n < N; ++n) acc += A[m * N + n] * B[k * N + n];
      C[m * K + k] = acc;
    }
}

}  // namespace serial

void gemm_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N) {
  const long long rows = static_cast<long long>(M);
#pragma omp parallel for schedule(static) if (M * K * N >= kParallelThreshold && M > 1)
  for (long long m = 0; m < rows; ++m) {
    const double* a = A + m * K;
    double* c = C + m * N;
    for (std::size_t k = 0; k < K; ++k) row_axpy(a[k], B + k * N, c, N);
  }
}

void gemm_tn_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N) {
  // Each thread owns whole rows of C and walks m in ascending order.
  const long long rows = static_cast<long long>(K);
#pragma omp parallel for schedule(static) if (M * K * N >= kParallelThreshold && K > 1)
  for (long long k = 0; k < rows; ++k) {
    double* c = C + k * N;
    for (std::size_t m = 0; m < M; ++m) row_axpy(A[m * K + k], B + m * N, c, N);
  }
}

void gemm_nt_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N) {
  // C[m,k] += sum_n A[m,n] Bt[n,k]; same summation order as the serial dot product.
  std::vector<double> bt(K * N);
  transpose(B, bt.data(), K, N);
  gemm_acc(A, bt.data(), C, M, N, K);
}

void transpose(const double* in, double* out, std::size_t M, std::size_t N) {
  constexpr std::size_t kTile = 32;
  for (std::size_t i0 = 0; i0 < M; i0 += kTile)
    for (std::size_t j0 = 0; j0 < N; j0 += kTile)
      for (std::size_t i = i0; i < M && i < i0 + kTile; ++i)
        for (std::size_t j = j0; j < N && j < j0 + kTile; ++j) out[j * M + i] = in[i * N + j];
}

}  // namespace curricula::kernels
