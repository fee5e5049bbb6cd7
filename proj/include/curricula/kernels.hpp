#pragma once

// Dense row-major kernels used by the seq2seq forward/backward passes.
//
// Each kernel exists twice: a plain serial version in `serial::` kept as the
// reference for tests and benchmarks, and an OpenMP version that splits the
// work over output rows. Both accumulate every output element over the
// reduction index in the same ascending order, so they agree bit for bit for
// any thread count.

#include <cstddef>

namespace curricula::kernels {

/// C[m,n] += sum_k A[m,k] * B[k,n]      A: MxK, B: KxN, C: MxN
void gemm_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N);

/// C[k,n] += sum_m A[m,k] * B[m,n]      A: MxK, B: MxN, C: KxN
void gemm_tn_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N);

/// C[m,k] += sum_n A[m,n] * B[k,n]      A: MxN, B: KxN, C: MxK
/// Computed through a transposed copy of B so the inner loop stays contiguous.
void gemm_nt_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N);

/// out[n,m] = in[m,n]
void transpose(const double* in, double* out, std::size_t M, std::size_t N);

namespace serial {
void gemm_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N);
void gemm_tn_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N);
void gemm_nt_acc(const double* A, const double* B, double* C, std::size_t M, std::size_t K, std::size_t N);
}  // namespace serial

/// Work size (M*K*N) below which the parallel kernels run on the calling thread.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

}  // namespace curricula::kernels
