#include <doctest.h>

#include <vector>

#include "curricula/kernels.hpp"
#include "curricula/util.hpp"

using namespace curricula;

namespace {

std::vector<double> rand_vec(std::size_t n, std::uint64_t seed) {
  CounterRng r(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = r.next_unit() * 2.0 - 1.0;
  return v;
}

}  // namespace

TEST_CASE("gemm variants agree with a triple loop") {
  const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {17, 9, 33}, {64, 96, 128}, {200, 40, 10}};
  for (const auto& s : shapes) {
    const std::size_t M = s[0], K = s[1], N = s[2];
    CAPTURE(M);
    CAPTURE(K);
    CAPTURE(N);
    const auto A = rand_vec(M * K, 1), B = rand_vec(K * N, 2), G = rand_vec(M * N, 3), Bt = rand_vec(K * N, 4);
    const auto C0 = rand_vec(M * N, 5);

    std::vector<double> ref = C0;
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t n = 0; n < N; ++n) {
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) acc += A[m * K + k] * B[k * N + n];
        ref[m * N + n] += acc;
      }
    auto c = C0;
    kernels::gemm_acc(A.data(), B.data(), c.data(), M, K, N);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    // A^T G: [K, N]
    std::vector<double> ref_tn(K * N, 0.0), tn(K * N, 0.0);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t m = 0; m < M; ++m) ref_tn[k * N + n] += A[m * K + k] * G[m * N + n];
    kernels::gemm_tn_acc(A.data(), G.data(), tn.data(), M, K, N);
    for (std::size_t i = 0; i < tn.size(); ++i) CHECK(tn[i] == doctest::Approx(ref_tn[i]).epsilon(1e-12));

    // G Bt^T: [M, K] with Bt [K, N]
    std::vector<double> ref_nt(M * K, 0.0), nt(M * K, 0.0);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t n = 0; n < N; ++n) ref_nt[m * K + k] += G[m * N + n] * Bt[k * N + n];
    kernels::gemm_nt_acc(G.data(), Bt.data(), nt.data(), M, K, N);
    for (std::size_t i = 0; i < nt.size(); ++i) CHECK(nt[i] == doctest::Approx(ref_nt[i]).epsilon(1e-12));
  }
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  const std::size_t shapes[][3] = {{2, 3, 4}, {128, 256, 512}, {64, 640, 96}};
  for (const auto& s : shapes) {
    const std::size_t M = s[0], K = s[1], N = s[2];
    const auto A = rand_vec(M * K, 11), B = rand_vec(K * N, 12), G = rand_vec(M * N, 13);
    std::vector<double> p(M * N, 0.5), q(M * N, 0.5);
    kernels::gemm_acc(A.data(), B.data(), p.data(), M, K, N);
    kernels::serial::gemm_acc(A.data(), B.data(), q.data(), M, K, N);
    CHECK(p == q);
    std::vector<double> p2(K * N, 0.0), q2(K * N, 0.0);
    kernels::gemm_tn_acc(A.data(), G.data(), p2.data(), M, K, N);
    kernels::serial::gemm_tn_acc(A.data(), G.data(), q2.data(), M, K, N);
    CHECK(p2 == q2);
    std::vector<double> p3(M * K, 0.0), q3(M * K, 0.0);
    kernels::gemm_nt_acc(G.data(), B.data(), p3.data(), M, K, N);
    kernels::serial::gemm_nt_acc(G.data(), B.data(), q3.data(), M, K, N);
    CHECK(p3 == q3);
  }
}

TEST_CASE("transpose") {
  const std::size_t M = 37, N = 70;
  const auto A = rand_vec(M * N, 21);
  std::vector<double> T(M * N);
  kernels::transpose(A.data(), T.data(), M, N);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t n = 0; n < N; ++n) CHECK(T[n * M + m] == A[m * N + n]);
}
