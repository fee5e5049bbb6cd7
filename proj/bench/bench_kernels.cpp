// Serial vs OpenMP timings for the matrix kernels and corpus scoring.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <vector>

#include "curricula/harness.hpp"
#include "curricula/kernels.hpp"
#include "curricula/metrics.hpp"
#include "curricula/util.hpp"

using namespace curricula;

namespace {

template <typename Fn>
double best_of(int reps, Fn&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<double> m(n);
  for (auto& x : m) x = rng.next_unit() - 0.5;
  return m;
}

}  // namespace

int main() {
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-28s %12s %12s %8s %s\n", "kernel", "serial_ms", "openmp_ms", "speedup", "identical");
  const std::size_t shapes[][3] = {{32, 256, 512}, {128, 640, 2048}, {128, 128, 24}};
  for (const auto& s : shapes) {
    const std::size_t M = s[0], K = s[1], N = s[2];
    const auto A = random_matrix(M * K, 1), B = random_matrix(K * N, 2), G = random_matrix(M * N, 3);
    std::vector<double> c1(M * N), c2(M * N), d1(K * N), d2(K * N), e1(M * K), e2(M * K);
    const double ts = best_of(3, [&] {
      std::fill(c1.begin(), c1.end(), 0.0);
      kernels::serial::gemm_acc(A.data(), B.data(), c1.data(), M, K, N);
    });
    const double tp = best_of(3, [&] {
      std::fill(c2.begin(), c2.end(), 0.0);
      kernels::gemm_acc(A.data(), B.data(), c2.data(), M, K, N);
    });
    char name[64];
    std::snprintf(name, sizeof name, "gemm %zux%zux%zu", M, K, N);
    std::printf("%-28s %12.3f %12.3f %8.2f %s\n", name, ts * 1e3, tp * 1e3, ts / tp, c1 == c2 ? "yes" : "NO");

    const double ts2 = best_of(3, [&] {
      std::fill(d1.begin(), d1.end(), 0.0);
      kernels::serial::gemm_tn_acc(A.data(), G.data(), d1.data(), M, K, N);
    });
    const double tp2 = best_of(3, [&] {
      std::fill(d2.begin(), d2.end(), 0.0);
      kernels::gemm_tn_acc(A.data(), G.data(), d2.data(), M, K, N);
    });
    std::snprintf(name, sizeof name, "gemm_tn %zux%zux%zu", M, K, N);
    std::printf("%-28s %12.3f %12.3f %8.2f %s\n", name, ts2 * 1e3, tp2 * 1e3, ts2 / tp2, d1 == d2 ? "yes" : "NO");

    const double ts3 = best_of(3, [&] {
      std::fill(e1.begin(), e1.end(), 0.0);
      kernels::serial::gemm_nt_acc(G.data(), B.data(), e1.data(), M, K, N);
    });
    const double tp3 = best_of(3, [&] {
      std::fill(e2.begin(), e2.end(), 0.0);
      kernels::gemm_nt_acc(G.data(), B.data(), e2.data(), M, K, N);
    });
    std::snprintf(name, sizeof name, "gemm_nt %zux%zux%zu", M, N, K);
    std::printf("%-28s %12.3f %12.3f %8.2f %s\n", name, ts3 * 1e3, tp3 * 1e3, ts3 / tp3, e1 == e2 ? "yes" : "NO");
  }

  // Corpus scoring with a small untrained model.
  const auto splits = generate_toy_corpus({ToyTask::Reverse, 500, 20, 5, 10, 3});
  const auto sv = build_vocab(splits.train, Side::Source, 1), tv = build_vocab(splits.train, Side::Target, 1);
  auto cfg = ModelConfig::small(sv.size(), tv.size());
  cfg.hidden_dim = cfg.embed_dim = 64;
  ModelCheckpoint model;
  model.params = init_params(cfg, 1);
  model.src_vocab_fp = sv.fingerprint();
  model.tgt_vocab_fp = tv.fingerprint();
  for (auto metric : {MetricKind::Perplexity, MetricKind::Bleu}) {
    ScoreTable a, b;
    const double ts = best_of(1, [&] { a = serial::score_with_model(metric, model, splits.train, sv, tv); });
    const double tp = best_of(1, [&] { b = score_with_model(metric, model, splits.train, sv, tv); });
    char name[64];
    std::snprintf(name, sizeof name, "score %s (%zu pairs)", metric_name(metric), splits.train.size());
    std::printf("%-28s %12.3f %12.3f %8.2f %s\n", name, ts * 1e3, tp * 1e3, ts / tp,
                a.entries == b.entries ? "yes" : "NO");
  }
  return 0;
}
