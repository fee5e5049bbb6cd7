#pragma once

// Independent oracles and hand-rigged models shared by the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "curricula/checkpoint.hpp"
#include "curricula/corpus.hpp"
#include "curricula/seq2seq.hpp"
#include "curricula/util.hpp"

namespace testing {

using curricula::Tokens;

// ---------------------------------------------------------------------------
// BLEU by position scanning: no maps, no hashing.

struct Counts {
  std::size_t match[4] = {0, 0, 0, 0};
  std::size_t total[4] = {0, 0, 0, 0};
  std::size_t cand = 0, ref = 0;
};

inline bool same_gram(const Tokens& a, std::size_t i, const Tokens& b, std::size_t j, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k)
    if (a[i + k] != b[j + k]) return false;
  return true;
}

inline std::size_t occurrences(const Tokens& seq, const Tokens& gram_src, std::size_t at, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t j = 0; j + n <= seq.size(); ++j)
    if (same_gram(seq, j, gram_src, at, n)) ++c;
  return c;
}

inline Counts brute_counts(const Tokens& cand, const Tokens& ref) {
  Counts c;
  c.cand = cand.size();
  c.ref = ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    if (cand.size() >= n) c.total[n - 1] = cand.size() - n + 1;
    for (std::size_t i = 0; i + n <= cand.size(); ++i) {
      bool first = true;
      for (std::size_t j = 0; j < i && first; ++j)
        if (same_gram(cand, j, cand, i, n)) first = false;
      if (!first) continue;
      const std::size_t in_cand = occurrences(cand, cand, i, n);
      const std::size_t in_ref = occurrences(ref, cand, i, n);
      c.match[n - 1] += in_cand < in_ref ? in_cand : in_ref;
    }
  }
  return c;
}

inline double brute_sentence_bleu(const Tokens& cand, const Tokens& ref) {
  if (cand.empty()) return 0.0;
  const auto c = brute_counts(cand, ref);
  if (c.match[0] == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    const double add = n == 0 ? 0.0 : 1.0;
    log_sum += 0.25 * std::log((static_cast<double>(c.match[n]) + add) / (static_cast<double>(c.total[n]) + add));
  }
  const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(c.ref) / static_cast<double>(c.cand)));
  return std::min(1.0, bp * std::exp(log_sum));
}

inline double brute_corpus_bleu(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs) {
  Counts sum;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const auto c = brute_counts(cands[i], refs[i]);
    for (int n = 0; n < 4; ++n) {
      sum.match[n] += c.match[n];
      sum.total[n] += c.total[n];
    }
    sum.cand += c.cand;
    sum.ref += c.ref;
  }
  if (sum.cand == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (sum.match[n] == 0) return 0.0;
    log_sum += 0.25 * std::log(static_cast<double>(sum.match[n]) / static_cast<double>(sum.total[n]));
  }
  const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(sum.ref) / static_cast<double>(sum.cand)));
  return std::min(1.0, bp * std::exp(log_sum));
}

inline Tokens random_tokens(curricula::CounterRng& rng, std::size_t alphabet, std::size_t min_len, std::size_t max_len) {
  const std::size_t len = min_len + rng.next_below(max_len - min_len + 1);
  Tokens t;
  for (std::size_t i = 0; i < len; ++i) t.push_back(std::string(1, static_cast<char>('a' + rng.next_below(alphabet))));
  return t;
}

// ---------------------------------------------------------------------------
// Tiny corpora and models

/// Pairs of random letters, with indices 0..n-1.
inline curricula::ParallelCorpus random_corpus(std::size_t n, std::size_t alphabet, std::size_t min_len,
                                               std::size_t max_len, std::uint64_t seed) {
  curricula::CounterRng rng(seed);
  curricula::ParallelCorpus c;
  for (std::size_t i = 0; i < n; ++i) {
    auto src = random_tokens(rng, alphabet, min_len, max_len);
    auto tgt = random_tokens(rng, alphabet, min_len, max_len);
    c.pairs.push_back({i, std::move(src), std::move(tgt)});
  }
  return c;
}

struct TinySetup {
  curricula::ParallelCorpus corpus;
  curricula::Vocabulary src_vocab, tgt_vocab;
  curricula::EncodedCorpus encoded;
};

inline TinySetup tiny_setup(std::size_t n, std::size_t alphabet, std::size_t min_len, std::size_t max_len,
                            std::uint64_t seed) {
  TinySetup s;
  s.corpus = random_corpus(n, alphabet, min_len, max_len, seed);
  s.src_vocab = curricula::build_vocab(s.corpus, curricula::Side::Source, 1);
  s.tgt_vocab = curricula::build_vocab(s.corpus, curricula::Side::Target, 1);
  s.encoded = curricula::encode_corpus(s.corpus, s.src_vocab, s.tgt_vocab);
  return s;
}

/// tiny_setup with the first seed (from `seed` on) whose corpus uses every
/// letter on both sides, so both vocabularies have 4 + alphabet entries.
inline TinySetup covering_setup(std::size_t n, std::size_t alphabet, std::size_t min_len, std::size_t max_len,
                                std::uint64_t seed) {
  for (;; ++seed) {
    auto s = tiny_setup(n, alphabet, min_len, max_len, seed);
    if (s.src_vocab.size() == alphabet + 4 && s.tgt_vocab.size() == alphabet + 4) return s;
  }
}

/// Scaled-down layouts: "base" is 2/2 layers with attention, "small" 1/2 without.
inline curricula::ModelConfig tiny_config(bool base_layout, std::size_t src_vocab, std::size_t tgt_vocab,
                                          std::size_t hidden = 8, std::size_t embed = 8) {
  auto c = base_layout ? curricula::ModelConfig::base(src_vocab, tgt_vocab)
                       : curricula::ModelConfig::small(src_vocab, tgt_vocab);
  c.hidden_dim = hidden;
  c.embed_dim = embed;
  return c;
}

inline curricula::ModelCheckpoint wrap(curricula::Parameters params, const curricula::Vocabulary& sv,
                                       const curricula::Vocabulary& tv) {
  curricula::ModelCheckpoint m;
  m.params = std::move(params);
  m.src_vocab_fp = sv.fingerprint();
  m.tgt_vocab_fp = tv.fingerprint();
  return m;
}

/// Zeroes the output layer and sets only its bias.
inline void rig_output_bias(curricula::Parameters& p, const std::vector<double>& bias) {
  for (auto& w : p.tensor(p.layout().out_w)) w = 0.0;
  auto b = p.tensor(p.layout().out_b);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = bias[i];
}

/// A decoder that predicts succ[previous target id] with probability exactly 1.
/// Every decoder layer becomes a saturated one-hot copy of its input, so the
/// output logit of the successor is ~760 above every other logit. Needs
/// hidden_dim == embed_dim == tgt vocab size.
inline curricula::Parameters successor_model(const curricula::ModelConfig& config, const std::vector<int>& succ) {
  using curricula::Parameters;
  Parameters p(config);
  const auto& L = p.layout();
  const std::size_t H = config.hidden_dim, V = config.tgt_vocab_size;
  auto emb = p.tensor(L.tgt_embed);
  for (std::size_t v = 0; v < V; ++v) emb[v * config.embed_dim + v] = 1.0;
  for (std::size_t l = 0; l < config.decoder_layers; ++l) {
    const auto& w_slot = L.slots[L.dec_w[l]];
    double* W = p.data(L.dec_w[l]);
    double* b = p.data(L.dec_b[l]);
    // Input gate and output gate open, forget gate shut.
    for (std::size_t j = 0; j < H; ++j) {
      b[j] = 100.0;
      b[H + j] = -100.0;
      b[3 * H + j] = 100.0;
    }
    // Candidate = +1 on the active unit, -1 elsewhere. Layer 0 sees a one-hot
    // embedding; higher layers see +-tanh(1).
    for (std::size_t j = 0; j < H; ++j) {
      W[j * w_slot.cols + 2 * H + j] = 200.0;
      b[2 * H + j] = l == 0 ? -100.0 : 0.0;
    }
  }
  double* out = p.data(L.out_w);
  for (std::size_t v = 0; v < V; ++v)
    if (succ[v] >= 0) out[v * V + static_cast<std::size_t>(succ[v])] = 1000.0;
  return p;
}

// ---------------------------------------------------------------------------
// Central finite differences against backward_gradients.

struct GradCheck {
  std::size_t checked = 0;
  std::size_t passed = 0;
  double worst = 0.0;
  double pass_rate() const { return checked ? static_cast<double>(passed) / static_cast<double>(checked) : 0.0; }
};

/// Samples `samples` coordinates with a nonzero analytic gradient. Relative
/// error is |a - n| / max(|a|, |n|, 1e-8).
inline GradCheck gradient_check(const curricula::Parameters& params, const curricula::Batch& batch,
                                std::size_t samples, std::uint64_t seed, bool dropout_on, double step = 1e-4,
                                double tolerance = 1e-4, double min_magnitude = 0.0) {
  const std::uint64_t dropout_seed = 5;
  const auto analytic = curricula::backward_gradients(params, batch, dropout_on, dropout_seed).gradients;
  std::vector<std::size_t> nonzero;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    if (analytic.values()[i] != 0.0 && std::fabs(analytic.values()[i]) >= min_magnitude) nonzero.push_back(i);
  GradCheck out;
  if (nonzero.empty()) return out;
  curricula::CounterRng rng(seed);
  auto probe = params;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t i = nonzero[rng.next_below(nonzero.size())];
    const double orig = probe.values()[i];
    probe.values()[i] = orig + step;
    const double up = curricula::forward_teacher_forced(probe, batch, dropout_on, dropout_seed).mean_loss;
    probe.values()[i] = orig - step;
    const double down = curricula::forward_teacher_forced(probe, batch, dropout_on, dropout_seed).mean_loss;
    probe.values()[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.values()[i];
    const double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    ++out.checked;
    if (rel < tolerance) ++out.passed;
    out.worst = std::max(out.worst, rel);
  }
  return out;
}

// ---------------------------------------------------------------------------

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("curricula-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double ulp_distance(double a, double b) {
  if (a == b) return 0.0;
  return std::fabs(a - b) / std::fabs(std::nextafter(a, b) - a);
}

}  // namespace testing
