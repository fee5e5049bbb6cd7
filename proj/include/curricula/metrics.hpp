#pragma once

// Per-pair difficulty metrics and the score tables built from them.

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "curricula/checkpoint.hpp"
#include "curricula/corpus.hpp"

namespace curricula {

enum class MetricKind { LengthSource, LengthTarget, CrossEntropy, Perplexity, Bleu };

/// "length-source", "length-target", "xent", "ppl", "bleu".
const char* metric_name(MetricKind kind);
MetricKind parse_metric(const std::string& name);
bool metric_needs_model(MetricKind kind);

struct PairScore {
  std::size_t index = 0;
  double value = 0.0;
  bool operator==(const PairScore&) const = default;
};

/// Scorer fingerprint used for metrics that need no model.
inline constexpr const char* kNoScorer = "none";

struct ScoreTable {
  MetricKind metric = MetricKind::LengthSource;
  std::string scorer = kNoScorer;
  std::vector<PairScore> entries;  // ascending index, one per pair

  /// Throws DataError on duplicate indices, non-finite values or values
  /// outside the metric's range.
  void validate() const;

  /// "CURRICULA-SCORES v1 <metric> <scorer>" then "index<TAB>value" lines
  /// with 9 significant digits.
  std::string serialize() const;
  static ScoreTable deserialize(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static ScoreTable load(const std::filesystem::path& path);
};

/// Clipped n-gram matches and candidate n-gram totals for n = 1..4.
struct NgramStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t cand_len = 0;
  std::size_t ref_len = 0;
};

NgramStats ngram_stats(const Tokens& candidate, const Tokens& reference);

/// Smoothed sentence BLEU-4 in [0, 1]: unigram precision unsmoothed, add-one
/// on numerator and denominator for n >= 2, brevity penalty
/// min(1, exp(1 - |ref|/|cand|)). Empty candidate scores 0. Throws
/// ConfigError on an empty reference.
double sentence_bleu(const Tokens& candidate, const Tokens& reference);

std::size_t pair_length(const SentencePair& pair, Side side);

/// Teacher-forced mean negative log2-probability of tgt_out, dropout off.
double pair_cross_entropy(const ModelCheckpoint& model, const EncodedPair& pair);
/// 2^pair_cross_entropy.
double pair_perplexity(const ModelCheckpoint& model, const EncodedPair& pair);

/// max(2 * source length, 80).
std::size_t default_max_decode_len(std::size_t src_len);

/// Greedy-decodes the pair's source and scores it against `reference`.
/// A max_decode_len of 0 selects default_max_decode_len.
double pair_bleu(const ModelCheckpoint& model, const EncodedPair& pair, const Tokens& reference,
                 const Vocabulary& tgt_vocab, std::size_t max_decode_len = 0);

/// Throws FingerprintError unless the checkpoint was trained with these vocabularies.
void check_vocab_compatible(const ModelCheckpoint& model, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab);

ScoreTable score_lengths(const ParallelCorpus& corpus, Side side);

/// Scores every pair with `model` (CrossEntropy, Perplexity or Bleu). Pairs
/// are scored in parallel; entries come back ordered by corpus index.
ScoreTable score_with_model(MetricKind metric, const ModelCheckpoint& model, const ParallelCorpus& corpus,
                            const Vocabulary& src_vocab, const Vocabulary& tgt_vocab);

namespace serial {
/// Single-threaded reference for score_with_model.
ScoreTable score_with_model(MetricKind metric, const ModelCheckpoint& model, const ParallelCorpus& corpus,
                            const Vocabulary& src_vocab, const Vocabulary& tgt_vocab);
}  // namespace serial

}  // namespace curricula
