#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "curricula/checkpoint.hpp"
#include "curricula/corpus.hpp"
#include "curricula/util.hpp"

namespace curricula {

class PairingError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Corpus BLEU-4 from clipped n-gram counts summed over all pairs, no
/// smoothing. Any zero precision gives 0.
double corpus_bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);

struct EvalResult {
  double perplexity = 0.0;
  double bleu = 0.0;  // fraction in [0, 1]
  std::size_t pairs = 0;

  double bleu_percent() const { return bleu * 100.0; }
  /// "ppl=<9sig> bleu=<9sig> pairs=<n>"
  std::string line() const;
  static EvalResult parse(const std::string& line);
};

/// Greedy translations of every pair, in corpus order.
std::vector<Tokens> translate_corpus(const ModelCheckpoint& model, const ParallelCorpus& corpus,
                                     const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                     std::size_t max_decode_len = 0);

/// Token-weighted perplexity and corpus BLEU of greedy decodes on `test`.
EvalResult evaluate_model(const ModelCheckpoint& model, const ParallelCorpus& test, const Vocabulary& src_vocab,
                          const Vocabulary& tgt_vocab, std::size_t max_decode_len = 0);

namespace serial {
EvalResult evaluate_model(const ModelCheckpoint& model, const ParallelCorpus& test, const Vocabulary& src_vocab,
                          const Vocabulary& tgt_vocab, std::size_t max_decode_len = 0);
}  // namespace serial

}  // namespace curricula
