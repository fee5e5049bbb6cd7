#include "curricula/eval.hpp"

#include <cmath>
#include <exception>

#include "curricula/metrics.hpp"

namespace curricula {

double corpus_bleu(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  if (candidates.size() != references.size()) {
    throw PairingError("corpus_bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                       std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw ConfigError("corpus_bleu: empty corpus");
  std::array<std::size_t, 4> matches{}, totals{};
  std::size_t cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (references[i].empty()) throw ConfigError("corpus_bleu: empty reference at position " + std::to_string(i));
    const auto s = ngram_stats(candidates[i], references[i]);
    for (std::size_t n = 0; n < 4; ++n) {
      matches[n] += s.matches[n];
      totals[n] += s.totals[n];
    }
    cand_len += s.cand_len;
    ref_len += s.ref_len;
  }
  if (cand_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (matches[n] == 0) return 0.0;
    log_sum += 0.25 * std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
  }
  const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len)));
  return std::min(1.0, bp * std::exp(log_sum));
}

std::string EvalResult::line() const {
  return "ppl=" + format_sig(perplexity, 9) + " bleu=" + format_sig(bleu, 9) + " pairs=" + std::to_string(pairs);
}

EvalResult EvalResult::parse(const std::string& line) {
  const auto fields = split_whitespace(line);
  if (fields.size() != 3) throw FormatError("eval result: bad line '" + line + "'");
  auto value = [&](std::size_t i, const char* key) {
    const std::string prefix = std::string(key) + "=";
    if (fields[i].rfind(prefix, 0) != 0) throw FormatError("eval result: expected " + prefix + " in '" + line + "'");
    return fields[i].substr(prefix.size());
  };
  EvalResult r;
  r.perplexity = parse_double(value(0, "ppl"), "ppl");
  r.bleu = parse_double(value(1, "bleu"), "bleu");
  r.pairs = static_cast<std::size_t>(parse_int(value(2, "pairs"), "pairs"));
  return r;
}

namespace {

struct PairOutcome {
  double bits = 0.0;  // H_p * T_p
  std::size_t tokens = 0;
  Tokens hypothesis;
};

PairOutcome evaluate_pair(const ModelCheckpoint& model, const SentencePair& pair, const Vocabulary& sv,
                          const Vocabulary& tv, std::size_t max_decode_len) {
  const auto enc = encode_pair(pair, sv, tv);
  PairOutcome out;
  out.tokens = enc.tgt_out.size();
  out.bits = pair_cross_entropy(model, enc) * static_cast<double>(out.tokens);
  const auto cap = max_decode_len ? max_decode_len : default_max_decode_len(enc.src.size());
  out.hypothesis = decode_ids(greedy_decode(model.params, enc.src, cap), tv);
  return out;
}

EvalResult reduce(const std::vector<PairOutcome>& outcomes, const ParallelCorpus& test) {
  double bits = 0.0;
  std::size_t tokens = 0;
  std::vector<Tokens> hyps, refs;
  hyps.reserve(outcomes.size());
  refs.reserve(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    bits += outcomes[i].bits;
    tokens += outcomes[i].tokens;
    hyps.push_back(outcomes[i].hypothesis);
    refs.push_back(test.pairs[i].tgt);
  }
  EvalResult r;
  r.perplexity = std::exp2(bits / static_cast<double>(tokens));
  r.bleu = corpus_bleu(hyps, refs);
  r.pairs = outcomes.size();
  if (!std::isfinite(r.perplexity)) throw NumericalError("evaluate_model: non-finite perplexity");
  return r;
}

void check_inputs(const ModelCheckpoint& model, const ParallelCorpus& test, const Vocabulary& sv,
                  const Vocabulary& tv) {
  check_vocab_compatible(model, sv, tv);
  if (test.empty()) throw ConfigError("evaluate_model: empty test corpus");
}

template <typename Fn>
void parallel_pairs(std::size_t n, Fn&& fn) {
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(curricula_eval_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::vector<Tokens> translate_corpus(const ModelCheckpoint& model, const ParallelCorpus& corpus,
                                     const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                     std::size_t max_decode_len) {
  check_vocab_compatible(model, src_vocab, tgt_vocab);
  std::vector<Tokens> out(corpus.size());
  parallel_pairs(corpus.size(), [&](std::size_t i) {
    const auto enc = encode_pair(corpus.pairs[i], src_vocab, tgt_vocab);
    const auto cap = max_decode_len ? max_decode_len : default_max_decode_len(enc.src.size());
    out[i] = decode_ids(greedy_decode(model.params, enc.src, cap), tgt_vocab);
  });
  return out;
}

EvalResult evaluate_model(const ModelCheckpoint& model, const ParallelCorpus& test, const Vocabulary& src_vocab,
                          const Vocabulary& tgt_vocab, std::size_t max_decode_len) {
  check_inputs(model, test, src_vocab, tgt_vocab);
  std::vector<PairOutcome> outcomes(test.size());
  parallel_pairs(test.size(), [&](std::size_t i) {
    outcomes[i] = evaluate_pair(model, test.pairs[i], src_vocab, tgt_vocab, max_decode_len);
  });
  return reduce(outcomes, test);
}

namespace serial {

EvalResult evaluate_model(const ModelCheckpoint& model, const ParallelCorpus& test, const Vocabulary& src_vocab,
                          const Vocabulary& tgt_vocab, std::size_t max_decode_len) {
  check_inputs(model, test, src_vocab, tgt_vocab);
  std::vector<PairOutcome> outcomes;
  outcomes.reserve(test.size());
  for (const auto& p : test.pairs) outcomes.push_back(evaluate_pair(model, p, src_vocab, tgt_vocab, max_decode_len));
  return reduce(outcomes, test);
}

}  // namespace serial

}  // namespace curricula
