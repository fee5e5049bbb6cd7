#include "curricula/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "curricula/util.hpp"

namespace curricula {

const char* metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::LengthSource: return "length-source";
    case MetricKind::LengthTarget: return "length-target";
    case MetricKind::CrossEntropy: return "xent";
    case MetricKind::Perplexity: return "ppl";
    case MetricKind::Bleu: return "bleu";
  }
  return "?";
}

MetricKind parse_metric(const std::string& name) {
  for (auto k : {MetricKind::LengthSource, MetricKind::LengthTarget, MetricKind::CrossEntropy, MetricKind::Perplexity,
                 MetricKind::Bleu}) {
    if (name == metric_name(k)) return k;
  }
  throw ConfigError("unknown metric '" + name + "'");
}

bool metric_needs_model(MetricKind kind) {
  return kind == MetricKind::CrossEntropy || kind == MetricKind::Perplexity || kind == MetricKind::Bleu;
}

// ---------------------------------------------------------------------------
// ScoreTable

void ScoreTable::validate() const {
  std::set<std::size_t> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.index).second) throw DataError("score table: duplicate index " + std::to_string(e.index));
    if (!std::isfinite(e.value)) throw DataError("score table: non-finite value at index " + std::to_string(e.index));
    const bool ok = metric == MetricKind::Perplexity ? e.value >= 1.0
                    : metric == MetricKind::Bleu      ? (e.value >= 0.0 && e.value <= 1.0)
                                                      : e.value >= 0.0;
    if (!ok) {
      throw DataError(std::string("score table: value out of range for ") + metric_name(metric) + " at index " +
                      std::to_string(e.index));
    }
  }
}

std::string ScoreTable::serialize() const {
  std::ostringstream os;
  os << "CURRICULA-SCORES v1 " << metric_name(metric) << ' ' << scorer << '\n';
  for (const auto& e : entries) os << e.index << '\t' << format_sig(e.value, 9) << '\n';
  return os.str();
}

ScoreTable ScoreTable::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("score table: empty file");
  auto head = split_whitespace(line);
  if (head.size() != 4 || head[0] != "CURRICULA-SCORES" || head[1] != "v1") {
    throw FormatError("score table: bad header '" + line + "'");
  }
  ScoreTable t;
  t.metric = parse_metric(head[2]);
  t.scorer = head[3];
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = split(line, '\t');
    if (f.size() != 2) throw FormatError("score table: bad line '" + line + "'");
    PairScore s{static_cast<std::size_t>(parse_int(f[0], "score index")), parse_double(f[1], "score value")};
    if (!t.entries.empty() && s.index <= t.entries.back().index) {
      throw FormatError("score table: indices must be strictly ascending");
    }
    t.entries.push_back(s);
  }
  t.validate();
  return t;
}

void ScoreTable::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

ScoreTable ScoreTable::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

// ---------------------------------------------------------------------------
// BLEU

NgramStats ngram_stats(const Tokens& candidate, const Tokens& reference) {
  NgramStats s;
  s.cand_len = candidate.size();
  s.ref_len = reference.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i)
      ++ref_counts[std::vector<std::string>(reference.begin() + static_cast<std::ptrdiff_t>(i),
                                            reference.begin() + static_cast<std::ptrdiff_t>(i + n))];
    for (std::size_t i = 0; i + n <= candidate.size(); ++i)
      ++cand_counts[std::vector<std::string>(candidate.begin() + static_cast<std::ptrdiff_t>(i),
                                             candidate.begin() + static_cast<std::ptrdiff_t>(i + n))];
    std::size_t matches = 0, total = 0;
    for (const auto& [gram, c] : cand_counts) {
      total += c;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matches += std::min(c, it->second);
    }
    s.matches[n - 1] = matches;
    s.totals[n - 1] = total;
  }
  return s;
}

double sentence_bleu(const Tokens& candidate, const Tokens& reference) {
  if (reference.empty()) throw ConfigError("sentence_bleu: empty reference");
  if (candidate.empty()) return 0.0;
  const auto s = ngram_stats(candidate, reference);
  if (s.matches[0] == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double num = static_cast<double>(s.matches[n]) + (n == 0 ? 0.0 : 1.0);
    const double den = static_cast<double>(s.totals[n]) + (n == 0 ? 0.0 : 1.0);
    log_sum += 0.25 * std::log(num / den);
  }
  const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.cand_len)));
  return std::min(1.0, bp * std::exp(log_sum));
}

// ---------------------------------------------------------------------------
// Per-pair metrics

std::size_t pair_length(const SentencePair& pair, Side side) {
  return side == Side::Source ? pair.src.size() : pair.tgt.size();
}

double pair_cross_entropy(const ModelCheckpoint& model, const EncodedPair& pair) {
  const EncodedPair* p = &pair;
  const auto batch = make_batch(std::span<const EncodedPair* const>(&p, 1));
  return forward_teacher_forced(model.params, batch, false, 0).mean_loss;
}

double pair_perplexity(const ModelCheckpoint& model, const EncodedPair& pair) {
  return std::exp2(pair_cross_entropy(model, pair));
}

std::size_t default_max_decode_len(std::size_t src_len) { return std::max<std::size_t>(2 * src_len, 80); }

double pair_bleu(const ModelCheckpoint& model, const EncodedPair& pair, const Tokens& reference,
                 const Vocabulary& tgt_vocab, std::size_t max_decode_len) {
  if (max_decode_len == 0) max_decode_len = default_max_decode_len(pair.src.size());
  const auto decoded = greedy_decode(model.params, pair.src, max_decode_len);
  return sentence_bleu(decode_ids(decoded, tgt_vocab), reference);
}

void check_vocab_compatible(const ModelCheckpoint& model, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab) {
  if (model.src_vocab_fp != src_vocab.fingerprint() || model.tgt_vocab_fp != tgt_vocab.fingerprint()) {
    throw FingerprintError("vocabulary fingerprint mismatch between checkpoint and corpus encoding");
  }
  if (model.config().src_vocab_size != src_vocab.size() || model.config().tgt_vocab_size != tgt_vocab.size()) {
    throw FingerprintError("vocabulary size mismatch between checkpoint and corpus encoding");
  }
}

ScoreTable score_lengths(const ParallelCorpus& corpus, Side side) {
  ScoreTable t;
  t.metric = side == Side::Source ? MetricKind::LengthSource : MetricKind::LengthTarget;
  t.scorer = kNoScorer;
  for (const auto& p : corpus.pairs) t.entries.push_back({p.index, static_cast<double>(pair_length(p, side))});
  std::sort(t.entries.begin(), t.entries.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  t.validate();
  return t;
}

namespace {

double score_one(MetricKind metric, const ModelCheckpoint& model, const SentencePair& pair, const Vocabulary& sv,
                 const Vocabulary& tv) {
  const auto enc = encode_pair(pair, sv, tv);
  switch (metric) {
    case MetricKind::CrossEntropy: return pair_cross_entropy(model, enc);
    case MetricKind::Perplexity: return pair_perplexity(model, enc);
    case MetricKind::Bleu: return pair_bleu(model, enc, pair.tgt, tv);
    default: throw ConfigError(std::string("metric ") + metric_name(metric) + " does not use a model");
  }
}

ScoreTable finish(MetricKind metric, const ModelCheckpoint& model, const ParallelCorpus& corpus,
                  std::vector<double> values) {
  ScoreTable t;
  t.metric = metric;
  t.scorer = model.fingerprint();
  t.entries.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) t.entries.push_back({corpus.pairs[i].index, values[i]});
  std::sort(t.entries.begin(), t.entries.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  t.validate();
  return t;
}

void check_metric(MetricKind metric) {
  if (!metric_needs_model(metric)) {
    throw ConfigError(std::string("metric ") + metric_name(metric) + " does not use a model");
  }
}

}  // namespace

ScoreTable score_with_model(MetricKind metric, const ModelCheckpoint& model, const ParallelCorpus& corpus,
                            const Vocabulary& src_vocab, const Vocabulary& tgt_vocab) {
  check_metric(metric);
  check_vocab_compatible(model, src_vocab, tgt_vocab);
  std::vector<double> values(corpus.size());
  const long long n = static_cast<long long>(corpus.size());
  // Exceptions cannot leave an OpenMP region; capture the first one.
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
  for (long long i = 0; i < n; ++i) {
    try {
      values[static_cast<std::size_t>(i)] =
          score_one(metric, model, corpus.pairs[static_cast<std::size_t>(i)], src_vocab, tgt_vocab);
    } catch (...) {
#pragma omp critical(curricula_score_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return finish(metric, model, corpus, std::move(values));
}

namespace serial {

ScoreTable score_with_model(MetricKind metric, const ModelCheckpoint& model, const ParallelCorpus& corpus,
                            const Vocabulary& src_vocab, const Vocabulary& tgt_vocab) {
  check_metric(metric);
  check_vocab_compatible(model, src_vocab, tgt_vocab);
  std::vector<double> values;
  values.reserve(corpus.size());
  for (const auto& p : corpus.pairs) values.push_back(score_one(metric, model, p, src_vocab, tgt_vocab));
  return finish(metric, model, corpus, std::move(values));
}

}  // namespace serial

}  // namespace curricula
