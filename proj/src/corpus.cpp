#include "curricula/corpus.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "curricula/util.hpp"

namespace curricula {

const char* side_name(Side side) { return side == Side::Source ? "source" : "target"; }

Side parse_side(const std::string& text) {
  if (text == "source" || text == "src") return Side::Source;
  if (text == "target" || text == "tgt") return Side::Target;
  throw ConfigError("unknown side '" + text + "' (expected source|target)");
}

std::vector<std::size_t> ParallelCorpus::indices() const {
  std::vector<std::size_t> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.index);
  return out;
}

namespace {

std::string join(const Tokens& t) {
  std::string s;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) s.push_back(' ');
    s += t[i];
  }
  return s;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  if (text.empty()) return lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

Tokens tokenize_line(const std::string& line, std::size_t lineno, const char* which) {
  Tokens toks = split_whitespace(line);
  for (const auto& t : toks) {
    if (Vocabulary::is_special_token(t)) {
      throw DataError(std::string(which) + " line " + std::to_string(lineno + 1) + " contains reserved token " + t);
    }
  }
  return toks;
}

}  // namespace

std::string ParallelCorpus::content_hash() const {
  std::vector<std::string> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) rows.push_back(join(p.src) + '\t' + join(p.tgt));
  std::sort(rows.begin(), rows.end());
  std::string all;
  for (const auto& r : rows) {
    all += r;
    all.push_back('\n');
  }
  return to_hex(sha256(all));
}

ParallelCorpus parse_parallel_corpus(const std::string& src_text, const std::string& tgt_text) {
  auto src_lines = split_lines(src_text);
  auto tgt_lines = split_lines(tgt_text);
  if (src_lines.size() != tgt_lines.size()) {
    throw AlignmentError("line-count mismatch: source has " + std::to_string(src_lines.size()) +
                         " lines, target has " + std::to_string(tgt_lines.size()));
  }
  ParallelCorpus corpus;
  corpus.pairs.reserve(src_lines.size());
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    corpus.pairs.push_back({i, tokenize_line(src_lines[i], i, "source"), tokenize_line(tgt_lines[i], i, "target")});
  }
  return corpus;
}

ParallelCorpus load_parallel_corpus(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path) {
  auto corpus = parse_parallel_corpus(read_file(src_path), read_file(tgt_path));
  corpus.src_name = src_path.extension().string().empty() ? "src" : src_path.extension().string().substr(1);
  corpus.tgt_name = tgt_path.extension().string().empty() ? "tgt" : tgt_path.extension().string().substr(1);
  return corpus;
}

void save_parallel_corpus(const ParallelCorpus& corpus, const std::filesystem::path& src_path,
                          const std::filesystem::path& tgt_path) {
  std::string s, t;
  for (const auto& p : corpus.pairs) {
    s += join(p.src) + '\n';
    t += join(p.tgt) + '\n';
  }
  write_file_atomic(src_path, s);
  write_file_atomic(tgt_path, t);
}

ParallelCorpus filter_corpus(const ParallelCorpus& corpus, std::size_t min_len, std::size_t max_len) {
  if (min_len < 1 || max_len < min_len) {
    throw ConfigError("invalid length bounds [" + std::to_string(min_len) + ", " + std::to_string(max_len) + "]");
  }
  ParallelCorpus out;
  out.src_name = corpus.src_name;
  out.tgt_name = corpus.tgt_name;
  std::set<std::pair<Tokens, Tokens>> seen;
  auto in_bounds = [&](std::size_t n) { return n >= min_len && n <= max_len; };
  for (const auto& p : corpus.pairs) {
    if (!in_bounds(p.src.size()) || !in_bounds(p.tgt.size())) continue;
    // Duplicates are checked among kept pairs only; a dropped pair never shadows a later one.
    if (!seen.emplace(p.src, p.tgt).second) continue;
    out.pairs.push_back(p);
  }
  if (out.empty()) throw DataError("filter_corpus: no pairs survive the filter");
  return out;
}

ParallelCorpus truncate_corpus(const ParallelCorpus& corpus, std::size_t max_pairs) {
  ParallelCorpus out = corpus;
  std::stable_sort(out.pairs.begin(), out.pairs.end(),
                   [](const SentencePair& a, const SentencePair& b) { return a.index < b.index; });
  if (out.pairs.size() > max_pairs) out.pairs.resize(max_pairs);
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
  add(kPadToken, 0);
  add(kBosToken, 0);
  add(kEosToken, 0);
  add(kUnkToken, 0);
}

bool Vocabulary::is_special_token(const std::string& token) {
  return token == kPadToken || token == kBosToken || token == kEosToken || token == kUnkToken;
}

void Vocabulary::add(const std::string& token, std::size_t freq) {
  token_to_id_.emplace(token, static_cast<TokenId>(id_to_token_.size()));
  id_to_token_.push_back(token);
  freq_.push_back(freq);
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw DataError("token id " + std::to_string(id) + " out of vocabulary range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::serialize() const {
  std::ostringstream os;
  os << "CURRICULA-VOCAB v1\n";
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) os << id_to_token_[i] << '\t' << i << '\t' << freq_[i] << '\n';
  return os.str();
}

Vocabulary Vocabulary::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "CURRICULA-VOCAB v1") throw FormatError("vocabulary: bad header");
  Vocabulary v;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = split(line, '\t');
    if (f.size() != 3) throw FormatError("vocabulary: bad line '" + line + "'");
    auto id = static_cast<std::size_t>(parse_int(f[1], "vocab id"));
    if (id != row) throw FormatError("vocabulary: ids must be contiguous, got " + f[1]);
    auto freq = static_cast<std::size_t>(parse_int(f[2], "vocab frequency"));
    if (row < static_cast<std::size_t>(kFirstRegular)) {
      if (f[0] != v.id_to_token_[row]) throw FormatError("vocabulary: special token mismatch at id " + f[1]);
    } else {
      if (is_special_token(f[0]) || v.contains(f[0])) throw FormatError("vocabulary: duplicate token " + f[0]);
      v.add(f[0], freq);
    }
    ++row;
  }
  if (row < static_cast<std::size_t>(kFirstRegular)) throw FormatError("vocabulary: missing special tokens");
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

std::string Vocabulary::fingerprint() const { return to_hex(sha256(serialize())); }

Vocabulary build_vocab(const ParallelCorpus& corpus, Side side, std::size_t min_count) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& p : corpus.pairs)
    for (const auto& t : side == Side::Source ? p.src : p.tgt) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  // Descending frequency, ties lexicographic (map order is already lexicographic).
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  v.min_count_ = min_count;
  for (auto& [tok, n] : kept) v.add(tok, n);
  return v;
}

// ---------------------------------------------------------------------------
// Encoding

EncodedPair encode_pair(const SentencePair& pair, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab) {
  EncodedPair e;
  e.index = pair.index;
  e.src.reserve(pair.src.size());
  for (const auto& t : pair.src) e.src.push_back(src_vocab.id(t));
  e.tgt_in.reserve(pair.tgt.size() + 1);
  e.tgt_out.reserve(pair.tgt.size() + 1);
  e.tgt_in.push_back(Vocabulary::kBos);
  for (const auto& t : pair.tgt) {
    auto id = tgt_vocab.id(t);
    e.tgt_in.push_back(id);
    e.tgt_out.push_back(id);
  }
  e.tgt_out.push_back(Vocabulary::kEos);
  return e;
}

EncodedCorpus encode_corpus(const ParallelCorpus& corpus, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab) {
  EncodedCorpus out;
  out.pairs.reserve(corpus.size());
  for (const auto& p : corpus.pairs) out.pairs.push_back(encode_pair(p, src_vocab, tgt_vocab));
  out.src_vocab_fp = src_vocab.fingerprint();
  out.tgt_vocab_fp = tgt_vocab.fingerprint();
  out.rebuild_lookup();
  return out;
}

void EncodedCorpus::rebuild_lookup() {
  position_.clear();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!position_.emplace(pairs[i].index, i).second) {
      throw DataError("duplicate corpus index " + std::to_string(pairs[i].index));
    }
  }
}

const EncodedPair& EncodedCorpus::at_index(std::size_t corpus_index) const {
  auto it = position_.find(corpus_index);
  if (it == position_.end()) throw DataError("corpus index " + std::to_string(corpus_index) + " not in corpus");
  return pairs[it->second];
}

Tokens decode_ids(const Ids& ids, const Vocabulary& vocab) {
  Tokens out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(vocab.token(id));
  return out;
}

}  // namespace curricula
