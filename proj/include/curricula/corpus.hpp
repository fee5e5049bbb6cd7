#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace curricula {

using Tokens = std::vector<std::string>;
using TokenId = std::int32_t;
using Ids = std::vector<TokenId>;

enum class Side { Source, Target };

const char* side_name(Side side);
Side parse_side(const std::string& text);

struct SentencePair {
  std::size_t index = 0;  // line number in the raw corpus, stable through filtering
  Tokens src;
  Tokens tgt;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::string src_name = "src";
  std::string tgt_name = "tgt";

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  std::vector<std::size_t> indices() const;
  /// SHA-256 over the sorted multiset of (src, tgt) pairs; order-insensitive.
  std::string content_hash() const;
};

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr TokenId kFirstRegular = 4;

  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kBosToken = "<s>";
  static constexpr const char* kEosToken = "</s>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocabulary();

  static bool is_special_token(const std::string& token);

  std::size_t size() const { return id_to_token_.size(); }
  /// Cutoff used at build time; not persisted (a loaded vocabulary reports 1).
  std::size_t min_count() const { return min_count_; }
  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const;
  std::size_t frequency(TokenId id) const { return freq_.at(static_cast<std::size_t>(id)); }
  bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

  /// "CURRICULA-VOCAB v1" followed by token<TAB>id<TAB>frequency lines.
  std::string serialize() const;
  static Vocabulary deserialize(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  /// Hex SHA-256 of serialize().
  std::string fingerprint() const;

  bool operator==(const Vocabulary& other) const {
    return id_to_token_ == other.id_to_token_ && freq_ == other.freq_;
  }

 private:
  friend Vocabulary build_vocab(const ParallelCorpus&, Side, std::size_t);
  void add(const std::string& token, std::size_t freq);

  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::vector<std::size_t> freq_;
  std::size_t min_count_ = 1;
};

struct EncodedPair {
  std::size_t index = 0;
  Ids src;
  Ids tgt_in;   // BOS + target ids
  Ids tgt_out;  // target ids + EOS
};

/// Encoded pairs plus a lookup from corpus index to position.
struct EncodedCorpus {
  std::vector<EncodedPair> pairs;
  std::string src_vocab_fp;
  std::string tgt_vocab_fp;

  const EncodedPair& at_index(std::size_t corpus_index) const;
  void rebuild_lookup();

 private:
  std::unordered_map<std::size_t, std::size_t> position_;
};

/// Reads two line-aligned files. A trailing newline does not start a new line.
ParallelCorpus load_parallel_corpus(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path);
/// Same as load_parallel_corpus, from in-memory text.
ParallelCorpus parse_parallel_corpus(const std::string& src_text, const std::string& tgt_text);
void save_parallel_corpus(const ParallelCorpus& corpus, const std::filesystem::path& src_path,
                          const std::filesystem::path& tgt_path);

/// Keeps pairs whose source and target lengths both lie in [min_len, max_len]
/// and whose (src, tgt) has not been seen at a smaller index.
ParallelCorpus filter_corpus(const ParallelCorpus& corpus, std::size_t min_len, std::size_t max_len);

/// Keeps the `max_pairs` lowest-index pairs.
ParallelCorpus truncate_corpus(const ParallelCorpus& corpus, std::size_t max_pairs);

Vocabulary build_vocab(const ParallelCorpus& corpus, Side side, std::size_t min_count);

EncodedPair encode_pair(const SentencePair& pair, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab);
EncodedCorpus encode_corpus(const ParallelCorpus& corpus, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab);

/// Maps ids back to tokens, dropping nothing (specials render as their marker strings).
Tokens decode_ids(const Ids& ids, const Vocabulary& vocab);

}  // namespace curricula
