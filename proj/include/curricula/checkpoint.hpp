#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "curricula/seq2seq.hpp"

namespace curricula {

struct HistoryEntry {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // bits/token
  double valid_ppl = 0.0;

  bool operator==(const HistoryEntry&) const = default;
};

/// Binary layout (all integers little-endian):
///   "CURR" | u16 version | section* | 32-byte SHA-256 of everything before it
/// where each section is u64 byte length followed by the payload, in order:
/// config (key=value text), vocabulary fingerprints, parameter tensors
/// (u32 count, then per tensor: u32 name length, name, u64 rows, u64 cols,
/// rows*cols f64), history (u32 count, then u64 epoch, f64 loss, f64 ppl).
struct ModelCheckpoint {
  static constexpr std::uint16_t kFormatVersion = 1;

  Parameters params;
  std::string src_vocab_fp;
  std::string tgt_vocab_fp;
  std::vector<HistoryEntry> history;

  const ModelConfig& config() const { return params.config(); }

  /// Hex SHA-256 over the config, vocabulary and parameter sections. Training
  /// history is excluded, so the fingerprint tracks model identity only.
  std::string fingerprint() const;

  std::string serialize() const;
  static ModelCheckpoint deserialize(const std::string& bytes);
};

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace curricula
