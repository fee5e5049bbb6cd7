#pragma once

// Encoder-decoder LSTM with optional additive attention, written against
// flat double buffers with hand-derived reverse mode.
//
// Conventions:
//   * weights are stored input-major ([fan_in, fan_out]) so y = x W + b;
//   * LSTM gate blocks are ordered input, forget, candidate, output;
//   * all losses are in bits (log base 2).

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "curricula/corpus.hpp"

namespace curricula {

struct ModelConfig {
  std::size_t embed_dim = 128;
  std::size_t hidden_dim = 128;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 2;
  bool use_attention = false;
  double dropout_p = 0.2;
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;

  /// 2x512 LSTM encoder and decoder, attention, dropout 0.2.
  static ModelConfig base(std::size_t src_vocab, std::size_t tgt_vocab);
  /// 1x128 encoder, 2x128 decoder, no attention, dropout 0.2.
  static ModelConfig small(std::size_t src_vocab, std::size_t tgt_vocab);
  static ModelConfig preset(const std::string& name, std::size_t src_vocab, std::size_t tgt_vocab);

  void validate() const;
  std::string serialize() const;
  static ModelConfig deserialize(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// Where each tensor lives inside the flat parameter vector.
struct ParamLayout {
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  std::vector<TensorSlot> slots;
  std::size_t total = 0;

  std::size_t src_embed = kNone, tgt_embed = kNone;
  std::vector<std::size_t> enc_w, enc_b, dec_w, dec_b;
  std::size_t att_ws = kNone, att_wh = kNone, att_v = kNone;
  std::size_t out_w = kNone, out_b = kNone;

  static ParamLayout build(const ModelConfig& config);
};

/// Model parameters (also used for gradients and Adam moments: same layout).
class Parameters {
 public:
  Parameters() = default;
  /// All-zero parameters for a validated config.
  explicit Parameters(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return *layout_; }
  std::size_t size() const { return values_.size(); }
  bool has_attention() const { return layout_->att_v != ParamLayout::kNone; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> tensor(std::size_t slot);
  std::span<const double> tensor(std::size_t slot) const;
  double* data(std::size_t slot) { return values_.data() + layout_->slots.at(slot).offset; }
  const double* data(std::size_t slot) const { return values_.data() + layout_->slots.at(slot).offset; }

  Parameters zeros_like() const;
  bool same_shape(const Parameters& other) const;

 private:
  ModelConfig config_;
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<double> values_;
};

/// Uniform in [-0.08, 0.08] from a counter-based stream, forget-gate biases 1.
Parameters init_params(const ModelConfig& config, std::uint64_t seed);

/// Padded, batch-major id matrices. Row r covers pair `indices[r]`.
struct Batch {
  std::size_t rows = 0;
  std::size_t src_len = 0;  // padded source width
  std::size_t tgt_len = 0;  // padded target width (tgt_in and tgt_out)
  std::vector<TokenId> src;
  std::vector<TokenId> tgt_in;
  std::vector<TokenId> tgt_out;
  std::vector<std::size_t> src_lengths;
  std::vector<std::size_t> tgt_lengths;
  std::vector<std::size_t> indices;
};

/// `extra_pad` appends that many PAD columns to both sides.
Batch make_batch(std::span<const EncodedPair* const> pairs, std::size_t extra_pad = 0);
Batch make_batch(std::span<const EncodedPair> pairs, std::size_t extra_pad = 0);

struct ForwardResult {
  double mean_loss = 0.0;          // bits per non-PAD target token
  std::size_t token_count = 0;
  std::vector<double> pair_losses;  // per row, bits per token
  std::vector<std::size_t> pair_tokens;
  std::vector<double> log_probs;    // rows x tgt_len, log2 p(reference), 0 at PAD
};

ForwardResult forward_teacher_forced(const Parameters& params, const Batch& batch, bool dropout_on,
                                     std::uint64_t dropout_seed);

struct LossAndGradients {
  ForwardResult forward;
  Parameters gradients;
};

/// Exact gradients of forward.mean_loss. Uses the same dropout masks as
/// forward_teacher_forced with the same seed. Throws NumericalError naming the
/// tensor if any gradient is non-finite.
LossAndGradients backward_gradients(const Parameters& params, const Batch& batch, bool dropout_on,
                                    std::uint64_t dropout_seed);

/// Additive attention distribution for `rows` decoder states against padded
/// encoder states ([rows, src_len, hidden]). Returns [rows, src_len].
std::vector<double> attention_weights(const Parameters& params, std::span<const double> decoder_state,
                                      std::span<const double> encoder_states,
                                      std::span<const std::size_t> source_lengths, std::size_t src_len);

/// Argmax decoding from BOS; stops at EOS (not emitted) or after max_len
/// tokens. PAD and BOS are never emitted; ties go to the smallest id.
Ids greedy_decode(const Parameters& params, const Ids& src_ids, std::size_t max_len);

}  // namespace curricula
