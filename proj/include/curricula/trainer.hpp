#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "curricula/checkpoint.hpp"
#include "curricula/corpus.hpp"
#include "curricula/ordering.hpp"
#include "curricula/seq2seq.hpp"

namespace curricula {

struct TrainConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 32;
  std::size_t patience = 5;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
  std::string serialize() const;
};

struct AdamState {
  Parameters m;
  Parameters v;
  std::uint64_t t = 0;

  static AdamState zeros_like(const Parameters& params);
};

/// Global L2 norm of all gradient entries.
double global_norm(const Parameters& grads);

/// One Adam update with the gradients first scaled to global norm <= clip_norm.
/// Returns the pre-clip gradient norm.
double adam_step(Parameters& params, const Parameters& grads, AdamState& state, const TrainConfig& config);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean of batch losses, bits/token
  double valid_ppl = 0.0;
  double seconds = 0.0;
};

/// One adam_step per batch in order. Batch b of epoch e uses dropout stream
/// (seed, e, b). NumericalError is rethrown with the batch index attached.
EpochStats train_epoch(Parameters& params, AdamState& adam, const BatchList& batches, const EncodedCorpus& corpus,
                       const TrainConfig& config, std::size_t epoch);

/// Token-weighted mean cross-entropy (bits/token) over `pairs`, dropout off.
double corpus_cross_entropy(const Parameters& params, std::span<const EncodedPair> pairs, std::size_t batch_size = 64);

/// Tracks the best validation value and says when patience has run out.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}
  /// Records epoch's value; returns true if this epoch is a new best.
  bool observe(std::size_t epoch, double value);
  bool should_stop() const { return since_best_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_value() const { return best_value_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_value_ = 0.0;
  std::size_t since_best_ = 0;
  bool any_ = false;
};

struct FitResult {
  ModelCheckpoint best;
  std::vector<EpochStats> stats;
  std::size_t epochs_to_convergence = 0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains from `init` following `plan` (one plan epoch per training epoch),
/// keeping the checkpoint with the lowest validation perplexity. Stops after
/// `patience` epochs without improvement or at max_epochs.
FitResult fit(const Parameters& init, const OrderingPlan& plan, const EncodedCorpus& train,
              const EncodedCorpus& valid, const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace curricula
