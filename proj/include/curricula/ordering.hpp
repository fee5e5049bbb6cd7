#pragma once

// Data-ordering strategies, the per-epoch permutations they produce, and the
// sequential minibatch schedules cut from those permutations.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "curricula/corpus.hpp"
#include "curricula/metrics.hpp"

namespace curricula {

enum class Direction { Ascending, Descending };

struct Strategy {
  enum class Kind { ShuffleEveryEpoch, ShuffleOnce, Length, Perplexity, Bleu };

  Kind kind = Kind::ShuffleEveryEpoch;
  Side side = Side::Source;                   // Length only
  Direction direction = Direction::Ascending;  // Length, Perplexity, Bleu

  static Strategy shuffle_every_epoch() { return {Kind::ShuffleEveryEpoch}; }
  static Strategy shuffle_once() { return {Kind::ShuffleOnce}; }
  static Strategy length(Side s, Direction d) { return {Kind::Length, s, d}; }
  static Strategy perplexity(Direction d) { return {Kind::Perplexity, Side::Source, d}; }
  static Strategy bleu(Direction d) { return {Kind::Bleu, Side::Source, d}; }

  /// Same permutation every epoch.
  bool is_fixed() const { return kind != Kind::ShuffleEveryEpoch; }
  bool needs_scorer() const { return kind == Kind::Perplexity || kind == Kind::Bleu; }
  std::optional<MetricKind> required_metric() const;

  /// Token form used in files and on the command line, e.g. "length-target-desc".
  std::string slug() const;
  static Strategy parse(const std::string& slug);
  /// Human-readable row name, e.g. "Ascending PPL Order".
  std::string label() const;

  bool operator==(const Strategy&) const = default;
};

/// The ten patterns in their conventional reporting order.
std::vector<Strategy> table1_strategies();

struct OrderingPlan {
  Strategy strategy;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> epochs;  // one permutation of corpus indices per epoch

  std::size_t num_epochs() const { return epochs.size(); }

  /// Header "CURRICULA-ORDER v1 <strategy> <seed> <epochs>" then one line of
  /// space-separated indices per epoch.
  std::string serialize() const;
  static OrderingPlan deserialize(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static OrderingPlan load(const std::filesystem::path& path);
};

/// Seeded Fisher-Yates permutation of `items` for stream (seed, epoch).
std::vector<std::size_t> seeded_permutation(std::span<const std::size_t> items, std::uint64_t seed,
                                            std::uint64_t epoch);

/// Metric strategies sort stably by (value, index) or (-value, index).
/// ShuffleOnce reuses the epoch-0 permutation; ShuffleEveryEpoch draws epoch
/// e from stream (seed, e). `scores` may be null for the shuffle strategies.
OrderingPlan make_ordering(const Strategy& strategy, const ScoreTable* scores,
                           std::span<const std::size_t> corpus_indices, std::size_t num_epochs, std::uint64_t seed);

using BatchList = std::vector<std::vector<std::size_t>>;

struct BatchSchedule {
  std::size_t batch_size = 0;
  std::vector<BatchList> epochs;
};

/// Sequential chunks of `permutation`; the last batch may be short.
BatchList chunk_batches(std::span<const std::size_t> permutation, std::size_t batch_size);
BatchSchedule schedule_batches(const OrderingPlan& plan, std::size_t batch_size);

struct PlanCheck {
  bool ok = true;
  std::string message;  // first violation, empty on success
};

/// Every epoch must be a bijection on corpus_indices; fixed strategies must
/// repeat epoch 0 exactly. Violations are reported, not thrown.
PlanCheck verify_plan(const OrderingPlan& plan, std::span<const std::size_t> corpus_indices);

}  // namespace curricula
