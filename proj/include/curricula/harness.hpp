#pragma once

// Experiment orchestration: toy corpora, scorer pre-training, one training
// run per ordering strategy, and the result tables.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "curricula/checkpoint.hpp"
#include "curricula/corpus.hpp"
#include "curricula/eval.hpp"
#include "curricula/ordering.hpp"
#include "curricula/seq2seq.hpp"
#include "curricula/trainer.hpp"

namespace curricula {

// ---------------------------------------------------------------------------
// Toy corpora

enum class ToyTask { Copy, Reverse, DigitTranslation };

const char* toy_task_name(ToyTask task);
ToyTask parse_toy_task(const std::string& name);

struct ToyCorpusConfig {
  ToyTask task = ToyTask::Reverse;
  std::size_t size = 1000;  // total unique pairs before the 80/10/10 split
  std::size_t vocab = 20;   // source alphabet size
  std::size_t min_len = 5;
  std::size_t max_len = 10;
  std::uint64_t seed = 1;
};

struct CorpusSplits {
  ParallelCorpus train;
  ParallelCorpus valid;
  ParallelCorpus test;
};

/// Unique synthetic pairs over the alphabet "0".."vocab-1", split 80/10/10.
/// Digit translation maps each source token to a fixed target word.
CorpusSplits generate_toy_corpus(const ToyCorpusConfig& config);

/// Replaces the target of round(fraction * N) seeded-chosen pairs with random
/// tokens drawn from the corpus's target alphabet, keeping lengths.
ParallelCorpus inject_label_noise(const ParallelCorpus& corpus, double fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Experiment specification

/// One report row: an ordering strategy plus, for PPL/BLEU orderings, the
/// preset of the scorer that produced the scores.
struct RunSpec {
  Strategy strategy;
  std::string scorer;  // preset name, or "none"

  /// "ppl-asc@small", "shuffle-once".
  std::string slug() const;
  static RunSpec parse(const std::string& text, const std::string& default_scorer);
  bool operator==(const RunSpec&) const = default;
};

struct ExperimentSpec {
  // Corpus: built-in toy generator or three line-aligned file pairs.
  bool use_toy = true;
  ToyCorpusConfig toy;
  double label_noise = 0.0;  // fraction of training targets replaced
  std::filesystem::path train_src, train_tgt, valid_src, valid_tgt, test_src, test_tgt;
  std::size_t filter_min_len = 5;
  std::size_t filter_max_len = 60;
  std::size_t max_pairs = 0;  // 0 keeps every filtered pair
  std::size_t min_count = 1;

  std::vector<RunSpec> runs;
  std::string trainer_preset = "base";
  std::string default_scorer = "small";
  // Per-preset width overrides; 0 keeps the preset value.
  std::map<std::string, std::size_t> hidden_override;
  std::map<std::string, std::size_t> embed_override;

  TrainConfig train;
  std::size_t scorer_max_epochs = 0;  // 0 means train.max_epochs
  std::uint64_t init_seed = 7;
  std::uint64_t order_seed = 11;
  std::size_t max_decode_len = 0;  // 0 selects the metrics default

  std::filesystem::path output_dir = "experiment-out";

  /// Throws ConfigError on an empty or duplicated run list, unknown presets or
  /// bad training settings.
  void validate() const;
  ModelConfig model_config(const std::string& preset, std::size_t src_vocab, std::size_t tgt_vocab) const;

  /// Flat "key=value" text after the header "CURRICULA-SPEC v1".
  std::string serialize() const;
  static ExperimentSpec deserialize(const std::string& text);
  static ExperimentSpec load(const std::filesystem::path& path);
};

/// Corpora and vocabularies shared by every run of an experiment.
struct PreparedData {
  CorpusSplits splits;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
  EncodedCorpus train;
  EncodedCorpus valid;
};

PreparedData prepare_data(const ExperimentSpec& spec);

/// Trains `preset` on the training split under ShuffleEveryEpoch and returns
/// its best checkpoint.
ModelCheckpoint pretrain_scorer(const ExperimentSpec& spec, const PreparedData& data, const std::string& preset);

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string strategy;  // human-readable strategy label
  std::string scorer;    // preset name or "none"
  std::size_t epochs = 0;
  double test_ppl = 0.0;
  double test_bleu = 0.0;  // fraction

  bool operator==(const ReportRow&) const = default;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  std::vector<std::pair<std::string, std::string>> metadata;

  bool operator==(const ExperimentReport&) const = default;
};

enum class ReportFormat { Tsv, Markdown };
ReportFormat parse_report_format(const std::string& name);

/// "Ascending PPL Order (base scorer) | 32 | 14.69 | 19.8"
std::string table1_row(const ReportRow& row);

std::string render_tsv(const ExperimentReport& report);
ExperimentReport parse_tsv(const std::string& text);
std::string render_markdown(const ExperimentReport& report);
/// Throws ConfigError for an empty report and IoError if `path` is unwritable.
void emit_report(const ExperimentReport& report, ReportFormat format, const std::filesystem::path& path);

/// Runs every RunSpec in order. All artifacts (corpora, vocabularies, scorer
/// checkpoints, score tables, plans, model checkpoints, report.tsv and
/// report.md) are written under spec.output_dir. `log` receives progress.
ExperimentReport run_experiment(const ExperimentSpec& spec, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Ascending-PPL vs ShuffleOnce over several seeds

struct DirectionalResult {
  std::vector<std::uint64_t> seeds;
  std::vector<double> curriculum_bleu;  // per seed
  std::vector<double> baseline_bleu;
  double curriculum_mean = 0.0;
  double baseline_mean = 0.0;
  double delta = 0.0;  // curriculum_mean - baseline_mean
  std::vector<std::filesystem::path> reports;
  std::vector<std::string> scorer_fingerprints;

  std::string summary() const;
};

/// For each seed, runs {ppl-asc@<scorer>, shuffle-once} with init/order/train
/// seeds set to that seed, in output_dir/seed-<s>.
DirectionalResult compare_curriculum(const ExperimentSpec& base, const std::vector<std::uint64_t>& seeds,
                                     std::ostream* log = nullptr);

}  // namespace curricula
