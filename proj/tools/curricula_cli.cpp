// curricula: command-line front end for corpora, scoring, ordering, training,
// evaluation and full experiments.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "curricula/corpus.hpp"
#include "curricula/eval.hpp"
#include "curricula/harness.hpp"
#include "curricula/metrics.hpp"
#include "curricula/ordering.hpp"
#include "curricula/trainer.hpp"
#include "curricula/util.hpp"

namespace fs = std::filesystem;
using namespace curricula;

namespace {

struct CorpusPaths {
  std::string src, tgt;
};

struct ModelOptions {
  std::string preset = "small";
  std::size_t hidden = 0;
  std::size_t embed = 0;
  std::uint64_t init_seed = 7;
};

struct Vocabs {
  Vocabulary src, tgt;
};

void add_corpus(CLI::App* cmd, CorpusPaths& p, const std::string& prefix, bool required = true) {
  auto* a = cmd->add_option("--" + prefix + "src", p.src, "Source side, one sentence per line");
  auto* b = cmd->add_option("--" + prefix + "tgt", p.tgt, "Target side, line-aligned with the source");
  if (required) {
    a->required();
    b->required();
  }
}

void add_train_config(CLI::App* cmd, TrainConfig& t) {
  cmd->add_option("--lr", t.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--batch-size", t.batch_size, "Minibatch size")->capture_default_str();
  cmd->add_option("--patience", t.patience, "Early-stopping patience in epochs")->capture_default_str();
  cmd->add_option("--clip-norm", t.clip_norm, "Global gradient-norm clip")->capture_default_str();
  cmd->add_option("--train-seed", t.seed, "Dropout seed")->capture_default_str();
}

void add_model(CLI::App* cmd, ModelOptions& m) {
  cmd->add_option("--preset", m.preset, "Model preset: base or small")->capture_default_str();
  cmd->add_option("--hidden", m.hidden, "Override hidden width");
  cmd->add_option("--embed", m.embed, "Override embedding width");
  cmd->add_option("--init-seed", m.init_seed, "Parameter initialization seed")->capture_default_str();
}

ModelConfig model_config(const ModelOptions& m, const Vocabs& v) {
  auto c = ModelConfig::preset(m.preset, v.src.size(), v.tgt.size());
  if (m.hidden) {
    c.hidden_dim = m.hidden;
    if (m.preset == "small") c.embed_dim = m.hidden;
  }
  if (m.embed) c.embed_dim = m.embed;
  c.validate();
  return c;
}

Vocabs load_vocabs(const fs::path& dir) { return {Vocabulary::load(dir / "vocab.src"), Vocabulary::load(dir / "vocab.tgt")}; }

ParallelCorpus load(const CorpusPaths& p) { return load_parallel_corpus(p.src, p.tgt); }

FitResult train_model(const ModelOptions& m, const TrainConfig& t, const OrderingPlan& plan, const CorpusPaths& train,
                      const CorpusPaths& valid, const fs::path& vocab_dir, bool quiet) {
  const auto v = load_vocabs(vocab_dir);
  const auto tr = encode_corpus(load(train), v.src, v.tgt);
  const auto va = encode_corpus(load(valid), v.src, v.tgt);
  const auto params = init_params(model_config(m, v), m.init_seed);
  EpochCallback cb;
  if (!quiet) {
    cb = [](const EpochStats& s) {
      std::cerr << "epoch " << s.epoch << " train_loss=" << format_sig(s.train_loss, 5)
                << " valid_ppl=" << format_sig(s.valid_ppl, 5) << " (" << format_sig(s.seconds, 3) << "s)\n";
    };
  }
  return fit(params, plan, tr, va, t, cb);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curriculum data ordering for sequence-to-sequence translation"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress per-epoch progress");

  // corpus
  auto* corpus_cmd = app.add_subcommand("corpus", "Generate a toy corpus or filter a file corpus, and build vocabularies");
  CorpusPaths corpus_in;
  std::string toy_task;
  ToyCorpusConfig toy;
  std::size_t filter_min = 5, filter_max = 60, max_pairs = 0, min_count = 1;
  std::string corpus_out;
  add_corpus(corpus_cmd, corpus_in, "", false);
  corpus_cmd->add_option("--toy", toy_task, "Toy task: copy, reverse or digit-translation");
  corpus_cmd->add_option("--size", toy.size, "Toy corpus size before splitting")->capture_default_str();
  corpus_cmd->add_option("--vocab", toy.vocab, "Toy source alphabet size")->capture_default_str();
  corpus_cmd->add_option("--min-len", toy.min_len, "Toy minimum length")->capture_default_str();
  corpus_cmd->add_option("--max-len", toy.max_len, "Toy maximum length")->capture_default_str();
  corpus_cmd->add_option("--seed", toy.seed, "Toy generator seed")->capture_default_str();
  corpus_cmd->add_option("--filter-min", filter_min, "Minimum kept length (inclusive)")->capture_default_str();
  corpus_cmd->add_option("--filter-max", filter_max, "Maximum kept length (inclusive)")->capture_default_str();
  corpus_cmd->add_option("--max-pairs", max_pairs, "Keep only the lowest-index pairs after filtering (0 = all)");
  corpus_cmd->add_option("--min-count", min_count, "Vocabulary frequency cutoff")->capture_default_str();
  corpus_cmd->add_option("--out-dir", corpus_out, "Output directory")->required();

  // pretrain
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Train a scorer model under per-epoch shuffling");
  CorpusPaths train_in, valid_in;
  std::string vocab_dir, model_out;
  ModelOptions model;
  TrainConfig train_cfg;
  std::size_t epochs = 32;
  std::uint64_t order_seed = 11;
  add_corpus(pretrain_cmd, train_in, "train-");
  add_corpus(pretrain_cmd, valid_in, "valid-");
  pretrain_cmd->add_option("--vocab-dir", vocab_dir, "Directory holding vocab.src and vocab.tgt")->required();
  add_model(pretrain_cmd, model);
  add_train_config(pretrain_cmd, train_cfg);
  pretrain_cmd->add_option("--epochs", epochs, "Maximum epochs")->capture_default_str();
  pretrain_cmd->add_option("--order-seed", order_seed, "Shuffle seed")->capture_default_str();
  pretrain_cmd->add_option("--out", model_out, "Checkpoint path")->required();

  // score
  auto* score_cmd = app.add_subcommand("score", "Score every training pair");
  std::string metric = "length", side = "source", score_model, score_out;
  CorpusPaths score_in;
  score_cmd->add_option("--metric", metric, "length, xent, ppl or bleu")
      ->check(CLI::IsMember({"length", "ppl", "bleu", "xent"}))
      ->capture_default_str();
  score_cmd->add_option("--side", side, "Side for length: source or target")->capture_default_str();
  score_cmd->add_option("--model", score_model, "Scorer checkpoint (ppl/bleu)");
  score_cmd->add_option("--vocab-dir", vocab_dir, "Directory holding vocab.src and vocab.tgt");
  add_corpus(score_cmd, score_in, "");
  score_cmd->add_option("--out", score_out, "Score table path")->required();

  // order
  auto* order_cmd = app.add_subcommand("order", "Build an ordering plan");
  std::string strategy_name, direction = "asc", scores_path, plan_out;
  CorpusPaths order_in;
  order_cmd->add_option("--strategy", strategy_name, "shuffle-every-epoch, shuffle-once, length, ppl or bleu")
      ->required();
  order_cmd->add_option("--direction", direction, "asc or desc")->capture_default_str();
  order_cmd->add_option("--side", side, "Side for length orderings")->capture_default_str();
  order_cmd->add_option("--scores", scores_path, "Score table for length/ppl/bleu");
  add_corpus(order_cmd, order_in, "");
  order_cmd->add_option("--epochs", epochs, "Epochs in the plan")->capture_default_str();
  order_cmd->add_option("--seed", order_seed, "Shuffle seed")->capture_default_str();
  order_cmd->add_option("--out", plan_out, "Plan path")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model following an ordering plan");
  std::string plan_path;
  train_cmd->add_option("--plan", plan_path, "Ordering plan")->required();
  add_corpus(train_cmd, train_in, "train-");
  add_corpus(train_cmd, valid_in, "valid-");
  train_cmd->add_option("--vocab-dir", vocab_dir, "Directory holding vocab.src and vocab.tgt")->required();
  add_model(train_cmd, model);
  add_train_config(train_cmd, train_cfg);
  train_cmd->add_option("--epochs", epochs, "Maximum epochs (at most the plan length)")->capture_default_str();
  train_cmd->add_option("--out", model_out, "Checkpoint path")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Test perplexity and corpus BLEU");
  std::string eval_model, hyp_out;
  CorpusPaths eval_in;
  std::size_t max_decode = 0;
  eval_cmd->add_option("--model", eval_model, "Checkpoint")->required();
  eval_cmd->add_option("--vocab-dir", vocab_dir, "Directory holding vocab.src and vocab.tgt")->required();
  add_corpus(eval_cmd, eval_in, "");
  eval_cmd->add_option("--max-decode-len", max_decode, "Decode cap (0 = max(2*source length, 80))");
  eval_cmd->add_option("--hyp-out", hyp_out, "Write greedy translations here");

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "Run every strategy in a spec file");
  std::string spec_path, exp_out;
  std::vector<std::uint64_t> compare_seeds;
  exp_cmd->add_option("--spec", spec_path, "CURRICULA-SPEC v1 file")->required();
  exp_cmd->add_option("--out-dir", exp_out, "Override the spec's output directory");
  exp_cmd->add_option("--compare-seeds", compare_seeds,
                      "Instead of the spec's runs, compare ascending PPL with shuffle-once over these seeds")
      ->delimiter(',');

  // report
  auto* report_cmd = app.add_subcommand("report", "Render a report.tsv");
  std::string report_in, report_format = "markdown", report_out;
  bool table_rows = false;
  report_cmd->add_option("--in", report_in, "report.tsv")->required();
  report_cmd->add_option("--format", report_format, "tsv or markdown")->capture_default_str();
  report_cmd->add_option("--out", report_out, "Write here instead of stdout");
  report_cmd->add_flag("--rows", table_rows, "Print one 'label | epochs | ppl | bleu' line per row");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*corpus_cmd) {
      const fs::path out = corpus_out;
      fs::create_directories(out);
      ParallelCorpus train;
      if (!toy_task.empty()) {
        toy.task = parse_toy_task(toy_task);
        const auto s = generate_toy_corpus(toy);
        save_parallel_corpus(s.train, out / "train.src", out / "train.tgt");
        save_parallel_corpus(s.valid, out / "valid.src", out / "valid.tgt");
        save_parallel_corpus(s.test, out / "test.src", out / "test.tgt");
        train = s.train;
      } else {
        if (corpus_in.src.empty() || corpus_in.tgt.empty()) throw ConfigError("corpus: give --toy or --src/--tgt");
        train = filter_corpus(load(corpus_in), filter_min, filter_max);
        if (max_pairs) train = truncate_corpus(train, max_pairs);
        save_parallel_corpus(train, out / "train.src", out / "train.tgt");
      }
      build_vocab(train, Side::Source, min_count).save(out / "vocab.src");
      build_vocab(train, Side::Target, min_count).save(out / "vocab.tgt");
      std::cout << "pairs=" << train.size() << " dir=" << out.string() << '\n';
    } else if (*pretrain_cmd) {
      train_cfg.max_epochs = epochs;
      const auto indices = load(train_in).indices();
      const auto plan = make_ordering(Strategy::shuffle_every_epoch(), nullptr, indices, epochs, order_seed);
      auto r = train_model(model, train_cfg, plan, train_in, valid_in, vocab_dir, quiet);
      save_checkpoint(r.best, model_out);
      std::cout << "fingerprint=" << r.best.fingerprint() << " epochs=" << r.epochs_to_convergence << '\n';
    } else if (*score_cmd) {
      const auto corpus = load(score_in);
      ScoreTable table;
      if (metric == "length") {
        table = score_lengths(corpus, parse_side(side));
      } else {
        if (score_model.empty() || vocab_dir.empty()) throw ConfigError("score: --model and --vocab-dir are required");
        const auto v = load_vocabs(vocab_dir);
        const auto kind = metric == "ppl" ? MetricKind::Perplexity
                          : metric == "bleu" ? MetricKind::Bleu
                                             : MetricKind::CrossEntropy;
        table = score_with_model(kind, load_checkpoint(score_model), corpus, v.src, v.tgt);
      }
      table.save(score_out);
      std::cout << "scored=" << table.entries.size() << " scorer=" << table.scorer << '\n';
    } else if (*order_cmd) {
      Strategy s;
      if (strategy_name == "length") {
        s = Strategy::length(parse_side(side), Strategy::parse("ppl-" + direction).direction);
      } else if (strategy_name == "ppl" || strategy_name == "bleu") {
        s = Strategy::parse(strategy_name + "-" + direction);
      } else {
        s = Strategy::parse(strategy_name);
      }
      std::optional<ScoreTable> scores;
      if (!scores_path.empty()) scores = ScoreTable::load(scores_path);
      const auto indices = load(order_in).indices();
      const auto plan = make_ordering(s, scores ? &*scores : nullptr, indices, epochs, order_seed);
      plan.save(plan_out);
      std::cout << "strategy=" << s.slug() << " epochs=" << plan.num_epochs() << '\n';
    } else if (*train_cmd) {
      const auto plan = OrderingPlan::load(plan_path);
      const auto check = verify_plan(plan, load(train_in).indices());
      if (!check.ok) throw DataError("plan: " + check.message);
      train_cfg.max_epochs = std::min(epochs, plan.num_epochs());
      auto r = train_model(model, train_cfg, plan, train_in, valid_in, vocab_dir, quiet);
      save_checkpoint(r.best, model_out);
      std::cout << "fingerprint=" << r.best.fingerprint() << " epochs=" << r.epochs_to_convergence << '\n';
    } else if (*eval_cmd) {
      const auto v = load_vocabs(vocab_dir);
      const auto ckpt = load_checkpoint(eval_model);
      const auto corpus = load(eval_in);
      std::cout << evaluate_model(ckpt, corpus, v.src, v.tgt, max_decode).line() << '\n';
      if (!hyp_out.empty()) {
        std::string text;
        for (const auto& hyp : translate_corpus(ckpt, corpus, v.src, v.tgt, max_decode)) {
          for (std::size_t i = 0; i < hyp.size(); ++i) text += (i ? " " : "") + hyp[i];
          text += '\n';
        }
        write_file_atomic(hyp_out, text);
      }
    } else if (*exp_cmd) {
      auto spec = ExperimentSpec::load(spec_path);
      if (!exp_out.empty()) spec.output_dir = exp_out;
      std::ostream* log = quiet ? nullptr : &std::cerr;
      if (!compare_seeds.empty()) {
        std::cout << compare_curriculum(spec, compare_seeds, log).summary();
      } else {
        std::cout << render_markdown(run_experiment(spec, log));
      }
    } else if (*report_cmd) {
      const auto report = parse_tsv(read_file(report_in));
      if (table_rows) {
        for (const auto& row : report.rows) std::cout << table1_row(row) << '\n';
      } else if (!report_out.empty()) {
        emit_report(report, parse_report_format(report_format), report_out);
      } else {
        if (report.rows.empty()) throw ConfigError("report: no rows");
        std::cout << (parse_report_format(report_format) == ReportFormat::Tsv ? render_tsv(report)
                                                                                : render_markdown(report));
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
