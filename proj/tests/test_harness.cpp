#include <doctest.h>

#include <algorithm>
#include <set>

#include "curricula/harness.hpp"
#include "support.hpp"

using namespace curricula;

namespace {

std::set<std::pair<Tokens, Tokens>> as_set(const ParallelCorpus& c) {
  std::set<std::pair<Tokens, Tokens>> s;
  for (const auto& p : c.pairs) s.emplace(p.src, p.tgt);
  return s;
}

ExperimentSpec tiny_spec(const std::filesystem::path& out) {
  ExperimentSpec s;
  s.toy = {ToyTask::Reverse, 60, 6, 3, 5, 4};
  s.trainer_preset = "base";
  s.hidden_override = {{"base", 8}, {"small", 8}};
  s.embed_override = {{"base", 8}};
  s.train.learning_rate = 1e-2;
  s.train.batch_size = 16;
  s.train.max_epochs = 2;
  s.train.patience = 2;
  s.scorer_max_epochs = 2;
  s.runs = {RunSpec::parse("shuffle-once", "small"), RunSpec::parse("length-target-asc", "small"),
            RunSpec::parse("ppl-asc", "small"), RunSpec::parse("bleu-desc@small", "small")};
  s.output_dir = out;
  return s;
}

std::string meta(const ExperimentReport& r, const std::string& key) {
  for (const auto& [k, v] : r.metadata)
    if (k == key) return v;
  return "";
}

}  // namespace

TEST_CASE("toy tasks: copy, reverse, digit translation") {
  ToyCorpusConfig c;
  c.size = 100;
  c.vocab = 12;
  c.min_len = 2;
  c.max_len = 6;
  c.task = ToyTask::Reverse;
  const auto rev = generate_toy_corpus(c);
  CHECK(rev.train.size() == 80);
  CHECK(rev.valid.size() == 10);
  CHECK(rev.test.size() == 10);
  for (const auto* split : {&rev.train, &rev.valid, &rev.test}) {
    for (std::size_t i = 0; i < split->size(); ++i) {
      const auto& p = split->pairs[i];
      CHECK(p.index == i);
      Tokens r = p.src;
      std::reverse(r.begin(), r.end());
      CHECK(p.tgt == r);
      CHECK(p.src.size() >= 2);
      CHECK(p.src.size() <= 6);
      for (const auto& tok : p.src) CHECK(parse_int(tok, "tok") < 12);
    }
  }
  c.task = ToyTask::Copy;
  for (const auto& p : generate_toy_corpus(c).train.pairs) CHECK(p.tgt == p.src);
  c.task = ToyTask::DigitTranslation;
  const std::vector<std::string> words = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"};
  for (const auto& p : generate_toy_corpus(c).train.pairs) {
    REQUIRE(p.tgt.size() == p.src.size());
    for (std::size_t i = 0; i < p.src.size(); ++i) {
      const auto d = static_cast<std::size_t>(parse_int(p.src[i], "tok"));
      CHECK(p.tgt[i] == (d < 10 ? words[d] : "w" + p.src[i]));
    }
  }
  CHECK(parse_toy_task("digit-translation") == ToyTask::DigitTranslation);
  CHECK(std::string(toy_task_name(ToyTask::Reverse)) == "reverse");
  CHECK_THROWS_AS(parse_toy_task("sort"), ConfigError);
}

TEST_CASE("toy corpora: determinism, disjoint splits, errors") {
  ToyCorpusConfig c;
  c.size = 200;
  const auto a = generate_toy_corpus(c), b = generate_toy_corpus(c);
  CHECK(as_set(a.train) == as_set(b.train));
  CHECK(a.train.content_hash() == b.train.content_hash());
  for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train.pairs[i].src == b.train.pairs[i].src);
  auto other = c;
  other.seed = 2;
  CHECK(generate_toy_corpus(other).train.content_hash() != a.train.content_hash());

  const auto tr = as_set(a.train), va = as_set(a.valid), te = as_set(a.test);
  CHECK(tr.size() == a.train.size());
  for (const auto& p : va) CHECK(tr.count(p) == 0);
  for (const auto& p : te) {
    CHECK(tr.count(p) == 0);
    CHECK(va.count(p) == 0);
  }

  auto bad = c;
  bad.size = 29;
  CHECK_THROWS_AS(generate_toy_corpus(bad), ConfigError);
  bad = c;
  bad.min_len = 0;
  CHECK_THROWS_AS(generate_toy_corpus(bad), ConfigError);
  bad = c;
  bad.max_len = 61;
  CHECK_THROWS_AS(generate_toy_corpus(bad), ConfigError);
  bad = c;
  bad.min_len = 7;
  bad.max_len = 6;
  CHECK_THROWS_AS(generate_toy_corpus(bad), ConfigError);
  bad = c;
  bad.vocab = 2;
  bad.min_len = 1;
  bad.max_len = 2;  // only 6 distinct sources
  CHECK_THROWS_AS(generate_toy_corpus(bad), ConfigError);
}

TEST_CASE("label noise replaces the requested share of targets") {
  ToyCorpusConfig c;
  c.size = 250;
  const auto clean = generate_toy_corpus(c).train;
  const auto noisy = inject_label_noise(clean, 0.2, 3);
  REQUIRE(noisy.size() == clean.size());
  std::set<std::string> alphabet;
  for (const auto& p : clean.pairs) alphabet.insert(p.tgt.begin(), p.tgt.end());
  std::size_t changed = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    CHECK(noisy.pairs[i].src == clean.pairs[i].src);
    CHECK(noisy.pairs[i].tgt.size() == clean.pairs[i].tgt.size());
    for (const auto& t : noisy.pairs[i].tgt) CHECK(alphabet.count(t) == 1);
    changed += noisy.pairs[i].tgt != clean.pairs[i].tgt;
  }
  CHECK(changed <= 40);
  CHECK(changed >= 36);  // a random replacement can coincide with the original
  CHECK(inject_label_noise(clean, 0.2, 3).content_hash() == noisy.content_hash());
  CHECK(inject_label_noise(clean, 0.0, 3).content_hash() == clean.content_hash());
  CHECK_THROWS_AS(inject_label_noise(clean, 1.5, 3), ConfigError);
}

TEST_CASE("run specs and the table shortcuts") {
  const auto r = RunSpec::parse("ppl-asc", "small");
  CHECK(r.scorer == "small");
  CHECK(r.slug() == "ppl-asc@small");
  CHECK(RunSpec::parse("bleu-desc@base", "small").scorer == "base");
  CHECK(RunSpec::parse("shuffle-once", "small").slug() == "shuffle-once");
  CHECK_THROWS_AS(RunSpec::parse("shuffle-once@base", "small"), ConfigError);

  const auto t1 = ExperimentSpec::deserialize("CURRICULA-SPEC v1\nruns=table1\n");
  REQUIRE(t1.runs.size() == 10);
  const auto strategies = table1_strategies();
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(t1.runs[i].strategy == strategies[i]);
    CHECK(t1.runs[i].scorer == (strategies[i].needs_scorer() ? "base" : "none"));
  }
  const auto t2 = ExperimentSpec::deserialize("CURRICULA-SPEC v1\nruns=table2\n");
  REQUIRE(t2.runs.size() == 8);
  const std::vector<std::string> slugs = {"ppl-asc@small", "ppl-desc@small", "bleu-asc@small", "bleu-desc@small",
                                          "ppl-asc@base",  "ppl-desc@base",  "bleu-asc@base",  "bleu-desc@base"};
  for (std::size_t i = 0; i < 8; ++i) CHECK(t2.runs[i].slug() == slugs[i]);
}

TEST_CASE("experiment spec: round-trip and errors") {
  auto s = tiny_spec("some/dir");
  s.label_noise = 0.25;
  s.max_decode_len = 17;
  const auto text = s.serialize();
  CHECK(text.rfind("CURRICULA-SPEC v1\n", 0) == 0);
  const auto back = ExperimentSpec::deserialize(text);
  CHECK(back.serialize() == text);
  CHECK(back.runs == s.runs);
  CHECK(back.hidden_override == s.hidden_override);
  CHECK(back.train.learning_rate == s.train.learning_rate);
  CHECK(back.output_dir == s.output_dir);

  const std::string head = "CURRICULA-SPEC v1\n";
  CHECK_THROWS_AS(ExperimentSpec::deserialize("runs=table1\n"), ConfigError);
  auto no_runs = ExperimentSpec::deserialize(head);  // fine for compare_curriculum
  CHECK(no_runs.runs.empty());
  no_runs.output_dir = testing::temp_dir("no-runs");
  CHECK_THROWS_AS(run_experiment(no_runs), ConfigError);
  CHECK_THROWS_AS(ExperimentSpec::deserialize(head + "runs=table1\nfoo=1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentSpec::deserialize(head + "runs=table1\nbatch_size=1\nbatch_size=2\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentSpec::deserialize(head + "runs=shuffle-once,shuffle-once\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentSpec::deserialize(head + "runs=table1\nbatch_size=x\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentSpec::deserialize(head + "runs=table1\ntrainer_preset=huge\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentSpec::deserialize(head + "runs=table1\ncorpus=files\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentSpec::deserialize(head + "runs=table1\nlearning_rate=0\n"), ConfigError);
  CHECK_NOTHROW(ExperimentSpec::deserialize(head + "# comment\n\nruns=table1\n"));

  const auto cfg = s.model_config("small", 30, 40);
  CHECK(cfg.hidden_dim == 8);
  CHECK(cfg.embed_dim == 8);
  CHECK(cfg.src_vocab_size == 30);
}

TEST_CASE("report rendering") {
  const ReportRow asc{"Ascending PPL Order", "base", 32, 14.69, 0.198};
  CHECK(table1_row(asc) == "Ascending PPL Order (base scorer) | 32 | 14.69 | 19.8");
  const ReportRow shuffle{"Random Shuffle every epoch", "none", 26, 16.55, 0.181};
  CHECK(table1_row(shuffle) == "Random Shuffle every epoch | 26 | 16.55 | 18.1");

  ExperimentReport r;
  r.rows = {shuffle, asc, {"Descending BLEU Order", "small", 3, 1.0 / 3.0, 2.0 / 7.0}};
  r.metadata = {{"init_seed", "7"}, {"convergence", "early stopping"}};
  const auto tsv = render_tsv(r);
  CHECK(tsv.find("strategy\tscorer\tepochs_early_stop\ttest_ppl\ttest_bleu\n") != std::string::npos);
  CHECK(parse_tsv(tsv) == r);
  const auto md = render_markdown(r);
  CHECK(md.rfind("| Strategy | Scorer | Epochs (early-stop) | Test PPL | Test BLEU |\n", 0) == 0);
  CHECK(md.find("| Ascending PPL Order | base | 32 | 14.69 | 19.8 |") != std::string::npos);

  const auto dir = testing::temp_dir("report");
  emit_report(r, ReportFormat::Tsv, dir / "r.tsv");
  CHECK(parse_tsv(read_file(dir / "r.tsv")) == r);
  CHECK_THROWS_AS(emit_report(ExperimentReport{}, ReportFormat::Tsv, dir / "e.tsv"), ConfigError);
  CHECK_THROWS_AS(emit_report(r, ReportFormat::Markdown, dir / "no" / "such" / "r.md"), IoError);
  CHECK(parse_report_format("md") == ReportFormat::Markdown);
  CHECK_THROWS_AS(parse_report_format("csv"), ConfigError);
  CHECK_THROWS_AS(parse_tsv("nonsense\n"), FormatError);
}

TEST_CASE("pretrain_scorer is deterministic") {
  auto s = tiny_spec("unused");
  s.scorer_max_epochs = 1;
  const auto data = prepare_data(s);
  const auto a = pretrain_scorer(s, data, "small"), b = pretrain_scorer(s, data, "small");
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK_FALSE(a.config().use_attention);
  CHECK_THROWS_AS(pretrain_scorer(s, data, "tiny"), ConfigError);
}

TEST_CASE("run_experiment: rows, artifacts, provenance, reproducibility") {
  const auto dir = testing::temp_dir("experiment");
  const auto spec = tiny_spec(dir / "a");
  const auto r = run_experiment(spec);
  REQUIRE(r.rows.size() == 4);
  CHECK(r.rows[0].strategy == "Random Shuffle once");
  CHECK(r.rows[0].scorer == "none");
  CHECK(r.rows[2].strategy == "Ascending PPL Order");
  CHECK(r.rows[2].scorer == "small");
  for (const auto& row : r.rows) {
    CHECK(row.epochs >= 1);
    CHECK(row.epochs <= 2);
    CHECK(row.test_ppl >= 1.0);
    CHECK(row.test_bleu >= 0.0);
    CHECK(row.test_bleu <= 1.0);
  }

  const auto out = dir / "a";
  for (const char* f : {"report.tsv", "report.md", "vocab.src", "vocab.tgt", "corpus/train.src", "models/init.ckpt",
                        "models/scorer-small.ckpt", "scores/ppl.small.scores", "scores/bleu.small.scores",
                        "scores/length-target.scores", "plans/shuffle-once.plan", "plans/ppl-asc.small.plan",
                        "models/bleu-desc.small.ckpt"}) {
    CAPTURE(f);
    CHECK(std::filesystem::exists(out / f));
  }
  CHECK(parse_tsv(read_file(out / "report.tsv")) == r);

  // Every row started from the persisted init checkpoint and shares the scorer.
  const auto init = load_checkpoint(out / "models" / "init.ckpt");
  CHECK(meta(r, "init_fingerprint") == init.fingerprint());
  const auto scorer = load_checkpoint(out / "models" / "scorer-small.ckpt");
  CHECK(meta(r, "scorer.small") == scorer.fingerprint());
  CHECK(ScoreTable::load(out / "scores" / "ppl.small.scores").scorer == scorer.fingerprint());
  CHECK(meta(r, "train_corpus_sha256") == load_parallel_corpus(out / "corpus" / "train.src",
                                                               out / "corpus" / "train.tgt").content_hash());
  const auto model_meta = meta(r, "run.ppl-asc@small.model");
  CHECK(model_meta.find(load_checkpoint(out / "models" / "ppl-asc.small.ckpt").fingerprint()) != std::string::npos);
  CHECK(OrderingPlan::load(out / "plans" / "ppl-asc.small.plan").strategy == Strategy::parse("ppl-asc"));

  const auto again = run_experiment(tiny_spec(dir / "b"));
  CHECK(read_file(dir / "a" / "report.tsv") == read_file(dir / "b" / "report.tsv"));
  CHECK(read_file(dir / "a" / "models" / "bleu-desc.small.ckpt") ==
        read_file(dir / "b" / "models" / "bleu-desc.small.ckpt"));
}

TEST_CASE("run_experiment: stage failures name the run") {
  const auto dir = testing::temp_dir("experiment-fail");
  auto spec = tiny_spec(dir);
  spec.runs = {RunSpec::parse("shuffle-once", "small")};
  spec.train.learning_rate = 1e200;
  spec.train.clip_norm = 1e300;
  try {
    run_experiment(spec);
    FAIL("expected a failure");
  } catch (const Error& e) {
    CHECK(e.exit_code() == 4);
    CHECK(std::string(e.what()).find("shuffle-once [train]") != std::string::npos);
  }
}
