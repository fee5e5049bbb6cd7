#include "curricula/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <sstream>

#include "curricula/metrics.hpp"
#include "curricula/util.hpp"

namespace curricula {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Toy corpora

const char* toy_task_name(ToyTask task) {
  switch (task) {
    case ToyTask::Copy: return "copy";
    case ToyTask::Reverse: return "reverse";
    case ToyTask::DigitTranslation: return "digit-translation";
  }
  return "?";
}

ToyTask parse_toy_task(const std::string& name) {
  for (auto t : {ToyTask::Copy, ToyTask::Reverse, ToyTask::DigitTranslation}) {
    if (name == toy_task_name(t)) return t;
  }
  throw ConfigError("unknown toy task '" + name + "' (expected copy|reverse|digit-translation)");
}

namespace {

std::string digit_word(const std::string& token) {
  static const char* kWords[] = {"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"};
  const auto v = static_cast<std::size_t>(parse_int(token, "toy token"));
  return v < 10 ? kWords[v] : "w" + token;
}

Tokens toy_target(ToyTask task, const Tokens& src) {
  switch (task) {
    case ToyTask::Copy: return src;
    case ToyTask::Reverse: return Tokens(src.rbegin(), src.rend());
    case ToyTask::DigitTranslation: {
      Tokens out;
      out.reserve(src.size());
      for (const auto& t : src) out.push_back(digit_word(t));
      return out;
    }
  }
  return src;
}

// Number of distinct sources, saturating at `cap`.
std::size_t source_space(std::size_t vocab, std::size_t min_len, std::size_t max_len, std::size_t cap) {
  std::size_t total = 0;
  for (std::size_t len = min_len; len <= max_len; ++len) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < len && n < cap; ++i) n *= vocab;
    total += std::min(n, cap);
    if (total >= cap) return cap;
  }
  return total;
}

ParallelCorpus slice(const std::vector<SentencePair>& pairs, std::size_t begin, std::size_t end) {
  ParallelCorpus c;
  for (std::size_t i = begin; i < end; ++i) c.pairs.push_back({i - begin, pairs[i].src, pairs[i].tgt});
  return c;
}

}  // namespace

CorpusSplits generate_toy_corpus(const ToyCorpusConfig& config) {
  if (config.size < 30) throw ConfigError("toy corpus: size must be at least 30");
  if (config.vocab == 0) throw ConfigError("toy corpus: vocab must be at least 1");
  if (config.min_len < 1 || config.max_len > 60 || config.min_len > config.max_len) {
    throw ConfigError("toy corpus: length range must satisfy 1 <= min_len <= max_len <= 60");
  }
  if (source_space(config.vocab, config.min_len, config.max_len, config.size) < config.size) {
    throw ConfigError("toy corpus: only " + std::to_string(source_space(config.vocab, config.min_len, config.max_len,
                                                                        config.size)) +
                      " distinct sources exist for the requested size");
  }
  CounterRng rng(mix_key(config.seed, 0x746f79ULL));
  std::set<Tokens> seen;
  std::vector<SentencePair> pairs;
  const std::size_t span = config.max_len - config.min_len + 1;
  while (pairs.size() < config.size) {
    const std::size_t len = config.min_len + static_cast<std::size_t>(rng.next_below(span));
    Tokens src;
    src.reserve(len);
    for (std::size_t i = 0; i < len; ++i) src.push_back(std::to_string(rng.next_below(config.vocab)));
    if (!seen.insert(src).second) continue;
    auto tgt = toy_target(config.task, src);
    pairs.push_back({pairs.size(), std::move(src), std::move(tgt)});
  }
  const std::size_t n_train = config.size * 8 / 10;
  const std::size_t n_valid = config.size / 10;
  CorpusSplits s;
  s.train = slice(pairs, 0, n_train);
  s.valid = slice(pairs, n_train, n_train + n_valid);
  s.test = slice(pairs, n_train + n_valid, pairs.size());
  return s;
}

ParallelCorpus inject_label_noise(const ParallelCorpus& corpus, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("label noise fraction must be in [0, 1]");
  ParallelCorpus out = corpus;
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(corpus.size())));
  if (count == 0) return out;
  std::set<std::string> alphabet_set;
  for (const auto& p : corpus.pairs) alphabet_set.insert(p.tgt.begin(), p.tgt.end());
  const std::vector<std::string> alphabet(alphabet_set.begin(), alphabet_set.end());
  if (alphabet.empty()) return out;
  std::vector<std::size_t> positions(corpus.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  const auto chosen = seeded_permutation(positions, mix_key(seed, 0x6e6f6973ULL), 0);
  CounterRng rng(mix_key(seed, 0x6e6f6973ULL));
  for (std::size_t k = 0; k < count; ++k) {
    auto& tgt = out.pairs[chosen[k]].tgt;
    for (auto& tok : tgt) tok = alphabet[rng.next_below(alphabet.size())];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment specification

std::string RunSpec::slug() const {
  return strategy.needs_scorer() ? strategy.slug() + "@" + scorer : strategy.slug();
}

RunSpec RunSpec::parse(const std::string& text, const std::string& default_scorer) {
  const auto at = text.find('@');
  RunSpec r;
  r.strategy = Strategy::parse(trim(text.substr(0, at)));
  if (r.strategy.needs_scorer()) {
    r.scorer = at == std::string::npos ? default_scorer : trim(text.substr(at + 1));
  } else {
    if (at != std::string::npos) throw ConfigError("run '" + text + "': strategy takes no scorer");
    r.scorer = kNoScorer;
  }
  return r;
}

namespace {

bool known_preset(const std::string& name) { return name == "base" || name == "small"; }

std::vector<RunSpec> expand_runs(const std::string& value, const std::string& default_scorer) {
  std::vector<RunSpec> runs;
  for (const auto& item : split(value, ',')) {
    const auto name = trim(item);
    if (name.empty()) continue;
    if (name == "table1") {
      for (const auto& s : table1_strategies()) runs.push_back({s, s.needs_scorer() ? "base" : kNoScorer});
    } else if (name == "table2") {
      for (const char* preset : {"small", "base"}) {
        for (const auto& s : table1_strategies())
          if (s.needs_scorer()) runs.push_back({s, preset});
      }
    } else {
      runs.push_back(RunSpec::parse(name, default_scorer));
    }
  }
  return runs;
}

}  // namespace

void ExperimentSpec::validate() const {
  std::set<std::string> seen;
  for (const auto& r : runs) {
    if (!seen.insert(r.slug()).second) throw ConfigError("experiment spec: duplicate run " + r.slug());
    if (r.strategy.needs_scorer() && !known_preset(r.scorer)) {
      throw ConfigError("experiment spec: unknown scorer preset '" + r.scorer + "'");
    }
  }
  if (!known_preset(trainer_preset)) throw ConfigError("experiment spec: unknown trainer preset '" + trainer_preset + "'");
  for (const auto* m : {&hidden_override, &embed_override}) {
    for (const auto& [preset, v] : *m) {
      if (!known_preset(preset)) throw ConfigError("experiment spec: override for unknown preset '" + preset + "'");
      if (v == 0) throw ConfigError("experiment spec: zero width override for " + preset);
    }
  }
  if (!use_toy) {
    for (const auto* p : {&train_src, &train_tgt, &valid_src, &valid_tgt, &test_src, &test_tgt}) {
      if (p->empty()) throw ConfigError("experiment spec: corpus=files needs all six corpus paths");
    }
  }
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) throw ConfigError("experiment spec: label_noise must be in [0, 1]");
  train.validate();
}

ModelConfig ExperimentSpec::model_config(const std::string& preset, std::size_t src_vocab,
                                         std::size_t tgt_vocab) const {
  auto c = ModelConfig::preset(preset, src_vocab, tgt_vocab);
  if (auto it = hidden_override.find(preset); it != hidden_override.end()) {
    c.hidden_dim = it->second;
    if (preset == "small") c.embed_dim = it->second;
  }
  if (auto it = embed_override.find(preset); it != embed_override.end()) c.embed_dim = it->second;
  c.validate();
  return c;
}

std::string ExperimentSpec::serialize() const {
  std::ostringstream os;
  os << "CURRICULA-SPEC v1\n";
  os << "corpus=" << (use_toy ? "toy" : "files") << '\n';
  if (use_toy) {
    os << "toy_task=" << toy_task_name(toy.task) << '\n'
       << "toy_size=" << toy.size << '\n'
       << "toy_vocab=" << toy.vocab << '\n'
       << "toy_min_len=" << toy.min_len << '\n'
       << "toy_max_len=" << toy.max_len << '\n'
       << "toy_seed=" << toy.seed << '\n';
  } else {
    os << "train_src=" << train_src.string() << '\n'
       << "train_tgt=" << train_tgt.string() << '\n'
       << "valid_src=" << valid_src.string() << '\n'
       << "valid_tgt=" << valid_tgt.string() << '\n'
       << "test_src=" << test_src.string() << '\n'
       << "test_tgt=" << test_tgt.string() << '\n'
       << "filter_min_len=" << filter_min_len << '\n'
       << "filter_max_len=" << filter_max_len << '\n'
       << "max_pairs=" << max_pairs << '\n';
  }
  os << "label_noise=" << format_exact(label_noise) << '\n' << "min_count=" << min_count << '\n';
  os << "runs=";
  for (std::size_t i = 0; i < runs.size(); ++i) os << (i ? "," : "") << runs[i].slug();
  os << '\n'
     << "trainer_preset=" << trainer_preset << '\n'
     << "default_scorer=" << default_scorer << '\n';
  for (const auto& [p, v] : hidden_override) os << "hidden." << p << '=' << v << '\n';
  for (const auto& [p, v] : embed_override) os << "embed." << p << '=' << v << '\n';
  os << "learning_rate=" << format_exact(train.learning_rate) << '\n'
     << "batch_size=" << train.batch_size << '\n'
     << "max_epochs=" << train.max_epochs << '\n'
     << "patience=" << train.patience << '\n'
     << "clip_norm=" << format_exact(train.clip_norm) << '\n'
     << "train_seed=" << train.seed << '\n'
     << "scorer_max_epochs=" << scorer_max_epochs << '\n'
     << "init_seed=" << init_seed << '\n'
     << "order_seed=" << order_seed << '\n'
     << "max_decode_len=" << max_decode_len << '\n'
     << "output_dir=" << output_dir.string() << '\n';
  return os.str();
}

ExperimentSpec ExperimentSpec::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line) && trim(line).empty()) {
  }
  if (trim(line) != "CURRICULA-SPEC v1") throw ConfigError("experiment spec: missing header 'CURRICULA-SPEC v1'");

  std::map<std::string, std::string> kv;
  while (std::getline(is, line)) {
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("experiment spec: expected key=value, got '" + t + "'");
    const auto key = trim(t.substr(0, eq));
    if (!kv.emplace(key, trim(t.substr(eq + 1))).second) throw ConfigError("experiment spec: duplicate key " + key);
  }

  ExperimentSpec s;
  std::string runs_text;
  auto u = [](const std::string& v, const std::string& k) {
    try {
      return static_cast<std::size_t>(parse_u64(v, k));
    } catch (const FormatError& e) {
      throw ConfigError(std::string("experiment spec: ") + e.what());
    }
  };
  auto d = [](const std::string& v, const std::string& k) {
    try {
      return parse_double(v, k);
    } catch (const FormatError& e) {
      throw ConfigError(std::string("experiment spec: ") + e.what());
    }
  };
  for (const auto& [k, v] : kv) {
    if (k == "corpus") {
      if (v != "toy" && v != "files") throw ConfigError("experiment spec: corpus must be toy or files");
      s.use_toy = v == "toy";
    } else if (k == "toy_task") s.toy.task = parse_toy_task(v);
    else if (k == "toy_size") s.toy.size = u(v, k);
    else if (k == "toy_vocab") s.toy.vocab = u(v, k);
    else if (k == "toy_min_len") s.toy.min_len = u(v, k);
    else if (k == "toy_max_len") s.toy.max_len = u(v, k);
    else if (k == "toy_seed") s.toy.seed = u(v, k);
    else if (k == "train_src") s.train_src = v;
    else if (k == "train_tgt") s.train_tgt = v;
    else if (k == "valid_src") s.valid_src = v;
    else if (k == "valid_tgt") s.valid_tgt = v;
    else if (k == "test_src") s.test_src = v;
    else if (k == "test_tgt") s.test_tgt = v;
    else if (k == "filter_min_len") s.filter_min_len = u(v, k);
    else if (k == "filter_max_len") s.filter_max_len = u(v, k);
    else if (k == "max_pairs") s.max_pairs = u(v, k);
    else if (k == "label_noise") s.label_noise = d(v, k);
    else if (k == "min_count") s.min_count = u(v, k);
    else if (k == "runs") runs_text = v;
    else if (k == "trainer_preset") s.trainer_preset = v;
    else if (k == "default_scorer") s.default_scorer = v;
    else if (k.rfind("hidden.", 0) == 0) s.hidden_override[k.substr(7)] = u(v, k);
    else if (k.rfind("embed.", 0) == 0) s.embed_override[k.substr(6)] = u(v, k);
    else if (k == "learning_rate") s.train.learning_rate = d(v, k);
    else if (k == "batch_size") s.train.batch_size = u(v, k);
    else if (k == "max_epochs") s.train.max_epochs = u(v, k);
    else if (k == "patience") s.train.patience = u(v, k);
    else if (k == "clip_norm") s.train.clip_norm = d(v, k);
    else if (k == "train_seed") s.train.seed = u(v, k);
    else if (k == "scorer_max_epochs") s.scorer_max_epochs = u(v, k);
    else if (k == "init_seed") s.init_seed = u(v, k);
    else if (k == "order_seed") s.order_seed = u(v, k);
    else if (k == "max_decode_len") s.max_decode_len = u(v, k);
    else if (k == "output_dir") s.output_dir = v;
    else throw ConfigError("experiment spec: unknown key '" + k + "'");
  }
  s.runs = expand_runs(runs_text, s.default_scorer);
  s.validate();
  return s;
}

ExperimentSpec ExperimentSpec::load(const fs::path& path) { return deserialize(read_file(path)); }

// ---------------------------------------------------------------------------
// Data and scorers

PreparedData prepare_data(const ExperimentSpec& spec) {
  PreparedData d;
  if (spec.use_toy) {
    d.splits = generate_toy_corpus(spec.toy);
  } else {
    auto train = filter_corpus(load_parallel_corpus(spec.train_src, spec.train_tgt), spec.filter_min_len,
                               spec.filter_max_len);
    if (spec.max_pairs) train = truncate_corpus(train, spec.max_pairs);
    d.splits.train = std::move(train);
    d.splits.valid = load_parallel_corpus(spec.valid_src, spec.valid_tgt);
    d.splits.test = load_parallel_corpus(spec.test_src, spec.test_tgt);
  }
  if (spec.label_noise > 0.0) d.splits.train = inject_label_noise(d.splits.train, spec.label_noise, spec.toy.seed);
  if (d.splits.valid.empty() || d.splits.test.empty()) throw DataError("experiment: empty validation or test split");
  d.src_vocab = build_vocab(d.splits.train, Side::Source, spec.min_count);
  d.tgt_vocab = build_vocab(d.splits.train, Side::Target, spec.min_count);
  d.train = encode_corpus(d.splits.train, d.src_vocab, d.tgt_vocab);
  d.valid = encode_corpus(d.splits.valid, d.src_vocab, d.tgt_vocab);
  return d;
}

namespace {

TrainConfig scorer_train_config(const ExperimentSpec& spec) {
  TrainConfig t = spec.train;
  if (spec.scorer_max_epochs) t.max_epochs = spec.scorer_max_epochs;
  return t;
}

EpochCallback epoch_logger(std::ostream* log, const std::string& tag) {
  if (!log) return {};
  return [log, tag](const EpochStats& s) {
    *log << "[" << tag << "] epoch " << s.epoch << " train_loss=" << format_sig(s.train_loss, 5)
         << " valid_ppl=" << format_sig(s.valid_ppl, 5) << " (" << format_sig(s.seconds, 3) << "s)\n";
    log->flush();
  };
}

}  // namespace


namespace {

ModelCheckpoint pretrain(const ExperimentSpec& spec, const PreparedData& data, const std::string& preset,
                         std::ostream* log) {
  if (!known_preset(preset)) throw ConfigError("unknown scorer preset '" + preset + "'");
  const auto config = spec.model_config(preset, data.src_vocab.size(), data.tgt_vocab.size());
  const auto train_cfg = scorer_train_config(spec);
  const auto indices = data.splits.train.indices();
  const auto plan = make_ordering(Strategy::shuffle_every_epoch(), nullptr, indices, train_cfg.max_epochs,
                                  spec.order_seed);
  auto fitted = fit(init_params(config, spec.init_seed), plan, data.train, data.valid, train_cfg,
                    epoch_logger(log, "scorer " + preset));
  return std::move(fitted.best);
}

}  // namespace

ModelCheckpoint pretrain_scorer(const ExperimentSpec& spec, const PreparedData& data, const std::string& preset) {
  return pretrain(spec, data, preset, nullptr);
}

// ---------------------------------------------------------------------------
// Reports

ReportFormat parse_report_format(const std::string& name) {
  if (name == "tsv") return ReportFormat::Tsv;
  if (name == "markdown" || name == "md") return ReportFormat::Markdown;
  throw ConfigError("unknown report format '" + name + "' (expected tsv|markdown)");
}

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string row_label(const ReportRow& row) {
  return row.scorer == kNoScorer ? row.strategy : row.strategy + " (" + row.scorer + " scorer)";
}

const char* kTsvHeader = "strategy\tscorer\tepochs_early_stop\ttest_ppl\ttest_bleu";

void check_cell(const std::string& text) {
  if (text.find_first_of("\t\n") != std::string::npos) {
    throw ConfigError("report: field contains a tab or newline: '" + text + "'");
  }
}

}  // namespace

std::string table1_row(const ReportRow& row) {
  return row_label(row) + " | " + std::to_string(row.epochs) + " | " + fixed(row.test_ppl, 2) + " | " +
         fixed(row.test_bleu * 100.0, 1);
}

std::string render_tsv(const ExperimentReport& report) {
  std::ostringstream os;
  for (const auto& [k, v] : report.metadata) {
    check_cell(k);
    check_cell(v);
    os << "#\t" << k << '\t' << v << '\n';
  }
  os << kTsvHeader << '\n';
  for (const auto& r : report.rows) {
    check_cell(r.strategy);
    check_cell(r.scorer);
    os << r.strategy << '\t' << r.scorer << '\t' << r.epochs << '\t' << format_exact(r.test_ppl) << '\t'
       << format_exact(r.test_bleu) << '\n';
  }
  return os.str();
}

ExperimentReport parse_tsv(const std::string& text) {
  ExperimentReport report;
  std::istringstream is(text);
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, '\t');
    if (!header && f.size() == 3 && f[0] == "#") {
      report.metadata.emplace_back(f[1], f[2]);
    } else if (!header) {
      if (line != kTsvHeader) throw FormatError("report: bad header '" + line + "'");
      header = true;
    } else {
      if (f.size() != 5) throw FormatError("report: bad row '" + line + "'");
      report.rows.push_back({f[0], f[1], static_cast<std::size_t>(parse_int(f[2], "epochs")),
                             parse_double(f[3], "test_ppl"), parse_double(f[4], "test_bleu")});
    }
  }
  if (!header) throw FormatError("report: missing header line");
  return report;
}

std::string render_markdown(const ExperimentReport& report) {
  std::ostringstream os;
  os << "| Strategy | Scorer | Epochs (early-stop) | Test PPL | Test BLEU |\n";
  os << "|---|---|---|---|---|\n";
  for (const auto& r : report.rows) {
    os << "| " << r.strategy << " | " << r.scorer << " | " << r.epochs << " | " << fixed(r.test_ppl, 2) << " | "
       << fixed(r.test_bleu * 100.0, 1) << " |\n";
  }
  if (!report.metadata.empty()) {
    os << '\n';
    for (const auto& [k, v] : report.metadata) os << "- " << k << ": " << v << '\n';
  }
  return os.str();
}

void emit_report(const ExperimentReport& report, ReportFormat format, const fs::path& path) {
  if (report.rows.empty()) throw ConfigError("emit_report: empty report");
  write_file_atomic(path, format == ReportFormat::Tsv ? render_tsv(report) : render_markdown(report));
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

std::string file_stem(const RunSpec& run) {
  auto s = run.slug();
  std::replace(s.begin(), s.end(), '@', '.');
  return s;
}

/// Runs `fn`, prefixing any failure with the run and stage while keeping its exit code.
template <typename Fn>
auto stage(const std::string& run, const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(run + " [" + name + "]: " + e.what(), e.exit_code());
  } catch (const std::exception& e) {
    throw Error(run + " [" + name + "]: " + e.what(), 3);
  }
}

std::string scores_name(const RunSpec& run) {
  const auto metric = *run.strategy.required_metric();
  return std::string(metric_name(metric)) + (run.strategy.needs_scorer() ? "." + run.scorer : "");
}

std::string spec_fingerprint(const ExperimentSpec& spec) {
  ExperimentSpec copy = spec;
  copy.output_dir.clear();
  return to_hex(sha256(copy.serialize()));
}

}  // namespace

ExperimentReport run_experiment(const ExperimentSpec& spec, std::ostream* log) {
  spec.validate();
  if (spec.runs.empty()) throw ConfigError("experiment spec: no runs listed");
  const fs::path out = spec.output_dir;
  for (const char* sub : {"corpus", "scores", "plans", "models"}) fs::create_directories(out / sub);

  const auto data = stage("experiment", "corpus", [&] { return prepare_data(spec); });
  save_parallel_corpus(data.splits.train, out / "corpus" / "train.src", out / "corpus" / "train.tgt");
  save_parallel_corpus(data.splits.valid, out / "corpus" / "valid.src", out / "corpus" / "valid.tgt");
  save_parallel_corpus(data.splits.test, out / "corpus" / "test.src", out / "corpus" / "test.tgt");
  data.src_vocab.save(out / "vocab.src");
  data.tgt_vocab.save(out / "vocab.tgt");
  const auto train_indices = data.splits.train.indices();

  const auto model_cfg = spec.model_config(spec.trainer_preset, data.src_vocab.size(), data.tgt_vocab.size());
  ModelCheckpoint init;
  init.params = init_params(model_cfg, spec.init_seed);
  init.src_vocab_fp = data.src_vocab.fingerprint();
  init.tgt_vocab_fp = data.tgt_vocab.fingerprint();
  save_checkpoint(init, out / "models" / "init.ckpt");

  ExperimentReport report;
  auto meta = [&](const std::string& k, const std::string& v) { report.metadata.emplace_back(k, v); };
  meta("spec_sha256", spec_fingerprint(spec));
  meta("convergence", "early stopping on validation perplexity, patience " + std::to_string(spec.train.patience) +
                          ", max_epochs " + std::to_string(spec.train.max_epochs));
  meta("corpus", spec.use_toy ? std::string("toy ") + toy_task_name(spec.toy.task) : "files");
  meta("train_corpus_sha256", data.splits.train.content_hash());
  meta("pairs", std::to_string(data.splits.train.size()) + "/" + std::to_string(data.splits.valid.size()) + "/" +
                    std::to_string(data.splits.test.size()));
  meta("src_vocab_fp", init.src_vocab_fp);
  meta("tgt_vocab_fp", init.tgt_vocab_fp);
  meta("trainer_preset", spec.trainer_preset);
  meta("trainer_config_sha256", to_hex(sha256(model_cfg.serialize())));
  meta("train_config_sha256", to_hex(sha256(spec.train.serialize())));
  meta("init_seed", std::to_string(spec.init_seed));
  meta("order_seed", std::to_string(spec.order_seed));
  meta("train_seed", std::to_string(spec.train.seed));
  meta("init_fingerprint", init.fingerprint());

  // Scorers, trained once per preset in order of first use.
  std::map<std::string, ModelCheckpoint> scorers;
  for (const auto& run : spec.runs) {
    if (!run.strategy.needs_scorer() || scorers.count(run.scorer)) continue;
    auto ckpt = stage("scorer " + run.scorer, "pretrain", [&] { return pretrain(spec, data, run.scorer, log); });
    save_checkpoint(ckpt, out / "models" / ("scorer-" + run.scorer + ".ckpt"));
    meta("scorer." + run.scorer, ckpt.fingerprint());
    scorers.emplace(run.scorer, std::move(ckpt));
  }

  // Score tables are cached per (metric, scorer) and always reloaded from
  // disk so a run sees exactly the persisted values.
  std::map<std::string, ScoreTable> tables;
  auto scores_for = [&](const RunSpec& run) -> const ScoreTable* {
    const auto metric = run.strategy.required_metric();
    if (!metric) return nullptr;
    const auto name = scores_name(run);
    if (auto it = tables.find(name); it != tables.end()) return &it->second;
    ScoreTable table;
    if (*metric == MetricKind::LengthSource || *metric == MetricKind::LengthTarget) {
      table = score_lengths(data.splits.train, run.strategy.side);
    } else {
      table = score_with_model(*metric, scorers.at(run.scorer), data.splits.train, data.src_vocab, data.tgt_vocab);
    }
    const auto path = out / "scores" / (name + ".scores");
    table.save(path);
    return &tables.emplace(name, ScoreTable::load(path)).first->second;
  };

  for (const auto& run : spec.runs) {
    const auto tag = run.slug();
    const auto stem = file_stem(run);
    const ScoreTable* scores = stage(tag, "score", [&] { return scores_for(run); });
    const auto plan = stage(tag, "order", [&] {
      auto p = make_ordering(run.strategy, scores, train_indices, spec.train.max_epochs, spec.order_seed);
      const auto check = verify_plan(p, train_indices);
      if (!check.ok) throw DataError("plan verification failed: " + check.message);
      return p;
    });
    plan.save(out / "plans" / (stem + ".plan"));
    auto fitted = stage(tag, "train", [&] {
      return fit(init.params, plan, data.train, data.valid, spec.train, epoch_logger(log, tag));
    });
    save_checkpoint(fitted.best, out / "models" / (stem + ".ckpt"));
    const auto result = stage(tag, "eval", [&] {
      return evaluate_model(fitted.best, data.splits.test, data.src_vocab, data.tgt_vocab, spec.max_decode_len);
    });
    if (log) *log << "[" << tag << "] " << result.line() << " epochs=" << fitted.epochs_to_convergence << "\n";

    report.rows.push_back({run.strategy.label(), run.scorer, fitted.epochs_to_convergence, result.perplexity,
                           result.bleu});
    if (scores) meta("run." + tag + ".scores", "scores/" + scores_name(run) + ".scores");
    meta("run." + tag + ".plan", "plans/" + stem + ".plan sha256=" + to_hex(sha256(plan.serialize())));
    meta("run." + tag + ".model", "models/" + stem + ".ckpt fingerprint=" + fitted.best.fingerprint());
  }

  emit_report(report, ReportFormat::Tsv, out / "report.tsv");
  emit_report(report, ReportFormat::Markdown, out / "report.md");
  return report;
}

// ---------------------------------------------------------------------------

std::string DirectionalResult::summary() const {
  std::ostringstream os;
  os << "seeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << "\nascending_ppl_mean_bleu=" << format_sig(curriculum_mean, 6)
     << "\nshuffle_once_mean_bleu=" << format_sig(baseline_mean, 6) << "\ndelta=" << format_sig(delta, 6) << '\n';
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    os << "seed " << seeds[i] << ": ascending_ppl=" << format_sig(curriculum_bleu[i], 6)
       << " shuffle_once=" << format_sig(baseline_bleu[i], 6) << " scorer=" << scorer_fingerprints[i]
       << " report=" << reports[i].string() << '\n';
  }
  return os.str();
}

DirectionalResult compare_curriculum(const ExperimentSpec& base, const std::vector<std::uint64_t>& seeds,
                                     std::ostream* log) {
  if (seeds.empty()) throw ConfigError("compare_curriculum: no seeds");
  DirectionalResult r;
  r.seeds = seeds;
  const RunSpec curriculum{Strategy::perplexity(Direction::Ascending), base.default_scorer};
  const RunSpec baseline{Strategy::shuffle_once(), kNoScorer};
  for (auto seed : seeds) {
    ExperimentSpec spec = base;
    spec.runs = {curriculum, baseline};
    spec.init_seed = spec.order_seed = spec.train.seed = seed;
    spec.output_dir = base.output_dir / ("seed-" + std::to_string(seed));
    const auto report = run_experiment(spec, log);
    r.curriculum_bleu.push_back(report.rows[0].test_bleu);
    r.baseline_bleu.push_back(report.rows[1].test_bleu);
    r.reports.push_back(spec.output_dir / "report.tsv");
    std::string fp;
    for (const auto& [k, v] : report.metadata)
      if (k == "scorer." + base.default_scorer) fp = v;
    r.scorer_fingerprints.push_back(fp);
  }
  const auto n = static_cast<double>(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    r.curriculum_mean += r.curriculum_bleu[i] / n;
    r.baseline_mean += r.baseline_bleu[i] / n;
  }
  r.delta = r.curriculum_mean - r.baseline_mean;
  return r;
}

}  // namespace curricula
