#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "curricula/harness.hpp"
#include "curricula/trainer.hpp"
#include "support.hpp"

using namespace curricula;

namespace {

std::vector<std::size_t> indices_of(const EncodedCorpus& c) {
  std::vector<std::size_t> v;
  for (const auto& p : c.pairs) v.push_back(p.index);
  return v;
}

bool same_values(const Parameters& a, const Parameters& b) {
  return std::equal(a.values().begin(), a.values().end(), b.values().begin(), b.values().end());
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  const auto p0 = init_params(testing::tiny_config(false, 8, 8), 1);
  auto p = p0;
  auto state = AdamState::zeros_like(p);
  adam_step(p, p.zeros_like(), state, TrainConfig{});
  CHECK(state.t == 1);
  CHECK(same_values(p, p0));
}

TEST_CASE("adam: first step moves by lr * g / (|g| + eps)") {
  const auto p0 = init_params(testing::tiny_config(false, 8, 8), 1);
  auto p = p0;
  auto g = p.zeros_like();
  g.values()[17] = 1.0;
  g.values()[40] = -0.25;
  auto state = AdamState::zeros_like(p);
  TrainConfig cfg;  // lr 1e-5
  const double norm = adam_step(p, g, state, cfg);
  CHECK(norm == doctest::Approx(std::sqrt(1.0 + 0.0625)).epsilon(1e-15));
  // m_hat = g and v_hat = g^2 after bias correction.
  CHECK(p.values()[17] - p0.values()[17] == doctest::Approx(-1e-5 / (1.0 + 1e-8)).epsilon(1e-9));
  CHECK(std::fabs(p.values()[17] - p0.values()[17] - (-1e-5 / (1.0 + 1e-8))) < 1e-12);
  CHECK(std::fabs(p.values()[40] - p0.values()[40] - (1e-5 * 0.25 / (0.25 + 1e-8))) < 1e-12);
  for (std::size_t i = 0; i < p.size(); ++i)
    if (i != 17 && i != 40) CHECK(p.values()[i] == p0.values()[i]);
}

TEST_CASE("adam: clipping scales gradients to the clip norm") {
  auto p = init_params(testing::tiny_config(false, 8, 8), 1);
  auto g = p.zeros_like();
  g.values()[0] = 6.0;
  g.values()[1] = 8.0;  // norm 10
  auto state = AdamState::zeros_like(p);
  TrainConfig cfg;
  cfg.clip_norm = 5.0;
  CHECK(adam_step(p, g, state, cfg) == 10.0);
  CHECK(state.m.values()[0] == doctest::Approx(0.1 * 3.0).epsilon(1e-14));
  CHECK(state.m.values()[1] == doctest::Approx(0.1 * 4.0).epsilon(1e-14));
  CHECK(state.v.values()[1] == doctest::Approx(0.001 * 16.0).epsilon(1e-14));
  CHECK(global_norm(g) == 10.0);
}

TEST_CASE("adam: determinism and shape errors") {
  const auto p0 = init_params(testing::tiny_config(true, 8, 8), 3);
  auto g = init_params(testing::tiny_config(true, 8, 8), 4);
  auto a = p0, b = p0;
  auto sa = AdamState::zeros_like(a), sb = AdamState::zeros_like(b);
  for (int i = 0; i < 3; ++i) {
    adam_step(a, g, sa, TrainConfig{});
    adam_step(b, g, sb, TrainConfig{});
  }
  CHECK(same_values(a, b));
  CHECK(sa.t == 3);
  auto other = init_params(testing::tiny_config(false, 8, 8), 3);
  CHECK_THROWS_AS(adam_step(a, other, sa, TrainConfig{}), ConfigError);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.beta2 = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(TrainConfig{}.serialize().find("learning_rate=1e-05\n") != std::string::npos);
}

TEST_CASE("train_epoch: a single batch is a single adam step") {
  const auto t = testing::tiny_setup(6, 4, 2, 5, 3);
  const auto p0 = init_params(testing::tiny_config(true, t.src_vocab.size(), t.tgt_vocab.size()), 2);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.seed = 9;
  auto a = p0;
  auto sa = AdamState::zeros_like(a);
  const BatchList one{{3, 1, 4}};
  const auto stats = train_epoch(a, sa, one, t.encoded, cfg, 1);

  auto b = p0;
  auto sb = AdamState::zeros_like(b);
  const EncodedPair* rows[] = {&t.encoded.at_index(3), &t.encoded.at_index(1), &t.encoded.at_index(4)};
  const auto lg = backward_gradients(b, make_batch(std::span<const EncodedPair* const>(rows, 3)), true,
                                     mix_key(mix_key(9, 1), 0));
  adam_step(b, lg.gradients, sb, cfg);
  CHECK(same_values(a, b));
  CHECK(same_values(sa.m, sb.m));
  CHECK(same_values(sa.v, sb.v));
  CHECK(sa.t == sb.t);
  CHECK(stats.train_loss == lg.forward.mean_loss);
  CHECK(stats.epoch == 1);
}

TEST_CASE("train_epoch: different batch orders diverge, each reproducible") {
  const auto t = testing::tiny_setup(12, 4, 2, 5, 4);
  const auto p0 = init_params(testing::tiny_config(false, t.src_vocab.size(), t.tgt_vocab.size()), 2);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  const auto idx = indices_of(t.encoded);
  auto run = [&](const std::vector<std::size_t>& order) {
    auto p = p0;
    auto s = AdamState::zeros_like(p);
    train_epoch(p, s, chunk_batches(order, 4), t.encoded, cfg, 1);
    return p;
  };
  auto reversed = idx;
  std::reverse(reversed.begin(), reversed.end());
  const auto a1 = run(idx), a2 = run(idx), b1 = run(reversed), b2 = run(reversed);
  CHECK(same_values(a1, a2));
  CHECK(same_values(b1, b2));
  CHECK_FALSE(same_values(a1, b1));
}

TEST_CASE("train_epoch: numerical errors carry the batch index") {
  const auto t = testing::tiny_setup(6, 4, 2, 5, 3);
  auto p = init_params(testing::tiny_config(false, t.src_vocab.size(), t.tgt_vocab.size()), 2);
  for (auto& w : p.tensor(p.layout().out_b)) w = std::nan("");
  auto s = AdamState::zeros_like(p);
  try {
    train_epoch(p, s, BatchList{{0, 1}, {2, 3}}, t.encoded, TrainConfig{}, 4);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("epoch 4 batch 0") != std::string::npos);
  }
}

TEST_CASE("train_epoch: loss falls on the copy task with the small preset") {
  ToyCorpusConfig toy;
  toy.task = ToyTask::Copy;
  toy.size = 300;
  toy.vocab = 10;
  toy.min_len = 3;
  toy.max_len = 6;
  const auto splits = generate_toy_corpus(toy);
  const auto sv = build_vocab(splits.train, Side::Source, 1), tv = build_vocab(splits.train, Side::Target, 1);
  const auto train = encode_corpus(splits.train, sv, tv);
  auto p = init_params(ModelConfig::small(sv.size(), tv.size()), 1);
  auto s = AdamState::zeros_like(p);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 16;
  const auto plan = make_ordering(Strategy::shuffle_every_epoch(), nullptr, indices_of(train), 5, 1);
  std::vector<double> losses;
  for (std::size_t e = 1; e <= 5; ++e)
    losses.push_back(train_epoch(p, s, chunk_batches(plan.epochs[e - 1], cfg.batch_size), train, cfg, e).train_loss);
  CAPTURE(losses[0]);
  CAPTURE(losses[4]);
  CHECK(losses[4] < losses[0]);
}

TEST_CASE("early stopping: patience arithmetic") {
  EarlyStopper s(3);
  const double ppl[] = {10, 9, 9.5, 9.4, 9.6};
  std::size_t stopped_at = 0;
  for (std::size_t e = 1; e <= 5; ++e) {
    s.observe(e, ppl[e - 1]);
    if (s.should_stop()) {
      stopped_at = e;
      break;
    }
  }
  CHECK(stopped_at == 5);
  CHECK(s.best_epoch() == 2);
  CHECK(s.best_value() == 9.0);

  EarlyStopper ties(1);
  CHECK(ties.observe(1, 5.0));
  CHECK_FALSE(ties.observe(2, 5.0));
  CHECK(ties.should_stop());
  CHECK(ties.best_epoch() == 1);
}

TEST_CASE("fit: cap, best checkpoint, determinism, errors") {
  const auto t = testing::tiny_setup(40, 4, 2, 5, 8);
  EncodedCorpus train = t.encoded, valid;
  valid.src_vocab_fp = train.src_vocab_fp;
  valid.tgt_vocab_fp = train.tgt_vocab_fp;
  valid.pairs.assign(train.pairs.begin(), train.pairs.begin() + 8);
  const auto init = init_params(testing::tiny_config(false, t.src_vocab.size(), t.tgt_vocab.size()), 5);
  const auto plan = make_ordering(Strategy::shuffle_every_epoch(), nullptr, indices_of(train), 6, 3);
  TrainConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.batch_size = 8;
  cfg.max_epochs = 6;
  cfg.patience = 2;

  std::size_t callbacks = 0;
  const auto r = fit(init, plan, train, valid, cfg, [&](const EpochStats&) { ++callbacks; });
  REQUIRE_FALSE(r.stats.empty());
  CHECK(callbacks == r.stats.size());
  CHECK(r.best.history.size() == r.stats.size());
  double best = r.stats[0].valid_ppl;
  std::size_t best_epoch = 1;
  for (const auto& s : r.stats)
    if (s.valid_ppl < best) best = s.valid_ppl, best_epoch = s.epoch;
  CHECK(r.epochs_to_convergence == best_epoch);
  CHECK(std::exp2(corpus_cross_entropy(r.best.params, valid.pairs)) == best);
  CHECK(r.best.src_vocab_fp == train.src_vocab_fp);

  const auto again = fit(init, plan, train, valid, cfg);
  CHECK(again.best.serialize() == r.best.serialize());

  auto one = cfg;
  one.max_epochs = 1;
  CHECK(fit(init, plan, train, valid, one).stats.size() == 1);

  EncodedCorpus empty;
  empty.src_vocab_fp = train.src_vocab_fp;
  empty.tgt_vocab_fp = train.tgt_vocab_fp;
  CHECK_THROWS_AS(fit(init, plan, train, empty, cfg), ConfigError);
  auto long_run = cfg;
  long_run.max_epochs = 7;
  CHECK_THROWS_AS(fit(init, plan, train, valid, long_run), ConfigError);
  auto foreign = valid;
  foreign.tgt_vocab_fp = "other";
  CHECK_THROWS_AS(fit(init, plan, train, foreign, cfg), FingerprintError);
}

TEST_CASE("corpus_cross_entropy is token weighted and independent of chunking") {
  const auto t = testing::tiny_setup(23, 5, 1, 9, 12);
  const auto p = init_params(testing::tiny_config(true, t.src_vocab.size(), t.tgt_vocab.size()), 5);
  double bits = 0.0;
  std::size_t tokens = 0;
  for (const auto& e : t.encoded.pairs) {
    const EncodedPair* ptr = &e;
    const auto f = forward_teacher_forced(p, make_batch(std::span<const EncodedPair* const>(&ptr, 1)), false, 0);
    bits += f.pair_losses[0] * static_cast<double>(f.pair_tokens[0]);
    tokens += f.pair_tokens[0];
  }
  const double oracle = bits / static_cast<double>(tokens);
  CHECK(corpus_cross_entropy(p, t.encoded.pairs, 1) == oracle);
  CHECK(corpus_cross_entropy(p, t.encoded.pairs, 5) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(corpus_cross_entropy(p, t.encoded.pairs) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK_THROWS_AS(corpus_cross_entropy(p, std::span<const EncodedPair>{}), ConfigError);
}
