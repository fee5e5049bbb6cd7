#include "curricula/trainer.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "curricula/util.hpp"

namespace curricula {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train config: Adam betas must be in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("train config: epsilon must be positive");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be at least 1");
  if (max_epochs == 0) throw ConfigError("train config: max_epochs must be at least 1");
  if (patience == 0) throw ConfigError("train config: patience must be at least 1");
  if (!(clip_norm > 0.0)) throw ConfigError("train config: clip_norm must be positive");
}

std::string TrainConfig::serialize() const {
  std::ostringstream os;
  os << "learning_rate=" << format_exact(learning_rate) << '\n'
     << "beta1=" << format_exact(beta1) << '\n'
     << "beta2=" << format_exact(beta2) << '\n'
     << "epsilon=" << format_exact(epsilon) << '\n'
     << "batch_size=" << batch_size << '\n'
     << "max_epochs=" << max_epochs << '\n'
     << "patience=" << patience << '\n'
     << "clip_norm=" << format_exact(clip_norm) << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

AdamState AdamState::zeros_like(const Parameters& params) { return {params.zeros_like(), params.zeros_like(), 0}; }

double global_norm(const Parameters& grads) {
  double sq = 0.0;
  for (double g : grads.values()) sq += g * g;
  return std::sqrt(sq);
}

double adam_step(Parameters& params, const Parameters& grads, AdamState& state, const TrainConfig& config) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v)) {
    throw ConfigError("adam_step: parameter, gradient and moment shapes differ");
  }
  const double norm = global_norm(grads);
  const double clip = norm > config.clip_norm ? config.clip_norm / norm : 1.0;
  state.t += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  auto theta = params.values();
  auto g = grads.values();
  auto m = state.m.values();
  auto v = state.v.values();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double gi = g[i] * clip;
    m[i] = b1 * m[i] + (1.0 - b1) * gi;
    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    theta[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
  return norm;
}

EpochStats train_epoch(Parameters& params, AdamState& adam, const BatchList& batches, const EncodedCorpus& corpus,
                       const TrainConfig& config, std::size_t epoch) {
  const auto start = std::chrono::steady_clock::now();
  EpochStats stats;
  stats.epoch = epoch;
  double loss_sum = 0.0;
  std::vector<const EncodedPair*> rows;
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    rows.clear();
    for (auto idx : batches[bi]) rows.push_back(&corpus.at_index(idx));
    const Batch batch = make_batch(std::span<const EncodedPair* const>(rows));
    const std::uint64_t dropout_seed = mix_key(mix_key(config.seed, epoch), bi);
    try {
      auto lg = backward_gradients(params, batch, true, dropout_seed);
      adam_step(params, lg.gradients, adam, config);
      loss_sum += lg.forward.mean_loss;
    } catch (const NumericalError& e) {
      throw NumericalError("epoch " + std::to_string(epoch) + " batch " + std::to_string(bi) + ": " + e.what());
    }
  }
  stats.train_loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

double corpus_cross_entropy(const Parameters& params, std::span<const EncodedPair> pairs, std::size_t batch_size) {
  double bits = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < pairs.size(); i += batch_size) {
    const auto n = std::min(batch_size, pairs.size() - i);
    const auto fwd = forward_teacher_forced(params, make_batch(pairs.subspan(i, n)), false, 0);
    for (std::size_t r = 0; r < n; ++r) bits += fwd.pair_losses[r] * static_cast<double>(fwd.pair_tokens[r]);
    tokens += fwd.token_count;
  }
  if (tokens == 0) throw ConfigError("corpus_cross_entropy: no target tokens");
  return bits / static_cast<double>(tokens);
}

bool EarlyStopper::observe(std::size_t epoch, double value) {
  if (!any_ || value < best_value_) {
    any_ = true;
    best_value_ = value;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

FitResult fit(const Parameters& init, const OrderingPlan& plan, const EncodedCorpus& train,
              const EncodedCorpus& valid, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (valid.pairs.empty()) throw ConfigError("fit: empty validation corpus");
  if (plan.num_epochs() < config.max_epochs) {
    throw ConfigError("fit: plan has " + std::to_string(plan.num_epochs()) + " epochs, max_epochs is " +
                      std::to_string(config.max_epochs));
  }
  if (train.src_vocab_fp != valid.src_vocab_fp || train.tgt_vocab_fp != valid.tgt_vocab_fp) {
    throw FingerprintError("fit: training and validation corpora use different vocabularies");
  }
  Parameters params = init;
  AdamState adam = AdamState::zeros_like(params);
  EarlyStopper stopper(config.patience);
  FitResult result;
  result.best.src_vocab_fp = train.src_vocab_fp;
  result.best.tgt_vocab_fp = train.tgt_vocab_fp;
  std::vector<HistoryEntry> history;

  for (std::size_t e = 1; e <= config.max_epochs; ++e) {
    const auto batches = chunk_batches(plan.epochs[e - 1], config.batch_size);
    auto stats = train_epoch(params, adam, batches, train, config, e);
    stats.valid_ppl = std::exp2(corpus_cross_entropy(params, valid.pairs));
    if (!std::isfinite(stats.valid_ppl)) throw NumericalError("fit: non-finite validation perplexity");
    history.push_back({stats.epoch, stats.train_loss, stats.valid_ppl});
    result.stats.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (stopper.observe(e, stats.valid_ppl)) result.best.params = params;
    if (stopper.should_stop()) break;
  }
  result.best.history = std::move(history);
  result.epochs_to_convergence = stopper.best_epoch();
  return result;
}

}  // namespace curricula
