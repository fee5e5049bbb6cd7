#include "curricula/ordering.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "curricula/util.hpp"

namespace curricula {

namespace {

const char* dir_slug(Direction d) { return d == Direction::Ascending ? "asc" : "desc"; }
const char* dir_word(Direction d) { return d == Direction::Ascending ? "Ascending" : "Descending"; }

Direction parse_dir(const std::string& s) {
  if (s == "asc" || s == "ascending") return Direction::Ascending;
  if (s == "desc" || s == "descending") return Direction::Descending;
  throw ConfigError("unknown direction '" + s + "' (expected asc|desc)");
}

}  // namespace

std::optional<MetricKind> Strategy::required_metric() const {
  switch (kind) {
    case Kind::Length: return side == Side::Source ? MetricKind::LengthSource : MetricKind::LengthTarget;
    case Kind::Perplexity: return MetricKind::Perplexity;
    case Kind::Bleu: return MetricKind::Bleu;
    default: return std::nullopt;
  }
}

std::string Strategy::slug() const {
  switch (kind) {
    case Kind::ShuffleEveryEpoch: return "shuffle-every-epoch";
    case Kind::ShuffleOnce: return "shuffle-once";
    case Kind::Length: return std::string("length-") + side_name(side) + "-" + dir_slug(direction);
    case Kind::Perplexity: return std::string("ppl-") + dir_slug(direction);
    case Kind::Bleu: return std::string("bleu-") + dir_slug(direction);
  }
  return "?";
}

Strategy Strategy::parse(const std::string& slug) {
  if (slug == "shuffle-every-epoch") return shuffle_every_epoch();
  if (slug == "shuffle-once") return shuffle_once();
  auto parts = split(slug, '-');
  if (parts.size() == 3 && parts[0] == "length") return length(parse_side(parts[1]), parse_dir(parts[2]));
  if (parts.size() == 2 && parts[0] == "ppl") return perplexity(parse_dir(parts[1]));
  if (parts.size() == 2 && parts[0] == "bleu") return bleu(parse_dir(parts[1]));
  throw ConfigError("unknown strategy '" + slug + "'");
}

std::string Strategy::label() const {
  switch (kind) {
    case Kind::ShuffleEveryEpoch: return "Random Shuffle every epoch";
    case Kind::ShuffleOnce: return "Random Shuffle once";
    case Kind::Length:
      return std::string(dir_word(direction)) + " Sequence Length Order for " +
             (side == Side::Source ? "source" : "target") + " language";
    case Kind::Perplexity: return std::string(dir_word(direction)) + " PPL Order";
    case Kind::Bleu: return std::string(dir_word(direction)) + " BLEU Order";
  }
  return "?";
}

std::vector<Strategy> table1_strategies() {
  using D = Direction;
  return {Strategy::shuffle_every_epoch(),
          Strategy::shuffle_once(),
          Strategy::length(Side::Source, D::Ascending),
          Strategy::length(Side::Source, D::Descending),
          Strategy::length(Side::Target, D::Ascending),
          Strategy::length(Side::Target, D::Descending),
          Strategy::perplexity(D::Ascending),
          Strategy::perplexity(D::Descending),
          Strategy::bleu(D::Ascending),
          Strategy::bleu(D::Descending)};
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> seeded_permutation(std::span<const std::size_t> items, std::uint64_t seed,
                                            std::uint64_t epoch) {
  std::vector<std::size_t> perm(items.begin(), items.end());
  std::sort(perm.begin(), perm.end());
  CounterRng rng(mix_key(mix_key(seed, 0x73687566ULL), epoch));
  for (std::size_t i = perm.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

OrderingPlan make_ordering(const Strategy& strategy, const ScoreTable* scores,
                           std::span<const std::size_t> corpus_indices, std::size_t num_epochs, std::uint64_t seed) {
  if (num_epochs == 0) throw ConfigError("make_ordering: num_epochs must be positive");
  if (corpus_indices.empty()) throw ConfigError("make_ordering: empty corpus");
  OrderingPlan plan;
  plan.strategy = strategy;
  plan.seed = seed;

  if (strategy.kind == Strategy::Kind::ShuffleEveryEpoch) {
    for (std::size_t e = 0; e < num_epochs; ++e) plan.epochs.push_back(seeded_permutation(corpus_indices, seed, e));
    return plan;
  }
  std::vector<std::size_t> perm;
  if (strategy.kind == Strategy::Kind::ShuffleOnce) {
    perm = seeded_permutation(corpus_indices, seed, 0);
  } else {
    const auto metric = *strategy.required_metric();
    if (scores == nullptr) throw ConfigError("make_ordering: strategy " + strategy.slug() + " needs a score table");
    if (scores->metric != metric) {
      throw ConfigError("make_ordering: strategy " + strategy.slug() + " needs " + metric_name(metric) +
                        " scores, got " + metric_name(scores->metric));
    }
    std::unordered_map<std::size_t, double> value;
    for (const auto& e : scores->entries) value.emplace(e.index, e.value);
    std::vector<PairScore> keyed;
    keyed.reserve(corpus_indices.size());
    for (auto idx : corpus_indices) {
      auto it = value.find(idx);
      if (it == value.end()) throw DataError("make_ordering: no score for corpus index " + std::to_string(idx));
      keyed.push_back({idx, it->second});
    }
    if (strategy.direction == Direction::Ascending) {
      std::sort(keyed.begin(), keyed.end(), [](const PairScore& a, const PairScore& b) {
        return a.value < b.value || (a.value == b.value && a.index < b.index);
      });
    } else {
      std::sort(keyed.begin(), keyed.end(), [](const PairScore& a, const PairScore& b) {
        return a.value > b.value || (a.value == b.value && a.index < b.index);
      });
    }
    perm.reserve(keyed.size());
    for (const auto& k : keyed) perm.push_back(k.index);
  }
  plan.epochs.assign(num_epochs, perm);
  return plan;
}

// ---------------------------------------------------------------------------

BatchList chunk_batches(std::span<const std::size_t> permutation, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  BatchList out;
  for (std::size_t i = 0; i < permutation.size(); i += batch_size) {
    const auto end = std::min(permutation.size(), i + batch_size);
    out.emplace_back(permutation.begin() + static_cast<std::ptrdiff_t>(i),
                     permutation.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

BatchSchedule schedule_batches(const OrderingPlan& plan, std::size_t batch_size) {
  BatchSchedule s;
  s.batch_size = batch_size;
  for (const auto& perm : plan.epochs) s.epochs.push_back(chunk_batches(perm, batch_size));
  return s;
}

PlanCheck verify_plan(const OrderingPlan& plan, std::span<const std::size_t> corpus_indices) {
  const std::unordered_set<std::size_t> expected(corpus_indices.begin(), corpus_indices.end());
  for (std::size_t e = 0; e < plan.epochs.size(); ++e) {
    const auto& perm = plan.epochs[e];
    std::unordered_set<std::size_t> seen;
    for (auto idx : perm) {
      if (!expected.count(idx)) {
        return {false, "epoch " + std::to_string(e) + ": index " + std::to_string(idx) + " is not in the corpus"};
      }
      if (!seen.insert(idx).second) {
        return {false, "epoch " + std::to_string(e) + ": index " + std::to_string(idx) + " appears twice"};
      }
    }
    if (seen.size() != expected.size()) {
      std::vector<std::size_t> missing;
      for (auto idx : expected)
        if (!seen.count(idx)) missing.push_back(idx);
      const auto first = *std::min_element(missing.begin(), missing.end());
      return {false, "epoch " + std::to_string(e) + ": index " + std::to_string(first) + " is missing"};
    }
    if (plan.strategy.is_fixed() && e > 0 && perm != plan.epochs[0]) {
      return {false, "fixed strategy drift: epoch " + std::to_string(e) + " differs from epoch 0"};
    }
  }
  return {};
}

// ---------------------------------------------------------------------------

std::string OrderingPlan::serialize() const {
  std::ostringstream os;
  os << "CURRICULA-ORDER v1 " << strategy.slug() << ' ' << seed << ' ' << epochs.size() << '\n';
  for (const auto& perm : epochs) {
    for (std::size_t i = 0; i < perm.size(); ++i) {
      if (i) os << ' ';
      os << perm[i];
    }
    os << '\n';
  }
  return os.str();
}

OrderingPlan OrderingPlan::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("plan: empty file");
  auto head = split_whitespace(line);
  if (head.size() != 5 || head[0] != "CURRICULA-ORDER" || head[1] != "v1") {
    throw FormatError("plan: bad header '" + line + "'");
  }
  OrderingPlan plan;
  plan.strategy = Strategy::parse(head[2]);
  plan.seed = parse_u64(head[3], "plan seed");
  const auto n = static_cast<std::size_t>(parse_int(head[4], "plan epochs"));
  while (std::getline(is, line)) {
    std::vector<std::size_t> perm;
    for (const auto& tok : split_whitespace(line)) perm.push_back(static_cast<std::size_t>(parse_int(tok, "plan index")));
    plan.epochs.push_back(std::move(perm));
  }
  if (plan.epochs.size() != n) {
    throw FormatError("plan: header declares " + std::to_string(n) + " epochs, file has " +
                      std::to_string(plan.epochs.size()));
  }
  return plan;
}

void OrderingPlan::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

OrderingPlan OrderingPlan::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace curricula
