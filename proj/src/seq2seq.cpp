#include "curricula/seq2seq.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "curricula/kernels.hpp"
#include "curricula/util.hpp"

namespace curricula {

// ---------------------------------------------------------------------------
// Config

ModelConfig ModelConfig::base(std::size_t src_vocab, std::size_t tgt_vocab) {
  ModelConfig c;
  c.embed_dim = 512;
  c.hidden_dim = 512;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.use_attention = true;
  c.dropout_p = 0.2;
  c.src_vocab_size = src_vocab;
  c.tgt_vocab_size = tgt_vocab;
  return c;
}

ModelConfig ModelConfig::small(std::size_t src_vocab, std::size_t tgt_vocab) {
  ModelConfig c;
  c.embed_dim = 128;
  c.hidden_dim = 128;
  c.encoder_layers = 1;
  c.decoder_layers = 2;
  c.use_attention = false;
  c.dropout_p = 0.2;
  c.src_vocab_size = src_vocab;
  c.tgt_vocab_size = tgt_vocab;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name, std::size_t src_vocab, std::size_t tgt_vocab) {
  if (name == "base") return base(src_vocab, tgt_vocab);
  if (name == "small") return small(src_vocab, tgt_vocab);
  throw ConfigError("unknown model preset '" + name + "' (expected base|small)");
}

void ModelConfig::validate() const {
  if (embed_dim == 0 || hidden_dim == 0 || encoder_layers == 0 || decoder_layers == 0) {
    throw ConfigError("model config: zero-sized dimension");
  }
  if (src_vocab_size <= static_cast<std::size_t>(Vocabulary::kUnk) ||
      tgt_vocab_size <= static_cast<std::size_t>(Vocabulary::kUnk)) {
    throw ConfigError("model config: vocabulary must include the four special tokens");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("model config: dropout must be in [0, 1)");
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "embed_dim=" << embed_dim << '\n'
     << "hidden_dim=" << hidden_dim << '\n'
     << "encoder_layers=" << encoder_layers << '\n'
     << "decoder_layers=" << decoder_layers << '\n'
     << "use_attention=" << (use_attention ? 1 : 0) << '\n'
     << "dropout_p=" << format_exact(dropout_p) << '\n'
     << "src_vocab_size=" << src_vocab_size << '\n'
     << "tgt_vocab_size=" << tgt_vocab_size << '\n';
  return os.str();
}

ModelConfig ModelConfig::deserialize(const std::string& text) {
  ModelConfig c;
  int seen = 0;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("model config: bad line '" + line + "'");
    auto key = line.substr(0, eq);
    auto val = line.substr(eq + 1);
    auto as_size = [&] { return static_cast<std::size_t>(parse_int(val, key)); };
    if (key == "embed_dim") c.embed_dim = as_size();
    else if (key == "hidden_dim") c.hidden_dim = as_size();
    else if (key == "encoder_layers") c.encoder_layers = as_size();
    else if (key == "decoder_layers") c.decoder_layers = as_size();
    else if (key == "use_attention") c.use_attention = as_size() != 0;
    else if (key == "dropout_p") c.dropout_p = parse_double(val, key);
    else if (key == "src_vocab_size") c.src_vocab_size = as_size();
    else if (key == "tgt_vocab_size") c.tgt_vocab_size = as_size();
    else throw FormatError("model config: unknown key '" + key + "'");
    ++seen;
  }
  if (seen != 8) throw FormatError("model config: expected 8 keys");
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

ParamLayout ParamLayout::build(const ModelConfig& c) {
  c.validate();
  ParamLayout L;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    L.slots.push_back({std::move(name), L.total, rows, cols});
    L.total += rows * cols;
    return L.slots.size() - 1;
  };
  const std::size_t E = c.embed_dim, H = c.hidden_dim;
  L.src_embed = add("src_embed", c.src_vocab_size, E);
  L.tgt_embed = add("tgt_embed", c.tgt_vocab_size, E);
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    const std::size_t in = l == 0 ? E : H;
    L.enc_w.push_back(add("enc" + std::to_string(l) + ".W", in + H, 4 * H));
    L.enc_b.push_back(add("enc" + std::to_string(l) + ".b", 1, 4 * H));
  }
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    const std::size_t in = l == 0 ? E + (c.use_attention ? H : 0) : H;
    L.dec_w.push_back(add("dec" + std::to_string(l) + ".W", in + H, 4 * H));
    L.dec_b.push_back(add("dec" + std::to_string(l) + ".b", 1, 4 * H));
  }
  if (c.use_attention) {
    L.att_ws = add("att.W_s", H, H);
    L.att_wh = add("att.W_h", H, H);
    L.att_v = add("att.v", 1, H);
  }
  L.out_w = add("out.W", H, c.tgt_vocab_size);
  L.out_b = add("out.b", 1, c.tgt_vocab_size);
  return L;
}

Parameters::Parameters(const ModelConfig& config)
    : config_(config),
      layout_(std::make_shared<const ParamLayout>(ParamLayout::build(config))),
      values_(layout_->total, 0.0) {}

std::span<double> Parameters::tensor(std::size_t slot) {
  const auto& s = layout_->slots.at(slot);
  return std::span<double>(values_).subspan(s.offset, s.size());
}

std::span<const double> Parameters::tensor(std::size_t slot) const {
  const auto& s = layout_->slots.at(slot);
  return std::span<const double>(values_).subspan(s.offset, s.size());
}

Parameters Parameters::zeros_like() const {
  Parameters p;
  p.config_ = config_;
  p.layout_ = layout_;
  p.values_.assign(values_.size(), 0.0);
  return p;
}

bool Parameters::same_shape(const Parameters& other) const {
  return config_ == other.config_ && values_.size() == other.values_.size();
}

Parameters init_params(const ModelConfig& config, std::uint64_t seed) {
  Parameters p(config);
  CounterRng rng(mix_key(seed, 0x696e6974ULL));
  for (auto& v : p.values()) v = (2.0 * rng.next_unit() - 1.0) * 0.08;
  const std::size_t H = config.hidden_dim;
  auto forget_bias = [&](std::size_t slot) {
    auto b = p.tensor(slot);
    std::fill(b.begin() + static_cast<std::ptrdiff_t>(H), b.begin() + static_cast<std::ptrdiff_t>(2 * H), 1.0);
  };
  for (auto s : p.layout().enc_b) forget_bias(s);
  for (auto s : p.layout().dec_b) forget_bias(s);
  return p;
}

// ---------------------------------------------------------------------------
// Batching

Batch make_batch(std::span<const EncodedPair* const> pairs, std::size_t extra_pad) {
  Batch b;
  b.rows = pairs.size();
  for (const auto* p : pairs) {
    b.src_len = std::max(b.src_len, p->src.size());
    b.tgt_len = std::max(b.tgt_len, p->tgt_out.size());
  }
  b.src_len += extra_pad;
  b.tgt_len += extra_pad;
  b.src.assign(b.rows * b.src_len, Vocabulary::kPad);
  b.tgt_in.assign(b.rows * b.tgt_len, Vocabulary::kPad);
  b.tgt_out.assign(b.rows * b.tgt_len, Vocabulary::kPad);
  for (std::size_t r = 0; r < b.rows; ++r) {
    const auto& p = *pairs[r];
    if (p.tgt_in.size() != p.tgt_out.size()) throw DataError("encoded pair: tgt_in/tgt_out length mismatch");
    std::copy(p.src.begin(), p.src.end(), b.src.begin() + static_cast<std::ptrdiff_t>(r * b.src_len));
    std::copy(p.tgt_in.begin(), p.tgt_in.end(), b.tgt_in.begin() + static_cast<std::ptrdiff_t>(r * b.tgt_len));
    std::copy(p.tgt_out.begin(), p.tgt_out.end(), b.tgt_out.begin() + static_cast<std::ptrdiff_t>(r * b.tgt_len));
    b.src_lengths.push_back(p.src.size());
    b.tgt_lengths.push_back(p.tgt_out.size());
    b.indices.push_back(p.index);
  }
  return b;
}

Batch make_batch(std::span<const EncodedPair> pairs, std::size_t extra_pad) {
  std::vector<const EncodedPair*> ptrs;
  ptrs.reserve(pairs.size());
  for (const auto& p : pairs) ptrs.push_back(&p);
  return make_batch(std::span<const EncodedPair* const>(ptrs), extra_pad);
}

// ---------------------------------------------------------------------------
// Graph: forward with caches, then reverse mode.

namespace {

constexpr double kLn2 = 0.693147180559945309417232121458176568;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct StepCache {
  std::vector<double> z;       // [B, in+H] concatenated input and previous h
  std::vector<double> act;     // [B, 4H] gate activations i, f, g, o
  std::vector<double> c_prev;  // [B, H]
  std::vector<double> c;       // [B, H]
  std::vector<double> tanh_c;  // [B, H]
  std::vector<double> h;       // [B, H]
  std::vector<double> out;     // [B, H] h after dropout
  std::vector<double> mask;    // [B, H] or empty
};

struct DecoderStep {
  std::vector<StepCache> layers;
  std::vector<double> s_prev;  // [B, H] top decoder state fed to attention
  std::vector<double> alpha;   // [B, S]
  std::vector<double> u;       // [B, S, H] tanh(W_s s + W_h h_i)
  std::vector<double> x0;      // [B, E(+H)]
  std::vector<double> probs;   // [B, V]
  std::vector<double> logits;  // [B, V]
};

class Graph {
 public:
  Graph(const Parameters& params, const Batch& batch, bool dropout_on, std::uint64_t seed)
      : P_(params),
        batch_(batch),
        cfg_(params.config()),
        L_(params.layout()),
        B_(batch.rows),
        S_(batch.src_len),
        H_(cfg_.hidden_dim),
        E_(cfg_.embed_dim),
        V_(cfg_.tgt_vocab_size),
        dropout_(dropout_on && cfg_.dropout_p > 0.0),
        seed_(seed) {
    check_ids(batch.src, cfg_.src_vocab_size, "source");
    check_ids(batch.tgt_in, cfg_.tgt_vocab_size, "target");
    check_ids(batch.tgt_out, cfg_.tgt_vocab_size, "target");
  }

  void encode();
  /// Runs one decoder step on `tokens` ([B]) and appends its cache.
  const DecoderStep& decoder_step(std::span<const TokenId> tokens);
  ForwardResult teacher_forced();
  Parameters backward(const ForwardResult& fwd);

 private:
  static void check_ids(const std::vector<TokenId>& ids, std::size_t vocab, const char* which) {
    for (auto id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
        throw DataError(std::string("encoding error: ") + which + " id " + std::to_string(id) +
                        " outside vocabulary of size " + std::to_string(vocab));
      }
    }
  }

  void fill_mask(std::vector<double>& mask, std::uint64_t stream) const;
  void lstm_forward(std::size_t w_slot, std::size_t b_slot, std::size_t in, const double* x, const double* h_prev,
                    const double* c_prev, const std::uint8_t* active, std::uint64_t stream, StepCache& sc) const;
  void lstm_backward(std::size_t w_slot, std::size_t b_slot, std::size_t in, const std::vector<double>& wt,
                     const StepCache& sc, const std::uint8_t* active, std::vector<double>& dh, std::vector<double>& dc,
                     std::vector<double>& dx, Parameters& grads) const;
  void attend(DecoderStep& st) const;

  const Parameters& P_;
  const Batch& batch_;
  const ModelConfig& cfg_;
  const ParamLayout& L_;
  std::size_t B_, S_, H_, E_, V_;
  bool dropout_;
  std::uint64_t seed_;

  // Encoder state.
  std::vector<std::vector<StepCache>> enc_;  // [t][layer]
  std::vector<std::uint8_t> active_;         // [t][B]
  std::vector<double> ann_;                  // [B, S, H] top encoder outputs
  std::vector<double> wh_;                   // [B, S, H] ann W_h
  std::vector<std::vector<double>> enc_h_, enc_c_;

  // Decoder state.
  std::vector<std::vector<double>> dec_h_, dec_c_;
  std::vector<DecoderStep> dec_;
};

void Graph::fill_mask(std::vector<double>& mask, std::uint64_t stream) const {
  if (!dropout_) {
    mask.clear();
    return;
  }
  const double p = cfg_.dropout_p;
  const double keep_scale = 1.0 / (1.0 - p);
  CounterRng rng(mix_key(seed_, stream));
  mask.resize(B_ * H_);
  for (auto& m : mask) m = rng.next_unit() >= p ? keep_scale : 0.0;
}

void Graph::lstm_forward(std::size_t w_slot, std::size_t b_slot, std::size_t in, const double* x,
                         const double* h_prev, const double* c_prev, const std::uint8_t* active,
                         std::uint64_t stream, StepCache& sc) const {
  const std::size_t H = H_, B = B_, Z = in + H, G = 4 * H;
  sc.z.resize(B * Z);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy(x + b * in, x + (b + 1) * in, sc.z.begin() + static_cast<std::ptrdiff_t>(b * Z));
    std::copy(h_prev + b * H, h_prev + (b + 1) * H, sc.z.begin() + static_cast<std::ptrdiff_t>(b * Z + in));
  }
  sc.act.resize(B * G);
  const double* bias = P_.data(b_slot);
  for (std::size_t b = 0; b < B; ++b) std::copy(bias, bias + G, sc.act.begin() + static_cast<std::ptrdiff_t>(b * G));
  kernels::gemm_acc(sc.z.data(), P_.data(w_slot), sc.act.data(), B, Z, G);

  sc.c_prev.assign(c_prev, c_prev + B * H);
  sc.c.resize(B * H);
  sc.tanh_c.resize(B * H);
  sc.h.resize(B * H);
  sc.out.resize(B * H);
  fill_mask(sc.mask, stream);
  for (std::size_t b = 0; b < B; ++b) {
    double* a = sc.act.data() + b * G;
    const bool on = active == nullptr || active[b];
    for (std::size_t j = 0; j < H; ++j) {
      a[j] = sigmoid(a[j]);
      a[H + j] = sigmoid(a[H + j]);
      a[2 * H + j] = std::tanh(a[2 * H + j]);
      a[3 * H + j] = sigmoid(a[3 * H + j]);
      const std::size_t k = b * H + j;
      if (on) {
        sc.c[k] = a[H + j] * c_prev[k] + a[j] * a[2 * H + j];
        sc.tanh_c[k] = std::tanh(sc.c[k]);
        sc.h[k] = a[3 * H + j] * sc.tanh_c[k];
      } else {
        sc.c[k] = c_prev[k];
        sc.tanh_c[k] = 0.0;
        sc.h[k] = h_prev[k];
      }
      sc.out[k] = sc.mask.empty() ? sc.h[k] : sc.h[k] * sc.mask[k];
    }
  }
}

void Graph::attend(DecoderStep& st) const {
  const std::size_t B = B_, S = S_, H = H_;
  std::vector<double> q(B * H, 0.0);
  kernels::gemm_acc(st.s_prev.data(), P_.data(L_.att_ws), q.data(), B, H, H);
  const double* v = P_.data(L_.att_v);
  st.alpha.assign(B * S, 0.0);
  st.u.assign(B * S * H, 0.0);
  std::vector<double> ctx(B * H, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t len = batch_.src_lengths[b];
    if (len == 0) continue;
    double* e = st.alpha.data() + b * S;
    for (std::size_t i = 0; i < len; ++i) {
      double* u = st.u.data() + (b * S + i) * H;
      const double* w = wh_.data() + (b * S + i) * H;
      double score = 0.0;
      for (std::size_t a = 0; a < H; ++a) {
        u[a] = std::tanh(q[b * H + a] + w[a]);
        score += v[a] * u[a];
      }
      e[i] = score;
    }
    double mx = e[0];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, e[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      e[i] = std::exp(e[i] - mx);
      sum += e[i];
    }
    for (std::size_t i = 0; i < len; ++i) e[i] /= sum;
    for (std::size_t i = 0; i < len; ++i) {
      const double* h = ann_.data() + (b * S + i) * H;
      for (std::size_t a = 0; a < H; ++a) ctx[b * H + a] += e[i] * h[a];
    }
  }
  // x0 = [embedding, context]
  const std::size_t in = E_ + H;
  for (std::size_t b = 0; b < B; ++b)
    std::copy(ctx.begin() + static_cast<std::ptrdiff_t>(b * H), ctx.begin() + static_cast<std::ptrdiff_t>((b + 1) * H),
              st.x0.begin() + static_cast<std::ptrdiff_t>(b * in + E_));
}

// Stream ids for dropout masks: (side, layer, step).
constexpr std::uint64_t stream_id(std::uint64_t side, std::uint64_t layer, std::uint64_t step) {
  return (side << 48) | (layer << 32) | step;
}

void Graph::encode() {
  const std::size_t B = B_, S = S_, H = H_, E = E_;
  const std::size_t Le = cfg_.encoder_layers;
  enc_h_.assign(Le, std::vector<double>(B * H, 0.0));
  enc_c_.assign(Le, std::vector<double>(B * H, 0.0));
  enc_.assign(S, std::vector<StepCache>(Le));
  active_.assign(S * B, 0);
  ann_.assign(B * S * H, 0.0);
  const double* emb = P_.data(L_.src_embed);
  std::vector<double> x(B * E);
  for (std::size_t t = 0; t < S; ++t) {
    std::uint8_t* act = active_.data() + t * B;
    for (std::size_t b = 0; b < B; ++b) {
      act[b] = t < batch_.src_lengths[b] ? 1 : 0;
      const auto id = static_cast<std::size_t>(batch_.src[b * S + t]);
      std::copy(emb + id * E, emb + (id + 1) * E, x.begin() + static_cast<std::ptrdiff_t>(b * E));
    }
    const double* in_ptr = x.data();
    for (std::size_t l = 0; l < Le; ++l) {
      auto& sc = enc_[t][l];
      lstm_forward(L_.enc_w[l], L_.enc_b[l], l == 0 ? E : H, in_ptr, enc_h_[l].data(), enc_c_[l].data(), act,
                   stream_id(1, l, t), sc);
      enc_h_[l] = sc.h;
      enc_c_[l] = sc.c;
      in_ptr = sc.out.data();
    }
    for (std::size_t b = 0; b < B; ++b)
      std::copy(in_ptr + b * H, in_ptr + (b + 1) * H, ann_.begin() + static_cast<std::ptrdiff_t>((b * S + t) * H));
  }
  if (P_.has_attention()) {
    wh_.assign(B * S * H, 0.0);
    kernels::gemm_acc(ann_.data(), P_.data(L_.att_wh), wh_.data(), B * S, H, H);
  }
  // Decoder layer l starts from encoder layer min(l, Le-1).
  const std::size_t Ld = cfg_.decoder_layers;
  dec_h_.resize(Ld);
  dec_c_.resize(Ld);
  for (std::size_t l = 0; l < Ld; ++l) {
    dec_h_[l] = enc_h_[std::min(l, Le - 1)];
    dec_c_[l] = enc_c_[std::min(l, Le - 1)];
  }
  dec_.clear();
}

const DecoderStep& Graph::decoder_step(std::span<const TokenId> tokens) {
  const std::size_t B = B_, H = H_, E = E_, V = V_;
  const std::size_t Ld = cfg_.decoder_layers;
  const std::size_t t = dec_.size();
  dec_.emplace_back();
  DecoderStep& st = dec_.back();
  const bool att = P_.has_attention();
  const std::size_t in0 = E + (att ? H : 0);
  st.x0.assign(B * in0, 0.0);
  const double* emb = P_.data(L_.tgt_embed);
  for (std::size_t b = 0; b < B; ++b) {
    const auto id = static_cast<std::size_t>(tokens[b]);
    std::copy(emb + id * E, emb + (id + 1) * E, st.x0.begin() + static_cast<std::ptrdiff_t>(b * in0));
  }
  if (att) {
    st.s_prev = dec_h_[Ld - 1];
    attend(st);
  }
  st.layers.resize(Ld);
  const double* in_ptr = st.x0.data();
  for (std::size_t l = 0; l < Ld; ++l) {
    auto& sc = st.layers[l];
    lstm_forward(L_.dec_w[l], L_.dec_b[l], l == 0 ? in0 : H, in_ptr, dec_h_[l].data(), dec_c_[l].data(), nullptr,
                 stream_id(2, l, t), sc);
    dec_h_[l] = sc.h;
    dec_c_[l] = sc.c;
    in_ptr = sc.out.data();
  }
  st.logits.resize(B * V);
  const double* ob = P_.data(L_.out_b);
  for (std::size_t b = 0; b < B; ++b) std::copy(ob, ob + V, st.logits.begin() + static_cast<std::ptrdiff_t>(b * V));
  kernels::gemm_acc(in_ptr, P_.data(L_.out_w), st.logits.data(), B, H, V);
  st.probs.resize(B * V);
  for (std::size_t b = 0; b < B; ++b) {
    const double* z = st.logits.data() + b * V;
    double* p = st.probs.data() + b * V;
    const double mx = *std::max_element(z, z + V);
    double sum = 0.0;
    for (std::size_t k = 0; k < V; ++k) {
      p[k] = std::exp(z[k] - mx);
      sum += p[k];
    }
    for (std::size_t k = 0; k < V; ++k) p[k] /= sum;
  }
  return st;
}

ForwardResult Graph::teacher_forced() {
  encode();
  const std::size_t B = B_, T = batch_.tgt_len, V = V_;
  ForwardResult r;
  r.pair_losses.assign(B, 0.0);
  r.pair_tokens.assign(B, 0);
  r.log_probs.assign(B * T, 0.0);
  std::vector<TokenId> tokens(B);
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) tokens[b] = batch_.tgt_in[b * T + t];
    const auto& st = decoder_step(tokens);
    for (std::size_t b = 0; b < B; ++b) {
      if (t >= batch_.tgt_lengths[b]) continue;
      const double* z = st.logits.data() + b * V;
      const double mx = *std::max_element(z, z + V);
      double sum = 0.0;
      for (std::size_t k = 0; k < V; ++k) sum += std::exp(z[k] - mx);
      const auto y = static_cast<std::size_t>(batch_.tgt_out[b * T + t]);
      const double lp2 = (z[y] - mx - std::log(sum)) / kLn2;
      r.log_probs[b * T + t] = lp2;
      r.pair_losses[b] -= lp2;
      r.pair_tokens[b] += 1;
    }
  }
  for (std::size_t b = 0; b < B; ++b) {
    total += r.pair_losses[b];
    r.token_count += r.pair_tokens[b];
    if (r.pair_tokens[b] > 0) r.pair_losses[b] /= static_cast<double>(r.pair_tokens[b]);
  }
  r.mean_loss = r.token_count > 0 ? total / static_cast<double>(r.token_count) : 0.0;
  return r;
}

void Graph::lstm_backward(std::size_t w_slot, std::size_t b_slot, std::size_t in, const std::vector<double>& wt,
                          const StepCache& sc, const std::uint8_t* active, std::vector<double>& dh,
                          std::vector<double>& dc, std::vector<double>& dx, Parameters& grads) const {
  const std::size_t H = H_, B = B_, Z = in + H, G = 4 * H;
  std::vector<double> dgates(B * G, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    if (active != nullptr && !active[b]) continue;
    const double* a = sc.act.data() + b * G;
    double* dg = dgates.data() + b * G;
    for (std::size_t j = 0; j < H; ++j) {
      const std::size_t k = b * H + j;
      const double i_g = a[j], f_g = a[H + j], g_g = a[2 * H + j], o_g = a[3 * H + j];
      const double tc = sc.tanh_c[k];
      const double dct = dc[k] + dh[k] * o_g * (1.0 - tc * tc);
      dg[j] = dct * g_g * i_g * (1.0 - i_g);
      dg[H + j] = dct * sc.c_prev[k] * f_g * (1.0 - f_g);
      dg[2 * H + j] = dct * i_g * (1.0 - g_g * g_g);
      dg[3 * H + j] = dh[k] * tc * o_g * (1.0 - o_g);
      dc[k] = dct * f_g;
    }
  }
  kernels::gemm_tn_acc(sc.z.data(), dgates.data(), grads.data(w_slot), B, Z, G);
  double* db = grads.data(b_slot);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t g = 0; g < G; ++g) db[g] += dgates[b * G + g];
  std::vector<double> dz(B * Z, 0.0);
  kernels::gemm_acc(dgates.data(), wt.data(), dz.data(), B, G, Z);
  dx.assign(B * in, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const bool on = active == nullptr || active[b];
    for (std::size_t k = 0; k < in; ++k) dx[b * in + k] = dz[b * Z + k];
    if (on) {
      for (std::size_t j = 0; j < H; ++j) dh[b * H + j] = dz[b * Z + in + j];
    }
    // Inactive rows pass dh and dc through unchanged.
  }
}

Parameters Graph::backward(const ForwardResult& fwd) {
  Parameters grads = P_.zeros_like();
  const std::size_t B = B_, S = S_, H = H_, E = E_, V = V_, T = batch_.tgt_len;
  const std::size_t Le = cfg_.encoder_layers, Ld = cfg_.decoder_layers;
  const bool att = P_.has_attention();
  const std::size_t in0 = E + (att ? H : 0);
  if (fwd.token_count == 0) return grads;

  auto transposed = [&](std::size_t slot) {
    const auto& s = L_.slots[slot];
    std::vector<double> t(s.size());
    kernels::transpose(P_.data(slot), t.data(), s.rows, s.cols);
    return t;
  };
  std::vector<std::vector<double>> dec_wt, enc_wt;
  for (std::size_t l = 0; l < Ld; ++l) dec_wt.push_back(transposed(L_.dec_w[l]));
  for (std::size_t l = 0; l < Le; ++l) enc_wt.push_back(transposed(L_.enc_w[l]));
  const auto out_wt = transposed(L_.out_w);
  std::vector<double> ws_t;
  if (att) ws_t = transposed(L_.att_ws);

  const double scale = 1.0 / (kLn2 * static_cast<double>(fwd.token_count));
  std::vector<std::vector<double>> dh(Ld, std::vector<double>(B * H, 0.0)), dc(Ld, std::vector<double>(B * H, 0.0));
  std::vector<double> dann(B * S * H, 0.0), dwh(B * S * H, 0.0);
  std::vector<double> dlogits(B * V), dout(B * H), dx, dq(B * H);
  double* d_tgt_emb = grads.data(L_.tgt_embed);
  double* d_out_w = grads.data(L_.out_w);
  double* d_out_b = grads.data(L_.out_b);

  for (std::size_t tt = T; tt-- > 0;) {
    const DecoderStep& st = dec_[tt];
    for (std::size_t b = 0; b < B; ++b) {
      double* d = dlogits.data() + b * V;
      if (tt >= batch_.tgt_lengths[b]) {
        std::fill(d, d + V, 0.0);
        continue;
      }
      const double* p = st.probs.data() + b * V;
      for (std::size_t k = 0; k < V; ++k) d[k] = p[k] * scale;
      d[static_cast<std::size_t>(batch_.tgt_out[b * T + tt])] -= scale;
    }
    const double* top_out = st.layers[Ld - 1].out.data();
    kernels::gemm_tn_acc(top_out, dlogits.data(), d_out_w, B, H, V);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < V; ++k) d_out_b[k] += dlogits[b * V + k];
    std::fill(dout.begin(), dout.end(), 0.0);
    kernels::gemm_acc(dlogits.data(), out_wt.data(), dout.data(), B, V, H);

    std::vector<double> d_layer_out = dout;
    for (std::size_t l = Ld; l-- > 0;) {
      const StepCache& sc = st.layers[l];
      for (std::size_t k = 0; k < B * H; ++k)
        dh[l][k] += sc.mask.empty() ? d_layer_out[k] : d_layer_out[k] * sc.mask[k];
      lstm_backward(L_.dec_w[l], L_.dec_b[l], l == 0 ? in0 : H, dec_wt[l], sc, nullptr, dh[l], dc[l], dx, grads);
      d_layer_out = dx;
    }
    // d_layer_out is now the gradient w.r.t. x0.
    for (std::size_t b = 0; b < B; ++b) {
      const auto id = static_cast<std::size_t>(batch_.tgt_in[b * T + tt]);
      for (std::size_t e = 0; e < E; ++e) d_tgt_emb[id * E + e] += d_layer_out[b * in0 + e];
    }
    if (att) {
      const double* v = P_.data(L_.att_v);
      double* dv = grads.data(L_.att_v);
      std::fill(dq.begin(), dq.end(), 0.0);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t len = batch_.src_lengths[b];
        const double* dctx = d_layer_out.data() + b * in0 + E;
        const double* alpha = st.alpha.data() + b * S;
        std::vector<double> dalpha(len);
        double weighted = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
          const double* h = ann_.data() + (b * S + i) * H;
          double* dhi = dann.data() + (b * S + i) * H;
          double s = 0.0;
          for (std::size_t a = 0; a < H; ++a) {
            s += dctx[a] * h[a];
            dhi[a] += alpha[i] * dctx[a];
          }
          dalpha[i] = s;
          weighted += alpha[i] * s;
        }
        for (std::size_t i = 0; i < len; ++i) {
          const double de = alpha[i] * (dalpha[i] - weighted);
          const double* u = st.u.data() + (b * S + i) * H;
          double* dw = dwh.data() + (b * S + i) * H;
          for (std::size_t a = 0; a < H; ++a) {
            dv[a] += de * u[a];
            const double dpre = de * v[a] * (1.0 - u[a] * u[a]);
            dq[b * H + a] += dpre;
            dw[a] += dpre;
          }
        }
      }
      kernels::gemm_tn_acc(st.s_prev.data(), dq.data(), grads.data(L_.att_ws), B, H, H);
      // s_prev is the previous top decoder state.
      kernels::gemm_acc(dq.data(), ws_t.data(), dh[Ld - 1].data(), B, H, H);
    }
  }

  // Decoder initial state came from the encoder's final states.
  std::vector<std::vector<double>> edh(Le, std::vector<double>(B * H, 0.0)), edc(Le, std::vector<double>(B * H, 0.0));
  for (std::size_t l = 0; l < Ld; ++l) {
    const std::size_t src = std::min(l, Le - 1);
    for (std::size_t k = 0; k < B * H; ++k) {
      edh[src][k] += dh[l][k];
      edc[src][k] += dc[l][k];
    }
  }
  if (att) {
    kernels::gemm_tn_acc(ann_.data(), dwh.data(), grads.data(L_.att_wh), B * S, H, H);
    const auto wh_t = transposed(L_.att_wh);
    kernels::gemm_acc(dwh.data(), wh_t.data(), dann.data(), B * S, H, H);
  }

  double* d_src_emb = grads.data(L_.src_embed);
  std::vector<double> d_top(B * H);
  for (std::size_t t = S; t-- > 0;) {
    const std::uint8_t* act = active_.data() + t * B;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t a = 0; a < H; ++a) d_top[b * H + a] = act[b] ? dann[(b * S + t) * H + a] : 0.0;
    std::vector<double> d_layer_out = d_top;
    for (std::size_t l = Le; l-- > 0;) {
      const StepCache& sc = enc_[t][l];
      for (std::size_t k = 0; k < B * H; ++k)
        edh[l][k] += sc.mask.empty() ? d_layer_out[k] : d_layer_out[k] * sc.mask[k];
      lstm_backward(L_.enc_w[l], L_.enc_b[l], l == 0 ? E : H, enc_wt[l], sc, act, edh[l], edc[l], dx, grads);
      d_layer_out = dx;
    }
    for (std::size_t b = 0; b < B; ++b) {
      if (!act[b]) continue;
      const auto id = static_cast<std::size_t>(batch_.src[b * S + t]);
      for (std::size_t e = 0; e < E; ++e) d_src_emb[id * E + e] += d_layer_out[b * E + e];
    }
  }

  for (const auto& slot : L_.slots) {
    auto g = std::span<const double>(grads.values()).subspan(slot.offset, slot.size());
    for (double x : g) {
      if (!std::isfinite(x)) throw NumericalError("non-finite gradient in tensor " + slot.name);
    }
  }
  return grads;
}

}  // namespace

ForwardResult forward_teacher_forced(const Parameters& params, const Batch& batch, bool dropout_on,
                                     std::uint64_t dropout_seed) {
  Graph g(params, batch, dropout_on, dropout_seed);
  return g.teacher_forced();
}

LossAndGradients backward_gradients(const Parameters& params, const Batch& batch, bool dropout_on,
                                    std::uint64_t dropout_seed) {
  Graph g(params, batch, dropout_on, dropout_seed);
  LossAndGradients out;
  out.forward = g.teacher_forced();
  if (!std::isfinite(out.forward.mean_loss)) throw NumericalError("non-finite loss");
  out.gradients = g.backward(out.forward);
  return out;
}

std::vector<double> attention_weights(const Parameters& params, std::span<const double> decoder_state,
                                      std::span<const double> encoder_states,
                                      std::span<const std::size_t> source_lengths, std::size_t src_len) {
  if (!params.has_attention()) throw ConfigError("attention_weights: model has no attention");
  const auto& L = params.layout();
  const std::size_t H = params.config().hidden_dim;
  const std::size_t rows = source_lengths.size();
  if (decoder_state.size() != rows * H || encoder_states.size() != rows * src_len * H) {
    throw ConfigError("attention_weights: shape mismatch");
  }
  std::vector<double> q(rows * H, 0.0), wh(rows * src_len * H, 0.0);
  kernels::gemm_acc(decoder_state.data(), params.data(L.att_ws), q.data(), rows, H, H);
  kernels::gemm_acc(encoder_states.data(), params.data(L.att_wh), wh.data(), rows * src_len, H, H);
  const double* v = params.data(L.att_v);
  std::vector<double> alpha(rows * src_len, 0.0);
  for (std::size_t b = 0; b < rows; ++b) {
    const std::size_t len = std::min(source_lengths[b], src_len);
    if (len == 0) continue;
    double* e = alpha.data() + b * src_len;
    for (std::size_t i = 0; i < len; ++i) {
      double s = 0.0;
      for (std::size_t a = 0; a < H; ++a) s += v[a] * std::tanh(q[b * H + a] + wh[(b * src_len + i) * H + a]);
      e[i] = s;
    }
    const double mx = *std::max_element(e, e + len);
    double sum = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      e[i] = std::exp(e[i] - mx);
      sum += e[i];
    }
    for (std::size_t i = 0; i < len; ++i) e[i] /= sum;
  }
  return alpha;
}

Ids greedy_decode(const Parameters& params, const Ids& src_ids, std::size_t max_len) {
  EncodedPair p;
  p.src = src_ids;
  p.tgt_in = {Vocabulary::kBos};
  p.tgt_out = {Vocabulary::kEos};
  const EncodedPair* ptr = &p;
  Batch batch = make_batch(std::span<const EncodedPair* const>(&ptr, 1));
  Graph g(params, batch, false, 0);
  g.encode();
  Ids out;
  TokenId token = Vocabulary::kBos;
  const std::size_t V = params.config().tgt_vocab_size;
  while (out.size() < max_len) {
    const auto& st = g.decoder_step(std::span<const TokenId>(&token, 1));
    std::size_t best = static_cast<std::size_t>(Vocabulary::kEos);
    for (std::size_t k = static_cast<std::size_t>(Vocabulary::kEos) + 1; k < V; ++k) {
      if (st.logits[k] > st.logits[best]) best = k;
    }
    if (best == static_cast<std::size_t>(Vocabulary::kEos)) break;
    token = static_cast<TokenId>(best);
    out.push_back(token);
  }
  return out;
}

}  // namespace curricula
