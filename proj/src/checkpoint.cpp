#include "curricula/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "curricula/util.hpp"

namespace curricula {

namespace {

class Writer {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { buf_.append(s); }
  void section(const std::string& payload) {
    u64(payload.size());
    bytes(payload);
  }
  std::string& str() { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string_view section() { return bytes(static_cast<std::size_t>(u64())); }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CorruptionError("checkpoint truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string vocab_section(const ModelCheckpoint& c) { return c.src_vocab_fp + '\n' + c.tgt_vocab_fp + '\n'; }

std::string params_section(const Parameters& p) {
  Writer w;
  const auto& L = p.layout();
  w.u32(static_cast<std::uint32_t>(L.slots.size()));
  for (std::size_t s = 0; s < L.slots.size(); ++s) {
    const auto& slot = L.slots[s];
    w.u32(static_cast<std::uint32_t>(slot.name.size()));
    w.bytes(slot.name);
    w.u64(slot.rows);
    w.u64(slot.cols);
    for (double v : p.tensor(s)) w.f64(v);
  }
  return std::move(w.str());
}

std::string history_section(const std::vector<HistoryEntry>& h) {
  Writer w;
  w.u32(static_cast<std::uint32_t>(h.size()));
  for (const auto& e : h) {
    w.u64(e.epoch);
    w.f64(e.train_loss);
    w.f64(e.valid_ppl);
  }
  return std::move(w.str());
}

}  // namespace

std::string ModelCheckpoint::fingerprint() const {
  Writer w;
  w.section(params.config().serialize());
  w.section(vocab_section(*this));
  w.section(params_section(params));
  return to_hex(sha256(w.str()));
}

std::string ModelCheckpoint::serialize() const {
  Writer w;
  w.bytes("CURR");
  w.u16(kFormatVersion);
  w.section(params.config().serialize());
  w.section(vocab_section(*this));
  w.section(params_section(params));
  w.section(history_section(history));
  auto digest = sha256(w.str());
  w.bytes(std::string_view(reinterpret_cast<const char*>(digest.data()), digest.size()));
  return std::move(w.str());
}

ModelCheckpoint ModelCheckpoint::deserialize(const std::string& bytes) {
  const std::string_view magic = "CURR";
  if (bytes.size() < 6 && magic.substr(0, std::min<std::size_t>(bytes.size(), 4)) == bytes.substr(0, 4)) {
    throw CorruptionError("checkpoint truncated");
  }
  if (bytes.size() < 6 || bytes.compare(0, 4, magic) != 0) throw FormatError("checkpoint: bad magic");
  Reader head(std::string_view(bytes).substr(4, 2));
  const auto version = head.u16();
  if (version != kFormatVersion) {
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version) + " (supported: " +
                      std::to_string(kFormatVersion) + ")");
  }
  if (bytes.size() < 6 + 32) throw CorruptionError("checkpoint truncated");
  const std::string_view body(bytes.data(), bytes.size() - 32);
  const auto digest = sha256(body);
  if (std::memcmp(digest.data(), bytes.data() + body.size(), 32) != 0) {
    throw CorruptionError("checkpoint: content hash mismatch");
  }

  Reader r(body.substr(6));
  ModelCheckpoint c;
  const auto config = ModelConfig::deserialize(std::string(r.section()));
  {
    auto fps = split(r.section(), '\n');
    if (fps.size() != 3) throw CorruptionError("checkpoint: bad vocabulary section");
    c.src_vocab_fp = fps[0];
    c.tgt_vocab_fp = fps[1];
  }
  c.params = Parameters(config);
  {
    Reader pr(r.section());
    const auto& L = c.params.layout();
    if (pr.u32() != L.slots.size()) throw CorruptionError("checkpoint: tensor count does not match config");
    for (std::size_t s = 0; s < L.slots.size(); ++s) {
      const auto& slot = L.slots[s];
      auto name = pr.bytes(pr.u32());
      const auto rows = pr.u64(), cols = pr.u64();
      if (name != slot.name || rows != slot.rows || cols != slot.cols) {
        throw CorruptionError("checkpoint: tensor " + std::string(name) + " does not match config");
      }
      for (double& v : c.params.tensor(s)) v = pr.f64();
    }
    if (!pr.done()) throw CorruptionError("checkpoint: trailing bytes in parameter section");
  }
  {
    Reader hr(r.section());
    const auto n = hr.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      HistoryEntry e;
      e.epoch = hr.u64();
      e.train_loss = hr.f64();
      e.valid_ppl = hr.f64();
      c.history.push_back(e);
    }
  }
  if (!r.done()) throw CorruptionError("checkpoint: unexpected trailing sections");
  return c;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, ckpt.serialize());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) { return ModelCheckpoint::deserialize(read_file(path)); }

}  // namespace curricula
