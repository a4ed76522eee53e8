#include "mslr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mslr/error.hpp"

namespace mslr {
namespace {

constexpr std::string_view kMagic = "PAMR1";

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::string_view raw(std::size_t n) {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(raw(1)[0]); }
  std::uint32_t u32() {
    auto s = raw(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
    return v;
  }
  std::uint64_t u64() {
    auto s = raw(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[i]);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() { return std::string(raw(u32())); }
  std::vector<double> doubles(std::uint64_t n) {
    if ((in_.size() - pos_) / 8 < n) throw FormatError("checkpoint truncated in tensor payload");
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  w.u64(ckpt.fingerprint);
  w.u64(ckpt.step);
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) w.u64(e);
    for (double v : t.values) w.f64(v);
  }
  w.u8(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    w.u64(ckpt.optimizer->step);
    w.u32(static_cast<std::uint32_t>(ckpt.optimizer->moments.size()));
    for (const auto& [name, m] : ckpt.optimizer->moments) {
      w.str(name);
      w.u64(m.first.size());
      for (double v : m.first) w.f64(v);
      for (double v : m.second) w.f64(v);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < kMagic.size() || r.raw(kMagic.size()) != kMagic) throw FormatError("not a PAMR1 checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.fingerprint = r.u64();
  ckpt.step = r.u64();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    StoredTensor t;
    const auto rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank in entry " + name);
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.u64());
      n *= t.shape.back();
    }
    t.values = r.doubles(n);
    if (!ckpt.params.emplace(std::move(name), std::move(t)).second) throw FormatError("duplicate checkpoint entry");
  }
  const auto has_opt = r.u8();
  if (has_opt > 1) throw FormatError("bad optimizer flag");
  if (has_opt == 1) {
    OptimState state;
    state.step = r.u64();
    const auto n_moments = r.u32();
    for (std::uint32_t i = 0; i < n_moments; ++i) {
      std::string name = r.str();
      const auto n = r.u64();
      Moments m;
      m.first = r.doubles(n);
      m.second = r.doubles(n);
      state.moments.emplace(std::move(name), std::move(m));
    }
    ckpt.optimizer = std::move(state);
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

Checkpoint capture_checkpoint(const MaskedAutoencoder& model, const AdamW* optimizer) {
  Checkpoint ckpt;
  ckpt.fingerprint = model.config().fingerprint();
  for (const auto& [name, t] : model.params().all()) {
    const auto d = t.data();
    ckpt.params.emplace(name, StoredTensor{t.shape(), std::vector<double>(d.begin(), d.end())});
  }
  if (optimizer != nullptr) {
    ckpt.optimizer = optimizer->state();
    ckpt.step = optimizer->state().step;
  }
  return ckpt;
}

void restore_checkpoint(MaskedAutoencoder& model, const Checkpoint& ckpt, bool allow_fingerprint_mismatch) {
  if (!allow_fingerprint_mismatch && ckpt.fingerprint != model.config().fingerprint()) {
    throw CompatibilityError("checkpoint was written for a different model configuration");
  }
  const auto& params = model.params().all();
  for (const auto& [name, t] : params) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw CompatibilityError("checkpoint lacks parameter " + name);
    if (it->second.shape != t.shape()) {
      throw CompatibilityError("shape mismatch for " + name + ": checkpoint " + shape_str(it->second.shape) +
                               ", model " + shape_str(t.shape()));
    }
  }
  for (const auto& [name, t] : ckpt.params) {
    if (!params.count(name) && name.rfind("cls.", 0) != 0) {
      throw CompatibilityError("checkpoint parameter " + name + " has no counterpart in the model");
    }
  }
  for (const auto& [name, t] : params) {
    Tensor target = t;
    target.assign(ckpt.params.at(name).values);
  }
}

void restore_optimizer(AdamW& optimizer, const Checkpoint& ckpt) {
  if (!ckpt.optimizer) throw CompatibilityError("checkpoint carries no optimizer state");
  OptimState state;
  state.step = ckpt.optimizer->step;
  for (const auto& p : optimizer.params()) {
    auto it = ckpt.optimizer->moments.find(p.name);
    if (it == ckpt.optimizer->moments.end()) throw CompatibilityError("optimizer state lacks " + p.name);
    state.moments.emplace(p.name, it->second);
  }
  optimizer.load_state(std::move(state));
}

}  // namespace mslr
