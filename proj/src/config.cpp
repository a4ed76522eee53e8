#include "mslr/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "mslr/error.hpp"

namespace mslr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  // Shortest text that parses back to the same double.
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(out);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(v)) out.push_back(parse_size(key, item));
  return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

struct Field {
  std::string key;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

#define SIZE_FIELD(name, member) \
  Field{name, [](const Config& c) { return std::to_string(c.member); }, \
        [](Config& c, const std::string& v) { c.member = parse_size(name, v); }}
#define DOUBLE_FIELD(name, member) \
  Field{name, [](const Config& c) { return fmt_double(c.member); }, \
        [](Config& c, const std::string& v) { c.member = parse_double(name, v); }}
#define BOOL_FIELD(name, member) \
  Field{name, [](const Config& c) { return std::string(c.member ? "true" : "false"); }, \
        [](Config& c, const std::string& v) { c.member = parse_bool(name, v); }}
#define SIZES_FIELD(name, member) \
  Field{name, [](const Config& c) { return join(c.member); }, \
        [](Config& c, const std::string& v) { c.member = parse_sizes(name, v); }}

const std::vector<Field>& model_fields() {
  static const std::vector<Field> fields{
      SIZE_FIELD("model.num_points", model.num_points),
      SIZES_FIELD("model.sizes", model.sizes),
      SIZES_FIELD("model.ks", model.ks),
      SIZES_FIELD("model.dims", model.dims),
      SIZE_FIELD("model.encoder_blocks", model.encoder_blocks),
      SIZE_FIELD("model.decoder_blocks", model.decoder_blocks),
      SIZE_FIELD("model.heads", model.heads),
      DOUBLE_FIELD("model.mask_ratio", model.mask_ratio),
      SIZE_FIELD("model.interp_k", model.interp_k),
      BOOL_FIELD("model.zero_scale_head", model.zero_scale_head),
      SIZE_FIELD("model.la_window", model.la_window),
      SIZE_FIELD("model.la_groups", model.la_groups),
      BOOL_FIELD("model.la_avg_branch", model.la_avg_branch),
      BOOL_FIELD("model.la_max_branch", model.la_max_branch),
      SIZE_FIELD("model.embed_hidden", model.embed_hidden),
      SIZE_FIELD("model.head_hidden", model.head_hidden),
  };
  return fields;
}

const std::vector<Field>& other_fields() {
  static const std::vector<Field> fields{
      SIZE_FIELD("seed", seed),
      SIZE_FIELD("train.epochs", train.epochs),
      SIZE_FIELD("train.batch_size", train.batch_size),
      DOUBLE_FIELD("train.base_lr", train.base_lr),
      DOUBLE_FIELD("train.weight_decay", train.weight_decay),
      SIZE_FIELD("train.warmup_epochs", train.warmup_epochs),
      DOUBLE_FIELD("train.min_lr", train.min_lr),
      DOUBLE_FIELD("train.beta1", train.beta1),
      DOUBLE_FIELD("train.beta2", train.beta2),
      DOUBLE_FIELD("train.adam_eps", train.adam_eps),
      BOOL_FIELD("train.augment", train.augment),
      DOUBLE_FIELD("train.scale_min", train.scale_min),
      DOUBLE_FIELD("train.scale_max", train.scale_max),
      DOUBLE_FIELD("train.translate", train.translate),
      BOOL_FIELD("train.resample_mask", train.resample_mask),
      SIZE_FIELD("train.checkpoint_interval", train.checkpoint_interval),
      SIZE_FIELD("finetune.epochs", finetune.epochs),
      SIZE_FIELD("finetune.batch_size", finetune.batch_size),
      DOUBLE_FIELD("finetune.base_lr", finetune.base_lr),
      DOUBLE_FIELD("finetune.weight_decay", finetune.weight_decay),
      SIZE_FIELD("finetune.warmup_epochs", finetune.warmup_epochs),
      DOUBLE_FIELD("finetune.min_lr", finetune.min_lr),
      BOOL_FIELD("finetune.augment", finetune.augment),
      SIZE_FIELD("finetune.way", finetune.way),
      SIZE_FIELD("finetune.shot", finetune.shot),
      SIZE_FIELD("finetune.query", finetune.query),
      SIZE_FIELD("finetune.trials", finetune.trials),
      SIZE_FIELD("finetune.fewshot_epochs", finetune.fewshot_epochs),
      Field{"data.kinds", [](const Config& c) { return join(c.data.kinds); },
            [](Config& c, const std::string& v) { c.data.kinds = split_list(v); }},
      SIZE_FIELD("data.per_class", data.per_class),
      SIZE_FIELD("data.test_per_class", data.test_per_class),
      DOUBLE_FIELD("data.jitter", data.jitter),
  };
  return fields;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD
#undef SIZES_FIELD

}  // namespace

std::size_t ModelConfig::resolved_embed_hidden() const {
  if (embed_hidden != 0) return embed_hidden;
  const std::size_t g = std::max<std::size_t>(la_groups, 1);
  const std::size_t want = std::max(dims.empty() ? 0 : dims[0] / 2, 2 * g);
  return (want + g - 1) / g * g;
}

void ModelConfig::validate() const {
  const std::size_t s = sizes.size();
  if (s < 2) throw ConfigError("model needs at least two scales");
  if (ks.size() != s || dims.size() != s) throw ConfigError("model.sizes, model.ks and model.dims must have equal length");
  if (sizes[0] > num_points) throw ConfigError("model.sizes[0] exceeds model.num_points");
  for (std::size_t i = 1; i < s; ++i) {
    if (sizes[i] >= sizes[i - 1]) throw ConfigError("model.sizes must be strictly decreasing");
  }
  if (sizes[s - 1] == 0) throw ConfigError("model.sizes must be positive");
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t parent = i == 0 ? num_points : sizes[i - 1];
    if (ks[i] == 0 || ks[i] > parent) throw ConfigError("model.ks[" + std::to_string(i) + "] exceeds parent scale size");
  }
  if (heads == 0) throw ConfigError("model.heads must be positive");
  for (auto c : dims) {
    if (c == 0 || c % heads != 0) throw ConfigError("every model.dims entry must be divisible by model.heads");
  }
  if (encoder_blocks == 0 || decoder_blocks == 0) throw ConfigError("block counts must be positive");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("model.mask_ratio must lie in [0, 1)");
  if (interp_k == 0) throw ConfigError("model.interp_k must be positive");
  if (la_window % 2 == 0) throw ConfigError("model.la_window must be odd");
  if (la_groups == 0) throw ConfigError("model.la_groups must be positive");
  if (dims[0] % la_groups != 0 || resolved_embed_hidden() % la_groups != 0) {
    throw ConfigError("embedding widths must be divisible by model.la_groups");
  }
  if (head_hidden == 0) throw ConfigError("model.head_hidden must be positive");
}

std::string ModelConfig::canonical_text() const {
  Config c;
  c.model = *this;
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& f : model_fields()) kv.emplace_back(f.key, f.get(c));
  std::sort(kv.begin(), kv.end());
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t ModelConfig::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : canonical_text()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (warmup_epochs >= epochs) throw ConfigError("train.warmup_epochs must be smaller than train.epochs");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(base_lr > 0.0) || min_lr < 0.0 || min_lr > base_lr) throw ConfigError("need 0 <= min_lr <= base_lr, base_lr > 0");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (!(scale_min > 0.0 && scale_min <= scale_max)) throw ConfigError("need 0 < scale_min <= scale_max");
  if (translate < 0.0) throw ConfigError("train.translate must be non-negative");
}

TrainConfig FinetuneConfig::as_train_config() const {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.base_lr = base_lr;
  t.weight_decay = weight_decay;
  t.warmup_epochs = warmup_epochs;
  t.min_lr = min_lr;
  t.augment = augment;
  return t;
}

void FinetuneConfig::validate() const {
  try {
    as_train_config().validate();
  } catch (const ConfigError& e) {
    std::string what = e.what();
    for (auto pos = what.find("train."); pos != std::string::npos; pos = what.find("train.", pos + 9)) {
      what.replace(pos, 6, "finetune.");
    }
    throw ConfigError(what);
  }
  if (way < 2 || shot == 0 || query == 0 || trials == 0 || fewshot_epochs == 0) {
    throw ConfigError("few-shot settings need way >= 2 and positive shot/query/trials/epochs");
  }
}

void Config::set(const std::string& key, const std::string& value) {
  for (const auto* table : {&model_fields(), &other_fields()}) {
    for (const auto& f : *table) {
      if (f.key == key) {
        f.set(*this, value);
        return;
      }
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void Config::apply_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ParseError("expected 'key = value'", lineno);
    try {
      set(key, value);
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
}

std::string Config::to_text() const {
  std::string out;
  for (const auto* table : {&other_fields(), &model_fields()}) {
    for (const auto& f : *table) out += f.key + " = " + f.get(*this) + "\n";
  }
  return out;
}

void Config::validate() const {
  model.validate();
  train.validate();
  finetune.validate();
  if (data.kinds.empty() || data.per_class == 0) throw ConfigError("data needs at least one kind and sample");
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  Config c;
  c.apply_text(ss.str());
  return c;
}

ModelConfig tiny_model_config() {
  ModelConfig m;
  m.num_points = 32;
  m.sizes = {16, 8};
  m.ks = {4, 4};
  m.dims = {8, 16};
  m.encoder_blocks = 1;
  m.decoder_blocks = 1;
  m.heads = 2;
  m.mask_ratio = 0.6;
  m.interp_k = 3;
  m.la_window = 3;
  m.la_groups = 2;
  m.head_hidden = 32;
  return m;
}

ModelConfig small_model_config() {
  ModelConfig m;
  m.num_points = 256;
  m.sizes = {64, 16};
  m.ks = {8, 8};
  m.dims = {64, 128};
  m.encoder_blocks = 1;
  m.decoder_blocks = 1;
  m.heads = 4;
  m.mask_ratio = 0.6;
  m.interp_k = 3;
  m.la_window = 5;
  m.la_groups = 32;
  m.head_hidden = 64;
  return m;
}

}  // namespace mslr
