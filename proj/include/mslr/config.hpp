#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mslr {

// Architecture. Defaults are the full-size pretraining setup: three scales of
// 512/256/64 centers, 16/8/8 neighbors, 96/192/384 channels.
struct ModelConfig {
  std::size_t num_points = 2048;
  std::vector<std::size_t> sizes{512, 256, 64};
  std::vector<std::size_t> ks{16, 8, 8};
  std::vector<std::size_t> dims{96, 192, 384};
  std::size_t encoder_blocks = 5;
  std::size_t decoder_blocks = 1;
  std::size_t heads = 6;
  double mask_ratio = 0.6;
  std::size_t interp_k = 3;
  bool zero_scale_head = false;
  std::size_t la_window = 5;
  std::size_t la_groups = 32;
  bool la_avg_branch = true;  // W_x
  bool la_max_branch = true;  // W_y
  std::size_t embed_hidden = 0;  // 0: C_1 / 2 rounded up to a multiple of la_groups
  std::size_t head_hidden = 256;  // classifier MLP width

  std::size_t scales() const { return sizes.size(); }
  std::size_t resolved_embed_hidden() const;
  void validate() const;
  // Canonical "key = value" text of the architecture keys only.
  std::string canonical_text() const;
  std::uint64_t fingerprint() const;
};

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 64;
  double base_lr = 1e-4;
  double weight_decay = 0.05;
  std::size_t warmup_epochs = 10;
  double min_lr = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool augment = true;
  double scale_min = 0.8;
  double scale_max = 1.25;
  double translate = 0.1;
  // Draw a fresh mask per step; off keeps one mask per sample for the run.
  bool resample_mask = true;
  std::size_t checkpoint_interval = 0;  // epochs; 0 writes only the final checkpoint

  void validate() const;
};

struct FinetuneConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double base_lr = 5e-4;
  double weight_decay = 0.05;
  std::size_t warmup_epochs = 10;
  double min_lr = 1e-6;
  bool augment = true;
  // Few-shot protocol.
  std::size_t way = 5;
  std::size_t shot = 10;
  std::size_t query = 20;
  std::size_t trials = 10;
  std::size_t fewshot_epochs = 100;

  TrainConfig as_train_config() const;
  void validate() const;
};

// Synthetic dataset generation.
struct DataConfig {
  std::vector<std::string> kinds{"sphere", "cube", "torus", "cylinder"};
  std::size_t per_class = 64;
  std::size_t test_per_class = 16;
  double jitter = 0.01;
};

struct Config {
  ModelConfig model;
  TrainConfig train;
  FinetuneConfig finetune;
  DataConfig data;
  std::uint64_t seed = 0;

  // Overlays `key = value` lines onto the current values. Throws ParseError
  // on malformed lines and ConfigError on unknown keys.
  void apply_text(const std::string& text);
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
  void validate() const;
};

Config load_config(const std::string& path);

// Presets used by tests, tools and the shipped config files.
ModelConfig tiny_model_config();
ModelConfig small_model_config();

}  // namespace mslr
