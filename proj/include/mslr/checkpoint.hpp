#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "mslr/backbone.hpp"
#include "mslr/training.hpp"

namespace mslr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  Shape shape;
  std::vector<double> values;

  bool operator==(const StoredTensor&) const = default;
};

// "PAMR1" container. Layout, all little-endian:
//   magic[5] u32 version u64 fingerprint u64 step u32 count
//   count x { u32 name_len, name, u32 rank, rank x u64 extent, numel x f64 }
//   u8 has_optimizer [ u64 t u32 count count x { u32 name_len, name, u64 n, n x f64 m, n x f64 v } ]
// Entries are written in lexicographic order of their path.
struct Checkpoint {
  std::uint64_t fingerprint = 0;
  std::uint64_t step = 0;
  std::map<std::string, StoredTensor> params;
  std::optional<OptimState> optimizer;

  bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

// Writes to a sibling temp file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint capture_checkpoint(const MaskedAutoencoder& model, const AdamW* optimizer = nullptr);

// Copies stored payloads into the model. Validates everything before touching
// any parameter, so a rejected checkpoint leaves the model as it was.
// Classifier entries ("cls.*") the model does not have are ignored.
void restore_checkpoint(MaskedAutoencoder& model, const Checkpoint& ckpt, bool allow_fingerprint_mismatch = false);
void restore_optimizer(AdamW& optimizer, const Checkpoint& ckpt);

}  // namespace mslr
