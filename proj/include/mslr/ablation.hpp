#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mslr/config.hpp"

namespace mslr {

struct AblationSetting {
  std::string axis;     // mask-ratio | la-params | la-branches
  std::string setting;  // row label
  std::function<void(ModelConfig&)> apply;
};

// Rows in table order: mask ratio 0.9 .. 0.5; (lambda, gamma) = (5,32),
// (5,16), (7,32), (7,16); branches both, avg only, max only, none.
// axis is one of the three names or "all".
std::vector<AblationSetting> ablation_settings(const std::string& axis);

inline constexpr const char* kAblationHeader =
    "axis,setting,mask_ratio,la_window,la_groups,avg_branch,max_branch,pretrain_loss,train_accuracy,test_accuracy";

// Pretrains and fine-tunes one model per row on the synthetic task described
// by `base` and returns one CSV line (no trailing newline) per row.
std::string ablation_row(const Config& base, const AblationSetting& setting);
std::string run_ablation(const Config& base, const std::string& axis);

}  // namespace mslr
