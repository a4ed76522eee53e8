#include "mslr/ablation.hpp"

#include "mslr/backbone.hpp"
#include "mslr/error.hpp"
#include "mslr/io.hpp"
#include "mslr/rng.hpp"
#include "mslr/shapes.hpp"
#include "mslr/training.hpp"

namespace mslr {

std::vector<AblationSetting> ablation_settings(const std::string& axis) {
  std::vector<AblationSetting> rows;
  const bool all = axis == "all";
  if (!all && axis != "mask-ratio" && axis != "la-params" && axis != "la-branches") {
    throw ArgumentError("unknown ablation axis '" + axis + "'");
  }
  if (all || axis == "mask-ratio") {
    for (double mu : {0.9, 0.8, 0.7, 0.6, 0.5}) {
      rows.push_back({"mask-ratio", "mu=" + format_shortest(mu), [mu](ModelConfig& m) { m.mask_ratio = mu; }});
    }
  }
  if (all || axis == "la-params") {
    const std::pair<std::size_t, std::size_t> grid[] = {{5, 32}, {5, 16}, {7, 32}, {7, 16}};
    const char* names[] = {"model-a", "model-b", "model-c", "model-d"};
    for (std::size_t i = 0; i < 4; ++i) {
      const auto [window, groups] = grid[i];
      rows.push_back({"la-params", names[i], [window, groups](ModelConfig& m) {
                        m.la_window = window;
                        m.la_groups = groups;
                      }});
    }
  }
  if (all || axis == "la-branches") {
    const std::pair<bool, bool> grid[] = {{true, true}, {true, false}, {false, true}, {false, false}};
    const char* names[] = {"both", "avg-only", "max-only", "none"};
    for (std::size_t i = 0; i < 4; ++i) {
      const auto [avg, max] = grid[i];
      rows.push_back({"la-branches", names[i], [avg, max](ModelConfig& m) {
                        m.la_avg_branch = avg;
                        m.la_max_branch = max;
                      }});
    }
  }
  return rows;
}

std::string ablation_row(const Config& base, const AblationSetting& setting) {
  Config c = base;
  setting.apply(c.model);
  c.validate();
  const auto& m = c.model;

  const auto pretrain_set = synthetic_dataset(c.data, m.num_points, c.data.per_class, c.seed, 0);
  const auto test_set = synthetic_dataset(c.data, m.num_points, c.data.test_per_class, c.seed, 1);

  MaskedAutoencoder model(m, c.seed);
  AdamW opt(pretrain_parameters(model), c.train.weight_decay, c.train.beta1, c.train.beta2, c.train.adam_eps);
  const auto log = pretrain_run(model, opt, pretrain_set, c.train, Rng::mix(c.seed, 2));

  auto head = ClassifierHead::create(model.params(), "cls", 2 * m.dims.back(), m.head_hidden, c.data.kinds.size());
  const auto ft = finetune_classify(model, head, pretrain_set, test_set, c.finetune, Rng::mix(c.seed, 3));

  auto flag = [](bool b) { return std::string(b ? "1" : "0"); };
  return setting.axis + "," + setting.setting + "," + format_shortest(m.mask_ratio) + "," + std::to_string(m.la_window) +
         "," + std::to_string(m.la_groups) + "," + flag(m.la_avg_branch) + "," + flag(m.la_max_branch) + "," +
         format_double(log.entries.back().loss) + "," + format_double(ft.train_accuracy) + "," +
         format_double(ft.test_accuracy);
}

std::string run_ablation(const Config& base, const std::string& axis) {
  std::string csv = std::string(kAblationHeader) + "\n";
  for (const auto& s : ablation_settings(axis)) csv += ablation_row(base, s) + "\n";
  return csv;
}

}  // namespace mslr
