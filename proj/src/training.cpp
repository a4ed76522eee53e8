#include "mslr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "mslr/error.hpp"
#include "mslr/ops.hpp"
#include "mslr/rng.hpp"

namespace mslr {

AdamW::AdamW(std::vector<NamedTensor> params, double weight_decay, double beta1, double beta2, double eps)
    : params_(std::move(params)), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    state_.moments[p.name] = Moments{std::vector<double>(p.tensor.numel(), 0.0),
                                     std::vector<double>(p.tensor.numel(), 0.0)};
  }
}

void AdamW::load_state(OptimState state) {
  for (const auto& p : params_) {
    auto it = state.moments.find(p.name);
    if (it == state.moments.end() || it->second.first.size() != p.tensor.numel() ||
        it->second.second.size() != p.tensor.numel()) {
      throw ConsistencyError("optimizer state does not match parameter " + p.name);
    }
  }
  state_ = std::move(state);
}

void AdamW::step(double lr) {
  for (const auto& p : params_) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name + "; update skipped");
    }
  }
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double bc1 = 1.0 - std::pow(beta1_, t);
  const double bc2 = 1.0 - std::pow(beta2_, t);
  for (const auto& p : params_) {
    Tensor param = p.tensor;
    auto& mom = state_.moments.at(p.name);
    const auto grad = param.grad();
    auto values = param.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      mom.first[i] = beta1_ * mom.first[i] + (1.0 - beta1_) * grad[i];
      mom.second[i] = beta2_ * mom.second[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double m_hat = mom.first[i] / bc1;
      const double v_hat = mom.second[i] / bc2;
      values[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps_) + weight_decay_ * values[i]);
    }
  }
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  if (epoch >= config.epochs) throw ArgumentError("lr_at: epoch beyond the schedule");
  if (epoch < config.warmup_epochs) {
    return config.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(config.warmup_epochs);
  }
  const std::size_t decay_span = config.epochs - config.warmup_epochs - 1;
  const double progress =
      decay_span == 0 ? 1.0 : static_cast<double>(epoch - config.warmup_epochs) / static_cast<double>(decay_span);
  return config.min_lr + (config.base_lr - config.min_lr) * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

AugmentParams draw_augmentation(Rng& rng, const TrainConfig& config) {
  AugmentParams a;
  a.scale = rng.uniform(config.scale_min, config.scale_max);
  for (int d = 0; d < 3; ++d) a.translation[d] = rng.uniform(-config.translate, config.translate);
  return a;
}

PointCloud apply_augmentation(const PointCloud& cloud, const AugmentParams& params) {
  PointCloud out = cloud;
  for (auto& p : out.points)
    for (int d = 0; d < 3; ++d) p[d] = params.scale * p[d] + params.translation[d];
  return out;
}

PointCloud augment(const PointCloud& cloud, Rng& rng, const TrainConfig& config) {
  return apply_augmentation(cloud, draw_augmentation(rng, config));
}

ScalePyramid prepare_pyramid(const PointCloud& cloud, const ModelConfig& model, Rng* augment_rng,
                             const TrainConfig& config) {
  PointCloud c = normalize(cloud);
  if (augment_rng != nullptr) c = augment(c, *augment_rng, config);
  return build_scale_pyramid(c, model.sizes, model.ks);
}

namespace {

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
}

bool has_prefix(const std::string& s, const std::string& prefix) { return s.compare(0, prefix.size(), prefix) == 0; }

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace

std::vector<NamedTensor> pretrain_parameters(const MaskedAutoencoder& model) {
  std::vector<NamedTensor> out;
  for (auto& p : model.params().named()) {
    if (has_prefix(p.name, "cls.") || has_prefix(p.name, "encoder.norm.")) continue;
    out.push_back(p);
  }
  return out;
}

std::vector<NamedTensor> finetune_parameters(const MaskedAutoencoder& model) {
  std::vector<NamedTensor> out;
  for (auto& p : model.params().named()) {
    if (has_prefix(p.name, "decoder.") || has_prefix(p.name, "head.")) continue;
    out.push_back(p);
  }
  return out;
}

RunLog pretrain_run(MaskedAutoencoder& model, AdamW& optimizer, const std::vector<PointCloud>& dataset,
                    const TrainConfig& config, std::uint64_t seed, const PretrainHooks& hooks) {
  config.validate();
  if (dataset.empty()) throw ArgumentError("pretraining needs a non-empty dataset");
  const ModelConfig& mc = model.config();
  if (!(mc.mask_ratio > 0.0)) throw ArgumentError("pretraining needs a positive mask ratio");

  Rng rng(seed);
  std::vector<std::optional<ScalePyramid>> cached(dataset.size());
  std::vector<std::optional<MaskPlan>> fixed_plans(dataset.size());
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  RunLog log;
  std::size_t step = 0;
  auto abort_with = [&](std::size_t epoch, const std::string& why) {
    if (hooks.save_checkpoint) hooks.save_checkpoint(epoch, optimizer);
    throw NumericError(why + " at step " + std::to_string(step + 1) + "; last good parameters kept");
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    shuffle(order, rng);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - begin);
      for (auto& p : optimizer.params()) Tensor(p.tensor).zero_grad();
      double batch_loss = 0.0;
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t item = order[b];
        ScalePyramid pyramid = [&] {
          if (config.augment) return prepare_pyramid(dataset[item], mc, &rng, config);
          if (!cached[item]) cached[item] = prepare_pyramid(dataset[item], mc, nullptr, config);
          return *cached[item];
        }();
        MaskPlan plan = [&] {
          if (config.resample_mask) return mask_and_backproject(pyramid, mc.mask_ratio, rng.next());
          if (!fixed_plans[item]) {
            fixed_plans[item] = mask_and_backproject(pyramid, mc.mask_ratio, Rng::mix(seed, item));
          }
          return *fixed_plans[item];
        }();
        GradientTape tape;
        Tensor loss;
        try {
          loss = scale(pretrain_forward(model, pyramid, plan).loss, inv_batch);
        } catch (const NumericError& e) {
          abort_with(epoch, e.what());
        }
        if (!std::isfinite(loss.item())) abort_with(epoch, "non-finite pretraining loss");
        batch_loss += loss.item();
        tape.backward(loss);
      }
      try {
        optimizer.step(lr);
      } catch (const NumericError& e) {
        abort_with(epoch, e.what());
      }
      ++step;
      LogEntry entry{step, epoch, lr, batch_loss, std::nullopt};
      log.entries.push_back(entry);
      if (hooks.on_step) hooks.on_step(entry);
    }
    const bool last = epoch + 1 == config.epochs;
    const bool interval = config.checkpoint_interval != 0 && (epoch + 1) % config.checkpoint_interval == 0;
    if (hooks.save_checkpoint && (last || interval)) hooks.save_checkpoint(epoch, optimizer);
  }
  return log;
}

ClassifierHead ClassifierHead::create(ParamStore& store, const std::string& prefix, std::size_t in,
                                      std::size_t hidden, std::size_t classes) {
  if (classes < 2) throw ConfigError("classifier needs at least two classes");
  ClassifierHead h;
  h.norm = LayerNorm::create(store, prefix + ".norm", in);
  h.fc1 = Linear::create(store, prefix + ".fc1", in, hidden);
  h.fc2 = Linear::create(store, prefix + ".fc2", hidden, hidden);
  h.fc3 = Linear::create(store, prefix + ".fc3", hidden, classes);
  return h;
}

Tensor ClassifierHead::operator()(const Tensor& features) const {
  return fc3(gelu(fc2(gelu(fc1(norm(features))))));
}

namespace {

void check_labels(const std::vector<PointCloud>& data, std::size_t classes, const char* what) {
  for (const auto& c : data) {
    if (!c.label || *c.label < 0 || static_cast<std::size_t>(*c.label) >= classes) {
      throw ConfigError(std::string(what) + " contains a label outside the classifier's " + std::to_string(classes) +
                        " classes");
    }
  }
}

}  // namespace

double classification_accuracy(const MaskedAutoencoder& model, const ClassifierHead& head,
                               const std::vector<PointCloud>& dataset) {
  if (dataset.empty()) return 0.0;
  check_labels(dataset, head.classes(), "evaluation set");
  const TrainConfig no_aug;
  std::size_t correct = 0;
  for (const auto& cloud : dataset) {
    const auto pyramid = prepare_pyramid(cloud, model.config(), nullptr, no_aug);
    const Tensor logits = head(global_feature(model, pyramid));
    if (static_cast<int>(argmax_row(logits.data())) == *cloud.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

FinetuneResult finetune_classify(MaskedAutoencoder& model, ClassifierHead& head,
                                 const std::vector<PointCloud>& train_set, const std::vector<PointCloud>& test_set,
                                 const FinetuneConfig& config, std::uint64_t seed) {
  const TrainConfig tc = config.as_train_config();
  tc.validate();
  if (train_set.empty()) throw ArgumentError("fine-tuning needs a non-empty training set");
  check_labels(train_set, head.classes(), "training set");
  check_labels(test_set, head.classes(), "test set");

  AdamW optimizer(finetune_parameters(model), tc.weight_decay, tc.beta1, tc.beta2, tc.adam_eps);
  Rng rng(seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::optional<ScalePyramid>> cached(train_set.size());

  FinetuneResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = lr_at(epoch, tc);
    shuffle(order, rng);
    for (std::size_t begin = 0; begin < order.size(); begin += tc.batch_size) {
      const std::size_t end = std::min(order.size(), begin + tc.batch_size);
      for (auto& p : optimizer.params()) Tensor(p.tensor).zero_grad();
      GradientTape tape;
      std::vector<Tensor> feats;
      std::vector<int> labels;
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t item = order[b];
        ScalePyramid pyramid = [&] {
          if (tc.augment) return prepare_pyramid(train_set[item], model.config(), &rng, tc);
          if (!cached[item]) cached[item] = prepare_pyramid(train_set[item], model.config(), nullptr, tc);
          return *cached[item];
        }();
        feats.push_back(global_feature(model, pyramid));
        labels.push_back(*train_set[item].label);
      }
      Tensor logits = head(concat_rows(feats));
      Tensor loss = cross_entropy(logits, labels);
      if (!std::isfinite(loss.item())) throw NumericError("non-finite fine-tuning loss");
      tape.backward(loss);
      optimizer.step(lr);
      std::size_t correct = 0;
      for (std::size_t r = 0; r < labels.size(); ++r) {
        const auto row = logits.data().subspan(r * head.classes(), head.classes());
        if (static_cast<int>(argmax_row(row)) == labels[r]) ++correct;
      }
      ++step;
      result.log.entries.push_back(
          {step, epoch, lr, loss.item(), static_cast<double>(correct) / static_cast<double>(labels.size())});
    }
  }
  result.train_accuracy = classification_accuracy(model, head, train_set);
  result.test_accuracy = test_set.empty() ? 0.0 : classification_accuracy(model, head, test_set);
  return result;
}

FewShotResult few_shot_eval(const MaskedAutoencoder& model, const std::vector<PointCloud>& dataset,
                            const FinetuneConfig& config, std::uint64_t seed) {
  config.validate();
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!dataset[i].label) throw ArgumentError("few-shot evaluation needs labeled clouds");
    by_class[*dataset[i].label].push_back(i);
  }
  std::vector<int> eligible;
  for (const auto& [label, items] : by_class) {
    if (items.size() >= config.shot + config.query) eligible.push_back(label);
  }
  if (eligible.size() < config.way) {
    throw ArgumentError("few-shot: need " + std::to_string(config.way) + " classes with at least " +
                        std::to_string(config.shot + config.query) + " samples, found " +
                        std::to_string(eligible.size()));
  }

  // Frozen backbone: one feature per cloud, computed lazily.
  const TrainConfig no_aug;
  std::vector<std::optional<Tensor>> features(dataset.size());
  auto feature_of = [&](std::size_t i) -> const Tensor& {
    if (!features[i]) features[i] = global_feature(model, prepare_pyramid(dataset[i], model.config(), nullptr, no_aug));
    return *features[i];
  };

  TrainConfig tc = config.as_train_config();
  tc.epochs = config.fewshot_epochs;
  tc.warmup_epochs = 0;

  Rng rng(seed);
  FewShotResult result;
  for (std::size_t trial = 0; trial < config.trials; ++trial) {
    std::vector<std::size_t> class_order(eligible.size());
    std::iota(class_order.begin(), class_order.end(), 0);
    shuffle(class_order, rng);
    std::vector<std::size_t> train_idx, test_idx;
    std::vector<int> train_lab, test_lab;
    for (std::size_t w = 0; w < config.way; ++w) {
      auto items = by_class[eligible[class_order[w]]];
      shuffle(items, rng);
      for (std::size_t j = 0; j < config.shot + config.query; ++j) {
        (j < config.shot ? train_idx : test_idx).push_back(items[j]);
        (j < config.shot ? train_lab : test_lab).push_back(static_cast<int>(w));
      }
    }
    std::vector<Tensor> train_feats, test_feats;
    for (auto i : train_idx) train_feats.push_back(feature_of(i));
    for (auto i : test_idx) test_feats.push_back(feature_of(i));
    const Tensor x_train = concat_rows(train_feats);
    const Tensor x_test = concat_rows(test_feats);

    ParamStore store(Rng::mix(seed, trial));
    const auto head = ClassifierHead::create(store, "cls", x_train.size(1), model.config().head_hidden, config.way);
    AdamW optimizer(store.named(), tc.weight_decay, tc.beta1, tc.beta2, tc.adam_eps);
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
      store.zero_grad();
      GradientTape tape;
      Tensor loss = cross_entropy(head(x_train), train_lab);
      tape.backward(loss);
      optimizer.step(lr_at(epoch, tc));
    }
    const Tensor logits = head(x_test);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < test_lab.size(); ++r) {
      if (static_cast<int>(argmax_row(logits.data().subspan(r * config.way, config.way))) == test_lab[r]) ++correct;
    }
    result.accuracies.push_back(static_cast<double>(correct) / static_cast<double>(test_lab.size()));
  }
  const double n = static_cast<double>(result.accuracies.size());
  result.mean = std::accumulate(result.accuracies.begin(), result.accuracies.end(), 0.0) / n;
  double var = 0.0;
  for (double a : result.accuracies) var += (a - result.mean) * (a - result.mean);
  result.stddev = std::sqrt(var / n);
  return result;
}

}  // namespace mslr
