#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mslr/backbone.hpp"
#include "mslr/config.hpp"
#include "mslr/geometry.hpp"
#include "mslr/gradcheck.hpp"
#include "mslr/nn.hpp"

namespace mslr {

struct Moments {
  std::vector<double> first;
  std::vector<double> second;

  bool operator==(const Moments&) const = default;
};

struct OptimState {
  std::uint64_t step = 0;
  std::map<std::string, Moments> moments;  // keyed by parameter path

  bool operator==(const OptimState&) const = default;
};

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);

  // Applies one update at learning rate `lr` from the accumulated gradients.
  // Throws NumericError, leaving parameters and state untouched, if any
  // gradient is non-finite.
  void step(double lr);

  const OptimState& state() const { return state_; }
  void load_state(OptimState state);
  const std::vector<NamedTensor>& params() const { return params_; }

 private:
  std::vector<NamedTensor> params_;
  OptimState state_;
  double weight_decay_, beta1_, beta2_, eps_;
};

// Linear warmup to base_lr over warmup_epochs, then cosine decay reaching
// min_lr on the final epoch.
double lr_at(std::size_t epoch, const TrainConfig& config);

struct AugmentParams {
  double scale = 1.0;
  Point3 translation{0.0, 0.0, 0.0};
};

AugmentParams draw_augmentation(Rng& rng, const TrainConfig& config);
PointCloud apply_augmentation(const PointCloud& cloud, const AugmentParams& params);
// p <- s * p + t with s ~ U[scale_min, scale_max], t_d ~ U[-translate, translate].
PointCloud augment(const PointCloud& cloud, Rng& rng, const TrainConfig& config);

struct LogEntry {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::optional<double> accuracy;
};

struct RunLog {
  std::vector<LogEntry> entries;
};

struct PretrainHooks {
  // Called after epochs matching the checkpoint interval, after the last
  // epoch, and with the restored last-good parameters when training aborts on
  // a non-finite loss.
  std::function<void(std::size_t epoch, const AdamW& optimizer)> save_checkpoint;
  std::function<void(const LogEntry&)> on_step;
};

// Input pipeline shared by every protocol: normalize, optionally augment,
// build the scale pyramid.
ScalePyramid prepare_pyramid(const PointCloud& cloud, const ModelConfig& model, Rng* augment_rng,
                             const TrainConfig& config);

// Masked-reconstruction pretraining. Updates `model` in place and returns the
// per-step log (one entry per optimizer step).
RunLog pretrain_run(MaskedAutoencoder& model, AdamW& optimizer, const std::vector<PointCloud>& dataset,
                    const TrainConfig& config, std::uint64_t seed, const PretrainHooks& hooks = {});

// Parameters the pretraining optimizer updates (everything but the classifier).
std::vector<NamedTensor> pretrain_parameters(const MaskedAutoencoder& model);

// Three-layer MLP on the 2 * C_S global feature.
struct ClassifierHead {
  Linear fc1, fc2, fc3;
  LayerNorm norm;

  static ClassifierHead create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                               std::size_t classes);
  std::size_t classes() const { return fc3.out(); }
  Tensor operator()(const Tensor& features) const;
};

struct FinetuneResult {
  RunLog log;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Parameters updated while fine-tuning: encoder path plus classifier.
std::vector<NamedTensor> finetune_parameters(const MaskedAutoencoder& model);

// Supervised fine-tuning without masking. The classifier lives in the model's
// parameter store under "cls.".
FinetuneResult finetune_classify(MaskedAutoencoder& model, ClassifierHead& head,
                                 const std::vector<PointCloud>& train_set, const std::vector<PointCloud>& test_set,
                                 const FinetuneConfig& config, std::uint64_t seed);

double classification_accuracy(const MaskedAutoencoder& model, const ClassifierHead& head,
                               const std::vector<PointCloud>& dataset);

struct FewShotResult {
  std::vector<double> accuracies;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation over trials
};

// n-way m-shot protocol on frozen backbone features: per trial, sample `way`
// classes, `shot` training and `query` test clouds per class, train a fresh
// classifier head and score it on the query clouds.
FewShotResult few_shot_eval(const MaskedAutoencoder& model, const std::vector<PointCloud>& dataset,
                            const FinetuneConfig& config, std::uint64_t seed);

}  // namespace mslr
