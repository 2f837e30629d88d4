#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gliopipe/augment.hpp"
#include "gliopipe/dataset.hpp"
#include "gliopipe/evaluate.hpp"
#include "gliopipe/nn/checkpoint.hpp"
#include "gliopipe/nn/resnet.hpp"

namespace gliopipe {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  int max_epochs = 150;
  int early_stop_patience = 15;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  double min_lr = 1e-6;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double tune_loss = 0.0;
  double tune_auroc = 0.0;
  double lr = 0.0;
};

struct History {
  std::vector<EpochRecord> records;

  /// CSV `epoch,train_loss,tune_loss,tune_auroc,lr`.
  std::string to_csv() const;
  static History from_csv(std::string_view text);
  nlohmann::json to_json() const;
  static History from_json(const nlohmann::json& j);
  /// Earliest epoch with the minimum tuning loss; -1 when empty.
  int best_epoch() const;
};

/// Loss of one sample in the stable softplus form:
/// y = 1: w_pos * softplus(-z); y = 0: w_neg * softplus(z).
double weighted_bce(double logit, int label, double w_pos, double w_neg);
/// Mean over the batch; fills dL/dz when `grad` is non-null.
double weighted_bce_batch(std::span<const double> logits, std::span<const int> labels, const ClassWeights& w,
                          std::vector<double>* grad = nullptr);
double sigmoid(double z);

/// Checkpoint / plateau / early-stop bookkeeping driven by tuning loss.
class EpochController {
 public:
  explicit EpochController(const TrainConfig& config);

  struct Decision {
    bool improved = false;
    bool stop = false;
    bool lr_reduced = false;
    double next_lr = 0.0;
  };

  /// Call once per completed epoch, in order. Throws NumericalError on a non-finite loss.
  Decision observe(double tune_loss);
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  double lr() const { return lr_; }
  int epochs_seen() const { return epoch_; }

 private:
  TrainConfig config_;
  double lr_;
  double best_loss_;
  int best_epoch_ = -1;
  int epoch_ = 0;
  int since_improvement_ = 0;
  int since_plateau_reset_ = 0;
};

struct Sample {
  std::string patient_id;
  ImageTensor image;  // rank 2 (x, y) or rank 3 (x, y, z)
  int label = -1;     // -1 when the label is withheld (test partition)
};

using SampleSet = std::vector<Sample>;

/// Stacks images into a (1, N, D, H, W) batch; all images must share dims.
nn::Tensor<float> make_batch(const SampleSet& samples, std::span<const std::size_t> indices, int dim);
nn::Tensor<float> make_batch(const std::vector<const ImageTensor*>& images, int dim);

/// Single optimization step on an explicit batch (used by the training loop
/// and by the overfit sanity check).
class Trainer {
 public:
  Trainer(nn::ResNet<float>& model, const TrainConfig& config, const ClassWeights& weights);

  /// Forward in training mode, backward, AdamW update. Returns the batch loss
  /// before the update; throws NumericalError on a non-finite loss.
  double step(const nn::Tensor<float>& batch, std::span<const int> labels, RandomStream* dropout_stream);
  nn::AdamW& optimizer() { return optimizer_; }

 private:
  nn::ResNet<float>& model_;
  ClassWeights weights_;
  nn::AdamW optimizer_;
};

struct TrainOptions {
  AugmentConfig augment;
  std::string config_hash;
  /// Where to write the best checkpoint whenever it improves (optional).
  std::filesystem::path checkpoint_path;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  nn::Checkpoint best;
  History history;
};

/// Trains with seeded shuffling and train-only augmentation, keeping the
/// lowest-tuning-loss weights. On return `model` holds the best weights.
TrainResult train_model(nn::ResNet<float>& model, const SampleSet& train_set, const SampleSet& tune_set,
                        const ClassWeights& weights, const TrainConfig& config, const TrainOptions& options = {});

/// Eval-mode logits, batched.
std::vector<double> predict_logits(nn::ResNet<float>& model, const SampleSet& samples, std::size_t batch_size = 16);
/// Per-patient sigmoid scores, with the sample labels carried through.
PredictionTable predict(nn::ResNet<float>& model, const SampleSet& samples, std::size_t batch_size = 16);

}  // namespace gliopipe
