#include "gliopipe/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "gliopipe/error.hpp"
#include "gliopipe/util.hpp"

namespace gliopipe {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("plateau_factor must lie in (0,1)");
  if (plateau_patience < 1) throw ConfigError("plateau_patience must be positive");
  if (!(min_lr > 0.0)) throw ConfigError("min_lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

// ---------------------------------------------------------------- history

std::string History::to_csv() const {
  std::string out = "epoch,train_loss,tune_loss,tune_auroc,lr\n";
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.tune_loss, r.tune_auroc,
                  r.lr);
    out += buf;
  }
  return out;
}

History History::from_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  History h;
  bool header = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto c = split_csv_line(line);
    if (c.size() != 5) throw DataError("history row has " + std::to_string(c.size()) + " fields, expected 5");
    h.records.push_back({std::stoi(c[0]), std::stod(c[1]), std::stod(c[2]), std::stod(c[3]), std::stod(c[4])});
  }
  return h;
}

nlohmann::json History::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : records)
    j.push_back({{"epoch", r.epoch},
                 {"train_loss", r.train_loss},
                 {"tune_loss", r.tune_loss},
                 {"tune_auroc", r.tune_auroc},
                 {"lr", r.lr}});
  return j;
}

History History::from_json(const nlohmann::json& j) {
  History h;
  for (const auto& r : j)
    h.records.push_back({r.at("epoch").get<int>(), r.at("train_loss").get<double>(), r.at("tune_loss").get<double>(),
                         r.at("tune_auroc").get<double>(), r.at("lr").get<double>()});
  return h;
}

int History::best_epoch() const {
  int best = -1;
  double loss = std::numeric_limits<double>::infinity();
  for (const auto& r : records)
    if (r.tune_loss < loss) {
      loss = r.tune_loss;
      best = r.epoch;
    }
  return best;
}

// ---------------------------------------------------------------- loss

namespace {
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
}  // namespace

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double weighted_bce(double logit, int label, double w_pos, double w_neg) {
  return label == 1 ? w_pos * softplus(-logit) : w_neg * softplus(logit);
}

double weighted_bce_batch(std::span<const double> logits, std::span<const int> labels, const ClassWeights& w,
                          std::vector<double>* grad) {
  if (logits.size() != labels.size() || logits.empty()) throw Error("loss: logits and labels must match and be non-empty");
  const double n = static_cast<double>(logits.size());
  double total = 0.0;
  if (grad != nullptr) grad->assign(logits.size(), 0.0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    total += weighted_bce(logits[i], labels[i], w.positive, w.negative);
    if (grad != nullptr) {
      const double p = sigmoid(logits[i]);
      (*grad)[i] = (labels[i] == 1 ? w.positive * (p - 1.0) : w.negative * p) / n;
    }
  }
  return total / n;
}

// ---------------------------------------------------------------- controller

EpochController::EpochController(const TrainConfig& config)
    : config_(config), lr_(config.learning_rate), best_loss_(std::numeric_limits<double>::infinity()) {
  config_.validate();
}

EpochController::Decision EpochController::observe(double tune_loss) {
  if (!std::isfinite(tune_loss))
    throw NumericalError("non-finite tuning loss at epoch " + std::to_string(epoch_));
  Decision d;
  if (tune_loss < best_loss_) {
    best_loss_ = tune_loss;
    best_epoch_ = epoch_;
    since_improvement_ = 0;
    since_plateau_reset_ = 0;
    d.improved = true;
  } else {
    ++since_improvement_;
    ++since_plateau_reset_;
    if (since_plateau_reset_ >= config_.plateau_patience) {
      const double reduced = std::max(lr_ * config_.plateau_factor, config_.min_lr);
      d.lr_reduced = reduced < lr_;
      lr_ = reduced;
      since_plateau_reset_ = 0;
    }
  }
  ++epoch_;
  d.stop = since_improvement_ >= config_.early_stop_patience || epoch_ >= config_.max_epochs;
  d.next_lr = lr_;
  return d;
}

// ---------------------------------------------------------------- batches

nn::Tensor<float> make_batch(const std::vector<const ImageTensor*>& images, int dim) {
  if (images.empty()) throw Error("empty batch");
  const auto& dims = images.front()->dims;
  if (static_cast<int>(dims.size()) != dim)
    throw DataError("geometry mismatch: model expects rank-" + std::to_string(dim) + " inputs, got rank " +
                    std::to_string(dims.size()));
  nn::Shape s{1, images.size(), dim == 3 ? dims[2] : 1, dims[1], dims[0]};
  nn::Tensor<float> t(s);
  const std::size_t S = s.spatial();
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->dims != dims) throw DataError("geometry mismatch: batch images differ in shape");
    std::copy(images[n]->values.begin(), images[n]->values.end(), t.data.begin() + static_cast<std::ptrdiff_t>(n * S));
  }
  return t;
}

nn::Tensor<float> make_batch(const SampleSet& samples, std::span<const std::size_t> indices, int dim) {
  std::vector<const ImageTensor*> images;
  for (std::size_t i : indices) images.push_back(&samples.at(i).image);
  return make_batch(images, dim);
}

// ---------------------------------------------------------------- trainer

namespace {
nn::AdamW::Options adam_options(const TrainConfig& c) {
  nn::AdamW::Options o;
  o.lr = c.learning_rate;
  o.weight_decay = c.weight_decay;
  return o;
}
}  // namespace

Trainer::Trainer(nn::ResNet<float>& model, const TrainConfig& config, const ClassWeights& weights)
    : model_(model), weights_(weights), optimizer_(model.parameters(), adam_options(config)) {}

double Trainer::step(const nn::Tensor<float>& batch, std::span<const int> labels, RandomStream* dropout_stream) {
  model_.zero_grad();
  const std::vector<float> logits = model_.forward(batch, nn::Mode::train, dropout_stream);
  const std::vector<double> z(logits.begin(), logits.end());
  std::vector<double> grad;
  const double loss = weighted_bce_batch(z, labels, weights_, &grad);
  if (!std::isfinite(loss)) throw NumericalError("non-finite training loss");
  model_.backward(std::vector<float>(grad.begin(), grad.end()));
  optimizer_.step();
  return loss;
}

// ---------------------------------------------------------------- loop

namespace {

int sample_dim(const SampleSet& s) {
  return static_cast<int>(s.front().image.dims.size());
}

void require_two_classes(const SampleSet& s, const char* name) {
  if (s.empty()) throw DataError(std::string(name) + " partition is empty");
  bool pos = false, neg = false;
  for (const auto& x : s) {
    if (x.label == 1) pos = true;
    else if (x.label == 0) neg = true;
    else throw DataError(std::string(name) + " partition has an unlabeled sample " + x.patient_id);
  }
  if (!pos || !neg) throw DataError(std::string(name) + " partition contains a single class");
}

}  // namespace

std::vector<double> predict_logits(nn::ResNet<float>& model, const SampleSet& samples, std::size_t batch_size) {
  std::vector<double> out;
  if (samples.empty()) return out;
  const int dim = model.spec().dim;
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, samples.size() - b));
    std::iota(idx.begin(), idx.end(), b);
    const auto logits = model.forward(make_batch(samples, idx, dim), nn::Mode::eval);
    out.insert(out.end(), logits.begin(), logits.end());
  }
  return out;
}

PredictionTable predict(nn::ResNet<float>& model, const SampleSet& samples, std::size_t batch_size) {
  const auto logits = predict_logits(model, samples, batch_size);
  PredictionTable t;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(logits[i])) throw NumericalError("non-finite logit for patient " + samples[i].patient_id);
    t.rows.push_back({samples[i].patient_id, sigmoid(logits[i]), samples[i].label});
  }
  return t;
}

TrainResult train_model(nn::ResNet<float>& model, const SampleSet& train_set, const SampleSet& tune_set,
                        const ClassWeights& weights, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  options.augment.validate();
  require_two_classes(train_set, "train");
  require_two_classes(tune_set, "tune");
  const int dim = model.spec().dim;
  if (sample_dim(train_set) != dim || sample_dim(tune_set) != dim)
    throw DataError("geometry mismatch: " + model.spec().name() + " given rank-" +
                    std::to_string(sample_dim(train_set)) + " samples");

  Trainer trainer(model, config, weights);
  EpochController controller(config);
  TrainResult result;
  std::vector<int> tune_labels;
  for (const auto& s : tune_set) tune_labels.push_back(s.label);
  const std::uint64_t augment_seed = mix_key(options.augment.master_seed, config.seed);

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 0;; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    RandomStream shuffle(mix_key(config.seed, 0x5B0FF1EULL, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    const double lr = trainer.optimizer().lr();
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size, ++batch_index) {
      const std::size_t n = std::min(config.batch_size, order.size() - b);
      std::vector<ImageTensor> augmented;
      augmented.reserve(n);
      std::vector<int> labels;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = order[b + k];
        RandomStream rs = stream_for(augment_seed, static_cast<std::uint64_t>(epoch), idx);
        augmented.push_back(apply_pipeline(train_set[idx].image, options.augment, rs));
        labels.push_back(train_set[idx].label);
      }
      std::vector<const ImageTensor*> ptrs;
      for (const auto& a : augmented) ptrs.push_back(&a);
      RandomStream dropout(mix_key(config.seed, static_cast<std::uint64_t>(epoch), 0xD209ULL + batch_index));
      double loss;
      try {
        loss = trainer.step(make_batch(ptrs, dim), labels, &dropout);
      } catch (const NumericalError&) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      loss_sum += loss * static_cast<double>(n);
    }

    const auto tune_logits = predict_logits(model, tune_set, config.batch_size);
    const double tune_loss = weighted_bce_batch(tune_logits, tune_labels, weights);
    std::vector<double> tune_scores;
    for (double z : tune_logits) tune_scores.push_back(sigmoid(z));
    const double tune_auc = std::isfinite(tune_loss) ? auroc(tune_scores, tune_labels) : 0.0;

    EpochRecord rec{epoch, loss_sum / static_cast<double>(train_set.size()), tune_loss, tune_auc, lr};
    result.history.records.push_back(rec);
    const auto decision = controller.observe(tune_loss);
    if (decision.improved) {
      result.best = nn::capture(model, &trainer.optimizer());
      result.best.epoch = epoch;
      result.best.tune_loss = tune_loss;
      result.best.config_hash = options.config_hash;
      result.best.history = result.history.to_json();
      if (!options.checkpoint_path.empty()) nn::write_checkpoint(options.checkpoint_path, result.best);
    }
    if (options.on_epoch) options.on_epoch(rec);
    trainer.optimizer().set_lr(decision.next_lr);
    if (decision.stop) break;
  }
  // The stored history covers the whole run, not just up to the best epoch.
  result.best.history = result.history.to_json();
  if (!options.checkpoint_path.empty()) nn::write_checkpoint(options.checkpoint_path, result.best);
  nn::restore(result.best, model);
  return result;
}

}  // namespace gliopipe
