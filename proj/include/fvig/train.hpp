#pragma once

#include "fvig/config.hpp"
#include "fvig/dataset.hpp"
#include "fvig/metrics.hpp"
#include "fvig/model.hpp"
#include "fvig/optim.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fvig {

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr = 3.125e-5;  // 2e-3 / 64
  double lr_min = 0.0;
  std::size_t epochs = 100;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
  /// Returns false when `key` is not a training setting.
  bool set(const std::string& key, const std::string& value);
  KeyValues to_key_values() const;
};

/// Mean over the batch of -log softmax(logits)[label], computed with
/// log-sum-exp. logits [B, C]; throws RangeError for a label outside [0, C).
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // evaluation-mode loss over the whole training split
  double accuracy = 0.0;  // evaluation-mode accuracy over the whole training split
  double lr = 0.0;        // learning rate of the epoch's last step
};

/// One optimiser step on a fixed batch. Returns the batch loss before the update.
double train_step(FViGModel& model, OptimizerState& state, const Tensor& images,
                  std::span<const std::size_t> labels, double lr, std::mt19937_64& rng);

/// Seeded shuffled mini-batches, AdamW with a per-step cosine schedule,
/// dropout active. After every epoch the model is scored on the training
/// split in evaluation mode and `on_epoch` (when set) receives the result.
std::vector<EpochLog> train(FViGModel& model, const DatasetSplit& split, const TrainConfig& config,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

/// CSV with header "epoch,loss,acc,lr"; numbers written with 17 significant digits.
std::string format_train_log(const std::vector<EpochLog>& log);

struct Predictions {
  Eigen::MatrixXd logits;  // [samples, classes]
  double loss = 0.0;       // mean cross-entropy
};

/// Evaluation-mode logits for the whole split, batched.
Predictions predict(const FViGModel& model, const DatasetSplit& split, std::size_t batch_size = 16);

/// Metrics computed on softmax probabilities of `predict`.
MetricsReport evaluate(const FViGModel& model, const DatasetSplit& split, std::size_t batch_size = 16);

}  // namespace fvig
