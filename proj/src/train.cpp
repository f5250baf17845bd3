#include "fvig/train.hpp"

#include "fvig/autodiff.hpp"
#include "fvig/errors.hpp"
#include "fvig/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace fvig {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(lr_min >= 0.0) || lr_min > lr) throw ConfigError("lr_min must lie in [0, lr]");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
}

bool TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "batch_size") {
    batch_size = parse_size(key, value);
  } else if (key == "lr") {
    lr = parse_double(key, value);
  } else if (key == "lr_min") {
    lr_min = parse_double(key, value);
  } else if (key == "epochs") {
    epochs = parse_size(key, value);
  } else if (key == "weight_decay") {
    weight_decay = parse_double(key, value);
  } else if (key == "seed") {
    seed = parse_size(key, value);
  } else {
    return false;
  }
  return true;
}

KeyValues TrainConfig::to_key_values() const {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return {{"batch_size", std::to_string(batch_size)}, {"lr", num(lr)},
          {"lr_min", num(lr_min)},                    {"epochs", std::to_string(epochs)},
          {"weight_decay", num(weight_decay)},        {"seed", std::to_string(seed)}};
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B, C], got " + shape_to_string(logits.shape()));
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
  }
  for (std::size_t label : labels) {
    if (label >= c) throw RangeError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
  }
  const auto& x = logits.values();
  Eigen::ArrayXd probs(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const auto row = x.segment(static_cast<Eigen::Index>(i * c), static_cast<Eigen::Index>(c));
    const double m = row.maxCoeff();
    const Eigen::ArrayXd e = (row - m).exp();
    const double s = e.sum();
    probs.segment(static_cast<Eigen::Index>(i * c), static_cast<Eigen::Index>(c)) = e / s;
    total += m + std::log(s) - row[static_cast<Eigen::Index>(labels[i])];
  }
  std::vector<std::size_t> kept(labels.begin(), labels.end());
  Eigen::ArrayXd out(1);
  out[0] = total / static_cast<double>(b);
  return make_result("cross_entropy", {}, std::move(out), {logits},
                     [probs = std::move(probs), kept = std::move(kept), b, c](const Eigen::ArrayXd& g,
                                                                              std::span<const ImplPtr> in) {
                       Eigen::ArrayXd d = probs;
                       for (std::size_t i = 0; i < b; ++i) d[static_cast<Eigen::Index>(i * c + kept[i])] -= 1.0;
                       in[0]->accumulate_grad(d * (g[0] / static_cast<double>(b)));
                     });
}

double train_step(FViGModel& model, OptimizerState& state, const Tensor& images,
                  std::span<const std::size_t> labels, double lr, std::mt19937_64& rng) {
  auto params = model.parameters();
  for (auto& p : params) p.clear_grad();
  const Tensor loss = cross_entropy(model.forward(images, true, &rng), labels);
  backward(loss);
  adamw_step(params, state, lr);
  return loss.item();
}

std::vector<EpochLog> train(FViGModel& model, const DatasetSplit& split, const TrainConfig& config,
                            const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (split.size() == 0) throw DatasetError("train: empty training split");
  if (split.num_classes() != model.config().num_classes) {
    throw ConfigError("train: dataset has " + std::to_string(split.num_classes()) + " classes, model expects " +
                      std::to_string(model.config().num_classes));
  }
  // Separate stream from model initialisation, which consumes `seed` itself.
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamWHyper hyper;
  hyper.lr = config.lr;
  hyper.weight_decay = config.weight_decay;
  auto state = OptimizerState::for_params(model.parameters(), hyper);

  const std::size_t steps_per_epoch = (split.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochLog> log;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double lr = config.lr;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::span<const std::size_t> batch(order.data() + start,
                                               std::min(config.batch_size, order.size() - start));
      std::vector<std::size_t> labels;
      for (std::size_t i : batch) labels.push_back(split.items[i].label);
      lr = cosine_lr(step, total_steps, config.lr, config.lr_min);
      train_step(model, state, stack_images(split, batch), labels, lr, rng);
      ++step;
    }
    const Predictions pred = predict(model, split, config.batch_size);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
      Eigen::Index arg = 0;
      pred.logits.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
      if (static_cast<std::size_t>(arg) == split.items[i].label) ++correct;
    }
    EpochLog entry{epoch, pred.loss, static_cast<double>(correct) / static_cast<double>(split.size()), lr};
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  for (auto& p : model.parameters()) p.clear_grad();
  return log;
}

std::string format_train_log(const std::vector<EpochLog>& log) {
  std::string out = "epoch,loss,acc,lr\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.loss, e.accuracy, e.lr);
    out += buf;
  }
  return out;
}

Predictions predict(const FViGModel& model, const DatasetSplit& split, std::size_t batch_size) {
  if (split.size() == 0) throw DatasetError("predict: empty split");
  if (batch_size == 0) throw ConfigError("predict: batch_size must be positive");
  NoGradGuard no_grad;
  Predictions out;
  out.logits.resize(static_cast<Eigen::Index>(split.size()), static_cast<Eigen::Index>(model.config().num_classes));
  double loss_sum = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < split.size(); start += batch_size) {
    idx.clear();
    std::vector<std::size_t> labels;
    for (std::size_t i = start; i < std::min(split.size(), start + batch_size); ++i) {
      idx.push_back(i);
      labels.push_back(split.items[i].label);
    }
    const Tensor logits = model.forward(stack_images(split, idx));
    loss_sum += cross_entropy(logits, labels).item() * static_cast<double>(idx.size());
    const Eigen::Index c = out.logits.cols();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (Eigen::Index k = 0; k < c; ++k) {
        out.logits(static_cast<Eigen::Index>(idx[r]), k) = logits.values()[static_cast<Eigen::Index>(r) * c + k];
      }
    }
  }
  out.loss = loss_sum / static_cast<double>(split.size());
  return out;
}

MetricsReport evaluate(const FViGModel& model, const DatasetSplit& split, std::size_t batch_size) {
  const Predictions pred = predict(model, split, batch_size);
  Eigen::MatrixXd probs = pred.logits;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const double m = probs.row(i).maxCoeff();
    probs.row(i) = (probs.row(i).array() - m).exp().matrix();
    probs.row(i) /= probs.row(i).sum();
  }
  std::vector<std::size_t> labels;
  for (const auto& item : split.items) labels.push_back(item.label);
  return compute_metrics(probs, labels, split.class_names);
}

}  // namespace fvig
