#ifndef LLAB_TRAINER_HPP
#define LLAB_TRAINER_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "llab/autodiff.hpp"
#include "llab/data.hpp"
#include "llab/error.hpp"
#include "llab/numcore.hpp"

namespace llab {

/// Learning rate held until start_epoch, then linear down to
/// final_fraction * lr at end_epoch, constant afterwards. Epochs are 0-based.
struct LinearDecay {
  std::size_t start_epoch = 0;
  std::size_t end_epoch = 1;
  double final_fraction = 0.01;
};

struct TrainConfig {
  std::size_t batch_size = 128;
  double lr = 0.05;
  double weight_decay = 5e-4;
  std::size_t max_epochs = 150;
  double plateau_eps = 1e-4;
  std::size_t plateau_epochs = 5;
  std::optional<LinearDecay> schedule;
  bool linear_scale_lr = false;
  std::size_t reference_batch = 128;
  std::uint64_t seed = 0;
  // Test hook: DataTerm::none trains on the weight-decay penalty alone.
  DataTerm data_term = DataTerm::cross_entropy;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
    if (linear_scale_lr && reference_batch < 1)
      throw ConfigError("train.reference_batch must be >= 1");
    if (schedule && schedule->start_epoch >= schedule->end_epoch)
      throw ConfigError("train.schedule: start_epoch must be < end_epoch");
  }
};

struct EpochRecord {
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double lr_used = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_train_loss_epoch = 0;
  std::size_t best_test_acc_epoch = 0;
  bool plateau_stop = false;
};

struct TrainResult {
  ParamVector theta;
  TrainHistory history;
};

/// Base rate after optional linear scaling by batch_size / reference_batch.
inline double base_lr(const TrainConfig& cfg) {
  if (!cfg.linear_scale_lr) return cfg.lr;
  return cfg.lr * static_cast<double>(cfg.batch_size) / static_cast<double>(cfg.reference_batch);
}

inline double linear_decay_lr(std::size_t epoch, double lr, const LinearDecay& s) {
  if (s.start_epoch >= s.end_epoch)
    throw ConfigError("linear decay: start_epoch must be < end_epoch");
  if (epoch <= s.start_epoch) return lr;
  if (epoch >= s.end_epoch) return s.final_fraction * lr;
  const double frac = static_cast<double>(epoch - s.start_epoch) /
                      static_cast<double>(s.end_epoch - s.start_epoch);
  return lr * (1.0 - (1.0 - s.final_fraction) * frac);
}

inline double linear_decay_lr(std::size_t epoch, const TrainConfig& cfg) {
  if (!cfg.schedule) throw ConfigError("linear_decay_lr: schedule is not linear_decay");
  return linear_decay_lr(epoch, base_lr(cfg), *cfg.schedule);
}

inline double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.schedule ? linear_decay_lr(epoch, cfg) : base_lr(cfg);
}

/// Shuffled disjoint minibatches covering [0, n); the last may be partial.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                           Rng& rng) {
  if (batch_size < 1) throw ParameterError("epoch_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

struct Evaluation {
  double loss = 0.0;   // mean cross-entropy, plus wd * |theta|^2 when requested
  double err01 = 0.0;  // percent
  double acc = 0.0;    // percent
};

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = c;
  return best;
}

inline Evaluation evaluate(const ModelSpec& spec, const ParamVector& theta, const Dataset& ds,
                           double wd = 0.0, bool include_penalty = false) {
  if (ds.size() == 0) throw ParameterError("evaluate: empty dataset");
  if (ds.dim() != spec.input_dim) throw DimensionError("evaluate: dataset dim != input_dim");
  const Matrix logits = forward(spec, theta, ds.X);
  std::vector<double> lse;
  detail::softmax_rows(logits, &lse);
  double ce = 0.0;
  std::size_t correct = 0;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const auto y = static_cast<std::size_t>(ds.y[n]);
    ce += lse[n] - logits(n, y);
    if (argmax_row(logits.row(n)) == y) ++correct;
  }
  Evaluation e;
  e.loss = ce / static_cast<double>(ds.size());
  if (include_penalty) e.loss += wd * detail::squared_norm(theta);
  e.acc = 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
  e.err01 = 100.0 - e.acc;
  return e;
}

inline std::uint64_t init_seed(const TrainConfig& cfg) {
  return derive_seed(cfg.seed, stream_id("init"));
}

inline ParamVector initial_params(const ModelSpec& spec, const TrainConfig& cfg) {
  Rng rng(init_seed(cfg));
  return he_init(spec, rng);
}

/// Minibatch SGD from a given starting point.
inline TrainResult sgd_train(const ModelSpec& spec, const Dataset& train, const Dataset& test,
                             const TrainConfig& cfg, ParamVector theta) {
  cfg.validate();
  spec.validate();
  train.validate();
  test.validate();
  if (train.dim() != spec.input_dim || test.dim() != spec.input_dim)
    throw DimensionError("sgd_train: dataset dim != model input_dim");
  if (train.num_classes > spec.num_classes || test.num_classes > spec.num_classes)
    throw DimensionError("sgd_train: dataset has more classes than the model");
  detail::check_theta(spec, theta);

  Rng shuffle_rng(derive_seed(cfg.seed, stream_id("shuffle")));
  TrainResult result{theta, {}};
  double best_loss = std::numeric_limits<double>::infinity();
  double best_acc = -1.0;
  std::size_t flat_run = 0;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, cfg);
    for (const auto& rows : epoch_batches(train.size(), cfg.batch_size, shuffle_rng)) {
      const Batch batch = train.batch(rows);
      const LossGrad lg = loss_grad(spec, theta, batch, cfg.weight_decay, cfg.data_term);
      if (!std::isfinite(lg.loss)) throw DivergenceError(epoch + 1, "non-finite minibatch loss");
      if (lr != 0.0) axpy(-lr, lg.grad, theta);
    }

    EpochRecord rec;
    rec.lr_used = lr;
    const Evaluation tr = evaluate(spec, theta, train, cfg.weight_decay, true);
    rec.train_loss = cfg.data_term == DataTerm::none
                         ? cfg.weight_decay * detail::squared_norm(theta)
                         : tr.loss;
    if (!std::isfinite(rec.train_loss)) throw DivergenceError(epoch + 1, "non-finite training loss");
    rec.train_acc = tr.acc;
    const Evaluation te = evaluate(spec, theta, test);
    rec.test_loss = te.loss;
    rec.test_acc = te.acc;

    auto& h = result.history;
    if (!h.epochs.empty() && std::abs(rec.train_loss - h.epochs.back().train_loss) < cfg.plateau_eps)
      ++flat_run;
    else
      flat_run = 0;
    h.epochs.push_back(rec);
    if (rec.train_loss < best_loss) {
      best_loss = rec.train_loss;
      h.best_train_loss_epoch = epoch;
      result.theta = theta;
    }
    if (rec.test_acc > best_acc) {
      best_acc = rec.test_acc;
      h.best_test_acc_epoch = epoch;
    }
    if (cfg.plateau_epochs > 0 && flat_run >= cfg.plateau_epochs) {
      h.plateau_stop = true;
      break;
    }
  }
  return result;
}

/// Minibatch SGD from the seeded He initialization.
inline TrainResult sgd_train(const ModelSpec& spec, const Dataset& train, const Dataset& test,
                             const TrainConfig& cfg) {
  return sgd_train(spec, train, test, cfg, initial_params(spec, cfg));
}

}  // namespace llab

#endif  // LLAB_TRAINER_HPP
