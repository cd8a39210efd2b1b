#pragma once

// Adam, the epoch loop with validation-loss early stopping, evaluation and
// subject-wise cross-validation.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "diotic/dataset.hpp"
#include "diotic/model.hpp"
#include "diotic/rng.hpp"
#include "diotic/tensor.hpp"

namespace diotic {

struct TrainConfig {
  double learning_rate = 2e-5;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t early_stop_patience = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be non-negative");
    if (batch_size == 0 || max_epochs == 0 || early_stop_patience == 0)
      throw std::invalid_argument("TrainConfig: batch_size, max_epochs and early_stop_patience must be positive");
    if (early_stop_patience > max_epochs) throw std::invalid_argument("TrainConfig: patience exceeds max_epochs");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0))
      throw std::invalid_argument("TrainConfig: Adam moments must lie in [0, 1) and epsilon > 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
       {"early_stop_patience", c.early_stop_patience}, {"beta1", c.beta1}, {"beta2", c.beta2},
       {"epsilon", c.epsilon}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known{"learning_rate", "batch_size", "max_epochs", "early_stop_patience",
                                           "beta1", "beta2", "epsilon", "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("unknown train config key \"" + key + "\"");
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

// One bias-corrected Adam update using the gradients held by `params`.
// Parameters without a gradient buffer are treated as having zero gradient.
inline void adam_step(std::span<Tensor> params, AdamState& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].size() || (params[i].has_grad() && params[i].grad().size() != params[i].size()))
      throw DimensionError("adam_step: state/gradient shape mismatch for tensor " + std::to_string(i));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].mutable_data();
    const auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      theta[j] = static_cast<float>(theta[j] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
  }
}

// What train() needs from a model.
template <class M>
concept TrainableModel = requires(const M& m, Tape& tape, const Sample& s) {
  { m.parameters() } -> std::convertible_to<std::vector<Tensor>>;
  { m.sample_loss(tape, s) } -> std::same_as<Tensor>;
  { m.predict(s) } -> std::convertible_to<int>;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, const std::string& what)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;  // "early_stopping" or "max_epochs"
  std::optional<double> test_accuracy;
  double wall_clock_s = 0.0;
};

inline void to_json(nlohmann::json& j, const EpochRecord& e) {
  j = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_accuracy", e.val_accuracy}};
}

inline void to_json(nlohmann::json& j, const TrainReport& r) {
  j = {{"epochs", r.epochs},
       {"best_epoch", r.best_epoch},
       {"best_val_loss", r.best_val_loss},
       {"stop_reason", r.stop_reason},
       {"test_accuracy", r.test_accuracy ? nlohmann::json(*r.test_accuracy) : nlohmann::json(nullptr)},
       {"wall_clock_s", r.wall_clock_s}};
}

template <TrainableModel M>
double mean_loss(const M& model, std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("mean_loss: no samples");
  double total = 0.0;
  for (const auto& s : samples) {
    Tape tape(false);
    total += model.sample_loss(tape, s).item();
  }
  return total / static_cast<double>(samples.size());
}

// Fraction of samples whose predicted index equals the label.
template <TrainableModel M>
double evaluate(const M& model, std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  std::size_t correct = 0;
  for (const auto& s : samples) correct += model.predict(s) == s.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace detail {

inline std::vector<std::vector<float>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

inline void restore(std::vector<Tensor>& params, const std::vector<std::vector<float>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].mutable_data();
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

}  // namespace detail

// Minibatch Adam with a seeded per-epoch shuffle. The last partial batch is
// kept. After every epoch the validation loss is measured; the parameters
// with the lowest validation loss are restored into `model` on return.
template <TrainableModel M>
TrainReport train(M& model, std::span<const Sample> train_samples, std::span<const Sample> val_samples,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_samples.empty() || val_samples.empty()) throw std::invalid_argument("train: empty sample set");
  const auto started = std::chrono::steady_clock::now();

  std::vector<Tensor> params = model.parameters();
  AdamState adam;
  TrainReport report;
  std::vector<std::vector<float>> best = detail::snapshot(params);
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  Rng rng(derive_seed(cfg.seed, 0x7a1));
  std::vector<std::size_t> order(train_samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  report.stop_reason = "max_epochs";
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const float inv_batch = 1.0f / static_cast<float>(end - begin);
      for (auto& p : params) p.zero_grad();
      for (std::size_t i = begin; i < end; ++i) {
        Tape tape;
        const Tensor loss = model.sample_loss(tape, train_samples[order[i]]);
        if (!std::isfinite(loss.item())) throw TrainingDiverged(epoch, "non-finite training loss");
        epoch_loss += loss.item();
        tape.backward(scale(tape, loss, inv_batch));
      }
      adam_step(params, adam, cfg);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());
    rec.val_loss = mean_loss(model, val_samples);
    rec.val_accuracy = evaluate(model, val_samples);
    if (!std::isfinite(rec.val_loss)) throw TrainingDiverged(epoch, "non-finite validation loss");
    report.epochs.push_back(rec);

    if (rec.val_loss < best_loss) {
      best_loss = rec.val_loss;
      report.best_epoch = epoch;
      best = detail::snapshot(params);
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      report.stop_reason = "early_stopping";
      break;
    }
  }
  detail::restore(params, best);
  report.best_val_loss = best_loss;
  report.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

struct FoldResult {
  std::size_t fold_index = 0;
  std::optional<double> accuracy;
  std::optional<TrainReport> report;
  std::string error;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
};

struct CrossValReport {
  Task task = Task::aad;
  double window_s = 0.0;
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;
  double sd_accuracy = 0.0;  // sample standard deviation (n − 1)

  bool any_failed() const {
    return std::any_of(folds.begin(), folds.end(), [](const FoldResult& f) { return !f.accuracy; });
  }
};

inline void to_json(nlohmann::json& j, const FoldResult& f) {
  j = {{"fold", f.fold_index},
       {"accuracy", f.accuracy ? nlohmann::json(*f.accuracy) : nlohmann::json(nullptr)},
       {"n_train", f.n_train},
       {"n_val", f.n_val},
       {"n_test", f.n_test}};
  if (f.report) j["report"] = *f.report;
  if (!f.error.empty()) j["error"] = f.error;
}

inline void to_json(nlohmann::json& j, const CrossValReport& r) {
  j = {{"task", to_string(r.task)}, {"window_s", r.window_s},           {"folds", r.folds},
       {"mean_accuracy", r.mean_accuracy}, {"sd_accuracy", r.sd_accuracy}};
}

// Mean and n−1 standard deviation.
inline std::pair<double, double> mean_and_sd(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double sq = 0.0;
  for (double x : xs) sq += (x - mean) * (x - mean);
  return {mean, std::sqrt(sq / static_cast<double>(xs.size() - 1))};
}

struct CrossValOptions {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t split_seed = 0;
  std::uint64_t sample_seed = 0;
  std::vector<std::size_t> folds;  // empty = all 7
  std::size_t jobs = 1;
  // Called with each finished fold's trained model, e.g. to write a checkpoint.
  std::function<void(const FoldSplit&, const DualEncoder&, const FoldResult&)> on_fold_done;
};

inline FoldResult run_fold(const Dataset& data, const FoldSplit& split, double window_s, Task task,
                           const CrossValOptions& opt, DualEncoder* trained = nullptr) {
  FoldResult result;
  result.fold_index = split.fold_index;
  try {
    const auto train_set = make_samples(data.load(split.train_subjects), window_s, task, opt.sample_seed);
    const auto val_set = make_samples(data.load(split.val_subjects), window_s, task, opt.sample_seed);
    const auto test_set = make_samples(data.load(split.test_subjects), window_s, task, opt.sample_seed);
    result.n_train = train_set.size();
    result.n_val = val_set.size();
    result.n_test = test_set.size();
    TrainConfig tc = opt.train;
    tc.seed = derive_seed(opt.train.seed, split.fold_index);
    DualEncoder model(opt.model, derive_seed(opt.train.seed, 100 + split.fold_index));
    TrainReport report = train(model, train_set, val_set, tc);
    result.accuracy = evaluate(model, test_set);
    report.test_accuracy = result.accuracy;
    result.report = std::move(report);
    if (opt.on_fold_done) opt.on_fold_done(split, model, result);
    if (trained) *trained = std::move(model);
  } catch (const std::exception& ex) {
    result.error = ex.what();
  }
  return result;
}

// Trains and tests one model per fold. Failed folds are recorded and skipped
// in the summary statistics.
inline CrossValReport cross_validate(const Dataset& data, double window_s, Task task, const CrossValOptions& opt) {
  const auto splits = make_fold_splits(data.subjects(), opt.split_seed);
  std::vector<std::size_t> selected = opt.folds;
  if (selected.empty())
    for (std::size_t k = 0; k < splits.size(); ++k) selected.push_back(k);
  for (std::size_t k : selected)
    if (k >= splits.size()) throw std::invalid_argument("cross_validate: fold " + std::to_string(k) + " out of range");

  CrossValReport report;
  report.task = task;
  report.window_s = window_s;
  report.folds.resize(selected.size());
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, selected.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < selected.size(); ++i)
      report.folds[i] = run_fold(data, splits[selected[i]], window_s, task, opt);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < selected.size(); i = next++)
          report.folds[i] = run_fold(data, splits[selected[i]], window_s, task, opt);
      });
    }
    for (auto& t : workers) t.join();
  }
  std::vector<double> accs;
  for (const auto& f : report.folds)
    if (f.accuracy) accs.push_back(*f.accuracy);
  std::tie(report.mean_accuracy, report.sd_accuracy) = mean_and_sd(accs);
  return report;
}

// One match-mismatch model on the given split; attended and unattended models
// are trained from independent initializations.
inline FoldResult train_mmm(const Dataset& data, const FoldSplit& split, double window_s, StreamType stream,
                            const CrossValOptions& opt, DualEncoder* trained = nullptr) {
  CrossValOptions o = opt;
  o.train.seed = derive_seed(opt.train.seed, stream == StreamType::attended ? 0xa77 : 0x0a77);
  return run_fold(data, split, window_s, stream == StreamType::attended ? Task::mmm_attended : Task::mmm_unattended,
                  o, trained);
}

}  // namespace diotic
