#pragma once

// Model-level checks shared by the unit tests and the acceptance binary.

#include <chrono>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "diotic/model.hpp"
#include "oracles.hpp"
#include "reference_model.hpp"

namespace checks {

using namespace diotic;

inline ModelConfig reduced_config() {
  ModelConfig cfg;
  cfg.eeg_channels = 4;
  cfg.virtual_channels = 4;
  cfg.latent_dim = 8;
  cfg.n_res_blocks = 2;
  return cfg;
}

inline Sample random_sample(std::mt19937& gen, const ModelConfig& cfg, std::size_t T, int label = 1) {
  Sample s;
  s.eeg = FeatureTensor(cfg.eeg_channels, T, kModelRateHz);
  s.s1 = FeatureTensor(cfg.latent_dim, T, kModelRateHz);
  s.s2 = FeatureTensor(cfg.latent_dim, T, kModelRateHz);
  s.eeg.values = oracle::random_values(gen, s.eeg.values.size());
  s.s1.values = oracle::random_values(gen, s.s1.values.size());
  s.s2.values = oracle::random_values(gen, s.s2.values.size());
  s.label = label;
  return s;
}

// Perturbs every parameter away from its initial value so that no gradient is
// structurally zero (zero attention logits, unit norms and w = 1 otherwise
// make several terms symmetric).
inline void jitter(ModelParams& p, std::mt19937& gen, float amount = 0.3f) {
  std::uniform_real_distribution<float> d(-amount, amount);
  for (auto& t : p.tensors())
    for (auto& v : t.mutable_data()) v += d(gen);
}

struct GradientCheckResult {
  std::vector<std::pair<std::string, double>> errors;  // per parameter tensor
  double worst = 0.0;
  double input_error = 0.0;    // gradient with respect to the EEG input
  double forward_error = 0.0;  // |loss_float − loss_reference|
  double seconds = 0.0;
};

// Autodiff gradients of the training loss at τ = 1 against central finite
// differences of an independent double-precision forward pass, for every
// parameter tensor of the reduced model (C=4, D=4, F=8, T=16, 2 blocks) and
// for the EEG input. Error per tensor is ‖g_fd − g_ad‖ / max(‖g_fd‖, ‖g_ad‖).
inline GradientCheckResult gradient_check_reduced_model(std::uint32_t seed = 1) {
  const auto started = std::chrono::steady_clock::now();
  std::mt19937 gen(seed);
  ModelConfig cfg = reduced_config();
  cfg.temperature = 1.0;
  DualEncoder model(cfg, seed);
  jitter(model.params(), gen);
  const Sample sample = random_sample(gen, cfg, 16, 2);
  const std::size_t target = 1;

  auto params = model.parameters();
  for (auto& p : params) p.zero_grad();
  Tensor eeg = sample.eeg.to_tensor(true);
  GradientCheckResult out;
  {
    Tape tape;
    const Tensor s = model.scores(tape, eeg, sample.s1.to_tensor(), sample.s2.to_tensor());
    const Tensor loss = cross_entropy(tape, s, target, cfg.temperature);
    tape.backward(loss);
    out.forward_error = static_cast<double>(loss.item());
  }

  oracle::ReferenceModel ref = oracle::ReferenceModel::from(model);
  oracle::Mat e = oracle::to_mat(sample.eeg);
  const oracle::Mat s1 = oracle::to_mat(sample.s1), s2 = oracle::to_mat(sample.s2);
  auto loss = [&] { return ref.loss(e, s1, s2, target, cfg.temperature); };
  out.forward_error = std::abs(out.forward_error - loss());

  const auto named = model.params().named();
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& [name, tensor] = named[i];
    std::vector<float> ad(tensor.grad().begin(), tensor.grad().end());
    const double err = oracle::norm_relative_error(oracle::finite_difference_double(ref.p[i], loss), ad);
    out.errors.emplace_back(name, err);
    out.worst = std::max(out.worst, err);
  }
  std::vector<float> ad_eeg(eeg.grad().begin(), eeg.grad().end());
  out.input_error = oracle::norm_relative_error(oracle::finite_difference_double(e.v, loss), ad_eeg);
  out.worst = std::max(out.worst, out.input_error);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

struct PropertyResult {
  std::size_t instances = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest deviation seen for tolerance-based properties
  std::string first_failure;

  void record(bool ok, const std::string& what) {
    ++instances;
    if (!ok && failures++ == 0) first_failure = what;
  }
};

// Σ softmax(x, τ) = 1 within 1e-6 and all entries in (0, 1), for random
// finite x and τ log-uniform in [1e-3, 1e3].
inline PropertyResult softmax_normalization(std::size_t n, std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> logt(-3.0, 3.0);
  std::uniform_int_distribution<int> len(2, 8);
  PropertyResult r;
  for (std::size_t i = 0; i < n; ++i) {
    const double tau = std::pow(10.0, logt(gen));
    const auto x = oracle::random_values(gen, static_cast<std::size_t>(len(gen)), -5.0f, 5.0f);
    Tape tape(false);
    const Tensor p = softmax(tape, Tensor::vector(x), tau);
    double total = 0;
    bool in_range = true;
    for (float v : p.data()) {
      total += v;
      in_range = in_range && v >= 0.0f && v <= 1.0f;
    }
    r.worst = std::max(r.worst, std::abs(total - 1.0));
    r.record(std::abs(total - 1.0) <= 1e-6 && in_range, "sum=" + std::to_string(total) + " tau=" + std::to_string(tau));
  }
  return r;
}

inline std::size_t argmax_first(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// argmax of softmax(s/τ) equals argmax of s for τ ∈ {0.01, 0.05, 1, 10}.
inline PropertyResult argmax_invariance(std::size_t n, std::uint32_t seed) {
  std::mt19937 gen(seed);
  PropertyResult r;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = oracle::random_values(gen, 2, -1.0f, 1.0f);
    if (s[0] == s[1]) s[1] += 0.5f;
    const std::size_t expected = argmax_first(s);
    bool ok = true;
    for (double tau : {0.01, 0.05, 1.0, 10.0}) {
      const Classification c = classify_scores(s, tau);
      ok = ok && static_cast<std::size_t>(c.predicted - 1) == expected;
    }
    r.record(ok, "scores " + std::to_string(s[0]) + "," + std::to_string(s[1]));
  }
  return r;
}

// cos(αa, b) = cos(a, b) within 1e-6 for α > 0.
inline PropertyResult cosine_scale_invariance(std::size_t n, std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> loga(-3.0, 3.0);
  std::uniform_int_distribution<int> len(2, 64);
  PropertyResult r;
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = static_cast<std::size_t>(len(gen));
    const auto a = oracle::random_values(gen, m), b = oracle::random_values(gen, m);
    const auto alpha = static_cast<float>(std::pow(10.0, loga(gen)));
    std::vector<float> sa(a), sb(b);
    for (auto& v : sa) v *= alpha;
    for (auto& v : sb) v *= alpha;
    Tape tape(false);
    const double c0 = cosine_similarity(tape, Tensor::vector(a), Tensor::vector(b)).item();
    const double c1 = cosine_similarity(tape, Tensor::vector(sa), Tensor::vector(b)).item();
    const double c2 = cosine_similarity(tape, Tensor::vector(a), Tensor::vector(sb)).item();
    const double dev = std::max(std::abs(c1 - c0), std::abs(c2 - c0));
    r.worst = std::max(r.worst, dev);
    r.record(dev <= 1e-6, "alpha=" + std::to_string(alpha) + " dev=" + std::to_string(dev));
  }
  return r;
}

// classify(E, S2, S1) swaps the probabilities of classify(E, S1, S2) exactly,
// and the prediction flips unless the scores tie. Runs the full model on
// random reduced-size inputs and random parameters.
inline PropertyResult permutation_equivariance(std::size_t n, std::uint32_t seed) {
  std::mt19937 gen(seed);
  PropertyResult r;
  ModelConfig cfg = reduced_config();
  for (std::size_t i = 0; i < n; ++i) {
    DualEncoder model(cfg, seed * 1000 + i);
    jitter(model.params(), gen);
    const Sample s = random_sample(gen, cfg, 12);
    const Tensor e = s.eeg.to_tensor(), a = s.s1.to_tensor(), b = s.s2.to_tensor();
    const Classification fwd = model.classify(e, a, b);
    const Classification rev = model.classify(e, b, a);
    const bool swapped = fwd.probabilities[0] == rev.probabilities[1] && fwd.probabilities[1] == rev.probabilities[0];
    const bool tie = fwd.scores[0] == fwd.scores[1];
    const bool flipped = tie ? (fwd.predicted == 1 && rev.predicted == 1) : fwd.predicted != rev.predicted;
    r.record(swapped && flipped, "instance " + std::to_string(i));
  }
  return r;
}

}  // namespace checks
