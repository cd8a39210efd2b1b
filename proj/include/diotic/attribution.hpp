#pragma once

// Expected-gradients attribution of a scalar model output to the EEG input,
// aggregated into per-channel importance maps.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "diotic/feature_tensor.hpp"
#include "diotic/io.hpp"
#include "diotic/log.hpp"
#include "diotic/model.hpp"
#include "diotic/rng.hpp"

namespace diotic {

// A differentiable scalar function of an EEG tensor, recorded on `tape`.
template <class F>
concept EegScalarFunction = requires(F f, Tape& tape, const Tensor& eeg) {
  { f(tape, eeg) } -> std::same_as<Tensor>;
};

struct ExpectedGradientsOptions {
  std::size_t n_draws = 32;
  std::uint64_t seed = 0;
};

// mean over draws of (E − B) ⊙ ∇f(B + α(E − B)), B drawn uniformly from the
// pool and α uniform in (0, 1). α is stratified: draw k takes α uniform in
// (k/n, (k+1)/n). Returns a [C × T] map.
template <EegScalarFunction F>
FeatureTensor expected_gradients(F&& f, const FeatureTensor& eeg, const std::vector<FeatureTensor>& baseline_pool,
                                 const ExpectedGradientsOptions& opt) {
  if (baseline_pool.empty()) throw std::invalid_argument("expected_gradients: empty baseline pool");
  if (opt.n_draws == 0) throw std::invalid_argument("expected_gradients: n_draws must be at least 1");
  for (const auto& b : baseline_pool)
    if (b.rows != eeg.rows || b.cols != eeg.cols)
      throw DimensionError("expected_gradients: baseline shape differs from the input");

  const std::size_t n = eeg.values.size();
  std::vector<double> acc(n, 0.0);
  Rng rng(derive_seed(opt.seed, 0xe6));
  for (std::size_t draw = 0; draw < opt.n_draws; ++draw) {
    const FeatureTensor& base = baseline_pool[static_cast<std::size_t>(rng.uniform_index(baseline_pool.size()))];
    const double alpha = (static_cast<double>(draw) + rng.uniform_open()) / static_cast<double>(opt.n_draws);
    std::vector<float> point(n);
    for (std::size_t i = 0; i < n; ++i)
      point[i] = static_cast<float>(base.values[i] + alpha * (static_cast<double>(eeg.values[i]) - base.values[i]));
    Tensor input({eeg.rows, eeg.cols}, std::move(point), true);
    Tape tape;
    const Tensor out = f(tape, input);
    tape.backward(out);
    if (!input.has_grad()) continue;  // output does not depend on the input
    const auto g = input.grad();
    for (std::size_t i = 0; i < n; ++i)
      acc[i] += (static_cast<double>(eeg.values[i]) - base.values[i]) * static_cast<double>(g[i]);
  }
  FeatureTensor out(eeg.rows, eeg.cols, eeg.sample_rate_hz, "attribution", "expected_gradients");
  for (std::size_t i = 0; i < n; ++i) out.values[i] = static_cast<float>(acc[i] / static_cast<double>(opt.n_draws));
  return out;
}

// Attribution target for a trained classifier: s_y − s_other with the speech
// inputs held at the sample's values.
inline FeatureTensor attribute_sample(const DualEncoder& model, const Sample& sample,
                                      const std::vector<FeatureTensor>& baseline_pool,
                                      const ExpectedGradientsOptions& opt) {
  auto target = [&](Tape& tape, const Tensor& eeg) { return model.logit_difference(tape, eeg, sample); };
  return expected_gradients(target, sample.eeg, baseline_pool, opt);
}

struct AttributionMap {
  FeatureTensor per_channel_time;   // [C × T], mean |attribution| over samples
  std::vector<double> per_channel;  // time- and sample-averaged |attribution|, sums to 1
  std::vector<std::string> channel_names;
  std::string task;
};

// Mean |attribution| per channel over samples and time, normalized to unit
// sum. An all-zero input yields the uniform map.
inline AttributionMap channel_importance(const std::vector<FeatureTensor>& attributions,
                                         std::vector<std::string> channel_names, std::string task) {
  if (attributions.empty()) throw std::invalid_argument("channel_importance: no attributions");
  const std::size_t C = attributions.front().rows, T = attributions.front().cols;
  for (const auto& a : attributions)
    if (a.rows != C || a.cols != T) throw DimensionError("channel_importance: attribution shapes differ");
  if (channel_names.empty())
    for (std::size_t c = 0; c < C; ++c) channel_names.push_back("ch" + std::to_string(c + 1));
  if (channel_names.size() != C)
    throw DimensionError("channel_importance: " + std::to_string(channel_names.size()) + " names for " +
                         std::to_string(C) + " channels");

  std::vector<double> mean_abs(C * T, 0.0);
  for (const auto& a : attributions)
    for (std::size_t i = 0; i < C * T; ++i) mean_abs[i] += std::abs(static_cast<double>(a.values[i]));
  const double inv_n = 1.0 / static_cast<double>(attributions.size());

  AttributionMap map;
  map.per_channel_time = FeatureTensor(C, T, attributions.front().sample_rate_hz, "attribution", task);
  map.per_channel.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t) {
      const double v = mean_abs[c * T + t] * inv_n;
      map.per_channel_time(c, t) = static_cast<float>(v);
      map.per_channel[c] += v / static_cast<double>(T);
    }
  const double total = std::accumulate(map.per_channel.begin(), map.per_channel.end(), 0.0);
  if (total > 0.0) {
    for (auto& v : map.per_channel) v /= total;
  } else {
    warn("channel_importance: all attributions are zero, returning the uniform map");
    std::fill(map.per_channel.begin(), map.per_channel.end(), 1.0 / static_cast<double>(C));
  }
  map.channel_names = std::move(channel_names);
  map.task = std::move(task);
  return map;
}

// aad − mmm per channel.
inline std::vector<double> difference_map(const AttributionMap& aad, const AttributionMap& mmm) {
  if (aad.channel_names != mmm.channel_names)
    throw std::invalid_argument("difference_map: channel orderings differ");
  std::vector<double> diff(aad.per_channel.size());
  for (std::size_t c = 0; c < diff.size(); ++c) diff[c] = aad.per_channel[c] - mmm.per_channel[c];
  return diff;
}

inline std::string channel_csv(const std::vector<std::string>& names, const std::vector<double>& values) {
  std::ostringstream os;
  os << "channel,value\n" << std::setprecision(10);
  for (std::size_t c = 0; c < values.size(); ++c) os << names.at(c) << ',' << values[c] << '\n';
  return os.str();
}

inline void export_attribution(const std::filesystem::path& stem, const AttributionMap& map) {
  write_text_file(stem.string() + ".csv", channel_csv(map.channel_names, map.per_channel));
  FeatureTensor ft = map.per_channel_time;
  ft.attributes["channel_names"] = map.channel_names;
  ft.attributes["task"] = map.task;
  write_feature_file(stem.string() + ".ftf", ft);
}

}  // namespace diotic
