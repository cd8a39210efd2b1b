#pragma once

// EEG preprocessing: unit conversion, linear-phase FIR band-pass, common
// average reference and Fourier-domain resampling.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <unsupported/Eigen/FFT>

#include "diotic/feature_tensor.hpp"

namespace diotic {

inline FeatureTensor volts_to_microvolts(FeatureTensor x) {
  for (auto& v : x.values) v = static_cast<float>(static_cast<double>(v) * 1e6);
  x.unit = "uV";
  return x;
}

struct FirFilter {
  std::vector<double> taps;
  double sample_rate_hz = 0.0;
  double low_hz = 0.0;
  double high_hz = 0.0;

  std::size_t size() const { return taps.size(); }
  std::size_t group_delay() const { return (taps.size() - 1) / 2; }

  // |H(f)| evaluated directly from the taps.
  double magnitude(double freq_hz) const {
    const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate_hz;
    double re = 0.0, im = 0.0;
    for (std::size_t n = 0; n < taps.size(); ++n) {
      re += taps[n] * std::cos(w * static_cast<double>(n));
      im -= taps[n] * std::sin(w * static_cast<double>(n));
    }
    return std::hypot(re, im);
  }
};

// Transition width below the low edge: max(0.25·f, 2 Hz) capped at f.
inline double default_low_transition(double low_hz) { return std::min(std::max(0.25 * low_hz, 2.0), low_hz); }

// Transition width above the high edge: max(0.25·f, 2 Hz) capped at the room left below Nyquist.
inline double default_high_transition(double high_hz, double fs_hz) {
  return std::min(std::max(0.25 * high_hz, 2.0), fs_hz / 2.0 - high_hz);
}

// Hamming-windowed sinc band-pass. Cutoffs sit at the centre of each
// transition band; the tap count is ceil(3.3 / narrowest normalized transition),
// bumped to odd.
inline FirFilter design_bandpass(double low_hz, double high_hz, double fs_hz, double transition_low_hz,
                                 double transition_high_hz) {
  if (!(fs_hz > 0.0) || !(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < fs_hz / 2.0)) {
    throw std::invalid_argument("design_bandpass: need 0 < low < high < fs/2, got low=" + std::to_string(low_hz) +
                                " high=" + std::to_string(high_hz) + " fs=" + std::to_string(fs_hz));
  }
  if (!(transition_low_hz > 0.0) || !(transition_high_hz > 0.0))
    throw std::invalid_argument("design_bandpass: transition widths must be positive");
  const double f1 = (low_hz - transition_low_hz / 2.0) / fs_hz;
  const double f2 = (high_hz + transition_high_hz / 2.0) / fs_hz;
  if (f1 < 0.0 || f2 >= 0.5) throw std::invalid_argument("design_bandpass: transition band leaves [0, fs/2]");

  const double narrowest = std::min(transition_low_hz, transition_high_hz) / fs_hz;
  auto n = static_cast<std::size_t>(std::ceil(3.3 / narrowest));
  if (n % 2 == 0) ++n;

  FirFilter filter{std::vector<double>(n), fs_hz, low_hz, high_hz};
  const double centre = static_cast<double>(n - 1) / 2.0;
  auto sinc = [](double x) { return x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x); };
  for (std::size_t i = 0; i < n; ++i) {
    const double m = static_cast<double>(i) - centre;
    const double ideal = 2.0 * f2 * sinc(2.0 * f2 * m) - 2.0 * f1 * sinc(2.0 * f1 * m);
    const double window = n == 1 ? 1.0 : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                                   static_cast<double>(n - 1));
    filter.taps[i] = ideal * window;
  }
  // Force exact symmetry against rounding in the cosine terms.
  for (std::size_t i = 0; i < n / 2; ++i) filter.taps[n - 1 - i] = filter.taps[i];
  return filter;
}

inline FirFilter design_bandpass(double low_hz, double high_hz, double fs_hz) {
  return design_bandpass(low_hz, high_hz, fs_hz, default_low_transition(low_hz),
                         default_high_transition(high_hz, fs_hz));
}

namespace detail {

inline bool is_smooth(std::size_t n) {
  for (std::size_t p : {2, 3, 5})
    while (n % p == 0) n /= p;
  return n == 1;
}

// Smallest even 5-smooth number >= n.
inline std::size_t fft_size_at_least(std::size_t n) {
  std::size_t m = std::max<std::size_t>(n, 4);
  while (!(m % 4 == 0 && is_smooth(m))) ++m;
  return m;
}

}  // namespace detail

// Zero-phase application of a symmetric FIR: each channel is convolved with
// the taps and shifted back by the group delay. Samples beyond the record are
// treated as zero.
inline FeatureTensor apply_filter(const FeatureTensor& x, const FirFilter& f) {
  if (std::abs(x.sample_rate_hz - f.sample_rate_hz) > 1e-9 * f.sample_rate_hz) {
    throw std::invalid_argument("apply_filter: signal at " + std::to_string(x.sample_rate_hz) +
                                " Hz, filter designed for " + std::to_string(f.sample_rate_hz) + " Hz");
  }
  FeatureTensor y = x;
  if (x.cols == 0 || f.taps.empty()) return y;
  const std::size_t T = x.cols;
  const std::size_t N = f.taps.size();
  const std::size_t delay = f.group_delay();
  const std::size_t L = detail::fft_size_at_least(T + N - 1);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buffer(L, 0.0);
  std::copy(f.taps.begin(), f.taps.end(), buffer.begin());
  std::vector<std::complex<double>> taps_spectrum(L / 2 + 1), spectrum(L / 2 + 1);
  fft.fwd(taps_spectrum.data(), buffer.data(), static_cast<Eigen::Index>(L));

  std::vector<double> out(L);
  for (std::size_t r = 0; r < x.rows; ++r) {
    std::fill(buffer.begin(), buffer.end(), 0.0);
    const auto src = x.row(r);
    std::copy(src.begin(), src.end(), buffer.begin());
    fft.fwd(spectrum.data(), buffer.data(), static_cast<Eigen::Index>(L));
    for (std::size_t k = 0; k < spectrum.size(); ++k) spectrum[k] *= taps_spectrum[k];
    fft.inv(out.data(), spectrum.data(), static_cast<Eigen::Index>(L));
    auto dst = y.row(r);
    for (std::size_t t = 0; t < T; ++t) dst[t] = static_cast<float>(out[t + delay]);
  }
  return y;
}

inline FeatureTensor common_average_reference(FeatureTensor x) {
  if (x.rows < 2) throw std::invalid_argument("common_average_reference: need at least 2 channels");
  for (std::size_t t = 0; t < x.cols; ++t) {
    double mean = 0.0;
    for (std::size_t c = 0; c < x.rows; ++c) mean += x(c, t);
    mean /= static_cast<double>(x.rows);
    for (std::size_t c = 0; c < x.rows; ++c) x(c, t) = static_cast<float>(x(c, t) - mean);
  }
  return x;
}

// Fourier-domain resampling of every row to round(T · fs_out / fs_in)
// samples. The signal is treated as periodic, so the first and last few
// samples carry wrap-around effects.
inline FeatureTensor resample(const FeatureTensor& x, double fs_out_hz) {
  if (!(fs_out_hz > 0.0)) throw std::invalid_argument("resample: output rate must be positive");
  if (!(x.sample_rate_hz > 0.0)) throw std::invalid_argument("resample: input has no sample rate");
  const std::size_t N = x.cols;
  const auto M = static_cast<std::size_t>(std::llround(static_cast<double>(N) * fs_out_hz / x.sample_rate_hz));
  FeatureTensor y(x.rows, M, fs_out_hz, x.unit, x.source);
  y.attributes = x.attributes;
  if (N == 0 || M == 0) return y;
  if (M == N) {
    y.values = x.values;
    return y;
  }

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  const std::size_t shared = std::min(N, M);
  const std::size_t keep = shared / 2 + 1;
  std::vector<double> in(N), out(M);
  std::vector<std::complex<double>> X(N / 2 + 1), Y(M / 2 + 1);
  const double gain = static_cast<double>(M) / static_cast<double>(N);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const auto src = x.row(r);
    std::copy(src.begin(), src.end(), in.begin());
    fft.fwd(X.data(), in.data(), static_cast<Eigen::Index>(N));
    std::fill(Y.begin(), Y.end(), std::complex<double>{});
    std::copy_n(X.begin(), keep, Y.begin());
    if (shared % 2 == 0) {
      // The shared Nyquist bin is split between ±f in the longer spectrum.
      if (M < N)
        Y[shared / 2] *= 2.0;
      else
        Y[shared / 2] *= 0.5;
    }
    fft.inv(out.data(), Y.data(), static_cast<Eigen::Index>(M));
    auto dst = y.row(r);
    for (std::size_t t = 0; t < M; ++t) dst[t] = static_cast<float>(out[t] * gain);
  }
  return y;
}

struct EegPipelineConfig {
  double low_hz = 0.5;
  double high_hz = 32.0;
  double output_rate_hz = 64.0;
  bool input_in_volts = true;
  bool standardize = false;  // per-recording z-score after resampling; off by default
};

inline void to_json(nlohmann::json& j, const EegPipelineConfig& c) {
  j = {{"low_hz", c.low_hz}, {"high_hz", c.high_hz}, {"output_rate_hz", c.output_rate_hz},
       {"input_in_volts", c.input_in_volts}, {"standardize", c.standardize}};
}

inline void from_json(const nlohmann::json& j, EegPipelineConfig& c) {
  static const std::set<std::string> known{"low_hz", "high_hz", "output_rate_hz", "input_in_volts", "standardize"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("unknown preprocess config key \"" + key + "\"");
  c.low_hz = j.value("low_hz", c.low_hz);
  c.high_hz = j.value("high_hz", c.high_hz);
  c.output_rate_hz = j.value("output_rate_hz", c.output_rate_hz);
  c.input_in_volts = j.value("input_in_volts", c.input_in_volts);
  c.standardize = j.value("standardize", c.standardize);
}

// volts → µV, band-pass, common average reference, resample.
inline FeatureTensor preprocess_eeg(const FeatureTensor& raw, const EegPipelineConfig& cfg = {}) {
  FeatureTensor x = cfg.input_in_volts ? volts_to_microvolts(raw) : raw;
  const FirFilter filter = design_bandpass(cfg.low_hz, cfg.high_hz, x.sample_rate_hz);
  x = apply_filter(x, filter);
  x = common_average_reference(std::move(x));
  x = resample(x, cfg.output_rate_hz);
  if (cfg.standardize) {
    for (std::size_t r = 0; r < x.rows; ++r) {
      auto row = x.row(r);
      double mean = 0.0, sq = 0.0;
      for (float v : row) mean += v;
      mean /= static_cast<double>(std::max<std::size_t>(row.size(), 1));
      for (float v : row) sq += (v - mean) * (v - mean);
      const double sd = std::sqrt(sq / static_cast<double>(std::max<std::size_t>(row.size(), 1)));
      for (auto& v : row) v = static_cast<float>(sd > 0 ? (v - mean) / sd : 0.0);
    }
  }
  return x;
}

}  // namespace diotic
