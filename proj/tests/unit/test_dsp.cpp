#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "diotic/dsp.hpp"
#include "oracles.hpp"

using namespace diotic;

namespace {

FeatureTensor sine(double f_hz, double fs_hz, std::size_t n, double amplitude = 1.0, double phase = 0.0,
                   std::size_t rows = 1) {
  FeatureTensor x(rows, n, fs_hz, "uV", "test");
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < n; ++t)
      x(r, t) = static_cast<float>(amplitude * std::sin(2 * std::numbers::pi * f_hz * t / fs_hz + phase + r));
  return x;
}

// Amplitude and phase of the f-component of x over [begin, end), by projection.
std::pair<double, double> tone(const FeatureTensor& x, double f_hz, std::size_t begin, std::size_t end) {
  double re = 0, im = 0;
  for (std::size_t t = begin; t < end; ++t) {
    const double w = 2 * std::numbers::pi * f_hz * t / x.sample_rate_hz;
    re += x(0, t) * std::sin(w);
    im += x(0, t) * std::cos(w);
  }
  const double n = static_cast<double>(end - begin);
  return {2 * std::hypot(re, im) / n, std::atan2(im, re)};
}

}  // namespace

TEST(VoltsToMicrovolts, Scales) {
  FeatureTensor x(1, 3, 10.0, "V");
  x.values = {0.0f, -2e-6f, 3e-6f};
  const FeatureTensor y = volts_to_microvolts(x);
  EXPECT_EQ(y.values[0], 0.0f);
  EXPECT_NEAR(y.values[1], -2.0, 1e-6);
  EXPECT_NEAR(y.values[2], 3.0, 1e-6);
  EXPECT_EQ(y.unit, "uV");
  x.values = {1e-6f, 0, 0};
  EXPECT_NEAR(volts_to_microvolts(x).values[0], 1.0, 1e-6);
}

TEST(DesignBandpass, DefaultTransitionsAndOddSymmetricTaps) {
  EXPECT_DOUBLE_EQ(default_low_transition(0.5), 0.5);
  EXPECT_DOUBLE_EQ(default_high_transition(32.0, 10000.0), 8.0);
  const FirFilter f = design_bandpass(0.5, 32.0, 10000.0);
  ASSERT_EQ(f.size() % 2, 1u);
  EXPECT_EQ(f.size(), 66001u);
  for (std::size_t i = 0; i < f.size(); ++i) ASSERT_EQ(f.taps[i], f.taps[f.size() - 1 - i]);
}

TEST(DesignBandpass, ResponseFromTaps) {
  const FirFilter f = design_bandpass(0.5, 32.0, 10000.0);
  EXPECT_LE(oracle::to_db(oracle::symmetric_fir_gain(f.taps, 0.0, 10000.0)), -20.0);
  EXPECT_LE(oracle::to_db(oracle::symmetric_fir_gain(f.taps, 0.05, 10000.0)), -20.0);
  EXPECT_LE(oracle::to_db(oracle::symmetric_fir_gain(f.taps, 48.0, 10000.0)), -20.0);
  for (double hz = 2.0; hz <= 28.0; hz += 0.5)
    EXPECT_NEAR(oracle::to_db(oracle::symmetric_fir_gain(f.taps, hz, 10000.0)), 0.0, 1.0) << hz;
  // The library's own evaluator agrees with the cosine-series oracle.
  EXPECT_NEAR(f.magnitude(10.0), oracle::symmetric_fir_gain(f.taps, 10.0, 10000.0), 1e-9);
}

TEST(DesignBandpass, RejectsInvalidBands) {
  EXPECT_THROW(design_bandpass(0.0, 32.0, 1000.0), std::invalid_argument);
  EXPECT_THROW(design_bandpass(40.0, 32.0, 1000.0), std::invalid_argument);
  EXPECT_THROW(design_bandpass(0.5, 600.0, 1000.0), std::invalid_argument);
  EXPECT_THROW(design_bandpass(0.5, 32.0, 1000.0, -1.0, 8.0), std::invalid_argument);
}

TEST(ApplyFilter, ZeroInputGivesZeroOutput) {
  const FirFilter f = design_bandpass(0.5, 32.0, 1000.0);
  FeatureTensor x(2, 4000, 1000.0);
  for (float v : apply_filter(x, f).values) EXPECT_EQ(v, 0.0f);
}

TEST(ApplyFilter, PassesTenHertzSineWithoutPhaseShift) {
  const double fs = 1000.0;
  const FirFilter f = design_bandpass(0.5, 32.0, fs);
  const std::size_t n = 40000;
  const FeatureTensor x = sine(10.0, fs, n, 1.0, 0.3);
  const FeatureTensor y = apply_filter(x, f);
  const std::size_t edge = f.size();
  const auto [ax, px] = tone(x, 10.0, edge, n - edge);
  const auto [ay, py] = tone(y, 10.0, edge, n - edge);
  EXPECT_NEAR(oracle::to_db(ay / ax), 0.0, 1.0);
  EXPECT_LT(std::abs(py - px) * 180.0 / std::numbers::pi, 1.0);
}

TEST(ApplyFilter, SuppressesSlowDrift) {
  const double fs = 100.0;
  const FirFilter f = design_bandpass(0.5, 32.0, fs);
  const std::size_t n = 100 * 400;  // four periods of a 0.01 Hz drift
  const FeatureTensor x = sine(0.01, fs, n);
  const FeatureTensor y = apply_filter(x, f);
  const std::size_t edge = f.size();
  double px = 0, py = 0;
  for (std::size_t t = edge; t < n - edge; ++t) {
    px += x(0, t) * x(0, t);
    py += y(0, t) * y(0, t);
  }
  EXPECT_LE(10.0 * std::log10(py / px), -20.0);
}

TEST(ApplyFilter, RateMismatchRejected) {
  const FirFilter f = design_bandpass(0.5, 32.0, 1000.0);
  EXPECT_THROW(apply_filter(FeatureTensor(1, 10, 500.0), f), std::invalid_argument);
}

TEST(CommonAverageReference, ClosedFormsAndProperties) {
  FeatureTensor x(2, 3, 64.0);
  x.values = {1, 2, 3, 5, -2, 3};
  const FeatureTensor y = common_average_reference(x);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_FLOAT_EQ(y(0, t), (x(0, t) - x(1, t)) / 2);
    EXPECT_FLOAT_EQ(y(1, t), (x(1, t) - x(0, t)) / 2);
  }
  FeatureTensor c(4, 5, 64.0);
  std::fill(c.values.begin(), c.values.end(), 7.0f);
  for (float v : common_average_reference(c).values) EXPECT_EQ(v, 0.0f);

  std::mt19937 gen(11);
  FeatureTensor r(32, 50, 64.0);
  r.values = oracle::random_values(gen, r.values.size(), -50, 50);
  const FeatureTensor once = common_average_reference(r);
  const FeatureTensor twice = common_average_reference(once);
  for (std::size_t t = 0; t < r.cols; ++t) {
    double m = 0;
    for (std::size_t ch = 0; ch < r.rows; ++ch) m += once(ch, t);
    EXPECT_NEAR(m / 32.0, 0.0, 1e-5);
  }
  for (std::size_t i = 0; i < once.values.size(); ++i) EXPECT_NEAR(once.values[i], twice.values[i], 1e-5);
  EXPECT_THROW(common_average_reference(FeatureTensor(1, 5, 64.0)), std::invalid_argument);
}

TEST(CommonAverageReference, CommutesWithFiltering) {
  std::mt19937 gen(12);
  FeatureTensor x(4, 3000, 500.0);
  x.values = oracle::random_values(gen, x.values.size());
  const FirFilter f = design_bandpass(0.5, 32.0, 500.0);
  const FeatureTensor a = common_average_reference(apply_filter(x, f));
  const FeatureTensor b = apply_filter(common_average_reference(x), f);
  for (std::size_t i = 0; i < a.values.size(); ++i) ASSERT_NEAR(a.values[i], b.values[i], 1e-5);
}

TEST(Resample, LengthsAndRate) {
  const FeatureTensor y = resample(FeatureTensor(1, 640000, 10000.0), 64.0);
  EXPECT_EQ(y.cols, 4096u);
  EXPECT_EQ(y.sample_rate_hz, 64.0);
  EXPECT_EQ(resample(FeatureTensor(2, 1001, 50.0), 64.0).cols, 1281u);
  EXPECT_THROW(resample(FeatureTensor(1, 10, 50.0), 0.0), std::invalid_argument);
}

TEST(Resample, ConstantStaysConstant) {
  for (std::size_t n : {1000u, 999u, 3201u}) {
    FeatureTensor x(1, n, 50.0);
    std::fill(x.values.begin(), x.values.end(), 2.5f);
    for (float v : resample(x, 64.0).values) ASSERT_NEAR(v, 2.5, 1e-5) << n;
  }
}

TEST(Resample, TenHertzSineAtTenKilohertz) {
  const FeatureTensor x = sine(10.0, 10000.0, 640000);
  const FeatureTensor y = resample(x, 64.0);
  std::vector<double> got, ideal;
  for (std::size_t t = 32; t + 32 < y.cols; ++t) {
    got.push_back(y(0, t));
    ideal.push_back(std::sin(2 * std::numbers::pi * 10.0 * t / 64.0));
  }
  EXPECT_GT(oracle::pearson(got, ideal), 0.999);
}

TEST(Resample, UpAndDownRoundTrip) {
  FeatureTensor x(1, 640, 64.0);
  for (std::size_t t = 0; t < x.cols; ++t)
    x(0, t) = static_cast<float>(std::sin(2 * std::numbers::pi * 3.0 * t / 64.0) +
                                 0.5 * std::cos(2 * std::numbers::pi * 7.0 * t / 64.0));
  const FeatureTensor back = resample(resample(x, 50.0), 64.0);
  double sq = 0;
  for (std::size_t t = 0; t < x.cols; ++t) sq += (back(0, t) - x(0, t)) * (back(0, t) - x(0, t));
  EXPECT_LT(std::sqrt(sq / static_cast<double>(x.cols)), 1e-3);
}

TEST(PreprocessEeg, PipelineOutputAndDeterminism) {
  std::mt19937 gen(13);
  FeatureTensor raw(4, 5000, 500.0, "V");
  raw.values = oracle::random_values(gen, raw.values.size(), -1e-5f, 1e-5f);
  const FeatureTensor a = preprocess_eeg(raw);
  const FeatureTensor b = preprocess_eeg(raw);
  EXPECT_EQ(a.sample_rate_hz, 64.0);
  EXPECT_EQ(a.cols, 640u);
  EXPECT_EQ(a.unit, "uV");
  EXPECT_EQ(a.values, b.values);
}
