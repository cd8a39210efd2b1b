#pragma once

// Synthetic EEG/speech datasets with a known linear-convolutional coupling:
//   EEG = g · M (h ∗ S_att) + u · M (h ∗ S_unatt) + noise
// where S_1, S_2 are independent smooth feature streams, M is a per-subject
// mixing matrix and h a per-subject temporal response.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <array>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "diotic/dataset.hpp"
#include "diotic/io.hpp"
#include "diotic/manifest.hpp"
#include "diotic/rng.hpp"

namespace diotic {

struct SynthConfig {
  std::size_t n_subjects = 28;
  std::size_t sessions_per_subject = 10;
  double duration_s = 64.0;
  std::size_t eeg_channels = 32;
  std::size_t feature_dim = 64;
  double coupling_gain = 1.0;    // g
  double unattended_gain = 0.0;  // u
  double noise_sd = 1.0;
  std::size_t response_kernel_len = 8;  // samples at 64 Hz
  std::size_t stream_smoothing = 4;     // moving-average length applied to the white-noise streams
  double subject_variability = 0.25;    // spread of M and h around the population template
  std::uint64_t seed = 0;

  std::size_t samples() const { return static_cast<std::size_t>(std::llround(duration_s * kModelRateHz)); }

  void validate() const {
    if (coupling_gain < 0.0 || unattended_gain < 0.0 || noise_sd < 0.0)
      throw std::invalid_argument("SynthConfig: gains and noise must be non-negative");
    if (n_subjects == 0 || sessions_per_subject == 0 || eeg_channels == 0 || feature_dim == 0)
      throw std::invalid_argument("SynthConfig: counts must be positive");
    if (response_kernel_len == 0 || static_cast<double>(response_kernel_len) > duration_s * kModelRateHz)
      throw std::invalid_argument("SynthConfig: response kernel must fit inside the session");
    if (stream_smoothing == 0) throw std::invalid_argument("SynthConfig: stream_smoothing must be positive");
    if (!(subject_variability >= 0.0)) throw std::invalid_argument("SynthConfig: subject_variability must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"n_subjects", c.n_subjects},
       {"sessions_per_subject", c.sessions_per_subject},
       {"duration_s", c.duration_s},
       {"eeg_channels", c.eeg_channels},
       {"feature_dim", c.feature_dim},
       {"coupling_gain", c.coupling_gain},
       {"unattended_gain", c.unattended_gain},
       {"noise_sd", c.noise_sd},
       {"response_kernel_len", c.response_kernel_len},
       {"stream_smoothing", c.stream_smoothing},
       {"subject_variability", c.subject_variability},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  static const std::set<std::string> known{"n_subjects",      "sessions_per_subject", "duration_s",
                                           "eeg_channels",    "feature_dim",          "coupling_gain",
                                           "unattended_gain", "noise_sd",             "response_kernel_len",
                                           "stream_smoothing", "subject_variability", "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("unknown synth config key \"" + key + "\"");
  c.n_subjects = j.value("n_subjects", c.n_subjects);
  c.sessions_per_subject = j.value("sessions_per_subject", c.sessions_per_subject);
  c.duration_s = j.value("duration_s", c.duration_s);
  c.eeg_channels = j.value("eeg_channels", c.eeg_channels);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.coupling_gain = j.value("coupling_gain", c.coupling_gain);
  c.unattended_gain = j.value("unattended_gain", c.unattended_gain);
  c.noise_sd = j.value("noise_sd", c.noise_sd);
  c.response_kernel_len = j.value("response_kernel_len", c.response_kernel_len);
  c.stream_smoothing = j.value("stream_smoothing", c.stream_smoothing);
  c.subject_variability = j.value("subject_variability", c.subject_variability);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

struct SyntheticSubject {
  Eigen::MatrixXd mixing;   // [C × F]
  std::vector<double> response;  // h
};

struct SyntheticSession {
  int attended_index = 1;
  std::array<FeatureTensor, 2> streams;          // S_1, S_2 as written to disk
  std::array<Eigen::MatrixXd, 2> responses;      // h ∗ S_i, [F × T]
  FeatureTensor eeg;
};

inline std::string synthetic_subject_id(std::size_t s) {
  std::ostringstream os;
  os << 'S' << std::setw(2) << std::setfill('0') << (s + 1);
  return os.str();
}

inline std::string synthetic_session_id(std::size_t s) {
  std::ostringstream os;
  os << std::setw(3) << std::setfill('0') << (s + 1);
  return os.str();
}

// M = (M₀ + v·Δ)/√(1 + v²) and h likewise, where M₀, h₀ form a population
// template shared by all subjects and Δ is the subject's own draw. With v = 0
// every subject shares one forward model; large v approaches independent
// subjects.
inline SyntheticSubject make_synthetic_subject(const SynthConfig& cfg, std::size_t subject) {
  Rng population(derive_seed(cfg.seed, 0x5a000000ULL));
  Rng rng(derive_seed(cfg.seed, 0x5b000000ULL + subject));
  const double v = cfg.subject_variability;
  const double blend = 1.0 / std::sqrt(1.0 + v * v);
  SyntheticSubject out;
  const auto C = static_cast<Eigen::Index>(cfg.eeg_channels), F = static_cast<Eigen::Index>(cfg.feature_dim);
  out.mixing.resize(C, F);
  const double scale = blend / std::sqrt(static_cast<double>(cfg.feature_dim));
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index f = 0; f < F; ++f) out.mixing(c, f) = population.normal() * scale;
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index f = 0; f < F; ++f) out.mixing(c, f) += v * rng.normal() * scale;

  out.response.resize(cfg.response_kernel_len);
  const double decay = std::max(1.0, static_cast<double>(cfg.response_kernel_len) / 3.0);
  for (std::size_t k = 0; k < out.response.size(); ++k)
    out.response[k] = std::exp(-static_cast<double>(k) / decay) * (1.0 + 0.5 * population.normal());
  for (auto& h : out.response) h += v * 0.5 * rng.normal() * std::abs(h);
  double norm = 0.0;
  for (double h : out.response) norm += h * h;
  norm = std::sqrt(norm);
  for (auto& h : out.response) h /= norm > 0 ? norm : 1.0;
  return out;
}

namespace detail {

// Moving-averaged white noise, each row standardized to zero mean, unit variance.
inline Eigen::MatrixXd smooth_stream(Rng& rng, std::size_t F, std::size_t T, std::size_t smoothing) {
  Eigen::MatrixXd s(static_cast<Eigen::Index>(F), static_cast<Eigen::Index>(T));
  std::vector<double> white(T + smoothing - 1);
  for (std::size_t f = 0; f < F; ++f) {
    for (auto& w : white) w = rng.normal();
    double run = 0.0;
    for (std::size_t i = 0; i < smoothing; ++i) run += white[i];
    for (std::size_t t = 0; t < T; ++t) {
      s(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t)) = run;
      if (t + smoothing < white.size()) run += white[t + smoothing] - white[t];
    }
    auto row = s.row(static_cast<Eigen::Index>(f));
    const double mean = row.mean();
    row.array() -= mean;
    const double sd = std::sqrt(row.squaredNorm() / static_cast<double>(T));
    if (sd > 0) row /= sd;
  }
  return s;
}

// Causal convolution of every row with h.
inline Eigen::MatrixXd causal_filter(const Eigen::MatrixXd& s, const std::vector<double>& h) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(s.rows(), s.cols());
  for (Eigen::Index t = 0; t < s.cols(); ++t)
    for (std::size_t k = 0; k < h.size() && static_cast<Eigen::Index>(k) <= t; ++k)
      out.col(t) += h[k] * s.col(t - static_cast<Eigen::Index>(k));
  return out;
}

inline FeatureTensor to_feature_tensor(const Eigen::MatrixXd& m, std::string unit, std::string source) {
  FeatureTensor out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), kModelRateHz,
                    std::move(unit), std::move(source));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = static_cast<float>(m(r, c));
  return out;
}

}  // namespace detail

// Deterministic in (seed, subject, session). Noise comes from its own stream,
// so sessions differing only in noise_sd see the same draws scaled.
inline SyntheticSession make_synthetic_session(const SynthConfig& cfg, const SyntheticSubject& subj,
                                               std::size_t subject, std::size_t session) {
  cfg.validate();
  const std::uint64_t key = (static_cast<std::uint64_t>(subject) << 20) | session;
  Rng stream_rng(derive_seed(cfg.seed, 0x5e000000ULL ^ mix_seed(key)));
  Rng noise_rng(derive_seed(cfg.seed, 0xa0000000ULL ^ mix_seed(key)));
  const std::size_t T = cfg.samples();

  SyntheticSession out;
  out.attended_index = stream_rng.coin() ? 2 : 1;
  std::array<Eigen::MatrixXd, 2> raw;
  for (std::size_t i = 0; i < 2; ++i) {
    raw[i] = detail::smooth_stream(stream_rng, cfg.feature_dim, T, cfg.stream_smoothing);
    out.responses[i] = detail::causal_filter(raw[i], subj.response);
    out.streams[i] = detail::to_feature_tensor(raw[i], "feature", "synthetic");
  }
  const auto att = static_cast<std::size_t>(out.attended_index - 1);
  Eigen::MatrixXd eeg = subj.mixing * (cfg.coupling_gain * out.responses[att] +
                                       cfg.unattended_gain * out.responses[1 - att]);
  for (Eigen::Index c = 0; c < eeg.rows(); ++c)
    for (Eigen::Index t = 0; t < eeg.cols(); ++t) eeg(c, t) += cfg.noise_sd * noise_rng.normal();
  out.eeg = detail::to_feature_tensor(eeg, "uV", "synthetic");
  return out;
}

// Writes eeg/, speech/, manifest.json and synth_config.json under `root`.
inline RecordingManifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& root) {
  cfg.validate();
  RecordingManifest manifest;
  if (cfg.eeg_channels == 32) manifest.channel_names = default_channel_names();
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    const SyntheticSubject subj = make_synthetic_subject(cfg, s);
    for (std::size_t k = 0; k < cfg.sessions_per_subject; ++k) {
      const SyntheticSession sess = make_synthetic_session(cfg, subj, s, k);
      ManifestEntry e;
      e.subject_id = synthetic_subject_id(s);
      e.session_id = synthetic_session_id(k);
      const std::string stem = e.subject_id + "_" + e.session_id;
      e.eeg_path = "eeg/" + stem + ".ftf";
      e.stream_paths = {"speech/" + stem + "_1.ftf", "speech/" + stem + "_2.ftf"};
      e.attended_index = sess.attended_index;
      e.duration_s = cfg.duration_s;
      write_feature_file(root / e.eeg_path, sess.eeg);
      write_feature_file(root / e.stream_paths[0], sess.streams[0]);
      write_feature_file(root / e.stream_paths[1], sess.streams[1]);
      manifest.entries.push_back(std::move(e));
    }
  }
  write_manifest(root / "manifest.json", manifest);
  write_text_file(root / "synth_config.json", nlohmann::json(cfg).dump(2) + "\n");
  return manifest;
}

struct CouplingDiagnostics {
  double attended_correlation = 0.0;
  double unattended_correlation = 0.0;
};

inline double pearson(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::ArrayXd x = Eigen::Map<const Eigen::ArrayXd>(a.data(), a.size());
  const Eigen::ArrayXd y = Eigen::Map<const Eigen::ArrayXd>(b.data(), b.size());
  const Eigen::ArrayXd xc = x - x.mean(), yc = y - y.mean();
  const double denom = std::sqrt((xc * xc).sum() * (yc * yc).sum());
  return denom > 0 ? (xc * yc).sum() / denom : 0.0;
}

// Projects a session's EEG through pinv(M) and correlates the result with
// h ∗ S_att and h ∗ S_unatt.
inline CouplingDiagnostics closed_form_check(const SynthConfig& cfg, std::size_t subject, std::size_t session) {
  const SyntheticSubject subj = make_synthetic_subject(cfg, subject);
  const SyntheticSession sess = make_synthetic_session(cfg, subj, subject, session);
  Eigen::MatrixXd eeg(static_cast<Eigen::Index>(sess.eeg.rows), static_cast<Eigen::Index>(sess.eeg.cols));
  for (std::size_t r = 0; r < sess.eeg.rows; ++r)
    for (std::size_t c = 0; c < sess.eeg.cols; ++c)
      eeg(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = sess.eeg(r, c);
  const Eigen::MatrixXd pinv = subj.mixing.completeOrthogonalDecomposition().pseudoInverse();
  const Eigen::MatrixXd projected = pinv * eeg;
  const auto att = static_cast<std::size_t>(sess.attended_index - 1);
  return {pearson(projected, sess.responses[att]), pearson(projected, sess.responses[1 - att])};
}

}  // namespace diotic
