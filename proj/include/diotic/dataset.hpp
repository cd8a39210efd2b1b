#pragma once

// Loaded recordings, segmentation into aligned windows, construction of AAD and
// match-mismatch samples, and subject-wise cross-validation splits.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "diotic/feature_tensor.hpp"
#include "diotic/io.hpp"
#include "diotic/log.hpp"
#include "diotic/manifest.hpp"
#include "diotic/rng.hpp"

namespace diotic {

inline constexpr double kModelRateHz = 64.0;

enum class Task { aad, mmm_attended, mmm_unattended };

inline std::string to_string(Task task) {
  switch (task) {
    case Task::aad: return "aad";
    case Task::mmm_attended: return "mmm-att";
    case Task::mmm_unattended: return "mmm-unatt";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  if (s == "aad") return Task::aad;
  if (s == "mmm-att" || s == "mmm-attended") return Task::mmm_attended;
  if (s == "mmm-unatt" || s == "mmm-unattended") return Task::mmm_unattended;
  throw std::invalid_argument("unknown task \"" + s + "\" (expected aad, mmm-att or mmm-unatt)");
}

enum class StreamType { attended, unattended };

struct Recording {
  ManifestEntry entry;
  FeatureTensor eeg;
  std::array<FeatureTensor, 2> streams;  // manifest order

  const FeatureTensor& attended() const { return streams[static_cast<std::size_t>(entry.attended_index - 1)]; }
  const FeatureTensor& unattended() const { return streams[static_cast<std::size_t>(2 - entry.attended_index)]; }
  std::size_t common_length() const { return std::min({eeg.cols, streams[0].cols, streams[1].cols}); }
};

struct SampleMeta {
  std::string subject;
  std::string session;
  double t_start_s = 0.0;
  std::optional<double> mismatch_t_start_s;  // M-MM only
  Task task = Task::aad;
};

// One classification instance {E, S1, S2, y}; label is 1 or 2.
struct Sample {
  FeatureTensor eeg;
  FeatureTensor s1;
  FeatureTensor s2;
  int label = 1;
  SampleMeta meta;
};

struct Window {
  std::size_t start = 0;  // in samples
  FeatureTensor eeg;
  std::array<FeatureTensor, 2> streams;
};

inline std::size_t window_samples(double window_s, double fs_hz = kModelRateHz) {
  const double n = window_s * fs_hz;
  if (!(window_s > 0.0) || std::abs(n - std::round(n)) > 1e-9)
    throw std::invalid_argument("window of " + std::to_string(window_s) + " s is not a whole number of samples");
  return static_cast<std::size_t>(std::llround(n));
}

// Non-overlapping consecutive windows from t=0; the remainder is dropped.
inline std::vector<Window> segment(const Recording& rec, double window_s, double fs_hz = kModelRateHz) {
  for (const FeatureTensor* t : {&rec.eeg, &rec.streams[0], &rec.streams[1]}) {
    if (std::abs(t->sample_rate_hz - fs_hz) > 1e-6)
      throw std::invalid_argument(rec.entry.key() + ": expected " + std::to_string(fs_hz) + " Hz data, found " +
                                  std::to_string(t->sample_rate_hz) + " Hz");
  }
  const std::size_t W = window_samples(window_s, fs_hz);
  const std::size_t total = rec.common_length();
  if (W > total)
    throw std::invalid_argument(rec.entry.key() + ": window of " + std::to_string(window_s) +
                                " s exceeds recording length " + std::to_string(total / fs_hz) + " s");
  std::vector<Window> windows;
  for (std::size_t start = 0; start + W <= total; start += W) {
    windows.push_back({start, rec.eeg.window(start, W), {rec.streams[0].window(start, W), rec.streams[1].window(start, W)}});
  }
  return windows;
}

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Manifest plus lazily loaded, cached recordings. Safe to share between
// threads.
class Dataset {
 public:
  Dataset(RecordingManifest manifest, std::filesystem::path root)
      : manifest_(std::move(manifest)), root_(std::move(root)), cache_(manifest_.entries.size()),
        mutexes_(manifest_.entries.size()) {}

  static Dataset open(const std::filesystem::path& root, const std::string& manifest_name = "manifest.json") {
    return Dataset(read_manifest(root / manifest_name), root);
  }

  const RecordingManifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }
  std::vector<std::string> subjects() const { return manifest_.subjects(); }

  std::vector<std::string> channel_names() const {
    return manifest_.channel_names.empty() ? default_channel_names() : manifest_.channel_names;
  }

  std::vector<std::size_t> entries_for(const std::vector<std::string>& subject_ids) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest_.entries.size(); ++i)
      if (std::find(subject_ids.begin(), subject_ids.end(), manifest_.entries[i].subject_id) != subject_ids.end())
        out.push_back(i);
    return out;
  }

  std::shared_ptr<const Recording> recording(std::size_t index) const {
    std::lock_guard lock(mutexes_.at(index));
    if (!cache_[index]) {
      const auto& e = manifest_.entries[index];
      auto rec = std::make_shared<Recording>();
      rec->entry = e;
      rec->eeg = read_feature_file(root_ / e.eeg_path);
      rec->streams = {read_feature_file(root_ / e.stream_paths[0]), read_feature_file(root_ / e.stream_paths[1])};
      cache_[index] = std::move(rec);
    }
    return cache_[index];
  }

  // Loads every entry of the given subjects; failures are collected per entry.
  std::vector<std::shared_ptr<const Recording>> load(const std::vector<std::string>& subject_ids) const {
    std::vector<std::shared_ptr<const Recording>> out;
    std::vector<std::string> errors;
    for (std::size_t i : entries_for(subject_ids)) {
      try {
        out.push_back(recording(i));
      } catch (const std::exception& ex) {
        errors.push_back(manifest_.entries[i].key() + ": " + ex.what());
      }
    }
    if (!errors.empty()) {
      std::string msg = std::to_string(errors.size()) + " recording(s) failed to load:";
      for (const auto& e : errors) msg += "\n  " + e;
      throw DatasetError(msg);
    }
    return out;
  }

 private:
  RecordingManifest manifest_;
  std::filesystem::path root_;
  mutable std::vector<std::shared_ptr<const Recording>> cache_;
  mutable std::vector<std::mutex> mutexes_;
};

namespace detail {
inline Rng session_rng(std::uint64_t seed, const ManifestEntry& e, std::uint64_t purpose) {
  return Rng(derive_seed(derive_seed(seed, purpose), hash_string(e.key())));
}
}  // namespace detail

// AAD samples: one per window, with the presentation order of the two streams
// drawn per sample.
inline std::vector<Sample> make_aad_samples(const std::vector<std::shared_ptr<const Recording>>& recordings,
                                            double window_s, std::uint64_t seed) {
  std::vector<Sample> samples;
  for (const auto& rec : recordings) {
    Rng rng = detail::session_rng(seed, rec->entry, 1);
    const auto att = static_cast<std::size_t>(rec->entry.attended_index - 1);
    for (auto& w : segment(*rec, window_s)) {
      const bool attended_second = rng.coin();
      Sample s;
      s.eeg = std::move(w.eeg);
      s.s1 = std::move(w.streams[attended_second ? 1 - att : att]);
      s.s2 = std::move(w.streams[attended_second ? att : 1 - att]);
      s.label = attended_second ? 2 : 1;
      s.meta = {rec->entry.subject_id, rec->entry.session_id, static_cast<double>(w.start) / kModelRateHz,
                std::nullopt, Task::aad};
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

// Match-mismatch samples from a single stream: the window aligned with the EEG
// against a disjoint window of the same stream and session.
inline std::vector<Sample> make_mmm_samples(const std::vector<std::shared_ptr<const Recording>>& recordings,
                                            double window_s, StreamType stream_type, std::uint64_t seed) {
  std::vector<Sample> samples;
  const std::size_t W = window_samples(window_s);
  for (const auto& rec : recordings) {
    Rng rng = detail::session_rng(seed, rec->entry, stream_type == StreamType::attended ? 2 : 3);
    const FeatureTensor& stream = stream_type == StreamType::attended ? rec->attended() : rec->unattended();
    const std::size_t total = rec->common_length();
    for (auto& w : segment(*rec, window_s)) {
      // Valid t' form two runs: [0, t − W] and [t + W, total − W].
      const std::size_t left = w.start >= W ? w.start - W + 1 : 0;
      const std::size_t right_begin = w.start + W;
      const std::size_t right = right_begin + W <= total ? total - W - right_begin + 1 : 0;
      if (left + right == 0) {
        warn(rec->entry.key() + ": no disjoint mismatch window for t=" + std::to_string(w.start) + ", sample skipped");
        continue;
      }
      const auto pick = static_cast<std::size_t>(rng.uniform_index(left + right));
      const std::size_t t_mis = pick < left ? pick : right_begin + (pick - left);
      const bool match_second = rng.coin();
      FeatureTensor match = stream.window(w.start, W);
      FeatureTensor mismatch = stream.window(t_mis, W);
      Sample s;
      s.eeg = std::move(w.eeg);
      s.s1 = match_second ? std::move(mismatch) : std::move(match);
      s.s2 = match_second ? std::move(match) : std::move(mismatch);
      s.label = match_second ? 2 : 1;
      s.meta = {rec->entry.subject_id, rec->entry.session_id, static_cast<double>(w.start) / kModelRateHz,
                static_cast<double>(t_mis) / kModelRateHz,
                stream_type == StreamType::attended ? Task::mmm_attended : Task::mmm_unattended};
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

inline std::vector<Sample> make_samples(const std::vector<std::shared_ptr<const Recording>>& recordings,
                                        double window_s, Task task, std::uint64_t seed) {
  switch (task) {
    case Task::aad: return make_aad_samples(recordings, window_s, seed);
    case Task::mmm_attended: return make_mmm_samples(recordings, window_s, StreamType::attended, seed);
    case Task::mmm_unattended: return make_mmm_samples(recordings, window_s, StreamType::unattended, seed);
  }
  return {};
}

inline constexpr std::size_t kFoldCount = 7;
inline constexpr std::size_t kSubjectCount = 28;
inline constexpr std::size_t kSubjectsPerGroup = 4;

struct FoldSplit {
  std::size_t fold_index = 0;
  std::vector<std::string> train_subjects;
  std::vector<std::string> val_subjects;
  std::vector<std::string> test_subjects;
};

// Subjects are sorted, shuffled once with the seed and cut into 7 groups of 4.
// Fold k tests on group k, validates on group k+1 (mod 7), trains on the rest.
inline std::vector<FoldSplit> make_fold_splits(std::vector<std::string> subject_ids, std::uint64_t seed) {
  if (subject_ids.size() != kSubjectCount)
    throw std::invalid_argument("make_fold_splits: expected " + std::to_string(kSubjectCount) + " subjects, got " +
                                std::to_string(subject_ids.size()));
  std::sort(subject_ids.begin(), subject_ids.end());
  if (std::adjacent_find(subject_ids.begin(), subject_ids.end()) != subject_ids.end())
    throw std::invalid_argument("make_fold_splits: duplicate subject ids");
  Rng rng(derive_seed(seed, 0xf01d));
  rng.shuffle(subject_ids);
  std::vector<std::vector<std::string>> groups(kFoldCount);
  for (std::size_t i = 0; i < subject_ids.size(); ++i) groups[i / kSubjectsPerGroup].push_back(subject_ids[i]);

  std::vector<FoldSplit> folds;
  for (std::size_t k = 0; k < kFoldCount; ++k) {
    FoldSplit split;
    split.fold_index = k;
    split.test_subjects = groups[k];
    split.val_subjects = groups[(k + 1) % kFoldCount];
    for (std::size_t g = 0; g < kFoldCount; ++g)
      if (g != k && g != (k + 1) % kFoldCount)
        split.train_subjects.insert(split.train_subjects.end(), groups[g].begin(), groups[g].end());
    folds.push_back(std::move(split));
  }
  return folds;
}

}  // namespace diotic
