#pragma once

// Dataset catalog. Plain JSON:
//   {
//     "channel_names": ["Fp1", ...],            (optional)
//     "entries": [
//       {"subject_id": "S01", "session_id": "001",
//        "eeg_path": "eeg/S01_001.ftf",
//        "stream_paths": ["speech/a.ftf", "speech/b.ftf"],
//        "attended_index": 1, "duration_s": 64.0}
//     ]
//   }
// Paths are relative to the dataset root.

#include <algorithm>
#include <array>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diotic/io.hpp"

namespace diotic {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestEntry {
  std::string subject_id;
  std::string session_id;
  std::string eeg_path;
  std::array<std::string, 2> stream_paths;
  int attended_index = 1;  // 1 or 2, indexes stream_paths
  double duration_s = 0.0;

  const std::string& attended_path() const { return stream_paths[static_cast<std::size_t>(attended_index - 1)]; }
  const std::string& unattended_path() const { return stream_paths[static_cast<std::size_t>(2 - attended_index)]; }
  std::string key() const { return subject_id + "/" + session_id; }
};

// Standard 32-channel 10–20 layout of the recordings.
inline std::vector<std::string> default_channel_names() {
  return {"Fp1", "Fp2", "F7", "F3", "Fz",  "F4",  "F8",  "FC5", "FC1", "FC2", "FC6",
          "T7",  "C3",  "Cz", "C4", "T8",  "TP9", "CP5", "CP1", "CP2", "CP6", "TP10",
          "P7",  "P3",  "Pz", "P4", "P8",  "PO9", "O1",  "Oz",  "O2",  "PO10"};
}

struct RecordingManifest {
  std::vector<std::string> channel_names;
  std::vector<ManifestEntry> entries;

  // Distinct subject ids, sorted.
  std::vector<std::string> subjects() const {
    std::set<std::string> ids;
    for (const auto& e : entries) ids.insert(e.subject_id);
    return {ids.begin(), ids.end()};
  }
};

inline void to_json(nlohmann::json& j, const ManifestEntry& e) {
  j = {{"subject_id", e.subject_id}, {"session_id", e.session_id},        {"eeg_path", e.eeg_path},
       {"stream_paths", e.stream_paths}, {"attended_index", e.attended_index}, {"duration_s", e.duration_s}};
}

inline void from_json(const nlohmann::json& j, ManifestEntry& e) {
  static const std::set<std::string> known{"subject_id", "session_id", "eeg_path",
                                           "stream_paths", "attended_index", "duration_s"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ManifestError("unknown manifest entry key \"" + key + "\"");
  e.subject_id = j.at("subject_id").get<std::string>();
  e.session_id = j.at("session_id").get<std::string>();
  e.eeg_path = j.at("eeg_path").get<std::string>();
  const auto& streams = j.at("stream_paths");
  if (!streams.is_array() || streams.size() != 2) throw ManifestError(e.key() + ": stream_paths must list 2 files");
  e.stream_paths = {streams[0].get<std::string>(), streams[1].get<std::string>()};
  e.attended_index = j.at("attended_index").get<int>();
  if (e.attended_index != 1 && e.attended_index != 2)
    throw ManifestError(e.key() + ": attended_index must be 1 or 2, got " + std::to_string(e.attended_index));
  e.duration_s = j.at("duration_s").get<double>();
}

inline nlohmann::json manifest_to_json(const RecordingManifest& m) {
  nlohmann::json j;
  j["channel_names"] = m.channel_names;
  j["entries"] = m.entries;
  return j;
}

inline RecordingManifest manifest_from_json(const nlohmann::json& j) {
  RecordingManifest m;
  try {
    for (const auto& [key, _] : j.items())
      if (key != "channel_names" && key != "entries") throw ManifestError("unknown manifest key \"" + key + "\"");
    m.channel_names = j.value("channel_names", std::vector<std::string>{});
    m.entries = j.at("entries").get<std::vector<ManifestEntry>>();
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
  std::set<std::string> seen;
  for (const auto& e : m.entries)
    if (!seen.insert(e.key()).second) throw ManifestError("duplicate manifest entry " + e.key());
  return m;
}

inline RecordingManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

inline void write_manifest(const std::filesystem::path& path, const RecordingManifest& m) {
  write_text_file(path, manifest_to_json(m).dump(2) + "\n");
}

// Resolves the dataset root: explicit flag first, then $DIOTIC_DATASET_ROOT.
inline std::filesystem::path resolve_dataset_root(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("DIOTIC_DATASET_ROOT"); env && *env) return env;
  throw ManifestError("no dataset root: pass --dataset-root or set DIOTIC_DATASET_ROOT");
}

// Checks that every referenced file exists and parses. Returns one message per
// failing entry; empty means valid.
inline std::vector<std::string> validate_manifest_files(const RecordingManifest& m, const std::filesystem::path& root) {
  std::vector<std::string> errors;
  for (const auto& e : m.entries) {
    for (const auto& rel : {e.eeg_path, e.stream_paths[0], e.stream_paths[1]}) {
      try {
        (void)read_feature_file(root / rel);
      } catch (const std::exception& ex) {
        errors.push_back(e.key() + ": " + ex.what());
      }
    }
  }
  return errors;
}

}  // namespace diotic
