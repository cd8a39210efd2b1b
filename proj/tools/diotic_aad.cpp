// diotic_aad: preprocessing, PCA, training, cross-validation, match-mismatch,
// attribution and synthetic data from the command line.
//
// Every subcommand writes into --out:
//   config.json   effective configuration; `--config config.json` reruns it
//   report.json   machine-readable results
//   summary.csv   one-line-per-item summary
//   errors.json   array of {stage, item, message}; empty on success
// and exits 0 iff errors.json is empty.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "diotic/attribution.hpp"
#include "diotic/dataset.hpp"
#include "diotic/dsp.hpp"
#include "diotic/io.hpp"
#include "diotic/manifest.hpp"
#include "diotic/model.hpp"
#include "diotic/pca.hpp"
#include "diotic/synthetic.hpp"
#include "diotic/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace diotic;

namespace {

struct PcaSettings {
  std::size_t components = 64;
  double output_rate_hz = 64.0;
  std::size_t max_fit_frames = 100000;  // evenly strided subset of training frames
};

struct AttributionSettings {
  std::size_t n_draws = 32;
  std::size_t baseline_pool = 64;
  std::size_t max_samples = 0;  // 0 = every test sample
  std::uint64_t seed = 0;
};

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& what) {
  if (!j.is_object()) throw std::invalid_argument(what + " config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("unknown " + what + " config key \"" + key + "\"");
}

void to_json(json& j, const PcaSettings& c) {
  j = {{"components", c.components}, {"output_rate_hz", c.output_rate_hz}, {"max_fit_frames", c.max_fit_frames}};
}

void from_json(const json& j, PcaSettings& c) {
  reject_unknown(j, {"components", "output_rate_hz", "max_fit_frames"}, "pca");
  c.components = j.value("components", c.components);
  c.output_rate_hz = j.value("output_rate_hz", c.output_rate_hz);
  c.max_fit_frames = j.value("max_fit_frames", c.max_fit_frames);
}

void to_json(json& j, const AttributionSettings& c) {
  j = {{"n_draws", c.n_draws}, {"baseline_pool", c.baseline_pool}, {"max_samples", c.max_samples}, {"seed", c.seed}};
}

void from_json(const json& j, AttributionSettings& c) {
  reject_unknown(j, {"n_draws", "baseline_pool", "max_samples", "seed"}, "attribution");
  c.n_draws = j.value("n_draws", c.n_draws);
  c.baseline_pool = j.value("baseline_pool", c.baseline_pool);
  c.max_samples = j.value("max_samples", c.max_samples);
  c.seed = j.value("seed", c.seed);
}

struct RunConfig {
  std::string subcommand;
  std::string dataset_root;
  std::string out;
  std::string checkpoint;
  std::string against;
  double window_s = 5.0;
  std::string task = "aad";
  std::string stream = "attended";
  std::vector<std::size_t> folds;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  ModelConfig model;
  TrainConfig train;
  EegPipelineConfig preprocess;
  PcaSettings pca;
  AttributionSettings attribution;
  SynthConfig synth;
};

void to_json(json& j, const RunConfig& c) {
  j = {{"subcommand", c.subcommand},
       {"dataset_root", c.dataset_root},
       {"out", c.out},
       {"checkpoint", c.checkpoint},
       {"against", c.against},
       {"window_s", c.window_s},
       {"task", c.task},
       {"stream", c.stream},
       {"folds", c.folds},
       {"seed", c.seed},
       {"jobs", c.jobs},
       {"model", c.model},
       {"train", c.train},
       {"preprocess", c.preprocess},
       {"pca", c.pca},
       {"attribution", c.attribution},
       {"synth", c.synth}};
}

void from_json(const json& j, RunConfig& c) {
  reject_unknown(j,
                 {"subcommand", "dataset_root", "out", "checkpoint", "against", "window_s", "task", "stream", "folds",
                  "seed", "jobs", "model", "train", "preprocess", "pca", "attribution", "synth"},
                 "run");
  c.subcommand = j.value("subcommand", c.subcommand);
  c.dataset_root = j.value("dataset_root", c.dataset_root);
  c.out = j.value("out", c.out);
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  c.against = j.value("against", c.against);
  c.window_s = j.value("window_s", c.window_s);
  c.task = j.value("task", c.task);
  c.stream = j.value("stream", c.stream);
  c.folds = j.value("folds", c.folds);
  c.seed = j.value("seed", c.seed);
  c.jobs = j.value("jobs", c.jobs);
  if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
  if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
  if (j.contains("preprocess")) c.preprocess = j["preprocess"].get<EegPipelineConfig>();
  if (j.contains("pca")) c.pca = j["pca"].get<PcaSettings>();
  if (j.contains("attribution")) c.attribution = j["attribution"].get<AttributionSettings>();
  if (j.contains("synth")) c.synth = j["synth"].get<SynthConfig>();
}

class ErrorLog {
 public:
  void add(const std::string& stage, const std::string& item, const std::string& message) {
    std::lock_guard lock(mutex_);
    std::cerr << "error: " << stage << (item.empty() ? "" : " " + item) << ": " << message << '\n';
    items_.push_back({{"stage", stage}, {"item", item}, {"message", message}});
  }
  bool empty() const { return items_.empty(); }
  const json& items() const { return items_; }

 private:
  std::mutex mutex_;
  json items_ = json::array();
};

struct Outputs {
  json report = json::object();
  std::string summary_csv;
};

template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& f) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  for (auto& t : workers) t.join();
}

std::string hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// Writes only when the content differs. Returns true if the file was written.
bool write_if_changed(const fs::path& path, const std::string& bytes, bool binary) {
  if (fs::exists(path) && read_file_bytes(path) == bytes) return false;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return true;
}

bool copy_if_changed(const fs::path& from, const fs::path& to) {
  return write_if_changed(to, read_file_bytes(from), true);
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

FoldSplit select_split(const Dataset& data, const RunConfig& cfg) {
  const auto splits = make_fold_splits(data.subjects(), cfg.seed);
  const std::size_t k = cfg.folds.empty() ? 0 : cfg.folds.front();
  if (k >= splits.size()) throw std::invalid_argument("fold " + std::to_string(k) + " out of range");
  return splits[k];
}

CrossValOptions crossval_options(const RunConfig& cfg) {
  CrossValOptions opt;
  opt.model = cfg.model;
  opt.train = cfg.train;
  opt.split_seed = cfg.seed;
  opt.sample_seed = cfg.seed;
  opt.folds = cfg.folds;
  opt.jobs = cfg.jobs;
  return opt;
}

std::string accuracy_row(const std::string& fold, double window_s, const std::string& task,
                         const std::optional<double>& acc) {
  return fold + "," + fmt(window_s, 1) + "," + task + "," + (acc ? fmt(*acc, 6) : "") + "\n";
}

// ---------------------------------------------------------------------------

void cmd_synth(const RunConfig& cfg, Outputs& out, ErrorLog&) {
  const RecordingManifest m = generate_synthetic(cfg.synth, cfg.out);
  const CouplingDiagnostics d = closed_form_check(cfg.synth, 0, 0);
  out.report = {{"dataset_root", cfg.out},
                {"subjects", m.subjects().size()},
                {"sessions", m.entries.size()},
                {"closed_form_check", {{"attended_correlation", d.attended_correlation},
                                       {"unattended_correlation", d.unattended_correlation}}}};
  out.summary_csv = "subject,session,attended_index,duration_s\n";
  for (const auto& e : m.entries)
    out.summary_csv += e.subject_id + "," + e.session_id + "," + std::to_string(e.attended_index) + "," +
                       fmt(e.duration_s, 3) + "\n";
  std::cout << "wrote " << m.entries.size() << " synthetic sessions for " << m.subjects().size() << " subjects to "
            << cfg.out << "\n";
}

void cmd_preprocess(const RunConfig& cfg, Outputs& out, ErrorLog& log) {
  const fs::path root = cfg.dataset_root, dst = cfg.out;
  const RecordingManifest m = read_manifest(root / "manifest.json");
  const std::string settings = json(cfg.preprocess).dump();

  std::set<std::string> streams;
  for (const auto& e : m.entries) streams.insert({e.stream_paths[0], e.stream_paths[1]});
  std::size_t streams_copied = 0;
  for (const auto& rel : streams) {
    try {
      streams_copied += copy_if_changed(root / rel, dst / rel) ? 1 : 0;
    } catch (const std::exception& ex) {
      log.add("preprocess", rel, ex.what());
    }
  }

  std::vector<std::string> status(m.entries.size());
  parallel_for(m.entries.size(), cfg.jobs, [&](std::size_t i) {
    const auto& e = m.entries[i];
    try {
      const std::string raw = read_file_bytes(root / e.eeg_path);
      const std::string hash = hex(hash_string(raw) ^ hash_string(settings));
      const fs::path target = dst / e.eeg_path;
      if (fs::exists(target)) {
        try {
          if (read_feature_file(target).attributes.value("source_hash", "") == hash) {
            status[i] = "skipped";
            return;
          }
        } catch (const FileFormatError&) {
        }
      }
      FeatureTensor x = preprocess_eeg(decode_feature_tensor(raw, (root / e.eeg_path).string()), cfg.preprocess);
      x.attributes["source_hash"] = hash;
      x.attributes["preprocess"] = json(cfg.preprocess);
      write_feature_file(target, x);
      status[i] = "written";
    } catch (const std::exception& ex) {
      status[i] = "error";
      log.add("preprocess", e.key(), ex.what());
    }
  });
  write_if_changed(dst / "manifest.json", manifest_to_json(m).dump(2) + "\n", false);

  json items = json::array();
  out.summary_csv = "subject,session,status\n";
  std::map<std::string, std::size_t> counts;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    items.push_back({{"entry", m.entries[i].key()}, {"status", status[i]}});
    out.summary_csv += m.entries[i].subject_id + "," + m.entries[i].session_id + "," + status[i] + "\n";
    ++counts[status[i]];
  }
  out.report = {{"entries", items}, {"counts", counts}, {"streams_copied", streams_copied}};
  std::cout << "preprocess: " << counts["written"] << " written, " << counts["skipped"] << " up to date, "
            << counts["error"] << " failed\n";
}

void cmd_pca(const RunConfig& cfg, Outputs& out, ErrorLog& log) {
  const fs::path root = cfg.dataset_root, dst = cfg.out;
  const Dataset data = Dataset::open(root);
  const RecordingManifest& m = data.manifest();
  const FoldSplit split = select_split(data, cfg);

  std::set<std::string> train_streams, all_streams, eeg_files;
  for (const auto& e : m.entries) {
    all_streams.insert({e.stream_paths[0], e.stream_paths[1]});
    eeg_files.insert(e.eeg_path);
    if (std::find(split.train_subjects.begin(), split.train_subjects.end(), e.subject_id) !=
        split.train_subjects.end())
      train_streams.insert({e.stream_paths[0], e.stream_paths[1]});
  }

  std::map<std::string, FeatureTensor> features;
  for (const auto& rel : all_streams) {
    try {
      features.emplace(rel, read_feature_file(root / rel));
    } catch (const std::exception& ex) {
      log.add("pca", rel, ex.what());
    }
  }
  if (!log.empty()) throw std::runtime_error("missing or unreadable speech features");

  std::size_t total_frames = 0, dim = 0;
  for (const auto& rel : train_streams) {
    total_frames += features.at(rel).cols;
    dim = features.at(rel).rows;
  }
  const std::size_t stride = std::max<std::size_t>(1, (total_frames + cfg.pca.max_fit_frames - 1) /
                                                          std::max<std::size_t>(cfg.pca.max_fit_frames, 1));
  std::vector<std::vector<float>> frames;
  std::size_t counter = 0;
  for (const auto& rel : train_streams) {
    const FeatureTensor& f = features.at(rel);
    if (f.rows != dim) throw DimensionError(rel + ": feature dimension " + std::to_string(f.rows) + ", expected " +
                                            std::to_string(dim));
    for (std::size_t t = 0; t < f.cols; ++t, ++counter) {
      if (counter % stride) continue;
      std::vector<float> row(dim);
      for (std::size_t r = 0; r < dim; ++r) row[r] = f(r, t);
      frames.push_back(std::move(row));
    }
  }
  RowMatrix rows(static_cast<Eigen::Index>(frames.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < frames.size(); ++i)
    for (std::size_t r = 0; r < dim; ++r) rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) = frames[i][r];
  const PcaModel pca = pca_fit(rows, cfg.pca.components);

  const PcaTensors saved = pca_to_tensors(pca);
  write_feature_file(dst / "pca" / "mean.ftf", saved.mean);
  write_feature_file(dst / "pca" / "components.ftf", saved.components);
  write_feature_file(dst / "pca" / "explained_variance.ftf", saved.variance);

  for (const auto& [rel, f] : features) {
    try {
      FeatureTensor y = pca_transform_features(pca, f);
      if (std::abs(y.sample_rate_hz - cfg.pca.output_rate_hz) > 1e-9) y = resample(y, cfg.pca.output_rate_hz);
      y.attributes["pca_components"] = cfg.pca.components;
      y.attributes["pca_input_dim"] = dim;
      write_feature_file(dst / rel, y);
    } catch (const std::exception& ex) {
      log.add("pca", rel, ex.what());
    }
  }
  for (const auto& rel : eeg_files) {
    try {
      copy_if_changed(root / rel, dst / rel);
    } catch (const std::exception& ex) {
      log.add("pca", rel, ex.what());
    }
  }
  write_if_changed(dst / "manifest.json", manifest_to_json(m).dump(2) + "\n", false);

  std::vector<double> variance(pca.explained_variance.data(),
                               pca.explained_variance.data() + pca.explained_variance.size());
  out.report = {{"fold", split.fold_index},        {"input_dim", dim},
                {"components", cfg.pca.components}, {"fit_frames", frames.size()},
                {"stream_files", features.size()},  {"explained_variance", variance}};
  out.summary_csv = "component,explained_variance\n";
  for (std::size_t i = 0; i < variance.size(); ++i)
    out.summary_csv += std::to_string(i + 1) + "," + fmt(variance[i], 8) + "\n";
  std::cout << "pca: " << dim << " -> " << cfg.pca.components << " dims fit on " << frames.size()
            << " frames, " << features.size() << " stream files transformed\n";
}

void report_fold(const RunConfig& cfg, const FoldResult& r, Task task, Outputs& out, ErrorLog& log) {
  if (!r.accuracy) log.add(cfg.subcommand, "fold " + std::to_string(r.fold_index), r.error);
  out.report = r;
  out.report["task"] = to_string(task);
  out.report["window_s"] = cfg.window_s;
  out.summary_csv = "fold,window_s,task,accuracy\n" +
                    accuracy_row(std::to_string(r.fold_index), cfg.window_s, to_string(task), r.accuracy);
  if (r.accuracy)
    std::cout << cfg.subcommand << ": fold " << r.fold_index << " " << to_string(task) << " " << cfg.window_s
              << " s accuracy " << fmt(*r.accuracy) << "\n";
}

void cmd_train(const RunConfig& cfg, Outputs& out, ErrorLog& log) {
  const Dataset data = Dataset::open(cfg.dataset_root);
  const Task task = parse_task(cfg.task);
  DualEncoder model;
  const FoldResult r = run_fold(data, select_split(data, cfg), cfg.window_s, task, crossval_options(cfg), &model);
  if (r.accuracy) save_checkpoint(fs::path(cfg.out) / "checkpoint", model);
  report_fold(cfg, r, task, out, log);
}

void cmd_mmm(const RunConfig& cfg, Outputs& out, ErrorLog& log) {
  const Dataset data = Dataset::open(cfg.dataset_root);
  StreamType stream;
  if (cfg.stream == "attended") stream = StreamType::attended;
  else if (cfg.stream == "unattended") stream = StreamType::unattended;
  else throw std::invalid_argument("--stream must be attended or unattended, got \"" + cfg.stream + "\"");
  const Task task = stream == StreamType::attended ? Task::mmm_attended : Task::mmm_unattended;
  DualEncoder model;
  const FoldResult r = train_mmm(data, select_split(data, cfg), cfg.window_s, stream, crossval_options(cfg), &model);
  if (r.accuracy) save_checkpoint(fs::path(cfg.out) / ("checkpoint_" + to_string(task)), model);
  report_fold(cfg, r, task, out, log);
}

void cmd_crossval(const RunConfig& cfg, Outputs& out, ErrorLog& log) {
  const Dataset data = Dataset::open(cfg.dataset_root);
  const Task task = parse_task(cfg.task);
  CrossValOptions opt = crossval_options(cfg);
  opt.on_fold_done = [&](const FoldSplit& split, const DualEncoder& model, const FoldResult&) {
    save_checkpoint(fs::path(cfg.out) / ("fold_" + std::to_string(split.fold_index)) / "checkpoint", model);
  };
  const CrossValReport r = cross_validate(data, cfg.window_s, task, opt);
  out.report = r;
  out.summary_csv = "fold,window_s,task,accuracy\n";
  for (const auto& f : r.folds) {
    if (!f.accuracy) log.add("crossval", "fold " + std::to_string(f.fold_index), f.error);
    out.summary_csv += accuracy_row(std::to_string(f.fold_index), cfg.window_s, to_string(task), f.accuracy);
    std::cout << "fold " << f.fold_index << ": " << (f.accuracy ? fmt(*f.accuracy) : "failed") << "\n";
  }
  out.summary_csv += accuracy_row("mean", cfg.window_s, to_string(task), r.mean_accuracy);
  out.summary_csv += accuracy_row("sd", cfg.window_s, to_string(task), r.sd_accuracy);
  std::cout << "crossval " << to_string(task) << " " << cfg.window_s << " s: " << fmt(r.mean_accuracy) << " ± "
            << fmt(r.sd_accuracy) << "\n";
}

// Reads a channel,value CSV as written by channel_csv.
std::pair<std::vector<std::string>, std::vector<double>> read_channel_csv(const fs::path& path) {
  std::istringstream in(read_file_bytes(path));
  std::string line;
  std::getline(in, line);
  if (line != "channel,value") throw std::runtime_error(path.string() + ": expected header channel,value");
  std::vector<std::string> names;
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error(path.string() + ": malformed line \"" + line + "\"");
    names.push_back(line.substr(0, comma));
    values.push_back(std::stod(line.substr(comma + 1)));
  }
  return {names, values};
}

// --checkpoint is either one checkpoint (attributed on the test subjects of
// --fold, default 0) or a crossval output directory, in which case every
// fold_<k>/checkpoint (or those selected by --fold) is attributed on its own
// test subjects and the maps are pooled.
bool is_checkpoint(const fs::path& p) { return fs::exists(p / "config.json") && fs::exists(p / "attention_logits.ftf"); }

std::vector<std::pair<std::size_t, fs::path>> attribution_models(const RunConfig& cfg) {
  const fs::path ck = cfg.checkpoint;
  if (is_checkpoint(ck)) return {{cfg.folds.empty() ? 0 : cfg.folds.front(), ck}};
  std::vector<std::pair<std::size_t, fs::path>> out;
  for (std::size_t k = 0; k < kFoldCount; ++k) {
    const fs::path p = ck / ("fold_" + std::to_string(k)) / "checkpoint";
    const bool wanted = cfg.folds.empty() || std::find(cfg.folds.begin(), cfg.folds.end(), k) != cfg.folds.end();
    if (wanted && is_checkpoint(p)) out.emplace_back(k, p);
  }
  if (out.empty()) throw std::runtime_error(ck.string() + ": no checkpoint found");
  return out;
}

void cmd_attribute(const RunConfig& cfg, Outputs& out, ErrorLog& log) {
  if (cfg.checkpoint.empty()) throw std::invalid_argument("attribute needs --checkpoint");
  const Dataset data = Dataset::open(cfg.dataset_root);
  const Task task = parse_task(cfg.task);
  const auto splits = make_fold_splits(data.subjects(), cfg.seed);

  std::vector<FeatureTensor> attrs;
  json folds = json::array();
  std::size_t pool_size = 0;
  for (const auto& [k, path] : attribution_models(cfg)) {
    const DualEncoder model = load_checkpoint(path);
    const FoldSplit& split = splits.at(k);
    std::vector<Sample> test = make_samples(data.load(split.test_subjects), cfg.window_s, task, cfg.seed);
    const std::vector<Sample> train = make_samples(data.load(split.train_subjects), cfg.window_s, task, cfg.seed);
    if (test.empty() || train.empty()) throw std::runtime_error("fold " + std::to_string(k) + ": no samples");

    Rng rng(derive_seed(cfg.attribution.seed, 0xa70 + k));
    std::vector<FeatureTensor> pool;
    for (std::size_t i = 0; i < std::max<std::size_t>(1, cfg.attribution.baseline_pool); ++i)
      pool.push_back(train[static_cast<std::size_t>(rng.uniform_index(train.size()))].eeg);
    if (cfg.attribution.max_samples > 0 && cfg.attribution.max_samples < test.size()) {
      rng.shuffle(test);
      test.resize(cfg.attribution.max_samples);
    }
    std::vector<FeatureTensor> fold_attrs(test.size());
    parallel_for(test.size(), cfg.jobs, [&](std::size_t i) {
      fold_attrs[i] = attribute_sample(model, test[i], pool,
                                       {cfg.attribution.n_draws, derive_seed(cfg.attribution.seed, 1000 * k + i)});
    });
    attrs.insert(attrs.end(), std::make_move_iterator(fold_attrs.begin()), std::make_move_iterator(fold_attrs.end()));
    folds.push_back({{"fold", k}, {"checkpoint", path.string()}, {"samples", test.size()}});
    pool_size = pool.size();
  }

  std::vector<std::string> names = data.channel_names();
  if (names.size() != attrs.front().rows) names.clear();
  const AttributionMap map = channel_importance(attrs, names, to_string(task));
  const fs::path stem = fs::path(cfg.out) / ("attribution_" + to_string(task));
  export_attribution(stem, map);

  out.report = {{"task", to_string(task)},  {"folds", folds}, {"samples", attrs.size()},
                {"n_draws", cfg.attribution.n_draws}, {"baseline_pool", pool_size},
                {"channel_names", map.channel_names}, {"per_channel", map.per_channel}};
  out.summary_csv = channel_csv(map.channel_names, map.per_channel);

  if (!cfg.against.empty()) {
    try {
      auto [other_names, other_values] = read_channel_csv(cfg.against);
      AttributionMap other;
      other.channel_names = std::move(other_names);
      other.per_channel = std::move(other_values);
      const auto diff = difference_map(map, other);
      write_text_file(fs::path(cfg.out) / ("difference_" + to_string(task) + ".csv"),
                      channel_csv(map.channel_names, diff));
      out.report["difference"] = diff;
    } catch (const std::exception& ex) {
      log.add("attribute", cfg.against, ex.what());
    }
  }
  std::cout << "attribute: " << attrs.size() << " samples from " << folds.size() << " fold(s), map written to " << stem.string() << ".csv\n";
}

struct Flags {
  std::string config_path, dataset_root, out, checkpoint, against, task, stream;
  double window_s = 0;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
  std::vector<std::size_t> folds;
};

void add_common(CLI::App* sub, Flags& f, bool dataset = true) {
  sub->add_option("--out", f.out, "Output directory")->required();
  sub->add_option("--config", f.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", f.seed, "Seed for splits, sampling, initialization and generation");
  sub->add_option("--jobs", f.jobs, "Worker threads (default: logical cores)");
  if (dataset) {
    sub->add_option("--dataset-root", f.dataset_root, "Dataset root (default: $DIOTIC_DATASET_ROOT)");
    sub->add_option("--fold", f.folds, "Fold index (repeatable for crossval)");
  }
}

void add_model_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--window", f.window_s, "Window length in seconds: 1, 3 or 5");
  sub->add_option("--task", f.task, "aad, mmm-att or mmm-unatt");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG auditory attention decoding for diotic listening"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset into --out");
  add_common(synth, f, false);
  auto* preprocess = app.add_subcommand("preprocess", "Filter, re-reference and resample raw EEG");
  add_common(preprocess, f);
  auto* pca = app.add_subcommand("pca", "Fit PCA on training-split speech features and transform all");
  add_common(pca, f);
  auto* train = app.add_subcommand("train", "Train and test one fold");
  add_common(train, f);
  add_model_flags(train, f);
  auto* crossval = app.add_subcommand("crossval", "Subject-wise 7-fold cross-validation");
  add_common(crossval, f);
  add_model_flags(crossval, f);
  auto* mmm = app.add_subcommand("mmm", "Train a match-mismatch model on one stream");
  add_common(mmm, f);
  mmm->add_option("--window", f.window_s, "Window length in seconds: 1, 3 or 5");
  mmm->add_option("--stream", f.stream, "attended or unattended")->check(CLI::IsMember({"attended", "unattended"}));
  auto* attribute = app.add_subcommand("attribute", "Expected-gradients channel importance of a checkpoint");
  add_common(attribute, f);
  add_model_flags(attribute, f);
  attribute->add_option("--checkpoint", f.checkpoint, "Checkpoint directory or crossval output directory")->required();
  attribute->add_option("--against", f.against, "Channel CSV subtracted from this map");

  CLI11_PARSE(app, argc, argv);
  CLI::App* sub = app.get_subcommands().front();

  RunConfig cfg;
  ErrorLog log;
  Outputs out;
  fs::path out_dir = f.out;
  try {
    cfg.jobs = std::max(1u, std::thread::hardware_concurrency());
    if (!f.config_path.empty()) {
      cfg = json::parse(read_file_bytes(f.config_path)).get<RunConfig>();
      if (!cfg.subcommand.empty() && cfg.subcommand != sub->get_name())
        throw std::invalid_argument("config was written for \"" + cfg.subcommand + "\", not \"" + sub->get_name() +
                                    "\"");
    }
    cfg.subcommand = sub->get_name();
    cfg.out = f.out;
    if (sub->count("--seed")) {
      cfg.seed = f.seed;
      cfg.train.seed = f.seed;
      cfg.synth.seed = f.seed;
      cfg.attribution.seed = f.seed;
    }
    if (sub->count("--jobs")) cfg.jobs = std::max<std::size_t>(1, f.jobs);
    if (sub->get_option_no_throw("--fold") && sub->count("--fold")) cfg.folds = f.folds;
    if (sub->get_option_no_throw("--window") && sub->count("--window")) cfg.window_s = f.window_s;
    if (sub->get_option_no_throw("--task") && sub->count("--task")) cfg.task = f.task;
    if (sub->get_option_no_throw("--stream") && sub->count("--stream")) cfg.stream = f.stream;
    if (sub->get_option_no_throw("--checkpoint") && sub->count("--checkpoint"))
      cfg.checkpoint = fs::absolute(f.checkpoint).string();
    if (sub->get_option_no_throw("--against") && sub->count("--against")) cfg.against = f.against;
    if (sub->get_option_no_throw("--dataset-root")) {
      cfg.dataset_root = resolve_dataset_root(f.dataset_root.empty() ? cfg.dataset_root : f.dataset_root).string();
      cfg.dataset_root = fs::absolute(cfg.dataset_root).string();
    }
    (void)parse_task(cfg.task);
    if (cfg.window_s != 1.0 && cfg.window_s != 3.0 && cfg.window_s != 5.0)
      throw std::invalid_argument("window must be 1, 3 or 5 s, got " + fmt(cfg.window_s, 3));
    cfg.model.validate();
    cfg.train.validate();
    cfg.synth.validate();

    fs::create_directories(out_dir);
    write_text_file(out_dir / "config.json", json(cfg).dump(2) + "\n");

    if (sub == synth) cmd_synth(cfg, out, log);
    else if (sub == preprocess) cmd_preprocess(cfg, out, log);
    else if (sub == pca) cmd_pca(cfg, out, log);
    else if (sub == train) cmd_train(cfg, out, log);
    else if (sub == crossval) cmd_crossval(cfg, out, log);
    else if (sub == mmm) cmd_mmm(cfg, out, log);
    else if (sub == attribute) cmd_attribute(cfg, out, log);
  } catch (const std::exception& ex) {
    log.add(sub->get_name(), "", ex.what());
  }

  try {
    fs::create_directories(out_dir);
    write_text_file(out_dir / "report.json", out.report.dump(2) + "\n");
    write_text_file(out_dir / "summary.csv", out.summary_csv);
    write_text_file(out_dir / "errors.json", log.items().dump(2) + "\n");
  } catch (const std::exception& ex) {
    std::cerr << "error: cannot write outputs to " << out_dir << ": " << ex.what() << '\n';
    return 1;
  }
  return log.empty() ? 0 : 1;
}
