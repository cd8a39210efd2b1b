#pragma once

// Dual-encoder attention classifier. EEG and each candidate speech stream are
// encoded into [F × T] latents, scaled per feature by a shared weight vector,
// flattened, and compared by cosine similarity; a temperature softmax over the
// similarities gives the stream probabilities.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "diotic/dataset.hpp"
#include "diotic/io.hpp"
#include "diotic/ops.hpp"
#include "diotic/rng.hpp"
#include "diotic/tensor.hpp"

namespace diotic {

struct ModelConfig {
  std::size_t eeg_channels = 32;
  std::size_t latent_dim = 64;  // F; also the speech feature dimension
  std::size_t virtual_channels = 64;
  std::size_t n_res_blocks = 5;
  std::size_t kernel_size = 3;
  double temperature = 0.05;

  void validate() const {
    if (!(temperature > 0.0)) throw std::invalid_argument("ModelConfig: temperature must be positive");
    if (kernel_size % 2 == 0) throw std::invalid_argument("ModelConfig: kernel_size must be odd");
    if (eeg_channels == 0 || latent_dim == 0 || virtual_channels == 0)
      throw std::invalid_argument("ModelConfig: dimensions must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"eeg_channels", c.eeg_channels}, {"latent_dim", c.latent_dim},   {"virtual_channels", c.virtual_channels},
       {"n_res_blocks", c.n_res_blocks}, {"kernel_size", c.kernel_size}, {"temperature", c.temperature}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::set<std::string> known{"eeg_channels", "latent_dim",  "virtual_channels",
                                           "n_res_blocks", "kernel_size", "temperature"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("unknown model config key \"" + key + "\"");
  c.eeg_channels = j.value("eeg_channels", c.eeg_channels);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.virtual_channels = j.value("virtual_channels", c.virtual_channels);
  c.n_res_blocks = j.value("n_res_blocks", c.n_res_blocks);
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  c.temperature = j.value("temperature", c.temperature);
  c.validate();
}

inline std::string config_hash(const ModelConfig& c) {
  std::ostringstream os;
  os << std::hex << hash_string(nlohmann::json(c).dump());
  return os.str();
}

struct ConvParams {
  Tensor kernel;  // [Cout × Cin × K]
  Tensor bias;    // [Cout]
};

struct NormParams {
  Tensor scale;  // [F]
  Tensor shift;  // [F]
};

struct ResidualBlock {
  NormParams norm1;
  ConvParams conv1;
  NormParams norm2;
  ConvParams conv2;
};

struct ModelParams {
  Tensor attention_logits;  // [D × C]
  ConvParams input_projection;
  std::vector<ResidualBlock> blocks;
  ConvParams speech_conv1;
  NormParams speech_norm;
  ConvParams speech_conv2;
  Tensor feature_weights;  // w, [F]

  std::vector<std::pair<std::string, Tensor>> named() const {
    std::vector<std::pair<std::string, Tensor>> out{{"attention_logits", attention_logits},
                                                    {"input_projection.kernel", input_projection.kernel},
                                                    {"input_projection.bias", input_projection.bias}};
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      const auto& blk = blocks[b];
      out.insert(out.end(), {{p + "norm1.scale", blk.norm1.scale}, {p + "norm1.shift", blk.norm1.shift},
                             {p + "conv1.kernel", blk.conv1.kernel}, {p + "conv1.bias", blk.conv1.bias},
                             {p + "norm2.scale", blk.norm2.scale}, {p + "norm2.shift", blk.norm2.shift},
                             {p + "conv2.kernel", blk.conv2.kernel}, {p + "conv2.bias", blk.conv2.bias}});
    }
    out.insert(out.end(), {{"speech_conv1.kernel", speech_conv1.kernel}, {"speech_conv1.bias", speech_conv1.bias},
                           {"speech_norm.scale", speech_norm.scale},     {"speech_norm.shift", speech_norm.shift},
                           {"speech_conv2.kernel", speech_conv2.kernel}, {"speech_conv2.bias", speech_conv2.bias},
                           {"feature_weights", feature_weights}});
    return out;
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (auto& [_, t] : named()) out.push_back(t);
    return out;
  }

  // Deep copy; the result shares no storage with *this.
  ModelParams clone() const {
    ModelParams p = *this;
    auto fresh = [](Tensor& t) { t = t.clone(true); };
    fresh(p.attention_logits);
    for (ConvParams* c : {&p.input_projection, &p.speech_conv1, &p.speech_conv2}) {
      fresh(c->kernel);
      fresh(c->bias);
    }
    fresh(p.speech_norm.scale);
    fresh(p.speech_norm.shift);
    for (auto& b : p.blocks) {
      for (NormParams* n : {&b.norm1, &b.norm2}) {
        fresh(n->scale);
        fresh(n->shift);
      }
      for (ConvParams* c : {&b.conv1, &b.conv2}) {
        fresh(c->kernel);
        fresh(c->bias);
      }
    }
    fresh(p.feature_weights);
    return p;
  }
};

namespace detail {

inline ConvParams init_conv(Rng& rng, std::size_t cout, std::size_t cin, std::size_t k) {
  const double bound = std::sqrt(1.0 / static_cast<double>(cin * k));
  std::vector<float> w(cout * cin * k);
  for (auto& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
  return {Tensor({cout, cin, k}, std::move(w), true), Tensor::zeros({cout}, true)};
}

inline NormParams init_norm(std::size_t f) { return {Tensor::filled({f}, 1.0f, true), Tensor::zeros({f}, true)}; }

}  // namespace detail

// Attention logits start at zero (uniform attention), conv kernels uniform in
// ±sqrt(1/(Cin·K)) with zero bias, norms at identity, w = 1.
inline ModelParams initialize_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x1417));
  const std::size_t F = cfg.latent_dim, K = cfg.kernel_size;
  ModelParams p;
  p.attention_logits = Tensor::zeros({cfg.virtual_channels, cfg.eeg_channels}, true);
  p.input_projection = detail::init_conv(rng, F, cfg.virtual_channels, K);
  for (std::size_t b = 0; b < cfg.n_res_blocks; ++b) {
    ResidualBlock blk;
    blk.norm1 = detail::init_norm(F);
    blk.conv1 = detail::init_conv(rng, F, F, K);
    blk.norm2 = detail::init_norm(F);
    blk.conv2 = detail::init_conv(rng, F, F, K);
    p.blocks.push_back(std::move(blk));
  }
  p.speech_conv1 = detail::init_conv(rng, F, F, K);
  p.speech_norm = detail::init_norm(F);
  p.speech_conv2 = detail::init_conv(rng, F, F, K);
  p.feature_weights = Tensor::filled({F}, 1.0f, true);
  return p;
}

// A = row-softmax(W), each row a distribution over EEG channels; returns A·E.
inline Tensor spatial_attention(Tape& tape, const Tensor& eeg, const Tensor& logits) {
  if (logits.rank() != 2 || eeg.rank() != 2 || logits.dim(1) != eeg.dim(0)) {
    throw DimensionError("spatial_attention: logits " + shape_string(logits.shape()) + " vs EEG " +
                         shape_string(eeg.shape()));
  }
  return matmul(tape, row_softmax(tape, logits), eeg);
}

// Spatial attention, input projection + GELU, then pre-activation residual
// blocks h + conv2(GELU(norm2(conv1(GELU(norm1(h)))))).
inline Tensor eeg_encode(Tape& tape, const Tensor& eeg, const ModelParams& p) {
  Tensor h = spatial_attention(tape, eeg, p.attention_logits);
  h = gelu(tape, conv1d(tape, h, p.input_projection.kernel, p.input_projection.bias));
  for (const auto& blk : p.blocks) {
    Tensor r = gelu(tape, channel_norm(tape, h, blk.norm1.scale, blk.norm1.shift));
    r = conv1d(tape, r, blk.conv1.kernel, blk.conv1.bias);
    r = gelu(tape, channel_norm(tape, r, blk.norm2.scale, blk.norm2.shift));
    r = conv1d(tape, r, blk.conv2.kernel, blk.conv2.bias);
    h = add(tape, h, r);
  }
  return h;
}

// conv → norm → GELU → conv.
inline Tensor speech_encode(Tape& tape, const Tensor& speech, const ModelParams& p) {
  Tensor h = conv1d(tape, speech, p.speech_conv1.kernel, p.speech_conv1.bias);
  h = gelu(tape, channel_norm(tape, h, p.speech_norm.scale, p.speech_norm.shift));
  return conv1d(tape, h, p.speech_conv2.kernel, p.speech_conv2.bias);
}

// diag(w)·Z, flattened row-major.
inline Tensor weight_and_flatten(Tape& tape, const Tensor& latent, const Tensor& w) {
  return flatten(tape, scale_rows(tape, latent, w));
}

// Cosine similarity of the weighted EEG latent with each candidate stream.
inline Tensor similarity_scores(Tape& tape, const Tensor& eeg, const std::vector<Tensor>& streams,
                                const ModelParams& p) {
  const Tensor v_eeg = weight_and_flatten(tape, eeg_encode(tape, eeg, p), p.feature_weights);
  std::vector<Tensor> scores;
  scores.reserve(streams.size());
  for (const auto& s : streams) {
    if (s.rank() != 2 || s.dim(1) != eeg.dim(1))
      throw DimensionError("similarity_scores: stream " + shape_string(s.shape()) + " not aligned with EEG " +
                           shape_string(eeg.shape()));
    const Tensor v = weight_and_flatten(tape, speech_encode(tape, s, p), p.feature_weights);
    scores.push_back(cosine_similarity(tape, v_eeg, v));
  }
  return stack(tape, scores);
}

struct Classification {
  std::vector<double> scores;         // s_i
  std::vector<double> probabilities;  // p̂_i
  int predicted = 1;                  // 1-based; ties go to the lowest index
};

inline Classification classify_scores(std::span<const float> s, double temperature) {
  Tape tape(false);
  const Tensor p = softmax(tape, Tensor::vector({s.begin(), s.end()}), temperature);
  Classification c;
  c.scores.assign(s.begin(), s.end());
  c.probabilities.assign(p.data().begin(), p.data().end());
  std::size_t best = 0;
  for (std::size_t i = 1; i < c.probabilities.size(); ++i)
    if (c.probabilities[i] > c.probabilities[best]) best = i;
  c.predicted = static_cast<int>(best) + 1;
  return c;
}

class DualEncoder {
 public:
  DualEncoder() = default;
  DualEncoder(ModelConfig cfg, ModelParams params) : cfg_(cfg), params_(std::move(params)) { cfg_.validate(); }
  DualEncoder(const ModelConfig& cfg, std::uint64_t seed) : DualEncoder(cfg, initialize_params(cfg, seed)) {}

  const ModelConfig& config() const { return cfg_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  std::vector<Tensor> parameters() const { return params_.tensors(); }

  Tensor scores(Tape& tape, const Tensor& eeg, const Tensor& s1, const Tensor& s2) const {
    return similarity_scores(tape, eeg, {s1, s2}, params_);
  }

  Classification classify(const Tensor& eeg, const Tensor& s1, const Tensor& s2) const {
    Tape tape(false);
    const Tensor s = scores(tape, eeg, s1, s2);
    return classify_scores(s.data(), cfg_.temperature);
  }

  Classification classify(const Sample& sample) const {
    return classify(sample.eeg.to_tensor(), sample.s1.to_tensor(), sample.s2.to_tensor());
  }

  int predict(const Sample& sample) const { return classify(sample).predicted; }

  // Cross-entropy of the temperature softmax against the sample label.
  Tensor sample_loss(Tape& tape, const Sample& sample) const {
    const Tensor s = scores(tape, sample.eeg.to_tensor(), sample.s1.to_tensor(), sample.s2.to_tensor());
    return cross_entropy(tape, s, static_cast<std::size_t>(sample.label - 1), cfg_.temperature);
  }

  // s_y − s_other, differentiable in the EEG input; the attribution target.
  Tensor logit_difference(Tape& tape, const Tensor& eeg, const Sample& sample) const {
    const Tensor s = scores(tape, eeg, sample.s1.to_tensor(), sample.s2.to_tensor());
    const auto y = static_cast<std::size_t>(sample.label - 1);
    return sub(tape, select(tape, s, y), select(tape, s, 1 - y));
  }

 private:
  ModelConfig cfg_;
  ModelParams params_;
};

// Checkpoint layout: <dir>/config.json plus one .ftf per parameter tensor.
// Tensors are stored as [rows × cols] with the original shape in the header
// attribute "tensor_shape".
inline void save_checkpoint(const std::filesystem::path& dir, const DualEncoder& model) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["config"] = model.config();
  meta["config_hash"] = config_hash(model.config());
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, t] : model.params().named()) {
    const std::size_t rows = t.rank() == 0 ? 1 : t.dim(0);
    FeatureTensor ft(rows, t.size() / rows, 0.0, "", name);
    std::copy(t.data().begin(), t.data().end(), ft.values.begin());
    ft.attributes["tensor_shape"] = t.shape();
    write_feature_file(dir / (name + ".ftf"), ft);
    names.push_back(name);
  }
  meta["parameters"] = names;
  write_text_file(dir / "config.json", meta.dump(2) + "\n");
}

inline DualEncoder load_checkpoint(const std::filesystem::path& dir) {
  const auto meta = nlohmann::json::parse(read_file_bytes(dir / "config.json"));
  const ModelConfig cfg = meta.at("config").get<ModelConfig>();
  if (meta.contains("config_hash") && meta["config_hash"].get<std::string>() != config_hash(cfg))
    throw std::runtime_error(dir.string() + ": config hash mismatch");
  ModelParams params = initialize_params(cfg, 0);
  for (auto& [name, t] : params.named()) {
    const FeatureTensor ft = read_feature_file(dir / (name + ".ftf"));
    const auto shape = ft.attributes.value("tensor_shape", Shape{});
    if (shape != t.shape() || ft.values.size() != t.size())
      throw DimensionError(dir.string() + ": parameter " + name + " has shape " + shape_string(shape) +
                           ", config expects " + shape_string(t.shape()));
    auto dst = t.mutable_data();
    std::copy(ft.values.begin(), ft.values.end(), dst.begin());
  }
  return DualEncoder(cfg, std::move(params));
}

}  // namespace diotic
