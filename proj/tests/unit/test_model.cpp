#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "diotic/model.hpp"
#include "model_checks.hpp"
#include "oracles.hpp"

using namespace diotic;

TEST(ModelConfig, ValidationAndJson) {
  ModelConfig cfg;
  EXPECT_EQ(cfg.latent_dim, 64u);
  EXPECT_EQ(cfg.n_res_blocks, 5u);
  EXPECT_DOUBLE_EQ(cfg.temperature, 0.05);
  cfg.kernel_size = 4;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = ModelConfig{};
  cfg.temperature = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(nlohmann::json(checks::reduced_config()).get<ModelConfig>(), checks::reduced_config());
  EXPECT_THROW(nlohmann::json({{"latent", 3}}).get<ModelConfig>(), std::invalid_argument);
  EXPECT_NE(config_hash(ModelConfig{}), config_hash(checks::reduced_config()));
}

TEST(ModelParams, InitializationContract) {
  const ModelParams p = initialize_params(ModelConfig{}, 1);
  for (float v : p.attention_logits.data()) EXPECT_EQ(v, 0.0f);
  for (float v : p.feature_weights.data()) EXPECT_EQ(v, 1.0f);
  const double bound = std::sqrt(1.0 / (64.0 * 3.0));
  for (float v : p.blocks[0].conv1.kernel.data()) EXPECT_LE(std::abs(v), bound);
  for (float v : p.blocks[0].conv1.bias.data()) EXPECT_EQ(v, 0.0f);
  for (float v : p.speech_norm.scale.data()) EXPECT_EQ(v, 1.0f);
  EXPECT_EQ(p.attention_logits.shape(), (Shape{64, 32}));
  EXPECT_EQ(p.blocks.size(), 5u);
}

TEST(SpatialAttention, OneHotAndUniformLimits) {
  Tape tape;
  Tensor e = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  Tensor w = Tensor::matrix(1, 3, {-1e4f, 1e4f, -1e4f});
  Tensor out = spatial_attention(tape, e, w);
  EXPECT_FLOAT_EQ(out.at(0, 0), 3);
  EXPECT_FLOAT_EQ(out.at(0, 1), 4);
  out = spatial_attention(tape, e, Tensor::zeros({2, 3}));
  for (std::size_t d = 0; d < 2; ++d) {
    EXPECT_NEAR(out.at(d, 0), 3.0, 1e-6);
    EXPECT_NEAR(out.at(d, 1), 4.0, 1e-6);
  }
  EXPECT_THROW(spatial_attention(tape, e, Tensor::zeros({2, 4})), DimensionError);
}

TEST(SpatialAttention, MatchesDenseOracle) {
  std::mt19937 gen(31);
  const auto ev = oracle::random_values(gen, 5 * 7), wv = oracle::random_values(gen, 3 * 5, -2, 2);
  Tape tape;
  const Tensor out = spatial_attention(tape, Tensor::matrix(5, 7, ev), Tensor::matrix(3, 5, wv));
  for (std::size_t d = 0; d < 3; ++d) {
    double z = 0;
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(static_cast<double>(wv[d * 5 + c]));
    for (std::size_t t = 0; t < 7; ++t) {
      double acc = 0;
      for (std::size_t c = 0; c < 5; ++c) acc += std::exp(static_cast<double>(wv[d * 5 + c])) / z * ev[c * 7 + t];
      EXPECT_NEAR(out.at(d, t), acc, 1e-5);
    }
  }
}

TEST(Encoders, ShapesPreserveTime) {
  std::mt19937 gen(32);
  const ModelConfig cfg = checks::reduced_config();
  const ModelParams p = initialize_params(cfg, 2);
  Tape tape;
  for (std::size_t T : {3u, 16u, 33u}) {
    EXPECT_EQ(eeg_encode(tape, Tensor({4, T}, oracle::random_values(gen, 4 * T)), p).shape(), (Shape{8, T}));
    EXPECT_EQ(speech_encode(tape, Tensor({8, T}, oracle::random_values(gen, 8 * T)), p).shape(), (Shape{8, T}));
  }
}

TEST(Encoders, ZeroResidualKernelsLeaveProjectionOutput) {
  std::mt19937 gen(33);
  const ModelConfig cfg = checks::reduced_config();
  ModelParams p = initialize_params(cfg, 3);
  checks::jitter(p, gen);
  for (auto& blk : p.blocks)
    for (ConvParams* c : {&blk.conv1, &blk.conv2}) {
      for (auto& v : c->kernel.mutable_data()) v = 0;
      for (auto& v : c->bias.mutable_data()) v = 0;
    }
  Tape tape;
  const Tensor e = Tensor({4, 10}, oracle::random_values(gen, 40));
  const Tensor full = eeg_encode(tape, e, p);
  const Tensor proj = gelu(tape, conv1d(tape, spatial_attention(tape, e, p.attention_logits),
                                        p.input_projection.kernel, p.input_projection.bias));
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_EQ(full[i], proj[i]);
}

TEST(Encoders, ZeroSpeechInputDependsOnlyOnBiases) {
  std::mt19937 gen(34);
  const ModelConfig cfg = checks::reduced_config();
  ModelParams p = initialize_params(cfg, 4);
  checks::jitter(p, gen);
  Tape tape;
  const Tensor zero = Tensor::zeros({8, 9});
  const Tensor a = speech_encode(tape, zero, p);
  for (auto& v : p.speech_conv1.kernel.mutable_data()) v *= -3.0f;
  const Tensor b = speech_encode(tape, zero, p);
  EXPECT_EQ(std::vector<float>(a.data().begin(), a.data().end()), std::vector<float>(b.data().begin(), b.data().end()));
}

TEST(WeightAndFlatten, ClosedForms) {
  Tape tape;
  const Tensor z = Tensor::matrix(2, 2, {1, 1, 1, 1});
  Tensor v = weight_and_flatten(tape, z, Tensor::vector({2, 3}));
  EXPECT_EQ(std::vector<float>(v.data().begin(), v.data().end()), (std::vector<float>{2, 2, 3, 3}));
  v = weight_and_flatten(tape, z, Tensor::vector({1, 1}));
  EXPECT_EQ(std::vector<float>(v.data().begin(), v.data().end()), (std::vector<float>{1, 1, 1, 1}));
  v = weight_and_flatten(tape, z, Tensor::vector({0, 0}));
  for (float x : v.data()) EXPECT_EQ(x, 0.0f);
  EXPECT_THROW(weight_and_flatten(tape, z, Tensor::vector({1, 1, 1})), DimensionError);
}

TEST(Classify, IdenticalStreamsTieToIndexOne) {
  std::mt19937 gen(35);
  const ModelConfig cfg = checks::reduced_config();
  DualEncoder model(cfg, 5);
  const Sample s = checks::random_sample(gen, cfg, 8);
  const Classification c = model.classify(s.eeg.to_tensor(), s.s1.to_tensor(), s.s1.to_tensor());
  EXPECT_EQ(c.probabilities[0], 0.5);
  EXPECT_EQ(c.probabilities[1], 0.5);
  EXPECT_EQ(c.predicted, 1);
}

TEST(Classify, ScoresClosedForm) {
  const std::vector<float> s{0.9f, 0.1f};
  const Classification c = classify_scores(s, 0.05);
  EXPECT_NEAR(c.probabilities[0], 1.0 / (1.0 + std::exp(-16.0)), 1e-7);
  EXPECT_EQ(c.predicted, 1);
}

TEST(Loss, ClosedFormsAndScoreGradient) {
  const ModelConfig cfg;
  Tape tape;
  EXPECT_NEAR(cross_entropy(tape, Tensor::vector({0.3f, 0.3f}), 0, cfg.temperature).item(), std::log(2.0), 1e-6);
  EXPECT_NEAR(cross_entropy(tape, Tensor::vector({1.0f, -1.0f}), 0, cfg.temperature).item(), 0.0, 1e-6);
  Tensor s = Tensor::vector({0.4f, 0.1f}, true);
  Tape t2;
  t2.backward(cross_entropy(t2, s, 0, cfg.temperature));
  const double p1 = 1.0 / (1.0 + std::exp(-(0.4 - 0.1) / 0.05));
  EXPECT_NEAR(s.grad()[0], (p1 - 1.0) / 0.05, 1e-4);
  EXPECT_NEAR(s.grad()[1], (1.0 - p1) / 0.05, 1e-4);
}

TEST(Properties, SoftmaxNormalization) {
  const auto r = checks::softmax_normalization(200, 1);
  EXPECT_EQ(r.failures, 0u) << r.first_failure;
}

TEST(Properties, ArgmaxInvariantUnderTemperature) {
  const auto r = checks::argmax_invariance(200, 2);
  EXPECT_EQ(r.failures, 0u) << r.first_failure;
}

TEST(Properties, CosineScaleInvariance) {
  const auto r = checks::cosine_scale_invariance(200, 3);
  EXPECT_EQ(r.failures, 0u) << r.first_failure;
}

TEST(Properties, PermutationEquivariance) {
  const auto r = checks::permutation_equivariance(100, 4);
  EXPECT_EQ(r.failures, 0u) << r.first_failure;
}

TEST(Gradients, ReducedModelMatchesFiniteDifferences) {
  const auto r = checks::gradient_check_reduced_model(7);
  for (const auto& [name, err] : r.errors) EXPECT_LT(err, 1e-3) << name;
  EXPECT_LT(r.input_error, 1e-3);
  EXPECT_LT(r.forward_error, 1e-5);
}

TEST(Gradients, LogitDifferenceIsDifferentiableInEeg) {
  std::mt19937 gen(36);
  const ModelConfig cfg = checks::reduced_config();
  DualEncoder model(cfg, 6);
  checks::jitter(model.params(), gen);
  const Sample s = checks::random_sample(gen, cfg, 10, 2);
  Tensor eeg = s.eeg.to_tensor(true);
  {
    Tape tape;
    tape.backward(model.logit_difference(tape, eeg, s));
  }
  std::vector<float> ad(eeg.grad().begin(), eeg.grad().end());
  const auto fd = oracle::finite_difference(
      eeg,
      [&] {
        Tape t(false);
        return static_cast<double>(model.logit_difference(t, eeg, s).item());
      },
      1e-2, true);
  EXPECT_LT(oracle::norm_relative_error(fd, ad), 1e-3);
}

TEST(Checkpoint, RoundTrip) {
  std::mt19937 gen(37);
  const ModelConfig cfg = checks::reduced_config();
  DualEncoder model(cfg, 8);
  checks::jitter(model.params(), gen);
  const auto dir = std::filesystem::temp_directory_path() / "diotic_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, model);
  const DualEncoder back = load_checkpoint(dir);
  EXPECT_EQ(back.config(), cfg);
  const auto a = model.params().named(), b = back.params().named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(a[i].second.shape(), b[i].second.shape());
    EXPECT_TRUE(std::equal(a[i].second.data().begin(), a[i].second.data().end(), b[i].second.data().begin()));
  }
  const Sample s = checks::random_sample(gen, cfg, 8);
  EXPECT_EQ(model.classify(s).probabilities, back.classify(s).probabilities);
}
