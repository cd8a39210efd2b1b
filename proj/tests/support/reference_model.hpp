#pragma once

// Double-precision forward pass of the dual encoder written directly from the
// layer definitions, with no tape and no shared code with the library ops.
// Parameters are held as flat vectors in ModelParams::named() order.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "diotic/model.hpp"

namespace oracle {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

inline Mat to_mat(const diotic::FeatureTensor& t) {
  Mat m(t.rows, t.cols);
  for (std::size_t i = 0; i < t.values.size(); ++i) m.v[i] = t.values[i];
  return m;
}

struct ReferenceModel {
  diotic::ModelConfig cfg;
  std::vector<std::vector<double>> p;  // named() order

  static ReferenceModel from(const diotic::DualEncoder& model) {
    ReferenceModel r;
    r.cfg = model.config();
    for (const auto& [_, t] : model.params().named()) r.p.emplace_back(t.data().begin(), t.data().end());
    return r;
  }

  // y[o][t] = b[o] + Σ_i Σ_k w[o][i][k] · x[i][t + k − K/2], zero outside.
  static Mat conv(const Mat& x, const std::vector<double>& w, const std::vector<double>& b, std::size_t cout,
                  std::size_t K) {
    Mat y(cout, x.cols);
    const auto pad = static_cast<long>(K / 2);
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t t = 0; t < x.cols; ++t) {
        double acc = b[o];
        for (std::size_t i = 0; i < x.rows; ++i)
          for (std::size_t k = 0; k < K; ++k) {
            const long src = static_cast<long>(t) + static_cast<long>(k) - pad;
            if (src >= 0 && src < static_cast<long>(x.cols))
              acc += w[(o * x.rows + i) * K + k] * x(i, static_cast<std::size_t>(src));
          }
        y(o, t) = acc;
      }
    return y;
  }

  static Mat gelu(Mat x) {
    for (auto& v : x.v) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    return x;
  }

  static Mat norm(Mat x, const std::vector<double>& scale, const std::vector<double>& shift) {
    for (std::size_t t = 0; t < x.cols; ++t) {
      double mean = 0, var = 0;
      for (std::size_t f = 0; f < x.rows; ++f) mean += x(f, t);
      mean /= static_cast<double>(x.rows);
      for (std::size_t f = 0; f < x.rows; ++f) var += (x(f, t) - mean) * (x(f, t) - mean);
      var /= static_cast<double>(x.rows);
      for (std::size_t f = 0; f < x.rows; ++f)
        x(f, t) = (x(f, t) - mean) / std::sqrt(var + 1e-5) * scale[f] + shift[f];
    }
    return x;
  }

  Mat eeg_encode(const Mat& e) const {
    const std::size_t C = cfg.eeg_channels, D = cfg.virtual_channels, F = cfg.latent_dim, K = cfg.kernel_size;
    const auto& W = p[0];
    Mat a(D, e.cols);
    for (std::size_t d = 0; d < D; ++d) {
      double mx = W[d * C];
      for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, W[d * C + c]);
      double z = 0;
      for (std::size_t c = 0; c < C; ++c) z += std::exp(W[d * C + c] - mx);
      for (std::size_t c = 0; c < C; ++c) {
        const double att = std::exp(W[d * C + c] - mx) / z;
        for (std::size_t t = 0; t < e.cols; ++t) a(d, t) += att * e(c, t);
      }
    }
    Mat h = gelu(conv(a, p[1], p[2], F, K));
    for (std::size_t b = 0; b < cfg.n_res_blocks; ++b) {
      const std::size_t o = 3 + 8 * b;
      Mat r = gelu(norm(h, p[o], p[o + 1]));
      r = conv(r, p[o + 2], p[o + 3], F, K);
      r = gelu(norm(r, p[o + 4], p[o + 5]));
      r = conv(r, p[o + 6], p[o + 7], F, K);
      for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += r.v[i];
    }
    return h;
  }

  Mat speech_encode(const Mat& s) const {
    const std::size_t F = cfg.latent_dim, K = cfg.kernel_size;
    const std::size_t o = 3 + 8 * cfg.n_res_blocks;
    Mat h = gelu(norm(conv(s, p[o], p[o + 1], F, K), p[o + 2], p[o + 3]));
    return conv(h, p[o + 4], p[o + 5], F, K);
  }

  double cosine(const Mat& a, const Mat& b) const {
    const auto& w = p.back();
    double dot = 0, na = 0, nb = 0;
    for (std::size_t f = 0; f < a.rows; ++f)
      for (std::size_t t = 0; t < a.cols; ++t) {
        const double x = w[f] * a(f, t), y = w[f] * b(f, t);
        dot += x * y;
        na += x * x;
        nb += y * y;
      }
    return dot / std::sqrt(na * nb);
  }

  std::vector<double> scores(const Mat& eeg, const Mat& s1, const Mat& s2) const {
    const Mat z = eeg_encode(eeg);
    return {cosine(z, speech_encode(s1)), cosine(z, speech_encode(s2))};
  }

  // −log softmax(s/τ)[target]
  double loss(const Mat& eeg, const Mat& s1, const Mat& s2, std::size_t target, double tau) const {
    const auto s = scores(eeg, s1, s2);
    const double mx = std::max(s[0], s[1]) / tau;
    const double lse = mx + std::log(std::exp(s[0] / tau - mx) + std::exp(s[1] / tau - mx));
    return lse - s[target] / tau;
  }
};

// Central finite difference of f with respect to every entry of x.
template <class F>
std::vector<double> finite_difference_double(std::vector<double>& x, F f, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f();
    x[i] = orig - h;
    const double down = f();
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace oracle
