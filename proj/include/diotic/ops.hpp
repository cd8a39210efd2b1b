#pragma once

// Differentiable primitives. Every op takes the tape it records into; when the
// tape is not recording or no input requires a gradient, nothing is recorded.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "diotic/log.hpp"
#include "diotic/tensor.hpp"

#if !defined(NDEBUG) && !defined(DIOTIC_CHECK_FINITE)
#define DIOTIC_CHECK_FINITE 1
#endif

namespace diotic {

namespace detail {

using NodePtr = std::shared_ptr<TensorNode>;

inline bool tracks(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

inline Tensor finish(std::string_view op, Shape shape, std::vector<float> values, bool requires_grad) {
  Tensor out(std::move(shape), std::move(values), requires_grad);
#if DIOTIC_CHECK_FINITE
  if (!out.all_finite()) throw NonFiniteError(std::string(op) + " produced a non-finite value");
#else
  (void)op;
#endif
  return out;
}

inline void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

inline double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi * kInvSqrt2;
  return cdf + x * pdf;
}

}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<float> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  const bool rg = detail::tracks(tape, {&a, &b});
  Tensor result = detail::finish("add", a.shape(), std::move(out), rg);
  if (rg) {
    tape.record("add", [an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr()] {
      const auto& g = on->grad;
      if (g.empty()) return;
      for (auto* n : {an.get(), bn.get()}) {
        if (!n->requires_grad) continue;
        auto& dst = n->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
    });
  }
  return result;
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<float> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  const bool rg = detail::tracks(tape, {&a, &b});
  Tensor result = detail::finish("sub", a.shape(), std::move(out), rg);
  if (rg) {
    tape.record("sub", [an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr()] {
      const auto& g = on->grad;
      if (g.empty()) return;
      if (an->requires_grad) {
        auto& dst = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& dst = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g[i];
      }
    });
  }
  return result;
}

// Elementwise product.
inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<float> out(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  const bool rg = detail::tracks(tape, {&a, &b});
  Tensor result = detail::finish("mul", a.shape(), std::move(out), rg);
  if (rg) {
    tape.record("mul", [an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr()] {
      const auto& g = on->grad;
      if (g.empty()) return;
      if (an->requires_grad) {
        auto& dst = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto& dst = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * an->value[i];
      }
    });
  }
  return result;
}

inline Tensor scale(Tape& tape, const Tensor& a, float factor) {
  std::vector<float> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  const bool rg = detail::tracks(tape, {&a});
  Tensor result = detail::finish("scale", a.shape(), std::move(out), rg);
  if (rg) {
    tape.record("scale", [an = a.node_ptr(), on = result.node_ptr(), factor] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& dst = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * factor;
    });
  }
  return result;
}

inline Tensor sum(Tape& tape, const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const bool rg = detail::tracks(tape, {&a});
  Tensor result = detail::finish("sum", {}, {static_cast<float>(acc)}, rg);
  if (rg) {
    tape.record("sum", [an = a.node_ptr(), on = result.node_ptr()] {
      if (on->grad.empty()) return;
      const float g = on->grad[0];
      auto& dst = an->ensure_grad();
      for (auto& d : dst) d += g;
    });
  }
  return result;
}

inline Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  const bool rg = detail::tracks(tape, {&a});
  Tensor result = Tensor(std::move(shape), std::vector<float>(a.data().begin(), a.data().end()), rg);
  if (rg) {
    tape.record("reshape", [an = a.node_ptr(), on = result.node_ptr()] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& dst = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
  }
  return result;
}

// Row-major flatten to a vector.
inline Tensor flatten(Tape& tape, const Tensor& a) { return reshape(tape, a, {a.size()}); }

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  std::vector<float> out(m * n, 0.0f);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    float* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = A[i * k + p];
      const float* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  const bool rg = detail::tracks(tape, {&a, &b});
  Tensor result = detail::finish("matmul", {m, n}, std::move(out), rg);
  if (rg) {
    tape.record("matmul", [an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr(), m, k, n] {
      const auto& dC = on->grad;
      if (dC.empty()) return;
      const auto& A = an->value;
      const auto& B = bn->value;
      if (an->requires_grad) {
        auto& dA = an->ensure_grad();  // dC · Bᵀ
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            float acc = 0.0f;
            for (std::size_t j = 0; j < n; ++j) acc += dC[i * n + j] * B[p * n + j];
            dA[i * k + p] += acc;
          }
      }
      if (bn->requires_grad) {
        auto& dB = bn->ensure_grad();  // Aᵀ · dC
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const float aip = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * dC[i * n + j];
          }
      }
    });
  }
  return result;
}

// Same-padded, stride-1 cross-correlation.
//   x: [Cin × T], kernels: [Cout × Cin × K], bias: [Cout] -> [Cout × T]
inline Tensor conv1d(Tape& tape, const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  detail::require_rank(x, 2, "conv1d");
  detail::require_rank(kernels, 3, "conv1d");
  detail::require_rank(bias, 1, "conv1d");
  const std::size_t cin = x.dim(0), T = x.dim(1);
  const std::size_t cout = kernels.dim(0), K = kernels.dim(2);
  if (K % 2 == 0) throw DimensionError("conv1d: kernel size must be odd, got " + std::to_string(K));
  if (kernels.dim(1) != cin) {
    throw DimensionError("conv1d: kernel expects " + std::to_string(kernels.dim(1)) +
                         " input channels, input " + shape_string(x.shape()));
  }
  if (bias.dim(0) != cout) {
    throw DimensionError("conv1d: bias " + shape_string(bias.shape()) + " for " + std::to_string(cout) +
                         " output channels");
  }
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
  const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(T);
  std::vector<float> out(cout * T);
  const auto X = x.data();
  const auto W = kernels.data();
  const auto Bv = bias.data();
  for (std::size_t co = 0; co < cout; ++co) {
    float* y = out.data() + co * T;
    std::fill(y, y + T, Bv[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const float* xr = X.data() + ci * T;
      for (std::size_t k = 0; k < K; ++k) {
        const float w = W[(co * cin + ci) * K + k];
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;  // y[t] += w * x[t + shift]
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(len, len - shift);
        for (std::ptrdiff_t t = lo; t < hi; ++t) y[t] += w * xr[t + shift];
      }
    }
  }
  const bool rg = detail::tracks(tape, {&x, &kernels, &bias});
  Tensor result = detail::finish("conv1d", {cout, T}, std::move(out), rg);
  if (rg) {
    tape.record("conv1d", [xn = x.node_ptr(), kn = kernels.node_ptr(), bn = bias.node_ptr(),
                           on = result.node_ptr(), cin, cout, T, K, pad, len] {
      const auto& dY = on->grad;
      if (dY.empty()) return;
      const auto& X = xn->value;
      const auto& W = kn->value;
      float* dX = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
      float* dW = kn->requires_grad ? kn->ensure_grad().data() : nullptr;
      if (bn->requires_grad) {
        auto& dB = bn->ensure_grad();
        for (std::size_t co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (std::size_t t = 0; t < T; ++t) acc += dY[co * T + t];
          dB[co] += static_cast<float>(acc);
        }
      }
      for (std::size_t co = 0; co < cout; ++co) {
        const float* gy = dY.data() + co * T;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const float* xr = X.data() + ci * T;
          for (std::size_t k = 0; k < K; ++k) {
            const std::size_t widx = (co * cin + ci) * K + k;
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - pad;
            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
            const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(len, len - shift);
            if (dW) {
              float acc = 0.0f;
              for (std::ptrdiff_t t = lo; t < hi; ++t) acc += gy[t] * xr[t + shift];
              dW[widx] += acc;
            }
            if (dX) {
              const float w = W[widx];
              float* gx = dX + ci * T;
              for (std::ptrdiff_t t = lo; t < hi; ++t) gx[t + shift] += w * gy[t];
            }
          }
        }
      }
    });
  }
  return result;
}

// Exact GELU, 0.5·x·(1 + erf(x/√2)).
inline Tensor gelu(Tape& tape, const Tensor& x) {
  std::vector<float> out(x.size());
  const auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(detail::gelu_value(X[i]));
  const bool rg = detail::tracks(tape, {&x});
  Tensor result = detail::finish("gelu", x.shape(), std::move(out), rg);
  if (rg) {
    tape.record("gelu", [xn = x.node_ptr(), on = result.node_ptr()] {
      const auto& g = on->grad;
      if (g.empty()) return;
      auto& dst = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        dst[i] += g[i] * static_cast<float>(detail::gelu_derivative(xn->value[i]));
    });
  }
  return result;
}

inline constexpr double kChannelNormEpsilon = 1e-5;

// Per-time-step normalization over the feature axis followed by an
// elementwise affine map. x: [F × T], scale/shift: [F].
inline Tensor channel_norm(Tape& tape, const Tensor& x, const Tensor& scale_v, const Tensor& shift_v) {
  detail::require_rank(x, 2, "channel_norm");
  const std::size_t F = x.dim(0), T = x.dim(1);
  if (T == 0) throw DimensionError("channel_norm: empty time axis");
  if (scale_v.shape() != Shape{F} || shift_v.shape() != Shape{F}) {
    throw DimensionError("channel_norm: scale/shift must be [" + std::to_string(F) + "], got " +
                         shape_string(scale_v.shape()) + " and " + shape_string(shift_v.shape()));
  }
  const auto X = x.data();
  std::vector<double> mean(T, 0.0), var(T, 0.0);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t t = 0; t < T; ++t) mean[t] += X[f * T + t];
  for (auto& m : mean) m /= static_cast<double>(F);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t t = 0; t < T; ++t) {
      const double d = X[f * T + t] - mean[t];
      var[t] += d * d;
    }
  std::vector<float> inv_std(T);
  for (std::size_t t = 0; t < T; ++t)
    inv_std[t] = static_cast<float>(1.0 / std::sqrt(var[t] / static_cast<double>(F) + kChannelNormEpsilon));

  std::vector<float> normalized(F * T);
  std::vector<float> out(F * T);
  const auto S = scale_v.data();
  const auto B = shift_v.data();
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t t = 0; t < T; ++t) {
      const float xhat = static_cast<float>(X[f * T + t] - mean[t]) * inv_std[t];
      normalized[f * T + t] = xhat;
      out[f * T + t] = S[f] * xhat + B[f];
    }
  const bool rg = detail::tracks(tape, {&x, &scale_v, &shift_v});
  Tensor result = detail::finish("channel_norm", {F, T}, std::move(out), rg);
  if (rg) {
    tape.record("channel_norm", [xn = x.node_ptr(), sn = scale_v.node_ptr(), bn = shift_v.node_ptr(),
                                 on = result.node_ptr(), xhat = std::move(normalized),
                                 inv_std = std::move(inv_std), F, T] {
      const auto& dY = on->grad;
      if (dY.empty()) return;
      const auto& S = sn->value;
      if (sn->requires_grad || bn->requires_grad) {
        for (std::size_t f = 0; f < F; ++f) {
          double ds = 0.0, db = 0.0;
          for (std::size_t t = 0; t < T; ++t) {
            ds += dY[f * T + t] * xhat[f * T + t];
            db += dY[f * T + t];
          }
          if (sn->requires_grad) sn->ensure_grad()[f] += static_cast<float>(ds);
          if (bn->requires_grad) bn->ensure_grad()[f] += static_cast<float>(db);
        }
      }
      if (!xn->requires_grad) return;
      // dx = inv_std · (dxhat − mean(dxhat) − xhat · mean(dxhat · xhat)), means over F.
      std::vector<double> mean_d(T, 0.0), mean_dx(T, 0.0);
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t t = 0; t < T; ++t) {
          const double d = static_cast<double>(dY[f * T + t]) * S[f];
          mean_d[t] += d;
          mean_dx[t] += d * xhat[f * T + t];
        }
      const double invF = 1.0 / static_cast<double>(F);
      auto& dX = xn->ensure_grad();
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t t = 0; t < T; ++t) {
          const double d = static_cast<double>(dY[f * T + t]) * S[f];
          const double v = inv_std[t] * (d - mean_d[t] * invF - xhat[f * T + t] * mean_dx[t] * invF);
          dX[f * T + t] += static_cast<float>(v);
        }
    });
  }
  return result;
}

// Softmax of x/temperature over a 1-D tensor, max-subtracted.
inline Tensor softmax(Tape& tape, const Tensor& x, double temperature = 1.0) {
  detail::require_rank(x, 1, "softmax");
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be positive");
  const auto X = x.data();
  const std::size_t n = X.size();
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : X) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> e(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    e[i] = std::exp((X[i] - mx) / temperature);
    total += e[i];
  }
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(e[i] / total);
  const bool rg = detail::tracks(tape, {&x});
  Tensor result = detail::finish("softmax", x.shape(), std::move(out), rg);
  if (rg) {
    tape.record("softmax", [xn = x.node_ptr(), on = result.node_ptr(), temperature] {
      const auto& g = on->grad;
      if (g.empty()) return;
      const auto& p = on->value;
      double dot = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) dot += static_cast<double>(g[i]) * p[i];
      auto& dst = xn->ensure_grad();
      for (std::size_t i = 0; i < p.size(); ++i)
        dst[i] += static_cast<float>(p[i] * (g[i] - dot) / temperature);
    });
  }
  return result;
}

// Softmax applied independently to each row of a matrix.
inline Tensor row_softmax(Tape& tape, const Tensor& x) {
  detail::require_rank(x, 2, "row_softmax");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const auto X = x.data();
  std::vector<float> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = X.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, static_cast<double>(xr[c]));
    double total = 0.0;
    std::vector<double> e(cols);
    for (std::size_t c = 0; c < cols; ++c) total += (e[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = static_cast<float>(e[c] / total);
  }
  const bool rg = detail::tracks(tape, {&x});
  Tensor result = detail::finish("row_softmax", x.shape(), std::move(out), rg);
  if (rg) {
    tape.record("row_softmax", [xn = x.node_ptr(), on = result.node_ptr(), rows, cols] {
      const auto& g = on->grad;
      if (g.empty()) return;
      const auto& p = on->value;
      auto& dst = xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(g[r * cols + c]) * p[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c)
          dst[r * cols + c] += static_cast<float>(p[r * cols + c] * (g[r * cols + c] - dot));
      }
    });
  }
  return result;
}

// diag(w) · Z for Z: [F × T], w: [F].
inline Tensor scale_rows(Tape& tape, const Tensor& z, const Tensor& w) {
  detail::require_rank(z, 2, "scale_rows");
  const std::size_t F = z.dim(0), T = z.dim(1);
  if (w.shape() != Shape{F}) {
    throw DimensionError("scale_rows: weights " + shape_string(w.shape()) + " for feature map " +
                         shape_string(z.shape()));
  }
  const auto Z = z.data();
  const auto Wv = w.data();
  std::vector<float> out(F * T);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t t = 0; t < T; ++t) out[f * T + t] = Wv[f] * Z[f * T + t];
  const bool rg = detail::tracks(tape, {&z, &w});
  Tensor result = detail::finish("scale_rows", z.shape(), std::move(out), rg);
  if (rg) {
    tape.record("scale_rows", [zn = z.node_ptr(), wn = w.node_ptr(), on = result.node_ptr(), F, T] {
      const auto& g = on->grad;
      if (g.empty()) return;
      if (zn->requires_grad) {
        auto& dZ = zn->ensure_grad();
        for (std::size_t f = 0; f < F; ++f)
          for (std::size_t t = 0; t < T; ++t) dZ[f * T + t] += g[f * T + t] * wn->value[f];
      }
      if (wn->requires_grad) {
        auto& dW = wn->ensure_grad();
        for (std::size_t f = 0; f < F; ++f) {
          double acc = 0.0;
          for (std::size_t t = 0; t < T; ++t) acc += static_cast<double>(g[f * T + t]) * zn->value[f * T + t];
          dW[f] += static_cast<float>(acc);
        }
      }
    });
  }
  return result;
}

inline constexpr double kDegenerateNorm = 1e-12;

// Cosine of the angle between two equally sized tensors. When either norm is
// below kDegenerateNorm the similarity is defined as 0 with zero gradient.
inline Tensor cosine_similarity(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: lengths differ, " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const auto A = a.data();
  const auto B = b.data();
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    dot += static_cast<double>(A[i]) * B[i];
    na2 += static_cast<double>(A[i]) * A[i];
    nb2 += static_cast<double>(B[i]) * B[i];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const bool degenerate = na < kDegenerateNorm || nb < kDegenerateNorm;
  if (degenerate) warn("cosine_similarity: near-zero vector, similarity defined as 0");
  const double c = degenerate ? 0.0 : std::clamp(dot / (na * nb), -1.0, 1.0);
  const bool rg = detail::tracks(tape, {&a, &b});
  Tensor result = detail::finish("cosine_similarity", {}, {static_cast<float>(c)}, rg);
  if (rg && !degenerate) {
    tape.record("cosine_similarity", [an = a.node_ptr(), bn = b.node_ptr(), on = result.node_ptr(), dot, na,
                                      nb] {
      if (on->grad.empty()) return;
      const double g = on->grad[0];
      const double inv = 1.0 / (na * nb);
      const double c = dot * inv;
      const auto& A = an->value;
      const auto& B = bn->value;
      // dc/da = b/(|a||b|) − c·a/|a|²
      if (an->requires_grad) {
        auto& dA = an->ensure_grad();
        const double ca = c / (na * na);
        for (std::size_t i = 0; i < A.size(); ++i) dA[i] += static_cast<float>(g * (B[i] * inv - ca * A[i]));
      }
      if (bn->requires_grad) {
        auto& dB = bn->ensure_grad();
        const double cb = c / (nb * nb);
        for (std::size_t i = 0; i < B.size(); ++i) dB[i] += static_cast<float>(g * (A[i] * inv - cb * B[i]));
      }
    });
  }
  return result;
}

// Packs scalars into a vector.
inline Tensor stack(Tape& tape, const std::vector<Tensor>& scalars) {
  std::vector<float> out;
  out.reserve(scalars.size());
  bool rg = false;
  for (const auto& s : scalars) {
    out.push_back(s.item());
    rg = rg || (tape.recording() && s.requires_grad());
  }
  const std::size_t n = out.size();
  Tensor result = detail::finish("stack", {n}, std::move(out), rg);
  if (rg) {
    std::vector<detail::NodePtr> nodes;
    for (const auto& s : scalars) nodes.push_back(s.node_ptr());
    tape.record("stack", [nodes = std::move(nodes), on = result.node_ptr()] {
      const auto& g = on->grad;
      if (g.empty()) return;
      for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i]->requires_grad) nodes[i]->ensure_grad()[0] += g[i];
    });
  }
  return result;
}

inline Tensor select(Tape& tape, const Tensor& x, std::size_t index) {
  if (index >= x.size()) {
    throw DimensionError("select: index " + std::to_string(index) + " out of range for " + shape_string(x.shape()));
  }
  const bool rg = detail::tracks(tape, {&x});
  Tensor result = detail::finish("select", {}, {x.data()[index]}, rg);
  if (rg) {
    tape.record("select", [xn = x.node_ptr(), on = result.node_ptr(), index] {
      if (on->grad.empty()) return;
      xn->ensure_grad()[index] += on->grad[0];
    });
  }
  return result;
}

// −log softmax(scores/τ)[target], via log-sum-exp. `target` is zero-based.
inline Tensor cross_entropy(Tape& tape, const Tensor& scores, std::size_t target, double temperature) {
  detail::require_rank(scores, 1, "cross_entropy");
  if (target >= scores.size()) throw DimensionError("cross_entropy: target index out of range");
  if (!(temperature > 0.0)) throw std::invalid_argument("cross_entropy: temperature must be positive");
  const auto S = scores.data();
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : S) mx = std::max(mx, v / temperature);
  double total = 0.0;
  for (float v : S) total += std::exp(v / temperature - mx);
  const double lse = mx + std::log(total);
  const double loss = lse - S[target] / temperature;
  const bool rg = detail::tracks(tape, {&scores});
  Tensor result = detail::finish("cross_entropy", {}, {static_cast<float>(loss)}, rg);
  if (rg) {
    tape.record("cross_entropy", [sn = scores.node_ptr(), on = result.node_ptr(), target, temperature, lse] {
      if (on->grad.empty()) return;
      const double g = on->grad[0];
      auto& dS = sn->ensure_grad();
      for (std::size_t i = 0; i < dS.size(); ++i) {
        const double p = std::exp(sn->value[i] / temperature - lse);
        dS[i] += static_cast<float>(g * (p - (i == target ? 1.0 : 0.0)) / temperature);
      }
    });
  }
  return result;
}

}  // namespace diotic
