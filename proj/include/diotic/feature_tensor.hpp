#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diotic/tensor.hpp"

namespace diotic {

// A [rows × cols] float array tagged with its sampling rate. Rows are channels
// (EEG) or feature dimensions (speech); columns are time.
struct FeatureTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;
  double sample_rate_hz = 0.0;
  std::string unit;
  std::string source;
  nlohmann::json attributes = nlohmann::json::object();  // extra header keys, preserved on round trip

  FeatureTensor() = default;
  FeatureTensor(std::size_t r, std::size_t c, double rate, std::string unit_ = {}, std::string source_ = {})
      : rows(r), cols(c), values(r * c, 0.0f), sample_rate_hz(rate), unit(std::move(unit_)),
        source(std::move(source_)) {}

  float& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::span<float> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const float> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  double duration_s() const { return sample_rate_hz > 0 ? static_cast<double>(cols) / sample_rate_hz : 0.0; }

  // Columns [start, start + count).
  FeatureTensor window(std::size_t start, std::size_t count) const {
    if (start + count > cols) {
      throw std::out_of_range("window [" + std::to_string(start) + ", " + std::to_string(start + count) +
                              ") exceeds " + std::to_string(cols) + " columns");
    }
    FeatureTensor out(rows, count, sample_rate_hz, unit, source);
    out.attributes = attributes;
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(r * cols + start), count,
                  out.values.begin() + static_cast<std::ptrdiff_t>(r * count));
    return out;
  }

  Tensor to_tensor(bool requires_grad = false) const { return Tensor({rows, cols}, values, requires_grad); }

  static FeatureTensor from_tensor(const Tensor& t, double rate, std::string unit_ = {}, std::string source_ = {}) {
    if (t.rank() != 2) throw DimensionError("FeatureTensor needs a rank-2 tensor, got " + shape_string(t.shape()));
    FeatureTensor out(t.dim(0), t.dim(1), rate, std::move(unit_), std::move(source_));
    std::copy(t.data().begin(), t.data().end(), out.values.begin());
    return out;
  }

  bool operator==(const FeatureTensor&) const = default;
};

}  // namespace diotic
