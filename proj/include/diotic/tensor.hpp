#pragma once

// Dense float tensors and the computation tape used for reverse-mode
// differentiation. Tensors are cheap handles onto shared storage; copying a
// Tensor aliases the same values and gradient buffer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace diotic {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty until a gradient flows into the node
  bool requires_grad = false;

  std::vector<float>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0f);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<float> values, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode>()) {
    if (shape_size(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_string(shape) + " holds " +
                           std::to_string(shape_size(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
  }

  static Tensor filled(Shape shape, float value, bool requires_grad = false) {
    const auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<float>(n, value), requires_grad);
  }

  static Tensor scalar(float value, bool requires_grad = false) {
    return Tensor({}, {value}, requires_grad);
  }

  static Tensor vector(std::vector<float> values, bool requires_grad = false) {
    const auto n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }
  bool is_scalar() const { return node_->value.size() == 1 && node_->shape.size() <= 1; }

  std::span<const float> data() const { return node_->value; }
  // Writable access for initializers and optimizers; graph ops never mutate inputs.
  std::span<float> mutable_data() { return node_->value; }

  float item() const {
    if (!is_scalar()) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
  }
  float operator[](std::size_t i) const { return node_->value[i]; }
  float at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape.at(1) + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0f); }

  bool all_finite() const {
    return std::all_of(node_->value.begin(), node_->value.end(),
                       [](float v) { return std::isfinite(v); });
  }

  // Deep copy without gradient history.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(node_->shape, node_->value, requires_grad);
  }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  detail::TensorNode& node() const { return *node_; }
  std::shared_ptr<detail::TensorNode> node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Ordered record of primitive operations. Each entry holds a closure that
// pushes the output gradient back into its inputs; replay runs strictly in
// reverse recording order.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::string_view> op_names() const {
    std::vector<std::string_view> names;
    names.reserve(entries_.size());
    for (const auto& e : entries_) names.push_back(e.name);
    return names;
  }

  void record(std::string_view name, std::function<void()> backward) {
    entries_.push_back({name, std::move(backward)});
  }

  void backward(const Tensor& loss) {
    if (!loss.is_scalar()) {
      throw DimensionError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
    }
    loss.node().ensure_grad()[0] += 1.0f;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  }

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::string_view name;
    std::function<void()> backward;
  };
  bool recording_;
  std::vector<Entry> entries_;
};

}  // namespace diotic
