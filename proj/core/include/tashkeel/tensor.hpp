#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "tashkeel/result.hpp"

namespace tashkeel::numerics {

using Shape = std::vector<int>;

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Dense row-major tensor. Ops treat it as a 2-D matrix whose column
/// count is the last shape dimension; higher dims are bookkeeping.
/// `grad` is allocated iff the tensor participates in backprop.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, bool rg = false) : shape(std::move(s)), requires_grad(rg) {
    data.assign(static_cast<size_t>(shape_size(shape)), T(0));
    if (requires_grad) grad.assign(data.size(), T(0));
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int cols() const { return shape.empty() ? 1 : shape.back(); }
  int rows() const { return cols() == 0 ? 0 : static_cast<int>(size() / cols()); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    requires_grad = true;
  }
  void zero_grad() {
    std::fill(grad.begin(), grad.end(), T(0));
  }
};

template <typename T>
using TP = std::shared_ptr<Tensor<T>>;

template <typename T>
TP<T> make_tensor(Shape shape, bool requires_grad = false) {
  return std::make_shared<Tensor<T>>(std::move(shape), requires_grad);
}

template <typename T>
TP<T> make_tensor(Shape shape, std::vector<T> values, bool requires_grad = false) {
  auto t = std::make_shared<Tensor<T>>(std::move(shape), requires_grad);
  if (static_cast<int64_t>(values.size()) != t->size()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " for shape " +
                     shape_str(t->shape));
  }
  t->data = std::move(values);
  return t;
}

/// Records the reverse pass of a forward computation. Ops push one
/// closure each; backward() replays them newest-first. Pass a null Tape
/// to any op for inference (no recording, no grad buffers).
template <typename T>
class Tape {
 public:
  void push(std::function<void()> op) { ops_.push_back(std::move(op)); }

  void backward(const TP<T>& loss) {
    if (loss->size() != 1) throw ShapeError("backward expects a scalar loss");
    loss->ensure_grad();
    loss->grad[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  size_t num_ops() const { return ops_.size(); }
  void clear() { ops_.clear(); }

 private:
  std::vector<std::function<void()>> ops_;
};

}  // namespace tashkeel::numerics
