#pragma once

// Dense tensors with a per-thread reverse-mode tape.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gofa {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::function<void()> backward;

  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

namespace detail {
template <typename T>
struct TapeState {
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  int no_grad_depth = 0;
};

template <typename T>
TapeState<T>& tape_state() {
  thread_local TapeState<T> state;
  return state;
}
}  // namespace detail

/// Disables recording on the current thread's tape while alive.
template <typename T>
class BasicNoGradGuard {
 public:
  BasicNoGradGuard() { ++detail::tape_state<T>().no_grad_depth; }
  ~BasicNoGradGuard() { --detail::tape_state<T>().no_grad_depth; }
  BasicNoGradGuard(const BasicNoGradGuard&) = delete;
  BasicNoGradGuard& operator=(const BasicNoGradGuard&) = delete;
};

template <typename T>
bool grad_enabled() {
  return detail::tape_state<T>().no_grad_depth == 0;
}

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : node_(std::make_shared<TensorNode<T>>()) {
    node_->data.assign(gofa::numel(shape), fill);
    node_->shape = std::move(shape);
  }

  BasicTensor(Shape shape, std::vector<T> values) : node_(std::make_shared<TensorNode<T>>()) {
    if (values.size() != gofa::numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    node_->data = std::move(values);
    node_->shape = std::move(shape);
  }

  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, std::vector<T>{value}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  BasicTensor& set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  const std::vector<T>& grad() const { return node_->grad; }
  std::vector<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

  /// Fresh leaf holding a copy of the values; no tape history.
  BasicTensor detach() const { return BasicTensor(shape(), data()); }

  BasicTensor reshape(Shape new_shape) const;

  bool all_finite() const {
    for (T v : node_->data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Throws NumericError naming `what` when the tensor holds NaN or Inf.
template <typename T>
void validate_finite(const BasicTensor<T>& t, const std::string& what) {
  const auto& d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) {
      throw NumericError(what + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!grad_enabled<T>()) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Registers `out` on the tape with a backward rule. The rule receives the
/// output node; inputs are captured by the caller's closure.
template <typename T, typename Fn>
void record(BasicTensor<T>& out, Fn&& fn) {
  auto* raw = out.node();
  raw->requires_grad = true;
  raw->backward = [raw, fn = std::forward<Fn>(fn)]() mutable { fn(*raw); };
  tape_state<T>().nodes.push_back(out.node_ptr());
}

}  // namespace detail

template <typename T>
BasicTensor<T> BasicTensor<T>::reshape(Shape new_shape) const {
  if (gofa::numel(new_shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
  }
  BasicTensor<T> out(std::move(new_shape), data());
  if (detail::any_requires_grad<T>({this})) {
    auto in = node_;
    detail::record(out, [in](TensorNode<T>& self) {
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  }
  return out;
}

/// Number of nodes currently recorded on this thread's tape.
template <typename T>
std::size_t tape_size() {
  return detail::tape_state<T>().nodes.size();
}

/// Drops all recorded history without propagating.
template <typename T>
void clear_tape() {
  auto& nodes = detail::tape_state<T>().nodes;
  for (auto& n : nodes) n->backward = nullptr;
  nodes.clear();
}

/// Propagates adjoints from a scalar loss through the tape, then clears it.
/// Leaf tensors (parameters) accumulate into their grad buffers.
template <typename T>
void backward(BasicTensor<T>& loss, T seed = T(1)) {
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  auto& nodes = detail::tape_state<T>().nodes;
  loss.grad_buffer()[0] += seed;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    auto& n = **it;
    if (n.backward && n.grad.size() == n.data.size()) n.backward();
  }
  for (auto& n : nodes) {
    n->backward = nullptr;
    // intermediate grads are released; leaves keep theirs
    std::vector<T>().swap(n->grad);
  }
  nodes.clear();
}

using Tensor = BasicTensor<double>;
using NoGradGuard = BasicNoGradGuard<double>;

}  // namespace gofa
