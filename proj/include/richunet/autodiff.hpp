#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "richunet/tensor.hpp"

namespace richunet {

enum class Mode { training, evaluation };

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
  Tape* tape = nullptr;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// View handed to an op's backward function while the tape is replayed.
class BackwardContext {
 public:
  BackwardContext(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}

  const Tensor& grad() const;
  const Tensor& output() const;
  const Tensor& input(std::size_t i) const;
  /// True when input i participates in gradient computation.
  bool needs(std::size_t i) const;
  /// Gradient accumulator of input i, zero-initialised on first access.
  Tensor& input_grad(std::size_t i);

 private:
  Tape& tape_;
  std::size_t node_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Append-only record of a forward computation.
///
/// Node inputs always refer to earlier nodes, so recording order is a
/// topological order and backward is a single reverse sweep.
class Tape {
 public:
  explicit Tape(Mode mode = Mode::training) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Mode mode() const noexcept { return mode_; }
  bool training() const noexcept { return mode_ == Mode::training; }

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient.
  Var input(Tensor value);
  /// Leaf bound to an external parameter tensor. Registering the same tensor
  /// twice on one tape returns the same node.
  Var parameter(const Tensor& param);

  /// Records an op result. The node requires a gradient iff any input does.
  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  /// Node id of a registered parameter, or -1.
  long parameter_node(const Tensor& param) const;

 private:
  friend class BackwardContext;
  friend class Gradients backward(Tape& tape, Var loss);

  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  Var push(Node node);

  Mode mode_;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> parameters_;
};

/// Leaf gradients produced by one backward sweep.
class Gradients {
 public:
  Gradients() = default;

  /// Gradient of a leaf (input or parameter); zeros if it was unreachable.
  const Tensor& operator[](Var v) const;
  /// Gradient of an external parameter, or nullptr if it was never registered.
  const Tensor* of(const Tensor& param) const;

 private:
  friend Gradients backward(Tape& tape, Var loss);

  const Tape* tape_ = nullptr;
  std::unordered_map<std::size_t, Tensor> leaf_grads_;
};

/// Reverse-mode sweep from a scalar loss. Each node is visited once, in
/// reverse recording order.
Gradients backward(Tape& tape, Var loss);

}  // namespace richunet
