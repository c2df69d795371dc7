#include "richunet/autodiff.hpp"

#include "richunet/error.hpp"

namespace richunet {

const Tensor& Var::value() const {
  if (tape == nullptr) throw UsageError("Var is not bound to a tape");
  return tape->value(id);
}

bool Var::requires_grad() const { return tape != nullptr && tape->requires_grad(id); }

const Tensor& BackwardContext::grad() const { return tape_.nodes_[node_].grad; }
const Tensor& BackwardContext::output() const { return tape_.nodes_[node_].value; }

const Tensor& BackwardContext::input(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].value;
}

bool BackwardContext::needs(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].requires_grad;
}

Tensor& BackwardContext::input_grad(std::size_t i) {
  auto& in = tape_.nodes_[tape_.nodes_[node_].inputs.at(i)];
  if (in.grad.empty() && !in.value.empty()) in.grad = Tensor::zeros(in.value.shape());
  if (in.grad.shape() != in.value.shape()) in.grad = Tensor::zeros(in.value.shape());
  return in.grad;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1, this};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  n.leaf = true;
  return push(std::move(n));
}

Var Tape::input(Tensor value) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.leaf = true;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(const Tensor& param) {
  if (auto it = parameters_.find(&param); it != parameters_.end()) return Var{it->second, this};
  Node n;
  n.op = "parameter";
  n.value = param;
  n.leaf = true;
  n.requires_grad = true;
  Var v = push(std::move(n));
  parameters_.emplace(&param, v.id);
  return v;
}

long Tape::parameter_node(const Tensor& param) const {
  auto it = parameters_.find(&param);
  return it == parameters_.end() ? -1 : static_cast<long>(it->second);
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape != this || in.id >= nodes_.size()) {
      throw UsageError("op '" + n.op + "' received an input from another tape");
    }
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Gradients::operator[](Var v) const {
  auto it = leaf_grads_.find(v.id);
  if (it == leaf_grads_.end()) throw UsageError("no gradient recorded for node " + std::to_string(v.id));
  return it->second;
}

const Tensor* Gradients::of(const Tensor& param) const {
  if (tape_ == nullptr) return nullptr;
  const long id = tape_->parameter_node(param);
  if (id < 0) return nullptr;
  auto it = leaf_grads_.find(static_cast<std::size_t>(id));
  return it == leaf_grads_.end() ? nullptr : &it->second;
}

Gradients backward(Tape& tape, Var loss) {
  if (loss.tape != &tape || loss.id >= tape.nodes_.size()) throw UsageError("backward: loss is not on this tape");
  auto& root = tape.nodes_[loss.id];
  if (root.value.size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " + to_string(root.value.shape()));
  }
  for (auto& n : tape.nodes_) n.grad = Tensor();
  if (root.requires_grad) root.grad = Tensor::ones(root.value.shape());

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& node = tape.nodes_[id];
    if (node.leaf || node.grad.empty() || !node.backward) continue;
    BackwardContext ctx(tape, id);
    node.backward(ctx);
    node.grad = Tensor();  // intermediates are not kept
  }

  Gradients out;
  out.tape_ = &tape;
  for (std::size_t id = 0; id < tape.nodes_.size(); ++id) {
    auto& node = tape.nodes_[id];
    if (!node.leaf || !node.requires_grad) continue;
    out.leaf_grads_.emplace(id, node.grad.empty() ? Tensor::zeros(node.value.shape()) : std::move(node.grad));
    node.grad = Tensor();
  }
  return out;
}

}  // namespace richunet
