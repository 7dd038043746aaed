#include "efuse/numcore/graph.hpp"

namespace efuse::nc {

const Tensor& Var::value() const { return graph_->node(id_).value; }

Var Graph::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::input(Tensor value) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::param(const std::string& name) {
  if (params_ == nullptr) throw std::logic_error("graph has no parameter map bound");
  auto it = params_->find(name);
  if (it == params_->end()) throw std::out_of_range("unknown parameter '" + name + "'");
  Node n;
  n.op = "param";
  n.value = it->second;
  n.param_name = name;
  n.requires_grad = it->second.requires_grad();
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  const std::size_t id = nodes_.size();
  if (!value.all_finite()) {
    throw NonFiniteError("non-finite value produced by op '" + op + "' at node " + std::to_string(id));
  }
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (&v.graph() != this) throw std::logic_error("op '" + n.op + "' mixes graphs");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, id};
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

double Graph::backward(Var output) {
  const Node& out = nodes_[output.id()];
  if (out.value.size() != 1) {
    throw ShapeError("backward requires a scalar output, got " + shape_str(out.value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  grad_buffer(output.id())[0] = 1.0;
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
    if (!n.grad.all_finite()) {
      throw NonFiniteError("non-finite gradient at node " + std::to_string(i) + " (op '" + n.op + "')");
    }
  }
  return out.value[0];
}

ParamMap Graph::param_grads() const {
  ParamMap grads;
  for (const auto& n : nodes_) {
    if (n.param_name.empty() || !n.requires_grad) continue;
    Tensor g = n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
    auto [it, inserted] = grads.emplace(n.param_name, g);
    if (!inserted) {
      for (std::size_t k = 0; k < g.size(); ++k) it->second[k] += g[k];
    }
  }
  return grads;
}

ValueAndGrads forward_backward(Graph& graph, Var output) {
  ValueAndGrads r;
  r.value = graph.backward(output);
  r.grads = graph.param_grads();
  return r;
}

}  // namespace efuse::nc
