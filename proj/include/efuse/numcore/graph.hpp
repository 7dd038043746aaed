#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "efuse/numcore/tensor.hpp"

namespace efuse::nc {

class Graph;

/// Handle to a node recorded in a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

using BackwardFn = std::function<void(Graph&, std::size_t self)>;

struct Node {
  std::string op;
  std::vector<std::size_t> inputs;
  Tensor value;
  Tensor grad;
  BackwardFn backward;
  std::string param_name;
  bool requires_grad = false;
};

/// Tape of operation records. Nodes are appended in evaluation order, so the
/// tape is a topological order by construction.
class Graph {
 public:
  explicit Graph(const ParamMap* params = nullptr) : params_(params) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf tracked for gradients but not bound to a named parameter.
  Var input(Tensor value);
  /// Leaf bound to params[name]. Gradients are reported under that name.
  Var param(const std::string& name);

  /// Appends an op record. Throws NonFiniteError if value holds NaN/Inf.
  Var record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of node id, zero-allocated on first access.
  Tensor& grad_buffer(std::size_t id);
  const Tensor& grad(Var v) const { return nodes_[v.id()].grad; }

  /// Reverse sweep from a scalar output. Returns the output value.
  double backward(Var output);

  /// Gradients of every bound parameter, keyed by name.
  ParamMap param_grads() const;

 private:
  const ParamMap* params_;
  std::vector<Node> nodes_;
};

struct ValueAndGrads {
  double value = 0.0;
  ParamMap grads;
};

/// Runs the reverse pass for `output` (which must be a scalar) and collects
/// one gradient per bound parameter.
ValueAndGrads forward_backward(Graph& graph, Var output);

}  // namespace efuse::nc
