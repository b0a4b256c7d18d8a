#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gcanet/tensor.hpp"

namespace gcanet {

/// Learnable tensor with a same-shape gradient accumulator.
template <class T>
struct Parameter {
  Parameter(std::string name_, Tensor<T> value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

template <class T>
class Graph;

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  Parameter<T>* param = nullptr;
  bool requires_grad = false;
  std::string label;

  /// Gradient buffer, zero-initialised on first use.
  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Handle to a value produced inside a Graph.
template <class T>
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<Node<T>> node, Graph<T>* graph) : node_(std::move(node)), graph_(graph) {}

  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  /// Gradient after Graph::backward; empty if none flowed here.
  const Tensor<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Graph<T>& graph() const { return *graph_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
  Graph<T>* graph_ = nullptr;
};

/// Reverse-mode tape. Operations append nodes in execution order; backward
/// visits them in exact reverse order. With recording disabled no backward
/// state is kept, but forward values are computed by the same code path.
template <class T>
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }

  Var<T> constant(Tensor<T> value, std::string label = "constant") {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->label = std::move(label);
    trace(*node);
    return Var<T>(std::move(node), this);
  }

  Var<T> param(Parameter<T>& p) {
    auto node = std::make_shared<Node<T>>();
    node->value = p.value;
    node->label = p.name;
    node->param = &p;
    node->requires_grad = recording_;
    trace(*node);
    if (recording_) tape_.push_back(node);
    return Var<T>(std::move(node), this);
  }

  /// Registers an op output. `backward` reads node.grad and accumulates into
  /// each input that requires a gradient.
  Var<T> record(std::string label, Tensor<T> value, std::vector<Var<T>> inputs,
                std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->label = std::move(label);
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (recording_ && needs) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node());
      node->backward = std::move(backward);
      tape_.push_back(node);
    }
    trace(*node);
    return Var<T>(std::move(node), this);
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates; parameter gradients are added
  /// into Parameter::grad.
  void backward(const Var<T>& loss) {
    if (loss.value().size() != 1) {
      throw ShapeError("backward requires a scalar, got " + loss.shape().str());
    }
    if (!loss.requires_grad()) return;
    loss.node()->grad_buffer()[0] = T{1};
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(n);
    }
    for (auto& n : tape_) {
      if (n->param && !n->grad.empty()) n->param->grad += n->grad;
    }
  }

  std::size_t tape_size() const { return tape_.size(); }
  /// Labels of every node created, in creation order.
  const std::vector<std::string>& trace_labels() const { return trace_; }

  /// Label of the first node holding a non-finite value.
  std::optional<std::string> first_non_finite() const;

  bool tracking_kinks() const { return track_kinks_; }
  void set_track_kinks(bool on) { track_kinks_ = on; }
  /// Folds one branch decision of a piecewise op into the kink signature.
  void note_branch(std::uint8_t code) {
    kink_hash_ ^= code;
    kink_hash_ *= 1099511628211ULL;
  }
  std::uint64_t kink_signature() const { return kink_hash_; }

 private:
  void trace(const Node<T>& n) { trace_.push_back(n.label); }

  bool recording_;
  bool track_kinks_ = false;
  std::uint64_t kink_hash_ = 14695981039346656037ULL;
  std::vector<std::shared_ptr<Node<T>>> tape_;
  std::vector<std::string> trace_;
};

template <class T>
std::optional<std::string> Graph<T>::first_non_finite() const {
  for (const auto& n : tape_) {
    for (T v : n->value.vec()) {
      if (!std::isfinite(static_cast<double>(v))) return n->label;
    }
  }
  return std::nullopt;
}

enum class CostKind : int { kMac = 0, kScalar = 1, kNorm = 2 };

/// Tallies operation costs per layer scope. Convolutions, matrix products and
/// tensor-tensor products report multiply-accumulates (kMac); scaling by a
/// scalar reports kScalar; reductions inside normalisations report kNorm.
class MacCounter {
 public:
  void add(const std::string& scope, CostKind kind, std::int64_t amount);
  std::int64_t total(CostKind kind = CostKind::kMac) const;
  /// Sum over `prefix` and every scope nested below it.
  std::int64_t scope_total(std::string_view prefix, CostKind kind = CostKind::kMac) const;
  const std::vector<std::string>& scopes() const { return order_; }
  std::int64_t exact(const std::string& scope, CostKind kind = CostKind::kMac) const;

 private:
  std::map<std::string, std::array<std::int64_t, 3>> costs_;
  std::vector<std::string> order_;
};

/// Routes cost reports from ops on this thread into `counter` while alive.
class CountingScope {
 public:
  explicit CountingScope(MacCounter& counter);
  ~CountingScope();
  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

 private:
  MacCounter* previous_;
};

/// Names the layer nested ops belong to ("stage1.block0.pw").
class LayerScope {
 public:
  explicit LayerScope(std::string name);
  ~LayerScope();
  LayerScope(const LayerScope&) = delete;
  LayerScope& operator=(const LayerScope&) = delete;
};

std::string current_layer();
void report_cost(CostKind kind, std::int64_t amount);

}  // namespace gcanet
