#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gfp/tensor.hpp"

namespace gfp::ad {

template <class T>
struct Param {
  BasicTensor<T> value;
  BasicTensor<T> grad;  // dims always mirror value
};

// Named trainable tensors. Iteration order is the lexicographic name order, which is also
// the order used when writing checkpoints.
template <class T>
class ParamSet {
 public:
  using Map = std::map<std::string, Param<T>>;

  Param<T>& add(const std::string& name, BasicTensor<T> value) {
    if (entries_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
    BasicTensor<T> grad(value.dims());
    auto [it, _] = entries_.emplace(name, Param<T>{std::move(value), std::move(grad)});
    return it->second;
  }
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Param<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ArgumentError("unknown parameter: " + name);
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ArgumentError("unknown parameter: " + name);
    return it->second;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : entries_) n += p.value.size();
    return n;
  }
  void zero_grad() {
    for (auto& [_, p] : entries_) p.grad.fill(T(0));
  }

  typename Map::iterator begin() { return entries_.begin(); }
  typename Map::iterator end() { return entries_.end(); }
  typename Map::const_iterator begin() const { return entries_.begin(); }
  typename Map::const_iterator end() const { return entries_.end(); }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, p] : entries_) out.add(name, BasicTensor<U>::cast(p.value));
    return out;
  }

  bool values_equal(const ParamSet& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    auto a = entries_.begin();
    auto b = o.entries_.begin();
    for (; a != entries_.end(); ++a, ++b)
      if (a->first != b->first || !(a->second.value == b->second.value)) return false;
    return true;
  }

 private:
  Map entries_;
};

template <class T>
class Graph;

// Handle to a node on a Graph tape.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const BasicTensor<T>& value() const { return graph->value(*this); }
  const Dims& dims() const { return value().dims(); }
  int dim(int axis) const { return value().dim(axis); }
};

// Reverse-mode tape. Nodes are appended in evaluation order, so reverse creation order is a
// valid topological order for the backward sweep.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(BasicTensor<T> value) { return push(std::move(value), false, nullptr); }
  Var<T> variable(BasicTensor<T> value) { return push(std::move(value), true, nullptr); }
  Var<T> param(Param<T>& p) { return push(p.value, true, &p); }
  Var<T> param(ParamSet<T>& ps, const std::string& name) { return param(ps.at(name)); }

  // Records an op output. The node requires grad iff any parent does; `fn` is dropped otherwise.
  Var<T> record(BasicTensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || nodes_.at(p.id).requires_grad;
    return push(std::move(value), rg, nullptr, rg ? std::move(fn) : BackwardFn{});
  }

  const BasicTensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  const BasicTensor<T>& value(int id) const { return nodes_.at(id).value; }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  bool requires_grad(Var<T> v) const { return requires_grad(v.id); }

  // Gradient accumulator for node `id`, allocated on first use.
  BasicTensor<T>& grad_ref(int id) {
    auto& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.dims());
    return n.grad;
  }
  const BasicTensor<T>& grad(Var<T> v) {
    return grad_ref(v.id);
  }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape. Parameter leaves add their gradient into
  // the bound Param::grad, so several backward passes accumulate.
  void backward(Var<T> loss) {
    const auto& lv = value(loss);
    if (lv.size() != 1) throw ShapeError("backward expects a scalar loss, got " + dims_to_string(lv.dims()));
    if (!lv.all_finite()) throw NumericalError("non-finite loss in backward");
    if (!requires_grad(loss)) return;
    grad_ref(loss.id)[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      auto& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param) {
        auto& dst = n.param->grad;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
      }
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Param<T>* param = nullptr;
  };

  Var<T> push(BasicTensor<T> value, bool rg, Param<T>* p, BackwardFn fn = {}) {
    nodes_.push_back(Node{std::move(value), {}, rg, std::move(fn), p});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace gfp::ad
