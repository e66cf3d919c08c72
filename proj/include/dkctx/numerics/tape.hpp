// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dkctx/numerics/tensor.hpp"
#include "dkctx/util/rng.hpp"

namespace dkctx {

struct Parameter {
  Tensor value;
  Tensor grad;
};

/// Named trainable parameters. Names are stable ("text/layer0/attn/wq") and
/// iteration order is lexicographic, which keeps checkpoints and optimizer
/// updates deterministic.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw Error("parameter '" + name + "' already registered");
    it->second.grad = Tensor(init.shape());
    it->second.value = std::move(init);
    return it->second;
  }

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Parameter& add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    return add(name, std::move(t));
  }
  Parameter& add_constant(const std::string& name, Shape shape, double value) {
    return add(name, Tensor(std::move(shape), value));
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Parameter& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  const Parameter& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.fill(0.0);
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [n, _] : params_) out.push_back(n);
    return out;
  }
  std::size_t size() const { return params_.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }
};

/// Reverse-mode gradient tape. Operations append nodes in execution order,
/// which is a valid topological order; backward() walks it once in reverse
/// and accumulates gradients additively.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  // Leaf whose gradient is retained; read it back with grad().
  Var input(Tensor value) {
    Var v = push(std::move(value), true, {});
    return v;
  }

  // Registers (once per tape) a leaf bound to a stored parameter.
  Var param(ParamStore& store, const std::string& name) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return Var{this, it->second};
    Parameter& p = store.get(name);
    Var v = push(p.value, true, {});
    nodes_[v.id].param = &p;
    param_nodes_.emplace(name, v.id);
    return v;
  }

  Var push(Tensor value, bool needs_grad, BackwardFn fn) {
    if (!value.all_finite()) throw Error("non-finite value produced on tape (node " + std::to_string(nodes_.size()) + ")");
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad && record_;
    if (n.needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  bool any_needs_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs)
      if (nodes_[v.id].needs_grad) return true;
    return false;
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }

  // Gradient of a node; zeros when nothing flowed into it.
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id];
    return n.grad.size() == n.value.size() && n.has_grad ? n.grad : Tensor(n.value.shape());
  }

  // Mutable gradient buffer, allocated on first touch.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

  void accumulate(std::size_t id, const Tensor& g) {
    if (!nodes_[id].needs_grad) return;
    Tensor& buf = grad_buffer(id);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates. Parameter gradients are added
  /// into their ParamStore entries.
  void backward(Var loss) {
    if (!record_) throw Error("backward on a non-recording tape");
    if (loss.tape != this) throw Error("backward: variable belongs to another tape");
    if (value(loss).size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(value(loss).shape()));
    if (backward_done_) throw Error("backward called twice on the same tape");
    backward_done_ = true;
    grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.needs_grad || !n.has_grad) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  bool record_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace dkctx
