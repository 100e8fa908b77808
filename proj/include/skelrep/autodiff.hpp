#pragma once

// Reverse-mode differentiation on a define-by-run tape. Every forward op
// allocates a NodeT holding its value, its parents and a closure that routes
// the incoming gradient to those parents. backward() walks the tape in
// reverse topological order, accumulating gradients additively across
// fan-out. The tape is rebuilt on every forward pass; nothing is reused
// across optimizer steps.

#include <algorithm>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "skelrep/tensor.hpp"

namespace skelrep {

template <typename S>
struct NodeT {
  using Ptr = std::shared_ptr<NodeT<S>>;

  TensorT<S> value;
  TensorT<S> grad;           // same shape as value once backward touched it
  bool has_grad = false;
  bool requires_grad = false;
  std::string op;            // primitive that produced this node ("leaf" for inputs)
  std::vector<Ptr> parents;
  // Receives this node's grad, adds the chain-rule contribution to parents.
  std::function<void(NodeT<S>&)> backprop;

  void accumulate(const TensorT<S>& g) {
    if (!has_grad) {
      grad = g;
      has_grad = true;
    } else {
      grad.data += g.data;
    }
  }

  // first contribution takes ownership; fan-out adds in place
  void accumulate(TensorT<S>&& g) {
    if (!has_grad) {
      grad = std::move(g);
      has_grad = true;
    } else {
      grad.data += g.data;
    }
  }

  void zero_grad() {
    has_grad = false;
    grad = TensorT<S>();
  }
};

template <typename S>
using NodePtr = std::shared_ptr<NodeT<S>>;

template <typename S>
inline NodePtr<S> make_node(TensorT<S> value, std::string op, std::vector<NodePtr<S>> parents) {
  auto n = std::make_shared<NodeT<S>>();
  n->value = std::move(value);
  n->op = std::move(op);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p && p->requires_grad) n->requires_grad = true;
  return n;
}

// Leaf holding a constant (no gradient requested).
template <typename S>
inline NodePtr<S> constant(TensorT<S> value) {
  auto n = make_node<S>(std::move(value), "leaf", {});
  return n;
}

// Leaf participating in differentiation (model parameters, probe inputs).
template <typename S>
inline NodePtr<S> leaf(TensorT<S> value) {
  auto n = make_node<S>(std::move(value), "leaf", {});
  n->requires_grad = true;
  return n;
}

// Reverse topological order from root (root last).
template <typename S>
inline std::vector<NodeT<S>*> topo_order(const NodePtr<S>& root) {
  std::vector<NodeT<S>*> order;
  std::unordered_set<NodeT<S>*> seen;
  // Iterative DFS; tapes for the full model are deep enough that recursion
  // would be risky.
  std::vector<std::pair<NodeT<S>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT<S>* p = node->parents[next++].get();
      if (p && !seen.count(p) && p->requires_grad) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children; traverse in reverse for backprop
}

// Populates grad for every requires-grad ancestor of root. Root must be
// scalar-valued (numel == 1).
template <typename S>
inline void backward(const NodePtr<S>& root) {
  if (root->value.numel() != 1)
    fail("backward: root must be scalar-valued, got shape " + shape_str(root->value.shape));
  if (!root->requires_grad) return;
  auto order = topo_order(root);
  root->accumulate(TensorT<S>::full(root->value.shape, S(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<S>* n = *it;
    if (n->backprop && n->has_grad) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// element-wise and shape ops
// ---------------------------------------------------------------------------

template <typename S>
inline NodePtr<S> add(const NodePtr<S>& a, const NodePtr<S>& b) {
  if (!a->value.same_shape(b->value))
    fail("add: shape mismatch " + shape_str(a->value.shape) + " vs " + shape_str(b->value.shape));
  auto n = make_node<S>(TensorT<S>(a->value.shape, a->value.data + b->value.data), "add", {a, b});
  n->backprop = [](NodeT<S>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad);
  };
  return n;
}

template <typename S>
inline NodePtr<S> sub(const NodePtr<S>& a, const NodePtr<S>& b) {
  if (!a->value.same_shape(b->value))
    fail("sub: shape mismatch " + shape_str(a->value.shape) + " vs " + shape_str(b->value.shape));
  auto n = make_node<S>(TensorT<S>(a->value.shape, a->value.data - b->value.data), "sub", {a, b});
  n->backprop = [](NodeT<S>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      TensorT<S> g(self.grad.shape, -self.grad.data);
      self.parents[1]->accumulate(g);
    }
  };
  return n;
}

template <typename S>
inline NodePtr<S> mul(const NodePtr<S>& a, const NodePtr<S>& b) {
  if (!a->value.same_shape(b->value))
    fail("mul: shape mismatch " + shape_str(a->value.shape) + " vs " + shape_str(b->value.shape));
  auto n = make_node<S>(TensorT<S>(a->value.shape, a->value.data * b->value.data), "mul", {a, b});
  n->backprop = [](NodeT<S>& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(
          TensorT<S>(self.grad.shape, self.grad.data * self.parents[1]->value.data));
    if (self.parents[1]->requires_grad)
      self.parents[1]->accumulate(
          TensorT<S>(self.grad.shape, self.grad.data * self.parents[0]->value.data));
  };
  return n;
}

template <typename S>
inline NodePtr<S> scale(const NodePtr<S>& a, S c) {
  auto n = make_node<S>(TensorT<S>(a->value.shape, a->value.data * c), "scale", {a});
  n->backprop = [c](NodeT<S>& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(TensorT<S>(self.grad.shape, self.grad.data * c));
  };
  return n;
}

template <typename S>
inline NodePtr<S> abs_op(const NodePtr<S>& a) {
  auto n = make_node<S>(TensorT<S>(a->value.shape, a->value.data.abs()), "abs", {a});
  n->backprop = [](NodeT<S>& self) {
    if (!self.parents[0]->requires_grad) return;
    const auto& x = self.parents[0]->value.data;
    // subgradient 0 at x == 0
    TensorT<S> g(self.grad.shape,
                 self.grad.data * x.unaryExpr([](S v) { return S((v > 0) - (v < 0)); }));
    self.parents[0]->accumulate(g);
  };
  return n;
}

template <typename S>
inline NodePtr<S> relu(const NodePtr<S>& a) {
  auto n = make_node<S>(TensorT<S>(a->value.shape, a->value.data.max(S(0))), "relu", {a});
  n->backprop = [](NodeT<S>& self) {
    if (!self.parents[0]->requires_grad) return;
    const auto& x = self.parents[0]->value.data;
    TensorT<S> g(self.grad.shape, self.grad.data * (x > S(0)).template cast<S>());
    self.parents[0]->accumulate(g);
  };
  return n;
}

template <typename S>
inline NodePtr<S> sigmoid(const NodePtr<S>& a) {
  TensorT<S> v(a->value.shape, (S(1) / (S(1) + (-a->value.data).exp())));
  auto n = make_node<S>(std::move(v), "sigmoid", {a});
  n->backprop = [](NodeT<S>& self) {
    if (!self.parents[0]->requires_grad) return;
    const auto& s = self.value.data;
    TensorT<S> g(self.grad.shape, self.grad.data * s * (S(1) - s));
    self.parents[0]->accumulate(g);
  };
  return n;
}

template <typename S>
inline NodePtr<S> reshape(const NodePtr<S>& a, Shape sh) {
  auto n = make_node<S>(a->value.reshaped(std::move(sh)), "reshape", {a});
  n->backprop = [](NodeT<S>& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(self.grad.reshaped(self.parents[0]->value.shape));
  };
  return n;
}

template <typename S>
inline NodePtr<S> flatten2d(const NodePtr<S>& a) {
  // [N, ...] -> [N, rest]; the usual bridge from feature maps to dense layers
  const auto& sh = a->value.shape;
  Eigen::Index rest = a->value.numel() / sh[0];
  return reshape(a, Shape{sh[0], rest});
}

template <typename S>
inline NodePtr<S> sum(const NodePtr<S>& a) {
  auto n = make_node<S>(TensorT<S>::scalar(a->value.data.sum()), "sum", {a});
  n->backprop = [](NodeT<S>& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(
          TensorT<S>::full(self.parents[0]->value.shape, self.grad.data[0]));
  };
  return n;
}

template <typename S>
inline NodePtr<S> mean(const NodePtr<S>& a) {
  const S inv = S(1) / static_cast<S>(a->value.numel());
  auto n = make_node<S>(TensorT<S>::scalar(a->value.data.sum() * inv), "mean", {a});
  n->backprop = [inv](NodeT<S>& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(
          TensorT<S>::full(self.parents[0]->value.shape, self.grad.data[0] * inv));
  };
  return n;
}

// Gradient reversal: forward is the exact identity (value shared bitwise);
// backward multiplies the incoming gradient by -lambda.
template <typename S>
inline NodePtr<S> grl(const NodePtr<S>& a, S lambda) {
  if (!(lambda > S(0))) fail("grl: lambda must be > 0");
  auto n = make_node<S>(a->value, "grl", {a});
  n->backprop = [lambda](NodeT<S>& self) {
    if (self.parents[0]->requires_grad)
      self.parents[0]->accumulate(TensorT<S>(self.grad.shape, self.grad.data * (-lambda)));
  };
  return n;
}

}  // namespace skelrep
