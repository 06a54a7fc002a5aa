#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rdseg/ops.hpp"
#include "rdseg/tensor.hpp"

namespace rdseg {

/// Append-only record of executed operations. Every recorded op keeps its
/// output value and a closure that pushes the output adjoint onto its
/// parents, so replaying the tape backward visits ops in exact reverse
/// execution order. A tape belongs to one logical thread of execution.
///
/// Parents always have smaller node ids than their children; recording
/// validates ids, so the structure is acyclic by construction.
template <std::floating_point T>
class Tape {
 public:
  using NodeId = std::int32_t;

  /// Registers an input tensor. Named leaves are parameters and show up in
  /// parameter_gradients(); unnamed leaves are plain inputs or constants.
  NodeId leaf(Tensor4<T> value, std::string name = {}) {
    nodes_.push_back(Node{std::move(value), {}, {}, std::move(name)});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId conv2d(NodeId x, NodeId kernel, NodeId bias) {
    const Tensor4<T>& xv = value(x);
    const Tensor4<T>& kv = value(kernel);
    Tensor4<T> out = ops::conv2d(xv, kv, value(bias));
    return record(std::move(out), [x, kernel, bias](Tape& t, const Tensor4<T>& g) {
      ops::conv2d_backward(t.value(x), t.value(kernel), g, &t.grad_slot(x),
                           &t.grad_slot(kernel), &t.grad_slot(bias));
    });
  }

  NodeId maxpool2x2(NodeId x) {
    auto pooled = ops::maxpool2x2(value(x));
    auto indices = std::make_shared<std::vector<std::int64_t>>(std::move(pooled.argmax));
    return record(std::move(pooled.out), [x, indices](Tape& t, const Tensor4<T>& g) {
      ops::maxpool2x2_backward(g, *indices, t.grad_slot(x));
    });
  }

  NodeId upsample2x(NodeId x) {
    return record(ops::upsample2x(value(x)), [x](Tape& t, const Tensor4<T>& g) {
      ops::upsample2x_backward(g, t.grad_slot(x));
    });
  }

  NodeId concat_channels(NodeId a, NodeId b) {
    return record(ops::concat_channels(value(a), value(b)),
                  [a, b](Tape& t, const Tensor4<T>& g) {
                    ops::concat_channels_backward(g, t.grad_slot(a), t.grad_slot(b));
                  });
  }

  /// Train-mode batch norm; mutates the caller-owned running statistics.
  NodeId batch_norm_train(NodeId x, NodeId gamma, NodeId beta, Tensor4<T>& running_mean,
                          Tensor4<T>& running_var, T momentum, T eps) {
    auto cache = std::make_shared<ops::BnCache<T>>();
    Tensor4<T> out = ops::batch_norm_train(value(x), value(gamma), value(beta), running_mean,
                                           running_var, momentum, eps, cache.get());
    return record(std::move(out), [x, gamma, beta, cache](Tape& t, const Tensor4<T>& g) {
      ops::batch_norm_backward(*cache, t.value(gamma), g, &t.grad_slot(x), &t.grad_slot(gamma),
                               &t.grad_slot(beta));
    });
  }

  NodeId relu(NodeId x) {
    return record(ops::relu(value(x)), [x](Tape& t, const Tensor4<T>& g) {
      ops::relu_backward(t.value(x), g, t.grad_slot(x));
    });
  }

  NodeId sigmoid(NodeId x) {
    NodeId out = record(ops::sigmoid(value(x)), {});
    nodes_.back().backprop = [x, out](Tape& t, const Tensor4<T>& g) {
      ops::sigmoid_backward(t.value(out), g, t.grad_slot(x));
    };
    return out;
  }

  NodeId add(NodeId a, NodeId b) {
    return record(ops::add(value(a), value(b)), [a, b](Tape& t, const Tensor4<T>& g) {
      Tensor4<T>& ga = t.grad_slot(a);
      Tensor4<T>& gb = t.grad_slot(b);
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        ga.data[i] += g.data[i];
        gb.data[i] += g.data[i];
      }
    });
  }

  NodeId mul(NodeId a, NodeId b) {
    return record(ops::mul(value(a), value(b)), [a, b](Tape& t, const Tensor4<T>& g) {
      const Tensor4<T>& av = t.value(a);
      const Tensor4<T>& bv = t.value(b);
      Tensor4<T>& ga = t.grad_slot(a);
      Tensor4<T>& gb = t.grad_slot(b);
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        ga.data[i] += g.data[i] * bv.data[i];
        gb.data[i] += g.data[i] * av.data[i];
      }
    });
  }

  /// Full reduction to a (1,1,1,1) scalar.
  NodeId sum(NodeId x) {
    Tensor4<T> out({1, 1, 1, 1});
    out.data[0] = ops::sum(value(x));
    return record(std::move(out), [x](Tape& t, const Tensor4<T>& g) {
      Tensor4<T>& gx = t.grad_slot(x);
      for (auto& v : gx.data) v += g.data[0];
    });
  }

  /// Scalar soft-dice loss node against a constant target.
  NodeId soft_dice(NodeId pred, Tensor4<T> target, T smooth) {
    auto r = ops::soft_dice(value(pred), target, smooth);
    auto grad_pred = std::make_shared<Tensor4<T>>(std::move(r.grad_pred));
    Tensor4<T> out({1, 1, 1, 1});
    out.data[0] = r.loss;
    return record(std::move(out), [pred, grad_pred](Tape& t, const Tensor4<T>& g) {
      Tensor4<T>& gp = t.grad_slot(pred);
      for (std::size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += g.data[0] * grad_pred->data[i];
    });
  }

  /// Replays adjoints from a scalar loss node back to every reachable leaf.
  void backward(NodeId loss) {
    const Tensor4<T>& lv = value(loss);
    if (!(lv.shape == Shape4{1, 1, 1, 1})) {
      throw std::invalid_argument("Tape::backward: loss must be scalar, got " + lv.shape.str());
    }
    grad_slot(loss).data[0] += T{1};
    for (NodeId id = loss; id >= 0; --id) {
      Node& node = nodes_[static_cast<std::size_t>(id)];
      if (node.grad.empty() || !node.backprop) continue;
      node.backprop(*this, node.grad);
    }
  }

  [[nodiscard]] const Tensor4<T>& value(NodeId id) const { return node(id).value; }

  [[nodiscard]] bool has_grad(NodeId id) const { return !node(id).grad.empty(); }

  /// Gradient of the last backward() pass; zero tensor for untouched nodes.
  [[nodiscard]] Tensor4<T> grad(NodeId id) const {
    const Node& nd = node(id);
    return nd.grad.empty() ? Tensor4<T>(nd.value.shape) : nd.grad;
  }

  /// name -> gradient for every named leaf, zero-filled when unused.
  [[nodiscard]] std::map<std::string, Tensor4<T>> parameter_gradients() const {
    std::map<std::string, Tensor4<T>> out;
    for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id) {
      const Node& nd = nodes_[static_cast<std::size_t>(id)];
      if (!nd.name.empty()) out.emplace(nd.name, grad(id));
    }
    return out;
  }

  [[nodiscard]] std::size_t node_count() const { return nodes_.size(); }

  /// Accumulation slot for a node's adjoint, allocated on first touch.
  Tensor4<T>& grad_slot(NodeId id) {
    Node& nd = nodes_.at(static_cast<std::size_t>(id));
    if (nd.grad.empty()) nd.grad = Tensor4<T>(nd.value.shape);
    return nd.grad;
  }

 private:
  struct Node {
    Tensor4<T> value;
    Tensor4<T> grad;  // empty until touched by backward
    std::function<void(Tape&, const Tensor4<T>&)> backprop;
    std::string name;
  };

  const Node& node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw std::out_of_range("Tape: dangling node id " + std::to_string(id));
    }
    return nodes_[static_cast<std::size_t>(id)];
  }

  NodeId record(Tensor4<T> out, std::function<void(Tape&, const Tensor4<T>&)> backprop) {
    nodes_.push_back(Node{std::move(out), {}, std::move(backprop), {}});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace rdseg
