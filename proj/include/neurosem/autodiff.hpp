#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "neurosem/tensor.hpp"

namespace neurosem {

template <typename Scalar>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Mat<Scalar>& value() const { return tape_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape<Scalar>* tape() const { return tape_; }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients produced by one backward pass, indexed by node.
template <typename Scalar>
class GradientMap {
 public:
  GradientMap(std::vector<Mat<Scalar>> grads, std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  /// Gradient of the loss w.r.t. `v`; zeros when no path reaches `v`.
  Mat<Scalar> operator[](const Var<Scalar>& v) const {
    const auto& g = grads_.at(v.id());
    if (g.size() == 0) {
      const auto [r, c] = shapes_.at(v.id());
      return Mat<Scalar>::Zero(r, c);
    }
    return g;
  }

 private:
  std::vector<Mat<Scalar>> grads_;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes_;
};

/// Define-by-run reverse-mode tape. Nodes are appended in execution order, so
/// every input id precedes its consumer and the graph is acyclic by
/// construction. A tape belongs to one thread.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(const Mat<Scalar>& grad_out, Tape& tape)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Mat<Scalar> value, bool requires_grad = true) {
    nodes_.push_back(Node{"leaf", {}, std::move(value), requires_grad && grad_enabled_, {}});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  Var<Scalar> constant(Mat<Scalar> value) { return leaf(std::move(value), false); }

  /// Appends an op node. The backward closure is kept only when some input
  /// requires a gradient.
  Var<Scalar> record(const char* op, std::initializer_list<Var<Scalar>> inputs, Mat<Scalar> value,
                     BackwardFn backward) {
    Node node{op, {}, std::move(value), false, {}};
    for (const auto& in : inputs) {
      node.inputs.push_back(in.id());
      node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  const Mat<Scalar>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

  /// Adds `g` into the running gradient of node `id` (no-op for nodes that
  /// do not require gradients).
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    if (!nodes_[id].requires_grad) return;
    auto& slot = grads_[id];
    if (slot.size() == 0) {
      slot = g;
    } else {
      slot += g;
    }
  }

  /// Reverse sweep from a scalar loss node.
  GradientMap<Scalar> backward(const Var<Scalar>& loss) {
    const auto& lv = value(loss.id());
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw ContractError("backward requires a scalar loss, got " + std::to_string(lv.rows()) +
                          "x" + std::to_string(lv.cols()));
    }
    grads_.assign(nodes_.size(), Mat<Scalar>());
    std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
    shapes.reserve(nodes_.size());
    for (const auto& n : nodes_) shapes.emplace_back(n.value.rows(), n.value.cols());

    if (nodes_[loss.id()].requires_grad) {
      grads_[loss.id()] = Mat<Scalar>::Ones(1, 1);
      for (std::size_t i = loss.id() + 1; i-- > 0;) {
        if (grads_[i].size() == 0 || !nodes_[i].backward) continue;
        nodes_[i].backward(grads_[i], *this);
      }
    }
    return GradientMap<Scalar>(std::move(grads_), std::move(shapes));
  }

 private:
  struct Node {
    const char* op;
    std::vector<std::size_t> inputs;
    Mat<Scalar> value;
    bool requires_grad;
    BackwardFn backward;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::vector<Mat<Scalar>> grads_;
};

}  // namespace neurosem
