// Copyright 2026 The HMAN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "hman/tensor.hpp"

namespace hman {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order, so backward() is a single reverse sweep.
//
// Besides values and gradients, the tape keeps two pieces of bookkeeping
// for finite-difference checking: the smallest distance any input had to a
// non-differentiable point (ReLU at 0, a tied max, an inactive hinge), and a
// hash of every branch decision taken. Two evaluations with equal branch
// hashes ran through the same smooth piece of the function.
template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // A leaf that does not participate in gradients of parameters but whose
  // own gradient can still be read after backward().
  Var input(Tensor<Real> value) { return push(std::move(value), {}, nullptr); }

  // A leaf bound to a Parameter; backward() accumulates into param.grad.
  Var watch(Parameter<Real>& param) {
    if (param.grad.shape() != param.value.shape()) param.zero_grad();
    return push(param.value, {}, &param);
  }

  Var record(Tensor<Real> value, BackwardFn backward) {
    return push(std::move(value), std::move(backward), nullptr);
  }

  // A scalar node that also keeps the double it was accumulated in, so a
  // 32-bit tape still reports reductions at double precision.
  Var record_scalar(double value, BackwardFn backward) {
    const Var v = push(Tensor<Real>::scalar(static_cast<Real>(value)), std::move(backward), nullptr);
    nodes_.back().exact = value;
    nodes_.back().has_exact = true;
    return v;
  }

  const Tensor<Real>& value(Var v) const { return nodes_.at(v.id).value; }

  // Value of a one-element node, at double precision when recorded so.
  double scalar(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.has_exact) return n.exact;
    return static_cast<double>(n.value.item());
  }

  // Gradient of the last backward() target with respect to v. Nodes that
  // received no gradient report zeros.
  Tensor<Real> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() != n.value.size()) return Tensor<Real>(n.value.shape());
    return n.grad;
  }

  // Mutable gradient buffer for backward rules; allocated on first touch.
  Tensor<Real>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Tensor<Real>(n.value.shape());
    n.touched = true;
    return n.grad;
  }
  Tensor<Real>& grad_buffer(Var v) { return grad_buffer(v.id); }

  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var loss) {
    if (loss.id >= nodes_.size()) throw ContractError("loss is not on this tape");
    if (nodes_[loss.id].value.size() != 1) {
      throw ContractError("backward() needs a scalar loss, got shape " +
                          shape_str(nodes_[loss.id].value.shape()));
    }
    for (Node& n : nodes_) {
      n.grad = Tensor<Real>();
      n.touched = false;
    }
    grad_buffer(loss.id)[0] = Real{1};
    visits_ = 0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      ++visits_;
      if (!n.touched) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        auto& pg = n.param->grad.storage();
        const auto& g = n.grad.storage();
        for (std::size_t k = 0; k < g.size(); ++k) pg[k] += g[k];
      }
    }
  }

  // Number of nodes visited by the last backward().
  std::size_t last_visit_count() const noexcept { return visits_; }

  // Kink/branch bookkeeping costs a pass over every activation, so ops only
  // do it when tracking is on.
  void set_tracking(bool on) noexcept { tracking_ = on; }
  bool tracking() const noexcept { return tracking_; }

  void note_kink(double distance) {
    if (distance < kink_margin_) kink_margin_ = distance;
  }
  void note_branch(std::uint64_t decision) {
    branch_hash_ ^= decision + 0x9e3779b97f4a7c15ULL + (branch_hash_ << 6) +
                    (branch_hash_ >> 2);
  }

  double kink_margin() const noexcept { return kink_margin_; }
  std::uint64_t branch_hash() const noexcept { return branch_hash_; }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    BackwardFn backward;
    Parameter<Real>* param = nullptr;
    bool touched = false;
    bool has_exact = false;
    double exact = 0.0;
  };

  Var push(Tensor<Real> value, BackwardFn backward, Parameter<Real>* param) {
    Node n;
    n.value = std::move(value);
    n.backward = std::move(backward);
    n.param = param;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
  bool tracking_ = false;
  double kink_margin_ = std::numeric_limits<double>::infinity();
  std::uint64_t branch_hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace hman
