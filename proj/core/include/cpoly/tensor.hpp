// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cpoly/errors.hpp"

namespace cpoly {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

namespace detail {

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily; empty means all-zero
    bool requires_grad = false;
    bool tape_output = false;  // produced by a recorded op (not a leaf)
};

}  // namespace detail

/// Dense row-major f64 tensor with an attached gradient slot. Copying a
/// Tensor copies the handle; the underlying buffer is shared, which is what
/// lets a backward pass accumulate into the leaves the caller still holds.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double fill, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar_of(double v, bool requires_grad = false);
    static Tensor identity(std::size_t n, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    bool is_scalar() const { return size() == 1; }

    // 2-D helpers; throw on rank mismatch.
    std::size_t rows() const;
    std::size_t cols() const;
    double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double scalar() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }
    bool is_leaf() const { return !node_->tape_output; }

    /// Gradient buffer; empty vector when no gradient has been accumulated.
    const std::vector<double>& grad() const { return node_->grad; }
    std::vector<double>& grad_mut() { return node_->grad; }
    double grad_at(std::size_t i) const { return node_->grad.empty() ? 0.0 : node_->grad[i]; }
    void zero_grad();

    /// Identity of the underlying buffer (for audits and param registries).
    const detail::TensorNode* node() const { return node_.get(); }
    std::shared_ptr<detail::TensorNode> node_ptr() const { return node_; }

    /// Deep copy of values into a fresh leaf (no grad, no tape link).
    Tensor clone_detached() const;

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    friend class Tape;
    friend Tensor make_op_output(class Tape& tape, Shape shape, bool requires_grad);

    std::shared_ptr<detail::TensorNode> node_;
};

/// Records the operations of one forward pass in topological order; a
/// backward pass replays them in reverse, accumulating dLoss/dLeaf into
/// every requires_grad leaf. Reset between optimization steps.
class Tape {
public:
    /// Record an op: `out` is the op's output, `pull` propagates out.grad
    /// into the op's inputs.
    void record(std::shared_ptr<detail::TensorNode> out, std::function<void()> pull);

    /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
    /// Intermediate (tape-produced) gradients are rebuilt from scratch on
    /// every call; leaf gradients accumulate across calls until zero_grad.
    void backward(const Tensor& loss);

    void reset();
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::shared_ptr<detail::TensorNode> out;
        std::function<void()> pull;
    };
    std::vector<Node> nodes_;
};

Tensor make_op_output(Tape& tape, Shape shape, bool requires_grad);

namespace ops {

/// Standard 2-D matrix product with a fixed left-to-right reduction order.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// Elementwise ops. Binary ops accept equal shapes or a scalar on either
// side (scalar-with-tensor is the only supported broadcast).
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor div(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor add_scalar(Tape& tape, const Tensor& a, double c);
Tensor sigmoid(Tape& tape, const Tensor& a);
Tensor relu(Tape& tape, const Tensor& a);
Tensor log(Tape& tape, const Tensor& a);
Tensor exp(Tape& tape, const Tensor& a);

/// Sum of all entries, as a scalar tensor (left-to-right reduction).
Tensor sum(Tape& tape, const Tensor& a);

// 2-D structural ops.
Tensor transpose(Tape& tape, const Tensor& a);
Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t r0, std::size_t r1);
Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t c0, std::size_t c1);
Tensor concat_rows(Tape& tape, std::span<const Tensor> parts);
Tensor concat_cols(Tape& tape, std::span<const Tensor> parts);

/// Row-wise softmax, stabilized by a detached row max (exact: softmax is
/// invariant to uniform shifts, so the detachment does not bias gradients).
Tensor softmax_rows(Tape& tape, const Tensor& a);

/// Relaxed Bernoulli sample per entry: with s = sigmoid(a[i]) and noise
/// u[i], returns u*s / (u*s + (1-u)*(1-s)), which equals
/// sigmoid(log(s*u / ((1-s)*(1-u)))) but is exact at u = 0.5 (-> s) and at
/// a = 0 (-> u). Differentiable in `a`; `u` is a constant.
Tensor gumbel_sigmoid(Tape& tape, const Tensor& a, const std::vector<double>& u);

/// Mean over rows of (logsumexp(row) - row[target]). Targets are class
/// indices; out-of-range indices and NaN logits are rejected.
Tensor cross_entropy_with_logits(Tape& tape, const Tensor& logits,
                                 const std::vector<int>& targets);

/// Mean of squared elementwise differences.
Tensor mean_squared_error(Tape& tape, const Tensor& pred, const Tensor& target);

}  // namespace ops

}  // namespace cpoly
