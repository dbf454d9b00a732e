// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "cpoly/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

namespace cpoly {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void ensure_grad(detail::TensorNode& node) {
    if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
}

[[noreturn]] void throw_shape(const std::string& what, const Shape& a, const Shape& b) {
    throw ShapeError(what + ": " + shape_to_string(a) + " vs " + shape_to_string(b));
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto node = std::make_shared<detail::TensorNode>();
    node->value.assign(shape_numel(shape), 0.0);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.values().begin(), t.values().end(), fill);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("from_data: shape " + shape_to_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar_of(double v, bool requires_grad) {
    return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
    Tensor t = zeros({n, n}, requires_grad);
    for (std::size_t i = 0; i < n; ++i) t.values()[i * n + i] = 1.0;
    return t;
}

std::size_t Tensor::rows() const {
    if (node_->shape.size() != 2) {
        throw ShapeError("expected 2-D tensor, got " + shape_to_string(node_->shape));
    }
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    if (node_->shape.size() != 2) {
        throw ShapeError("expected 2-D tensor, got " + shape_to_string(node_->shape));
    }
    return node_->shape[1];
}

double Tensor::scalar() const {
    if (!is_scalar()) {
        throw ContractError("scalar() on tensor of shape " + shape_to_string(node_->shape));
    }
    return node_->value[0];
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::clone_detached() const {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = node_->shape;
    node->value = node_->value;
    return Tensor(std::move(node));
}

Tensor make_op_output(Tape& tape, Shape shape, bool requires_grad) {
    (void)tape;
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    t.node_ptr()->tape_output = requires_grad;
    return t;
}

void Tape::record(std::shared_ptr<detail::TensorNode> out, std::function<void()> pull) {
    nodes_.push_back(Node{std::move(out), std::move(pull)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || !loss.is_scalar()) {
        throw ContractError("backward requires a scalar loss tensor");
    }
    // Intermediate gradients are rebuilt each pass; leaf gradients persist
    // so that repeated backward calls accumulate.
    for (auto& node : nodes_) {
        node.out->grad.assign(node.out->value.size(), 0.0);
    }
    auto loss_node = loss.node_ptr();
    ensure_grad(*loss_node);
    loss_node->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        const auto& g = it->out->grad;
        bool live = false;
        for (double v : g) {
            if (v != 0.0) {
                live = true;
                break;
            }
        }
        if (live) it->pull();
    }
}

void Tape::reset() { nodes_.clear(); }

namespace ops {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// Shared implementation for binary elementwise ops with scalar broadcast.
// fwd(a_i, b_i) -> out_i; dfa/dfb give local partials at (a_i, b_i, out_i).
template <class F, class Da, class Db>
Tensor binary_elementwise(Tape& tape, const Tensor& a, const Tensor& b, const char* name, F fwd,
                          Da dfa, Db dfb) {
    const bool a_scalar = a.is_scalar();
    const bool b_scalar = b.is_scalar();
    if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
        throw_shape(std::string(name) + ": incompatible shapes", a.shape(), b.shape());
    }
    // when both are single-element, the left operand's shape wins: x / sum(x)
    // on a 1x1 tensor must stay 1x1
    const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_op_output(tape, out_shape, rg);
    const std::size_t n = out.size();
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < n; ++i) {
        ov[i] = fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
    }
    if (rg) {
        NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
        tape.record(on, [an, bn, on, a_scalar, b_scalar, dfa, dfb] {
            const auto& dy = on->grad;
            const std::size_t count = dy.size();
            if (an->requires_grad) {
                ensure_grad(*an);
                for (std::size_t i = 0; i < count; ++i) {
                    const double da = dfa(an->value[a_scalar ? 0 : i],
                                          bn->value[b_scalar ? 0 : i], on->value[i]);
                    an->grad[a_scalar ? 0 : i] += dy[i] * da;
                }
            }
            if (bn->requires_grad) {
                ensure_grad(*bn);
                for (std::size_t i = 0; i < count; ++i) {
                    const double db = dfb(an->value[a_scalar ? 0 : i],
                                          bn->value[b_scalar ? 0 : i], on->value[i]);
                    bn->grad[b_scalar ? 0 : i] += dy[i] * db;
                }
            }
        });
    }
    return out;
}

template <class F, class D>
Tensor unary_elementwise(Tape& tape, const Tensor& a, F fwd, D dfa) {
    const bool rg = a.requires_grad();
    Tensor out = make_op_output(tape, a.shape(), rg);
    const std::size_t n = out.size();
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < n; ++i) ov[i] = fwd(av[i]);
    if (rg) {
        NodePtr an = a.node_ptr(), on = out.node_ptr();
        tape.record(on, [an, on, dfa] {
            ensure_grad(*an);
            const auto& dy = on->grad;
            for (std::size_t i = 0; i < dy.size(); ++i) {
                an->grad[i] += dy[i] * dfa(an->value[i], on->value[i]);
            }
        });
    }
    return out;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
        throw_shape("matmul: inner dimensions disagree", a.shape(), b.shape());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_op_output(tape, {m, n}, rg);
    {
        const double* ap = a.values().data();
        const double* bp = b.values().data();
        double* op = out.values().data();
        // i-k-j order: for each output entry the reduction over k is
        // left-to-right, identical to the naive triple loop, bit for bit.
        for (std::size_t i = 0; i < m; ++i) {
            double* orow = op + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = ap[i * k + kk];
                const double* brow = bp + kk * n;
                for (std::size_t j = 0; j < n; ++j) {
                    orow[j] += av * brow[j];
                }
            }
        }
    }
    if (rg) {
        NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
        tape.record(on, [an, bn, on, m, k, n] {
            const double* dy = on->grad.data();
            if (an->requires_grad) {
                ensure_grad(*an);
                double* da = an->grad.data();
                const double* bp = bn->value.data();
                // dA = dY * B^T
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const double* dyrow = dy + i * n;
                        const double* brow = bp + kk * n;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += dyrow[j] * brow[j];
                        da[i * k + kk] += acc;
                    }
                }
            }
            if (bn->requires_grad) {
                ensure_grad(*bn);
                double* db = bn->grad.data();
                const double* ap = an->value.data();
                // dB = A^T * dY
                for (std::size_t i = 0; i < m; ++i) {
                    const double* dyrow = dy + i * n;
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const double av = ap[i * k + kk];
                        double* dbrow = db + kk * n;
                        for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dyrow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        tape, a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        tape, a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        tape, a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        tape, a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); });
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
    return unary_elementwise(
        tape, a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(Tape& tape, const Tensor& a, double c) {
    return unary_elementwise(
        tape, a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(Tape& tape, const Tensor& a) {
    return unary_elementwise(
        tape, a, [](double x) { return stable_sigmoid(x); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(Tape& tape, const Tensor& a) {
    return unary_elementwise(
        tape, a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor log(Tape& tape, const Tensor& a) {
    return unary_elementwise(
        tape, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(Tape& tape, const Tensor& a) {
    return unary_elementwise(
        tape, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sum(Tape& tape, const Tensor& a) {
    const bool rg = a.requires_grad();
    Tensor out = make_op_output(tape, {1}, rg);
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    out.values()[0] = acc;
    if (rg) {
        NodePtr an = a.node_ptr(), on = out.node_ptr();
        tape.record(on, [an, on] {
            ensure_grad(*an);
            const double dy = on->grad[0];
            for (double& g : an->grad) g += dy;
        });
    }
    return out;
}

Tensor transpose(Tape& tape, const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    const bool rg = a.requires_grad();
    Tensor out = make_op_output(tape, {n, m}, rg);
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = av[i * n + j];
    }
    if (rg) {
        NodePtr an = a.node_ptr(), on = out.node_ptr();
        tape.record(on, [an, on, m, n] {
            ensure_grad(*an);
            const auto& dy = on->grad;
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += dy[j * m + i];
            }
        });
    }
    return out;
}

Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t r0, std::size_t r1) {
    const std::size_t m = a.rows(), n = a.cols();
    if (r0 >= r1 || r1 > m) {
        throw ContractError("slice_rows: range [" + std::to_string(r0) + ", " +
                            std::to_string(r1) + ") out of " + std::to_string(m) + " rows");
    }
    const bool rg = a.requires_grad();
    Tensor out = make_op_output(tape, {r1 - r0, n}, rg);
    std::copy(a.values().begin() + static_cast<std::ptrdiff_t>(r0 * n),
              a.values().begin() + static_cast<std::ptrdiff_t>(r1 * n), out.values().begin());
    if (rg) {
        NodePtr an = a.node_ptr(), on = out.node_ptr();
        tape.record(on, [an, on, r0, n] {
            ensure_grad(*an);
            const auto& dy = on->grad;
            for (std::size_t i = 0; i < dy.size(); ++i) an->grad[r0 * n + i] += dy[i];
        });
    }
    return out;
}

Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t c0, std::size_t c1) {
    const std::size_t m = a.rows(), n = a.cols();
    if (c0 >= c1 || c1 > n) {
        throw ContractError("slice_cols: range [" + std::to_string(c0) + ", " +
                            std::to_string(c1) + ") out of " + std::to_string(n) + " cols");
    }
    const std::size_t w = c1 - c0;
    const bool rg = a.requires_grad();
    Tensor out = make_op_output(tape, {m, w}, rg);
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < m; ++i) {
        std::copy(av.begin() + static_cast<std::ptrdiff_t>(i * n + c0),
                  av.begin() + static_cast<std::ptrdiff_t>(i * n + c1),
                  ov.begin() + static_cast<std::ptrdiff_t>(i * w));
    }
    if (rg) {
        NodePtr an = a.node_ptr(), on = out.node_ptr();
        tape.record(on, [an, on, m, n, c0, w] {
            ensure_grad(*an);
            const auto& dy = on->grad;
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < w; ++j) an->grad[i * n + c0 + j] += dy[i * w + j];
            }
        });
    }
    return out;
}

Tensor concat_rows(Tape& tape, std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no parts");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        if (p.cols() != n) throw_shape("concat_rows: column mismatch", parts[0].shape(), p.shape());
        m += p.rows();
        rg = rg || p.requires_grad();
    }
    Tensor out = make_op_output(tape, {m, n}, rg);
    std::size_t row = 0;
    std::vector<std::pair<NodePtr, std::size_t>> offsets;
    offsets.reserve(parts.size());
    for (const Tensor& p : parts) {
        std::copy(p.values().begin(), p.values().end(),
                  out.values().begin() + static_cast<std::ptrdiff_t>(row * n));
        offsets.emplace_back(p.node_ptr(), row * n);
        row += p.rows();
    }
    if (rg) {
        NodePtr on = out.node_ptr();
        tape.record(on, [on, offsets = std::move(offsets)] {
            const auto& dy = on->grad;
            for (const auto& [part, off] : offsets) {
                if (!part->requires_grad) continue;
                ensure_grad(*part);
                for (std::size_t i = 0; i < part->value.size(); ++i) part->grad[i] += dy[off + i];
            }
        });
    }
    return out;
}

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no parts");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        if (p.rows() != m) throw_shape("concat_cols: row mismatch", parts[0].shape(), p.shape());
        n += p.cols();
        rg = rg || p.requires_grad();
    }
    Tensor out = make_op_output(tape, {m, n}, rg);
    std::size_t col = 0;
    std::vector<std::tuple<NodePtr, std::size_t, std::size_t>> layout;  // node, col offset, width
    layout.reserve(parts.size());
    auto& ov = out.values();
    for (const Tensor& p : parts) {
        const std::size_t w = p.cols();
        const auto& pv = p.values();
        for (std::size_t i = 0; i < m; ++i) {
            std::copy(pv.begin() + static_cast<std::ptrdiff_t>(i * w),
                      pv.begin() + static_cast<std::ptrdiff_t>((i + 1) * w),
                      ov.begin() + static_cast<std::ptrdiff_t>(i * n + col));
        }
        layout.emplace_back(p.node_ptr(), col, w);
        col += w;
    }
    if (rg) {
        NodePtr on = out.node_ptr();
        tape.record(on, [on, m, n, layout = std::move(layout)] {
            const auto& dy = on->grad;
            for (const auto& [part, off, w] : layout) {
                if (!part->requires_grad) continue;
                ensure_grad(*part);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < w; ++j) {
                        part->grad[i * w + j] += dy[i * n + off + j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor softmax_rows(Tape& tape, const Tensor& a) {
    const std::size_t m = a.rows(), n = a.cols();
    const bool rg = a.requires_grad();
    Tensor out = make_op_output(tape, {m, n}, rg);
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = av.data() + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(row[j] - mx);
            ov[i * n + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < n; ++j) ov[i * n + j] /= denom;
    }
    if (rg) {
        NodePtr an = a.node_ptr(), on = out.node_ptr();
        tape.record(on, [an, on, m, n] {
            ensure_grad(*an);
            const auto& dy = on->grad;
            const auto& s = on->value;
            for (std::size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += dy[i * n + j] * s[i * n + j];
                for (std::size_t j = 0; j < n; ++j) {
                    an->grad[i * n + j] += s[i * n + j] * (dy[i * n + j] - dot);
                }
            }
        });
    }
    return out;
}

Tensor gumbel_sigmoid(Tape& tape, const Tensor& a, const std::vector<double>& u) {
    if (u.size() != a.size()) {
        throw ContractError("gumbel_sigmoid: noise count " + std::to_string(u.size()) +
                            " does not match " + std::to_string(a.size()) + " logits");
    }
    std::vector<double> uc(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (!(u[i] >= 0.0 && u[i] <= 1.0)) {
            throw ContractError("gumbel_sigmoid: noise u=" + std::to_string(u[i]) +
                                " outside [0, 1]");
        }
        uc[i] = std::clamp(u[i], 1e-6, 1.0 - 1e-6);
    }
    const bool rg = a.requires_grad();
    Tensor out = make_op_output(tape, a.shape(), rg);
    const auto& av = a.values();
    auto& ov = out.values();
    std::vector<double> dens(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double s = stable_sigmoid(av[i]);
        const double num = uc[i] * s;
        const double den = num + (1.0 - uc[i]) * (1.0 - s);
        dens[i] = den;
        ov[i] = num / den;
    }
    if (rg) {
        NodePtr an = a.node_ptr(), on = out.node_ptr();
        tape.record(on, [an, on, uc = std::move(uc), dens = std::move(dens)] {
            ensure_grad(*an);
            const auto& dy = on->grad;
            for (std::size_t i = 0; i < dy.size(); ++i) {
                const double s = stable_sigmoid(an->value[i]);
                const double local =
                    uc[i] * (1.0 - uc[i]) * s * (1.0 - s) / (dens[i] * dens[i]);
                an->grad[i] += dy[i] * local;
            }
        });
    }
    return out;
}

Tensor cross_entropy_with_logits(Tape& tape, const Tensor& logits,
                                 const std::vector<int>& targets) {
    const std::size_t n = logits.rows(), c = logits.cols();
    if (targets.size() != n) {
        throw ContractError("cross_entropy: " + std::to_string(targets.size()) +
                            " targets for " + std::to_string(n) + " rows");
    }
    for (double v : logits.values()) {
        if (std::isnan(v)) throw NumericError("cross_entropy: NaN in logits");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
            throw ContractError("cross_entropy: class index " + std::to_string(targets[i]) +
                                " out of range [0, " + std::to_string(c) + ") at row " +
                                std::to_string(i));
        }
    }
    const bool rg = logits.requires_grad();
    Tensor out = make_op_output(tape, {1}, rg);
    const auto& lv = logits.values();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = lv.data() + i * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
        total += mx + std::log(denom) - row[static_cast<std::size_t>(targets[i])];
    }
    out.values()[0] = total / static_cast<double>(n);
    if (rg) {
        NodePtr ln = logits.node_ptr(), on = out.node_ptr();
        tape.record(on, [ln, on, targets, n, c] {
            ensure_grad(*ln);
            const double dy = on->grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double* row = ln->value.data() + i * c;
                double mx = row[0];
                for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
                for (std::size_t j = 0; j < c; ++j) {
                    const double soft = std::exp(row[j] - mx) / denom;
                    const double indicator =
                        (static_cast<std::size_t>(targets[i]) == j) ? 1.0 : 0.0;
                    ln->grad[i * c + j] += dy * (soft - indicator);
                }
            }
        });
    }
    return out;
}

Tensor mean_squared_error(Tape& tape, const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw_shape("mean_squared_error: shape mismatch", pred.shape(), target.shape());
    }
    for (double v : pred.values()) {
        if (std::isnan(v)) throw NumericError("mean_squared_error: NaN in prediction");
    }
    for (double v : target.values()) {
        if (std::isnan(v)) throw NumericError("mean_squared_error: NaN in target");
    }
    const bool rg = pred.requires_grad() || target.requires_grad();
    Tensor out = make_op_output(tape, {1}, rg);
    const std::size_t n = pred.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred.values()[i] - target.values()[i];
        total += d * d;
    }
    out.values()[0] = total / static_cast<double>(n);
    if (rg) {
        NodePtr pn = pred.node_ptr(), tn = target.node_ptr(), on = out.node_ptr();
        tape.record(on, [pn, tn, on, n] {
            const double dy = on->grad[0] * 2.0 / static_cast<double>(n);
            if (pn->requires_grad) {
                ensure_grad(*pn);
                for (std::size_t i = 0; i < n; ++i) {
                    pn->grad[i] += dy * (pn->value[i] - tn->value[i]);
                }
            }
            if (tn->requires_grad) {
                ensure_grad(*tn);
                for (std::size_t i = 0; i < n; ++i) {
                    tn->grad[i] -= dy * (pn->value[i] - tn->value[i]);
                }
            }
        });
    }
    return out;
}

}  // namespace ops

}  // namespace cpoly
