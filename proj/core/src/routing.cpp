// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "cpoly/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cpoly/errors.hpp"

namespace cpoly {

// Experts each task mixes: standard sparse MoE gating keeps the best k.
constexpr std::size_t kMoeTopK = 1;

std::string variant_name(RoutingVariant v) {
    switch (v) {
        case RoutingVariant::single_lora: return "lora";
        case RoutingVariant::moe_lora: return "moe";
        case RoutingVariant::poly: return "poly";
        case RoutingVariant::cpoly: return "cpoly";
    }
    throw ContractError("variant_name: unknown variant");
}

RoutingVariant variant_from_name(const std::string& name) {
    if (name == "lora") return RoutingVariant::single_lora;
    if (name == "moe") return RoutingVariant::moe_lora;
    if (name == "poly") return RoutingVariant::poly;
    if (name == "cpoly") return RoutingVariant::cpoly;
    throw ContractError("unknown variant '" + name + "' (expected lora|moe|poly|cpoly)");
}

AllocationMatrix init_allocation(std::size_t T, std::size_t A, std::size_t B,
                                 RoutingVariant variant, Rng& rng) {
    if (T < 1 || A < 1) throw ContractError("init_allocation: T and A must be >= 1");
    AllocationMatrix alloc;
    alloc.T = T;
    alloc.A = A;
    alloc.B = B;
    alloc.variant = variant;
    if (variant == RoutingVariant::single_lora) return alloc;
    alloc.logits_A = Tensor::zeros({T, A}, /*requires_grad=*/true);
    for (double& v : alloc.logits_A.values()) v = rng.next_uniform(-1e-3, 1e-3);
    if (variant == RoutingVariant::cpoly) {
        if (B < 1) throw ContractError("init_allocation: cpoly requires B >= 1");
        alloc.weights_B = Tensor::zeros({T, T * B}, /*requires_grad=*/true);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t b = 0; b < B; ++b) {
                alloc.weights_B.values()[t * (T * B) + t * B + b] = 1.0;
            }
        }
    }
    return alloc;
}

AllocationMatrix init_allocation(std::size_t T, std::size_t A, std::size_t B,
                                 RoutingVariant variant, std::uint64_t seed) {
    Rng rng = Rng::keyed({seed, stream::kInitAllocation});
    return init_allocation(T, A, B, variant, rng);
}

double gumbel_sigmoid_sample(double logit, double u) {
    Tape tape;
    Tensor in = Tensor::from_data({1}, {logit});
    return ops::gumbel_sigmoid(tape, in, {u}).scalar();
}

RoutingWeights routing_weights(Tape& tape, AllocationMatrix& alloc, std::size_t task, Mode mode,
                               Rng& rng, const RoutingOptions& opts) {
    if (task >= alloc.T) {
        throw ContractError("routing_weights: task " + std::to_string(task) + " out of " +
                            std::to_string(alloc.T));
    }
    RoutingWeights out;
    if (alloc.variant == RoutingVariant::single_lora) {
        out.common = Tensor::from_data({1, 1}, {1.0});
        out.common_raw = out.common;
        return out;
    }
    Tensor logits = ops::slice_rows(tape, alloc.logits_A, task, task + 1);
    if (alloc.variant == RoutingVariant::moe_lora) {
        // MoE gates with a deterministic sparse softmax over each task's
        // top-k experts, in both modes; hard eval collapses to the argmax.
        std::size_t best = 0;
        for (std::size_t i = 1; i < alloc.A; ++i) {
            if (logits.values()[i] > logits.values()[best]) best = i;
        }
        if (mode == Mode::eval && opts.hard_eval) {
            std::vector<double> hard(alloc.A, 0.0);
            hard[best] = 1.0;
            out.common_raw = Tensor::from_data({1, alloc.A}, std::move(hard));
            out.common = out.common_raw;
            return out;
        }
        // Order experts by logit (ties to the lower index) and keep the
        // first kMoeTopK. Dropped experts take an additive -1e9, which
        // underflows to an exact softmax weight of zero.
        std::vector<std::size_t> order(alloc.A);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return logits.values()[a] > logits.values()[b];
        });
        std::vector<double> mask(alloc.A, -1e9);
        for (std::size_t i = 0; i < std::min(kMoeTopK, alloc.A); ++i) mask[order[i]] = 0.0;
        Tensor keep = Tensor::from_data({1, alloc.A}, std::move(mask));
        out.common_raw = ops::softmax_rows(tape, ops::add(tape, logits, keep));
        out.common = out.common_raw;
        return out;
    }
    if (mode == Mode::eval && opts.hard_eval) {
        // Hard selection is a detached readout; eval never backpropagates.
        std::vector<double> hard(alloc.A);
        Tape scratch;
        Tensor probs = ops::sigmoid(scratch, logits.clone_detached());
        for (std::size_t i = 0; i < alloc.A; ++i) {
            hard[i] = probs.values()[i] > 0.5 ? 1.0 : 0.0;
        }
        out.common_raw = Tensor::from_data({1, alloc.A}, std::move(hard));
    } else {
        std::vector<double> u(alloc.A, 0.5);
        if (mode == Mode::train) {
            for (double& v : u) v = rng.next_uniform();
        }
        out.common_raw = ops::gumbel_sigmoid(tape, logits, u);
    }
    if (opts.normalize) {
        Tensor total = ops::sum(tape, out.common_raw);
        if (total.scalar() < 1e-8) {
            out.common = ops::div(tape, out.common_raw, Tensor::scalar_of(1e-8));
        } else {
            out.common = ops::div(tape, out.common_raw, total);
        }
    } else {
        out.common = out.common_raw;
    }
    if (alloc.variant == RoutingVariant::cpoly) {
        out.specific = ops::slice_rows(tape, alloc.weights_B, task, task + 1);
    }
    return out;
}

void apply_off_diagonal_mask(AllocationMatrix& alloc) {
    if (!alloc.mask_off_diagonal || !alloc.weights_B.defined()) return;
    auto& grad = alloc.weights_B.node_ptr()->grad;
    if (grad.empty()) return;
    const std::size_t cols = alloc.T * alloc.B;
    for (std::size_t t = 0; t < alloc.T; ++t) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (c / alloc.B != t) grad[t * cols + c] = 0.0;
        }
    }
}

}  // namespace cpoly
