// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "cpoly/rng.hpp"
#include "cpoly/tensor.hpp"

namespace cpoly {

enum class RoutingVariant { single_lora, moe_lora, poly, cpoly };

std::string variant_name(RoutingVariant v);
RoutingVariant variant_from_name(const std::string& name);

enum class Mode { train, eval };

// The allocation matrix W = [W_A | W_B] for one adapted matrix.
// logits_A holds pre-activation parameters of W_A; weights_B holds raw W_B
// entries (identity blocks at init). Shapes depend on the variant:
//   single_lora: neither tensor exists
//   moe_lora:    logits_A is T x A (softmax gate per task)
//   poly:        logits_A is T x A
//   cpoly:       logits_A is T x A, weights_B is T x (T*B)
struct AllocationMatrix {
    std::size_t T = 0;
    std::size_t A = 0;
    std::size_t B = 0;
    RoutingVariant variant = RoutingVariant::cpoly;
    Tensor logits_A;
    Tensor weights_B;
    bool mask_off_diagonal = false;
};

// logits_A ~ i.i.d. uniform on [-1e-3, 1e-3]; weights_B starts as identity
// blocks (entry (t, t*B + b) = 1, everything else 0).
AllocationMatrix init_allocation(std::size_t T, std::size_t A, std::size_t B,
                                 RoutingVariant variant, Rng& rng);
AllocationMatrix init_allocation(std::size_t T, std::size_t A, std::size_t B,
                                 RoutingVariant variant, std::uint64_t seed);

// Scalar Eq.-4 sample, sharing the tape op's exact formulation. u is clamped
// to [1e-6, 1-1e-6]; u outside [0,1] is a contract error.
double gumbel_sigmoid_sample(double logit, double u);

struct RoutingOptions {
    bool normalize = true;   // divide common weights by their sum (floor 1e-8)
    bool hard_eval = false;  // eval mode: threshold sigma(logit) at 0.5 (moe: argmax one-hot)
};

struct RoutingWeights {
    Tensor common;      // 1 x A, normalized when requested (single_lora: constant [1])
    Tensor common_raw;  // 1 x A pre-normalization samples (statistical tests)
    Tensor specific;    // 1 x (T*B) raw weights_B row; empty unless cpoly
};

// Task-conditioned mixture weights. For poly/cpoly, train mode draws one
// fresh u per common skill from rng; eval mode fixes u = 0.5, which makes the
// sample exactly sigma(logit). moe_lora gates with a deterministic softmax in
// both modes. single_lora yields the constant weight 1 for its one skill.
RoutingWeights routing_weights(Tape& tape, AllocationMatrix& alloc, std::size_t task, Mode mode,
                               Rng& rng, const RoutingOptions& opts = {});

// Zeroes accumulated gradient on every off-block entry of weights_B so those
// entries never move. No-op unless mask_off_diagonal is set.
void apply_off_diagonal_mask(AllocationMatrix& alloc);

}  // namespace cpoly
