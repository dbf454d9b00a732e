// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "cpoly/adapters.hpp"
#include "cpoly/routing.hpp"

namespace cpoly {

// Ties one adapted matrix's skill pool to its allocation matrix. Non-owning;
// the model owns both ends.
struct ComposedAdapter {
    SkillInventory* inventory = nullptr;
    AllocationMatrix* allocation = nullptr;
    RoutingVariant variant = RoutingVariant::cpoly;
    std::string name;  // e.g. "layer0.q"
};

// Checks the variant/inventory pairing (single_lora: A==1,B==0; moe/poly:
// B==0; cpoly: B>=1) and shape agreement. Throws ContractError.
void validate_adapter(const ComposedAdapter& adapter);

// out = h*base + sum_i common_w[i] * (h*down_i*up_i)
//              + sum_s specific_w[s] * (h*down_s*up_s)
// Terms accumulate in fixed order: base, common 0..A-1, specific 0..T*B-1.
// Train mode keeps every term so gradients reach all routing weights; eval
// mode skips terms whose weight is exactly 0, leaving output bits equal to
// the reduced model's.
Tensor compose(Tape& tape, const Tensor& h, const Tensor& base, std::size_t task,
               const ComposedAdapter& adapter, Mode mode, Rng& rng,
               const RoutingOptions& opts = {});

}  // namespace cpoly
