// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "cpoly/composer.hpp"

#include "cpoly/errors.hpp"

namespace cpoly {

void validate_adapter(const ComposedAdapter& adapter) {
    if (adapter.inventory == nullptr) throw ContractError("adapter '" + adapter.name + "': no inventory");
    const SkillInventory& inv = *adapter.inventory;
    switch (adapter.variant) {
        case RoutingVariant::single_lora:
            if (inv.A != 1 || inv.B != 0) {
                throw ContractError("adapter '" + adapter.name + "': single_lora needs A=1,B=0");
            }
            break;
        case RoutingVariant::moe_lora:
        case RoutingVariant::poly:
            if (inv.B != 0) {
                throw ContractError("adapter '" + adapter.name + "': " +
                                    variant_name(adapter.variant) + " needs B=0, got B=" +
                                    std::to_string(inv.B));
            }
            break;
        case RoutingVariant::cpoly:
            if (inv.B < 1) {
                throw ContractError("adapter '" + adapter.name + "': cpoly needs B>=1");
            }
            break;
    }
    if (adapter.variant != RoutingVariant::single_lora) {
        if (adapter.allocation == nullptr) {
            throw ContractError("adapter '" + adapter.name + "': no allocation matrix");
        }
        const AllocationMatrix& alloc = *adapter.allocation;
        if (alloc.variant != adapter.variant || alloc.A != inv.A || alloc.B != inv.B ||
            alloc.T != inv.T) {
            throw ContractError("adapter '" + adapter.name +
                                "': allocation/inventory mismatch (variant or A/B/T)");
        }
    }
}

Tensor compose(Tape& tape, const Tensor& h, const Tensor& base, std::size_t task,
               const ComposedAdapter& adapter, Mode mode, Rng& rng, const RoutingOptions& opts) {
    validate_adapter(adapter);
    const SkillInventory& inv = *adapter.inventory;
    if (task >= inv.T && adapter.variant != RoutingVariant::single_lora) {
        throw ContractError("compose: task " + std::to_string(task) + " out of " +
                            std::to_string(inv.T));
    }
    AllocationMatrix dummy;  // single_lora has no allocation state
    AllocationMatrix& alloc = adapter.allocation ? *adapter.allocation : dummy;
    if (adapter.variant == RoutingVariant::single_lora) {
        dummy.T = inv.T ? inv.T : 1;
        dummy.A = 1;
        dummy.variant = RoutingVariant::single_lora;
    }
    RoutingWeights w =
        routing_weights(tape, alloc, adapter.variant == RoutingVariant::single_lora ? 0 : task,
                        mode, rng, opts);
    const bool skip_zeros = (mode == Mode::eval);

    Tensor out = ops::matmul(tape, h, base);
    for (std::size_t i = 0; i < inv.A; ++i) {
        if (skip_zeros && w.common.values()[i] == 0.0) continue;
        Tensor hd = ops::matmul(tape, h, inv.common[i].down);
        Tensor delta = ops::matmul(tape, hd, inv.common[i].up);
        Tensor wi = ops::slice_cols(tape, w.common, i, i + 1);
        out = ops::add(tape, out, ops::mul(tape, delta, wi));
    }
    if (adapter.variant == RoutingVariant::cpoly) {
        const std::size_t n_specific = inv.T * inv.B;
        for (std::size_t s = 0; s < n_specific; ++s) {
            if (skip_zeros && w.specific.values()[s] == 0.0) continue;
            Tensor hd = ops::matmul(tape, h, inv.specific[s].down);
            Tensor delta = ops::matmul(tape, hd, inv.specific[s].up);
            Tensor ws = ops::slice_cols(tape, w.specific, s, s + 1);
            out = ops::add(tape, out, ops::mul(tape, delta, ws));
        }
    }
    return out;
}

}  // namespace cpoly
