// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpoly/composer.hpp"
#include "cpoly/taskgen.hpp"

namespace cpoly {

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::size_t d_ff = 128;
    std::size_t vocab_size = 64;
    std::size_t max_seq_len = 16;
    std::size_t n_classes = 2;
    std::size_t n_tasks = 8;
    RoutingVariant variant = RoutingVariant::cpoly;
    std::size_t A = 3;
    std::size_t B = 1;
    std::size_t r = 2;
    bool sequence_mode = false;  // per-position vocab logits instead of a class head
    bool normalize_routing = true;
    bool hard_eval = false;
    bool mask_off_diagonal = false;
    std::uint64_t seed = 0;
};

// Throws ContractError on inconsistencies (head divisibility, variant/A/B).
void validate_model_config(const ModelConfig& cfg);

// One adapted projection (q, k or v of one layer): frozen base plus its own
// skill pool and allocation matrix.
struct AdaptedMatrix {
    std::string name;
    Tensor base;
    SkillInventory inventory;
    AllocationMatrix allocation;

    // Built per call so the struct stays movable.
    ComposedAdapter adapter() {
        ComposedAdapter a;
        a.inventory = &inventory;
        a.allocation = allocation.logits_A.defined() || allocation.weights_B.defined()
                           ? &allocation
                           : nullptr;
        a.variant = allocation.variant;
        a.name = name;
        return a;
    }
};

struct TransformerLayer {
    AdaptedMatrix q, k, v;
    Tensor w_o;
    Tensor w_ff1;
    Tensor w_ff2;
};

// Frozen random encoder; the only trainable state lives in the adapted
// matrices' inventories and allocations.
struct TransformerModel {
    ModelConfig config;
    Tensor embedding;     // vocab x d, frozen
    Tensor pos_encoding;  // max_seq x d, constant sinusoids
    std::vector<TransformerLayer> layers;
    Tensor head;  // d x n_classes, or d x vocab in sequence mode; frozen
};

TransformerModel build_model(const ModelConfig& cfg);

// Class logits (batch x n_classes) or per-position vocab logits
// ((batch*seq) x vocab). Train mode consumes rng for routing samples, in
// fixed layer-then-q/k/v order; eval mode consumes nothing.
Tensor model_forward(Tape& tape, TransformerModel& model, const TaskBatch& batch, Mode mode,
                     Rng& rng);

struct ParamRef {
    std::string name;
    Tensor tensor;
    bool is_routing = false;  // allocation entries train at a higher lr
};

// Deterministic order: layers ascending, q/k/v, modules before allocation.
std::vector<ParamRef> trainable_params(TransformerModel& model);

struct NamedTensor {
    std::string name;
    Tensor tensor;
    bool frozen = false;
};

// Every persisted tensor (frozen and trainable) in checkpoint order.
std::vector<NamedTensor> all_named_tensors(TransformerModel& model);

std::size_t count_trainable(TransformerModel& model);

}  // namespace cpoly
