// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "cpoly/rng.hpp"
#include "cpoly/tensor.hpp"

namespace cpoly {

// One rank-r factored update to a d x d matrix: delta = down * up.
// down is d x r, up is r x d; up starts at zero so a fresh module is a no-op.
struct LoraModule {
    Tensor down;
    Tensor up;

    std::size_t d() const { return down.rows(); }
    std::size_t r() const { return down.cols(); }
    std::size_t param_count() const { return 2 * d() * r(); }
};

// down ~ Gaussian(0, 1/d), up = 0. The rng is consumed in row-major order of
// down, so equal keys give bit-identical modules.
LoraModule init_lora(std::size_t d, std::size_t r, Rng& rng);
LoraModule init_lora(std::size_t d, std::size_t r, std::uint64_t seed);

// The skill pool attached to one adapted matrix: A shared modules plus a
// T x B grid of per-task modules (flattened task-major).
struct SkillInventory {
    std::size_t A = 0;
    std::size_t B = 0;
    std::size_t T = 0;
    std::size_t d = 0;
    std::size_t r = 0;
    std::vector<LoraModule> common;    // size A
    std::vector<LoraModule> specific;  // size T*B, index task*B + b

    LoraModule& specific_at(std::size_t task, std::size_t b) { return specific[task * B + b]; }
    const LoraModule& specific_at(std::size_t task, std::size_t b) const {
        return specific[task * B + b];
    }
    std::size_t module_count() const { return A + T * B; }
};

// Streams one rng: all common modules first, then specific modules task-major.
SkillInventory init_inventory(std::size_t A, std::size_t B, std::size_t T, std::size_t d,
                              std::size_t r, Rng& rng);

struct ParamBudget {
    std::size_t adapter = 0;  // n_matrices * (A + T*B) * 2rd
    std::size_t routing = 0;  // n_matrices * (T*A + T*T*B); reported separately
};

ParamBudget param_count(std::size_t A, std::size_t B, std::size_t T, std::size_t r, std::size_t d,
                        std::size_t n_adapted_matrices);

// h * base + h * down * up. Gradients reach down/up (and h); base is expected
// to be frozen by the caller.
Tensor lora_forward(Tape& tape, const Tensor& h, const Tensor& base, const LoraModule& m);

}  // namespace cpoly
