// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "cpoly/adapters.hpp"

#include <cmath>

#include "cpoly/errors.hpp"

namespace cpoly {

LoraModule init_lora(std::size_t d, std::size_t r, Rng& rng) {
    if (r < 1 || r > d) {
        throw ContractError("init_lora: rank " + std::to_string(r) + " outside [1, d=" +
                            std::to_string(d) + "]");
    }
    LoraModule m;
    m.down = Tensor::zeros({d, r}, /*requires_grad=*/true);
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& v : m.down.values()) v = rng.next_gaussian() * sd;
    m.up = Tensor::zeros({r, d}, /*requires_grad=*/true);
    return m;
}

LoraModule init_lora(std::size_t d, std::size_t r, std::uint64_t seed) {
    Rng rng = Rng::keyed({seed, stream::kInitAdapter});
    return init_lora(d, r, rng);
}

SkillInventory init_inventory(std::size_t A, std::size_t B, std::size_t T, std::size_t d,
                              std::size_t r, Rng& rng) {
    SkillInventory inv;
    inv.A = A;
    inv.B = B;
    inv.T = T;
    inv.d = d;
    inv.r = r;
    inv.common.reserve(A);
    for (std::size_t i = 0; i < A; ++i) inv.common.push_back(init_lora(d, r, rng));
    inv.specific.reserve(T * B);
    for (std::size_t i = 0; i < T * B; ++i) inv.specific.push_back(init_lora(d, r, rng));
    return inv;
}

ParamBudget param_count(std::size_t A, std::size_t B, std::size_t T, std::size_t r, std::size_t d,
                        std::size_t n_adapted_matrices) {
    ParamBudget budget;
    budget.adapter = n_adapted_matrices * (A + T * B) * 2 * r * d;
    budget.routing = n_adapted_matrices * (T * A + T * T * B);
    return budget;
}

Tensor lora_forward(Tape& tape, const Tensor& h, const Tensor& base, const LoraModule& m) {
    if (h.cols() != base.rows() || base.cols() != m.down.rows() || m.up.cols() != base.cols()) {
        throw ShapeError("lora_forward: width mismatch h=" + shape_to_string(h.shape()) +
                         " base=" + shape_to_string(base.shape()) +
                         " down=" + shape_to_string(m.down.shape()) +
                         " up=" + shape_to_string(m.up.shape()));
    }
    Tensor out = ops::matmul(tape, h, base);
    Tensor hd = ops::matmul(tape, h, m.down);
    Tensor delta = ops::matmul(tape, hd, m.up);
    return ops::add(tape, out, delta);
}

}  // namespace cpoly
