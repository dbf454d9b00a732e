// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

// Low-rank adapter modules and the partitioned skill inventory: zero-delta
// initialization, seeded determinism, parameter accounting, and the rng
// prefix property that lets inventories share common modules across B.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "cpoly/adapters.hpp"
#include "cpoly/errors.hpp"
#include "cpoly/rng.hpp"
#include "cpoly/tensor.hpp"

using namespace cpoly;

TEST_CASE("fresh modules are exact no-ops") {
    Rng rng = Rng::keyed({11, 0});
    LoraModule m = init_lora(8, 2, rng);
    for (std::size_t i = 0; i < m.up.size(); ++i) CHECK(m.up[i] == 0.0);
    CHECK(m.down.requires_grad());
    CHECK(m.up.requires_grad());
    CHECK(m.d() == 8);
    CHECK(m.r() == 2);
    CHECK(m.param_count() == 2 * 8 * 2);

    Tensor h = Tensor::from_data({3, 8}, [] {
        std::vector<double> v(24);
        Rng r = Rng::keyed({11, 1});
        for (double& x : v) x = r.next_uniform(-2, 2);
        return v;
    }());
    Tensor base = Tensor::from_data({8, 8}, [] {
        std::vector<double> v(64);
        Rng r = Rng::keyed({11, 2});
        for (double& x : v) x = r.next_uniform(-2, 2);
        return v;
    }());
    Tape tape;
    Tensor out = lora_forward(tape, h, base, m);
    Tensor plain = ops::matmul(tape, h, base);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == plain[i]);

    Tensor zero_h = Tensor::zeros({3, 8});
    Tensor out0 = lora_forward(tape, zero_h, base, m);
    for (std::size_t i = 0; i < out0.size(); ++i) CHECK(out0[i] == 0.0);
}

TEST_CASE("lora_forward matches the hand matrix arithmetic") {
    LoraModule m;
    m.down = Tensor::from_data({2, 1}, {1, 2});
    m.up = Tensor::from_data({1, 2}, {3, 4});
    Tensor h = Tensor::from_data({1, 2}, {1, 1});
    Tape tape;
    Tensor out = lora_forward(tape, h, Tensor::identity(2), m);
    CHECK(out.at(0, 0) == 10.0);
    CHECK(out.at(0, 1) == 13.0);
}

TEST_CASE("lora_forward rejects width mismatches") {
    Rng rng = Rng::keyed({11, 3});
    LoraModule m = init_lora(4, 1, rng);
    Tape tape;
    Tensor h = Tensor::zeros({1, 4});
    CHECK_THROWS_AS(lora_forward(tape, h, Tensor::identity(3), m), ShapeError);
    Tensor wide = Tensor::zeros({1, 3});
    CHECK_THROWS_AS(lora_forward(tape, wide, Tensor::identity(3), m), ShapeError);
}

TEST_CASE("init_lora is seeded and validates the rank") {
    LoraModule a = init_lora(16, 3, std::uint64_t{42});
    LoraModule b = init_lora(16, 3, std::uint64_t{42});
    LoraModule c = init_lora(16, 3, std::uint64_t{43});
    bool all_equal = true, any_diff = false;
    for (std::size_t i = 0; i < a.down.size(); ++i) {
        all_equal = all_equal && a.down[i] == b.down[i];
        any_diff = any_diff || a.down[i] != c.down[i];
    }
    CHECK(all_equal);
    CHECK(any_diff);

    Rng rng = Rng::keyed({11, 4});
    CHECK_THROWS_AS(init_lora(4, 5, rng), ContractError);
    CHECK_THROWS_AS(init_lora(4, 0, rng), ContractError);
}

TEST_CASE("down entries follow the 1/sqrt(d) Gaussian") {
    const std::size_t d = 256, r = 4;
    LoraModule m = init_lora(d, r, std::uint64_t{7});
    const double n = static_cast<double>(d * r);
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < m.down.size(); ++i) {
        sum += m.down[i];
        sq += m.down[i] * m.down[i];
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sq / n - mean * mean);
    const double sigma = 1.0 / 16.0;  // 1/sqrt(256)
    CHECK(std::abs(mean) < 3.0 * sigma / std::sqrt(n));
    CHECK(sd == doctest::Approx(sigma).epsilon(0.10));
}

TEST_CASE("lora_forward is linear in h") {
    Rng rng = Rng::keyed({11, 5});
    LoraModule m = init_lora(6, 2, rng);
    for (double& v : m.up.values()) v = rng.next_uniform(-1, 1);  // nonzero delta
    std::vector<double> bv(36);
    for (double& v : bv) v = rng.next_uniform(-1, 1);
    Tensor base = Tensor::from_data({6, 6}, bv);

    std::vector<double> h1v(12), h2v(12);
    for (double& v : h1v) v = rng.next_uniform(-2, 2);
    for (double& v : h2v) v = rng.next_uniform(-2, 2);
    Tensor h1 = Tensor::from_data({2, 6}, h1v);
    Tensor h2 = Tensor::from_data({2, 6}, h2v);
    const double alpha = 1.5, beta = -0.25;
    std::vector<double> mixed(12);
    for (std::size_t i = 0; i < 12; ++i) mixed[i] = alpha * h1v[i] + beta * h2v[i];

    Tape tape;
    Tensor lhs = lora_forward(tape, Tensor::from_data({2, 6}, mixed), base, m);
    Tensor f1 = lora_forward(tape, h1, base, m);
    Tensor f2 = lora_forward(tape, h2, base, m);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
        CHECK(lhs[i] == doctest::Approx(alpha * f1[i] + beta * f2[i]).epsilon(1e-12));
    }
}

TEST_CASE("inventory layout and rng prefix sharing") {
    const std::size_t A = 2, B = 2, T = 3, d = 8, r = 2;
    Rng rng1 = Rng::keyed({11, 6});
    SkillInventory inv = init_inventory(A, B, T, d, r, rng1);
    CHECK(inv.common.size() == A);
    CHECK(inv.specific.size() == T * B);
    CHECK(inv.module_count() == A + T * B);
    CHECK(&inv.specific_at(2, 1) == &inv.specific[2 * B + 1]);

    // Commons are drawn before any specific module, so two inventories from
    // equal keys share bit-identical common modules regardless of B.
    Rng rng2 = Rng::keyed({11, 6});
    SkillInventory flat = init_inventory(A, 0, T, d, r, rng2);
    for (std::size_t i = 0; i < A; ++i) {
        for (std::size_t j = 0; j < inv.common[i].down.size(); ++j) {
            CHECK(inv.common[i].down[j] == flat.common[i].down[j]);
        }
    }
}

TEST_CASE("parameter budgets") {
    CHECK(param_count(1, 0, 8, 8, 64, 1).adapter == 1024);  // 2*8*64
    for (std::size_t d : {16, 64, 256}) {
        CHECK(param_count(4, 0, 8, 2, d, 6).adapter == param_count(1, 0, 8, 8, d, 6).adapter);
    }
    // B=0 makes the adapter count independent of T.
    CHECK(param_count(3, 0, 2, 2, 64, 6).adapter == param_count(3, 0, 20, 2, 64, 6).adapter);
    // Routing params: nm * (T*A + T*T*B).
    CHECK(param_count(3, 1, 8, 2, 64, 6).routing == 6 * (8 * 3 + 8 * 8 * 1));
    CHECK(param_count(4, 0, 8, 2, 64, 6).routing == 6 * (8 * 4));
    // Full adapter formula: nm * (A + T*B) * 2rd.
    CHECK(param_count(3, 1, 8, 2, 64, 6).adapter == 6 * (3 + 8) * 2 * 2 * 64);
}
