// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

// Hot-path microbenchmarks: raw matmul through the tape, adapter composition
// forward/backward, and one full optimizer step on the desk-scale model.

#include <benchmark/benchmark.h>

#include "cpoly/composer.hpp"
#include "cpoly/model.hpp"
#include "cpoly/taskgen.hpp"
#include "cpoly/trainer.hpp"

namespace {

using namespace cpoly;

Tensor random_leaf(std::size_t rows, std::size_t cols, std::uint64_t seed, bool rg) {
    Rng rng = Rng::keyed({seed});
    std::vector<double> data(rows * cols);
    for (double& x : data) x = rng.next_gaussian();
    return Tensor::from_data({rows, cols}, std::move(data), rg);
}

void bm_matmul_forward(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const Tensor a = random_leaf(n, n, 1, false);
    const Tensor b = random_leaf(n, n, 2, false);
    for (auto _ : state) {
        Tape tape;
        Tensor c = ops::matmul(tape, a, b);
        benchmark::DoNotOptimize(c.values().data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * n * n * n);
}
BENCHMARK(bm_matmul_forward)->Arg(16)->Arg(64)->Arg(128);

void bm_matmul_backward(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const Tensor a = random_leaf(n, n, 1, true);
    const Tensor b = random_leaf(n, n, 2, true);
    for (auto _ : state) {
        Tape tape;
        Tensor c = ops::matmul(tape, a, b);
        Tensor loss = ops::sum(tape, c);
        tape.backward(loss);
        a.node_ptr()->grad.clear();
        b.node_ptr()->grad.clear();
        benchmark::DoNotOptimize(loss.scalar());
    }
}
BENCHMARK(bm_matmul_backward)->Arg(16)->Arg(64);

SkillInventory bench_inventory() {
    Rng rng = Rng::keyed({99});
    return init_inventory(3, 1, 8, 64, 2, rng);
}

AllocationMatrix bench_allocation() {
    return init_allocation(8, 3, 1, RoutingVariant::cpoly, 7);
}

void bm_compose_forward(benchmark::State& state) {
    SkillInventory inv = bench_inventory();
    AllocationMatrix alloc = bench_allocation();
    ComposedAdapter adapter{&inv, &alloc, RoutingVariant::cpoly, "bench"};
    const Tensor h = random_leaf(8, 64, 3, false);
    const Tensor base = random_leaf(64, 64, 4, false);
    Rng rng = Rng::keyed({11});
    for (auto _ : state) {
        Tape tape;
        Tensor out = compose(tape, h, base, 0, adapter, Mode::eval, rng, RoutingOptions{});
        benchmark::DoNotOptimize(out.values().data());
    }
}
BENCHMARK(bm_compose_forward);

void bm_compose_backward(benchmark::State& state) {
    SkillInventory inv = bench_inventory();
    AllocationMatrix alloc = bench_allocation();
    ComposedAdapter adapter{&inv, &alloc, RoutingVariant::cpoly, "bench"};
    const Tensor h = random_leaf(8, 64, 3, false);
    const Tensor base = random_leaf(64, 64, 4, false);
    Rng rng = Rng::keyed({11});
    for (auto _ : state) {
        Tape tape;
        Tensor out = compose(tape, h, base, 0, adapter, Mode::train, rng, RoutingOptions{});
        Tensor loss = ops::sum(tape, out);
        tape.backward(loss);
        benchmark::DoNotOptimize(loss.scalar());
    }
}
BENCHMARK(bm_compose_backward);

void bm_train_step(benchmark::State& state) {
    BenchmarkConfig bcfg;
    bcfg.n_train = 64;
    bcfg.n_eval = 8;
    Benchmark bench = generate_benchmark(bcfg);

    ModelConfig mcfg;
    mcfg.n_layers = 1;
    mcfg.d_ff = 64;
    mcfg.vocab_size = bench.vocab_size;
    mcfg.max_seq_len = bench.seq_len;
    mcfg.n_tasks = bench.tasks.size();

    TrainConfig tcfg;
    tcfg.batch_size = 8;
    tcfg.epochs = 1;
    tcfg.log_every = 0;
    for (auto _ : state) {
        state.PauseTiming();
        TransformerModel model = build_model(mcfg);
        TrainConfig one = tcfg;
        one.max_steps = 1;
        state.ResumeTiming();
        TrainResult result = train(model, bench, one);
        benchmark::DoNotOptimize(result.step_losses.data());
    }
}
BENCHMARK(bm_train_step)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
