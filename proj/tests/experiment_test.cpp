// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

// Config parsing (strict keys), variant presets, and the experiment runners:
// every artifact a run writes must exist and be byte-reproducible.

#include <doctest.h>

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpoly/adapters.hpp"
#include "cpoly/errors.hpp"
#include "cpoly/experiment.hpp"
#include "cpoly/model.hpp"
#include "cpoly/util.hpp"
#include "test_util.hpp"

using namespace cpoly;
using cpoly_test::TempDir;
using nlohmann::json;

namespace {

// Desk-sized setup shared by the runner tests: 2 tasks, 24 train examples
// each, a 16-wide single-layer model. One epoch is 6 steps.
ExperimentConfig micro_experiment(const std::filesystem::path& out_dir) {
    ExperimentConfig cfg;
    cfg.benchmark.K = 3;
    cfg.benchmark.T = 2;
    cfg.benchmark.n_groups = 2;
    cfg.benchmark.skills_per_group = 2;
    cfg.benchmark.seq_len = 8;
    cfg.benchmark.vocab_size = 32;
    cfg.benchmark.n_train = 24;
    cfg.benchmark.n_eval = 8;
    cfg.benchmark.skill_trigger_tokens = 3;
    cfg.benchmark.task_trigger_tokens = 2;
    cfg.benchmark.label_flip_rate = 0.0;
    cfg.benchmark.seed = 5;

    cfg.model.d_model = 16;
    cfg.model.n_heads = 2;
    cfg.model.n_layers = 1;
    cfg.model.d_ff = 8;
    cfg.model.variant = RoutingVariant::cpoly;
    cfg.model.A = 2;
    cfg.model.B = 1;
    cfg.model.r = 2;

    cfg.train.learning_rate = 5e-3;
    cfg.train.epochs = 1;
    cfg.train.batch_size = 8;
    cfg.train.eval_batch_size = 8;
    cfg.train.log_every = 50;

    cfg.seeds = {0};
    cfg.out_dir = out_dir.string();
    return cfg;
}

json parse_json_file(const std::filesystem::path& path) {
    return json::parse(read_text_file(path));
}

}  // namespace

TEST_CASE("an empty config document yields the defaults") {
    ExperimentConfig cfg = parse_experiment_config(json::object());
    CHECK(cfg.seeds == std::vector<std::uint64_t>{0, 1, 2});
    CHECK(cfg.out_dir == "runs/out");
    CHECK(cfg.data_dir.empty());
    CHECK(cfg.model.d_model == ModelConfig{}.d_model);
    CHECK(cfg.train.learning_rate == TrainConfig{}.learning_rate);
    CHECK(cfg.benchmark.K == BenchmarkConfig{}.K);
}

TEST_CASE("a full config document parses every field") {
    const json j = json::parse(R"({
        "model": {"n_layers": 1, "d_ff": 64, "variant": "cpoly", "A": 3, "B": 1, "r": 2},
        "train": {"learning_rate": 0.005, "epochs": 6, "batch_size": 8,
                  "mixing": "proportional", "routing_lr_multiplier": 10.0},
        "benchmark": {"T": 4, "n_groups": 2, "label_flip_rate": 0.0},
        "seeds": [7],
        "out_dir": "runs/x",
        "ablate_task_counts": [4, 8]
    })");
    ExperimentConfig cfg = parse_experiment_config(j);
    CHECK(cfg.model.n_layers == 1);
    CHECK(cfg.model.variant == RoutingVariant::cpoly);
    CHECK(cfg.model.A == 3);
    CHECK(cfg.train.learning_rate == 0.005);
    CHECK(cfg.train.epochs == 6);
    CHECK(cfg.train.mixing == MixStrategy::proportional);
    CHECK(cfg.train.routing_lr_multiplier == 10.0);
    CHECK(cfg.benchmark.T == 4);
    CHECK(cfg.benchmark.n_groups == 2);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{7});
    CHECK(cfg.out_dir == "runs/x");
    CHECK(cfg.ablate_task_counts == std::vector<std::size_t>{4, 8});
}

TEST_CASE("unknown keys are rejected with their full path") {
    CHECK_THROWS_WITH_AS(parse_experiment_config(json::parse(R"({"bogus": 1})")),
                         "config: unknown key 'bogus'", ContractError);
    CHECK_THROWS_WITH_AS(parse_experiment_config(json::parse(R"({"model": {"bogus": 1}})")),
                         "config: unknown key 'model.bogus'", ContractError);
    CHECK_THROWS_WITH_AS(parse_experiment_config(json::parse(R"({"train": {"lr": 1}})")),
                         "config: unknown key 'train.lr'", ContractError);
    CHECK_THROWS_WITH_AS(parse_experiment_config(json::parse(R"({"benchmark": {"k": 6}})")),
                         "config: unknown key 'benchmark.k'", ContractError);
    CHECK_THROWS_WITH_AS(parse_experiment_config(json::parse(R"({"model": 3})")),
                         "config: expected an object at 'model.'", ContractError);
    CHECK_THROWS_WITH_AS(parse_experiment_config(json::parse(R"({"seeds": []})")),
                         "config: 'seeds' must not be empty", ContractError);
    CHECK_THROWS_WITH_AS(
        parse_experiment_config(json::parse(R"({"train": {"mixing": "fancy"}})")),
        "config: unknown mixing strategy 'fancy'", ContractError);
}

TEST_CASE("variant presets keep the adapter budget matched") {
    ModelConfig base;
    base.d_model = 64;
    base.n_layers = 1;
    base.variant = RoutingVariant::cpoly;
    base.A = 3;
    base.B = 1;
    base.r = 2;

    ModelConfig lora = base;
    apply_variant_preset(lora, RoutingVariant::single_lora);
    CHECK(lora.A == 1);
    CHECK(lora.B == 0);
    CHECK(lora.r == 8);

    ModelConfig moe = base;
    apply_variant_preset(moe, RoutingVariant::moe_lora);
    CHECK(moe.A == 4);
    CHECK(moe.B == 0);
    CHECK(moe.r == 2);

    ModelConfig poly = base;
    apply_variant_preset(poly, RoutingVariant::poly);
    CHECK(poly.A == 4);
    CHECK(poly.B == 0);
    CHECK(poly.r == 2);

    ModelConfig cpoly_cfg = base;
    apply_variant_preset(cpoly_cfg, RoutingVariant::cpoly);
    CHECK(cpoly_cfg.A == 3);
    CHECK(cpoly_cfg.B == 1);

    // Common-pool budgets agree across the baselines at T tasks.
    const std::size_t T = 8, nm = 3;
    const std::size_t lora_budget = param_count(lora.A, lora.B, T, lora.r, 64, nm).adapter;
    const std::size_t moe_budget = param_count(moe.A, moe.B, T, moe.r, 64, nm).adapter;
    const std::size_t poly_budget = param_count(poly.A, poly.B, T, poly.r, 64, nm).adapter;
    CHECK(lora_budget == moe_budget);
    CHECK(moe_budget == poly_budget);

    // Promoting a pure-common config to cpoly moves one skill to B.
    ModelConfig promoted = base;
    promoted.variant = RoutingVariant::poly;
    promoted.A = 4;
    promoted.B = 0;
    apply_variant_preset(promoted, RoutingVariant::cpoly);
    CHECK(promoted.A == 3);
    CHECK(promoted.B == 1);

    ModelConfig tiny = base;
    tiny.A = 1;
    tiny.B = 0;
    CHECK_THROWS_AS(apply_variant_preset(tiny, RoutingVariant::cpoly), ContractError);
}

TEST_CASE("cli overrides rewrite seeds, out_dir and variant") {
    ExperimentConfig cfg = parse_experiment_config(json::object());
    CliOverrides ov;
    ov.seed = 42;
    ov.out_dir = "runs/override";
    ov.variant = "lora";
    ov.hard_eval = true;
    ov.mask_off_diagonal = true;
    apply_overrides(cfg, ov);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{42});
    CHECK(cfg.out_dir == "runs/override");
    CHECK(cfg.model.variant == RoutingVariant::single_lora);
    CHECK(cfg.model.A == 1);
    CHECK(cfg.model.hard_eval);
    CHECK(cfg.model.mask_off_diagonal);

    CliOverrides bad;
    bad.variant = "mystery";
    CHECK_THROWS_AS(apply_overrides(cfg, bad), ContractError);
}

TEST_CASE("config json round trip is lossless") {
    TempDir dir("cfg_roundtrip");
    ExperimentConfig cfg = micro_experiment(dir.path / "out");
    cfg.ablate_task_counts = {2, 4};
    cfg.train.mixing = MixStrategy::proportional;
    const json j = experiment_config_to_json(cfg);
    ExperimentConfig back = parse_experiment_config(j);
    CHECK(experiment_config_to_json(back) == j);
}

TEST_CASE("load_experiment_config reads plain and resolved documents") {
    TempDir dir("cfg_load");
    const std::filesystem::path plain = dir.path / "config.json";
    write_text_file(plain, R"({"seeds": [9], "out_dir": "runs/z"})");
    ExperimentConfig cfg = load_experiment_config(plain);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{9});
    CHECK(cfg.out_dir == "runs/z");

    // A finished run's resolved_config.json doubles as an input config.
    json wrapper;
    wrapper["config"] = experiment_config_to_json(cfg);
    wrapper["inputs_hash"] = "abc";
    const std::filesystem::path resolved = dir.path / "resolved_config.json";
    write_text_file(resolved, wrapper.dump(2));
    ExperimentConfig re = load_experiment_config(resolved);
    CHECK(re.seeds == cfg.seeds);
    CHECK(re.out_dir == cfg.out_dir);

    const std::filesystem::path broken = dir.path / "broken.json";
    write_text_file(broken, "{nope");
    try {
        load_experiment_config(broken);
        FAIL("expected ContractError");
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("not valid JSON") != std::string::npos);
    }
}

TEST_CASE("prepare_benchmark is deterministic for generated and saved data") {
    TempDir dir("prep_bench");
    ExperimentConfig cfg = micro_experiment(dir.path / "out");

    BenchmarkBundle g1 = prepare_benchmark(cfg);
    BenchmarkBundle g2 = prepare_benchmark(cfg);
    CHECK(g1.signature == g2.signature);
    REQUIRE(g1.bench.tasks.size() == g2.bench.tasks.size());
    CHECK(g1.bench.tasks[0].train[0].tokens == g2.bench.tasks[0].train[0].tokens);

    // Saving and pointing data_dir at the files must reproduce the benchmark.
    const std::filesystem::path data_dir = dir.path / "data";
    std::filesystem::create_directories(data_dir);
    save_benchmark(g1.bench, data_dir);
    ExperimentConfig from_disk = cfg;
    from_disk.data_dir = data_dir.string();
    BenchmarkBundle loaded = prepare_benchmark(from_disk);
    CHECK(loaded.signature == prepare_benchmark(from_disk).signature);
    REQUIRE(loaded.bench.tasks.size() == g1.bench.tasks.size());
    CHECK(loaded.bench.vocab_size == g1.bench.vocab_size);
    CHECK(loaded.bench.seq_len == g1.bench.seq_len);
    CHECK(loaded.bench.n_classes == g1.bench.n_classes);
    CHECK(loaded.bench.truth.group_labels == g1.bench.truth.group_labels);
    for (std::size_t t = 0; t < loaded.bench.tasks.size(); ++t) {
        CHECK(loaded.bench.tasks[t].name == g1.bench.tasks[t].name);
        REQUIRE(loaded.bench.tasks[t].train.size() == g1.bench.tasks[t].train.size());
        CHECK(loaded.bench.tasks[t].train[0].tokens == g1.bench.tasks[t].train[0].tokens);
        CHECK(loaded.bench.tasks[t].train[0].label == g1.bench.tasks[t].train[0].label);
    }
}

TEST_CASE("run_single writes the full artifact set with green audits") {
    TempDir dir("run_single");
    ExperimentConfig cfg = micro_experiment(dir.path / "out");
    BenchmarkBundle data = prepare_benchmark(cfg);
    const std::filesystem::path run_dir = dir.path / "out" / "seed0";
    RunOutcome oc = run_single(cfg, data, 0, run_dir);

    CHECK(oc.frozen_audit);
    CHECK(oc.determinism_audit);
    CHECK(oc.total_steps == 6);
    CHECK_FALSE(std::filesystem::exists(run_dir / ".failed"));
    CHECK(std::filesystem::exists(run_dir / "metrics.csv"));
    CHECK(std::filesystem::exists(run_dir / "checkpoint" / "manifest.json"));
    CHECK(std::filesystem::exists(run_dir / "allocation" / "alloc_layer0_q.csv"));

    // Parameter accounting: routing covers the Gumbel logits, everything else
    // (modules and the task-specific allocation rows) counts as adapter.
    const std::size_t nm = 3;
    CHECK(oc.routing_params == nm * 2 * 2);  // T*A logits per matrix
    const ParamBudget budget = param_count(2, 1, 2, 2, 16, nm);
    CHECK(oc.adapter_params + oc.routing_params == budget.adapter + budget.routing);

    const json resolved = parse_json_file(run_dir / "resolved_config.json");
    const json summary = parse_json_file(run_dir / "summary.json");
    CHECK(resolved.at("seed").get<std::uint64_t>() == 0);
    CHECK(summary.at("seed").get<std::uint64_t>() == 0);
    CHECK(summary.at("total_steps").get<std::size_t>() == 6);
    CHECK(summary.at("audits").at("frozen_weights").get<bool>());
    CHECK(summary.at("audits").at("determinism").get<bool>());
    CHECK(summary.at("inputs_hash") == resolved.at("inputs_hash"));
    CHECK(summary.at("trainable_params").get<std::size_t>() ==
          oc.adapter_params + oc.routing_params);
    CHECK(summary.at("final_eval").at("per_task").size() == 2);
}

TEST_CASE("rerunning train into the same out_dir reproduces every byte") {
    TempDir dir("train_repro");
    ExperimentConfig cfg = micro_experiment(dir.path / "out");
    REQUIRE(run_train(cfg) == 0);

    const std::filesystem::path out = dir.path / "out";
    const std::vector<std::filesystem::path> tracked = {
        out / "summary.json",
        out / "resolved_config.json",
        out / "seed0" / "summary.json",
        out / "seed0" / "metrics.csv",
        out / "seed0" / "resolved_config.json",
        out / "seed0" / "allocation" / "alloc_layer0_q.csv",
        out / "seed0" / "checkpoint" / "manifest.json",
    };
    std::vector<std::string> snapshot;
    for (const auto& path : tracked) snapshot.push_back(read_text_file(path));

    REQUIRE(run_train(cfg) == 0);
    for (std::size_t i = 0; i < tracked.size(); ++i) {
        INFO(tracked[i].string());
        CHECK(read_text_file(tracked[i]) == snapshot[i]);
    }
}

TEST_CASE("run_gen_data saves a loadable benchmark with a summary") {
    TempDir dir("gen_data");
    ExperimentConfig cfg = micro_experiment(dir.path / "data");
    REQUIRE(run_gen_data(cfg) == 0);

    const std::filesystem::path out = dir.path / "data";
    for (const char* name : {"train.jsonl", "eval.jsonl", "ground_truth.json",
                             "summary.json", "resolved_config.json"}) {
        CHECK(std::filesystem::exists(out / name));
    }
    const json summary = parse_json_file(out / "summary.json");
    CHECK(summary.at("n_tasks").get<std::size_t>() == 2);
    CHECK(summary.at("total_train").get<std::size_t>() == 48);
    CHECK(summary.at("total_eval").get<std::size_t>() == 16);
    CHECK(summary.at("latent_skills").get<std::size_t>() == 3);

    Benchmark loaded = load_benchmark(out);
    Benchmark generated = generate_benchmark(cfg.benchmark);
    REQUIRE(loaded.tasks.size() == generated.tasks.size());
    CHECK(loaded.tasks[1].eval[0].tokens == generated.tasks[1].eval[0].tokens);
    CHECK(loaded.truth.task_skills == generated.truth.task_skills);
}

TEST_CASE("run_ablate sweeps the (A,B) grid and task counts") {
    TempDir dir("ablate");
    ExperimentConfig cfg = micro_experiment(dir.path / "out");
    cfg.model.A = 3;  // grid needs A + B == 4
    cfg.model.B = 1;
    cfg.ablate_task_counts = {2};
    REQUIRE(run_ablate(cfg) == 0);

    const std::filesystem::path out = dir.path / "out";
    const json summary = parse_json_file(out / "summary.json");
    REQUIRE(summary.at("grid").size() == 4);
    CHECK(summary.at("grid")[0].at("a").get<std::size_t>() == 4);
    CHECK(summary.at("grid")[0].at("variant") == "poly");
    CHECK(summary.at("grid")[1].at("variant") == "cpoly");
    CHECK(summary.at("task_sweep").size() == 1);
    CHECK(summary.at("all_audits_passed").get<bool>());

    const std::string csv = read_text_file(out / "ablation.csv");
    CHECK(csv.rfind("a,b,variant,seed,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 cells x 1 seed
    CHECK(std::filesystem::exists(out / "a3_b1" / "seed0" / "summary.json"));
    CHECK(std::filesystem::exists(out / "tasks2" / "seed0" / "summary.json"));
    CHECK(std::filesystem::exists(out / "task_sweep.csv"));

    ExperimentConfig small = cfg;
    small.model.A = 2;
    small.model.B = 1;
    CHECK_THROWS_AS(run_ablate(small), ContractError);

    ExperimentConfig odd = cfg;
    odd.ablate_task_counts = {3};
    CHECK_THROWS_AS(run_ablate(odd), ContractError);
}

TEST_CASE("run_compare trains all four variants at matched budgets") {
    TempDir dir("compare");
    ExperimentConfig cfg = micro_experiment(dir.path / "out");
    REQUIRE(run_compare(cfg) == 0);

    const std::filesystem::path out = dir.path / "out";
    const json summary = parse_json_file(out / "summary.json");
    REQUIRE(summary.at("variants").size() == 4);
    const auto& variants = summary.at("variants");
    CHECK(variants[0].at("name") == "lora");
    CHECK(variants[1].at("name") == "moe");
    CHECK(variants[2].at("name") == "poly");
    CHECK(variants[3].at("name") == "cpoly");
    CHECK(variants[0].at("adapter_params") == variants[2].at("adapter_params"));
    CHECK(summary.at("all_audits_passed").get<bool>());

    for (const char* name : {"lora", "moe", "poly", "cpoly"}) {
        CHECK(std::filesystem::exists(out / name / "seed0" / "summary.json"));
    }
    const std::string csv = read_text_file(out / "comparison.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 variants x 1 seed
}

TEST_CASE("run_analyze clusters a finished run against the ground truth") {
    TempDir dir("analyze");
    ExperimentConfig cfg = micro_experiment(dir.path / "out");
    REQUIRE(run_train(cfg) == 0);

    const std::filesystem::path run_dir = dir.path / "out" / "seed0";
    REQUIRE(run_analyze(cfg, run_dir.string()) == 0);

    const std::filesystem::path adir = run_dir / "analysis";
    for (const char* name :
         {"dendrogram.json", "dendrogram.newick", "summary.json", "alloc_layer0_q.csv"}) {
        CHECK(std::filesystem::exists(adir / name));
    }
    const json summary = parse_json_file(adir / "summary.json");
    CHECK(summary.at("n_tasks").get<std::size_t>() == 2);
    CHECK(summary.at("ari").is_number());
    CHECK(summary.at("predicted_labels").size() == 2);
    const json dendro = parse_json_file(adir / "dendrogram.json");
    CHECK(dendro.at("merges").size() == 1);

    CHECK_THROWS_AS(run_analyze(cfg, ""), ContractError);
}
