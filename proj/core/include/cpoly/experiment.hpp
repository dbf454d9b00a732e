// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpoly/taskgen.hpp"
#include "cpoly/trainer.hpp"

namespace cpoly {

struct ExperimentConfig {
    ModelConfig model;
    TrainConfig train;
    BenchmarkConfig benchmark;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    std::string out_dir = "runs/out";
    std::string data_dir;                         // load a saved benchmark instead of generating
    std::vector<std::size_t> ablate_task_counts;  // optional extra sweep for `ablate`

    // vocab_size / max_seq_len / n_classes / n_tasks / sequence_mode are
    // derived from the benchmark at run time; seed comes from `seeds`.
};

// Rejects unknown keys anywhere in the document (error names the key path).
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);

struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> variant;
    bool hard_eval = false;
    bool mask_off_diagonal = false;
};

void apply_overrides(ExperimentConfig& cfg, const CliOverrides& overrides);

// Rewrites A/B/r for a matched adapter budget at the config's total skill
// count S = A+B and rank r: lora -> (1, 0, S*r); moe/poly -> (S, 0, r);
// cpoly -> (S-B, B, r) with B >= 1.
void apply_variant_preset(ModelConfig& cfg, RoutingVariant variant);

// Benchmark per config (generated or loaded from data_dir), plus a content
// signature folded into every run's inputs hash.
struct BenchmarkBundle {
    Benchmark bench;
    std::string signature;
};
BenchmarkBundle prepare_benchmark(const ExperimentConfig& cfg);

struct RunOutcome {
    MetricReport final_eval;
    bool frozen_audit = false;
    bool determinism_audit = false;
    std::size_t total_steps = 0;
    std::size_t adapter_params = 0;  // trainable module entries (down/up)
    std::size_t routing_params = 0;  // trainable allocation entries
};

// One seed's training run: writes metrics.csv, summary.json,
// resolved_config.json, checkpoint/ and allocation/ under run_dir.
RunOutcome run_single(const ExperimentConfig& cfg, const BenchmarkBundle& data,
                      std::uint64_t seed, const std::filesystem::path& run_dir);

// Subcommand backends; return a process exit status (0 = success and all
// audits green). They throw on contract/config/setup errors — the CLI turns
// that into a one-line error plus a .failed marker.
int run_gen_data(const ExperimentConfig& cfg);
int run_train(const ExperimentConfig& cfg);
int run_ablate(const ExperimentConfig& cfg);
int run_compare(const ExperimentConfig& cfg);
int run_analyze(const ExperimentConfig& cfg, const std::string& run_dir);

}  // namespace cpoly
