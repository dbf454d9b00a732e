// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

// Command line front end: every subcommand takes a JSON experiment config
// plus a handful of overrides, writes its outputs (and a resolved copy of
// the config) under --out, and exits nonzero on any failure, leaving a
// .failed marker next to whatever partial outputs exist.

#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cpoly/experiment.hpp"
#include "cpoly/util.hpp"

namespace {

struct CliArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> variant;
    bool hard_eval = false;
    bool mask_off_diagonal = false;
};

void add_common_options(CLI::App* cmd, CliArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON experiment config")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", args.seed, "run a single seed instead of the config's list");
    cmd->add_option("--out", args.out, "output directory (overrides config out_dir)");
    cmd->add_option("--variant", args.variant, "adapter variant at a matched budget")
        ->check(CLI::IsMember({"lora", "moe", "poly", "cpoly"}));
    cmd->add_flag("--hard-eval", args.hard_eval, "threshold routing weights at eval time");
    cmd->add_flag("--mask-off-diagonal", args.mask_off_diagonal,
                  "freeze cross-task entries of the task-specific allocation");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"modular low-rank task adapters: benchmark generation, training, "
                 "ablation, comparison and routing analysis"};
    app.require_subcommand(1);

    CliArgs args;
    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
    CLI::App* train = app.add_subcommand("train", "train adapters over the configured seeds");
    CLI::App* ablate =
        app.add_subcommand("ablate", "sweep (A,B) splits at a fixed total skill count");
    CLI::App* analyze = app.add_subcommand(
        "analyze", "export allocation heatmaps, dendrograms and ARI for a trained run");
    CLI::App* compare =
        app.add_subcommand("compare", "run every variant at a matched adapter budget");
    for (CLI::App* cmd : {gen, train, ablate, analyze, compare}) {
        add_common_options(cmd, args);
    }

    CLI11_PARSE(app, argc, argv);

    std::string marker_dir;
    try {
        cpoly::ExperimentConfig cfg = cpoly::load_experiment_config(args.config_path);
        cpoly::CliOverrides overrides;
        overrides.seed = args.seed;
        overrides.out_dir = args.out;
        overrides.variant = args.variant;
        overrides.hard_eval = args.hard_eval;
        overrides.mask_off_diagonal = args.mask_off_diagonal;
        cpoly::apply_overrides(cfg, overrides);

        // analyze reads an existing run dir and writes under <dir>/analysis
        marker_dir = analyze->parsed() ? cfg.out_dir + "/analysis" : cfg.out_dir;

        if (gen->parsed()) return cpoly::run_gen_data(cfg);
        if (train->parsed()) return cpoly::run_train(cfg);
        if (ablate->parsed()) return cpoly::run_ablate(cfg);
        if (analyze->parsed()) return cpoly::run_analyze(cfg, cfg.out_dir);
        if (compare->parsed()) return cpoly::run_compare(cfg);
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        if (!marker_dir.empty()) {
            try {
                std::filesystem::create_directories(marker_dir);
                cpoly::write_text_file(std::filesystem::path(marker_dir) / ".failed",
                                       std::string(e.what()) + "\n");
            } catch (...) {
                // marker writing must never mask the original error
            }
        }
        return 1;
    }
}
