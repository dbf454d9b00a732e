// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "cpoly/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cpoly/analysis.hpp"
#include "cpoly/checkpoint.hpp"
#include "cpoly/errors.hpp"
#include "cpoly/util.hpp"

namespace cpoly {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& where) {
    if (!obj.is_object()) {
        throw ContractError("config: expected an object at '" + where + "'");
    }
    for (const auto& item : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            throw ContractError("config: unknown key '" + where + item.key() + "'");
        }
    }
}

const std::vector<std::string>& train_config_keys() {
    static const std::vector<std::string> keys = {
        "learning_rate", "weight_decay",   "warmup_ratio",    "epochs",    "batch_size",
        "mixing",        "eval_batch_size", "log_every",      "routing_lr_multiplier"};
    return keys;
}

const std::vector<std::string>& benchmark_config_keys() {
    static const std::vector<std::string> keys = {
        "K",       "T",       "n_groups",        "skills_per_group",
        "seq_len", "vocab_size", "n_train",      "n_eval",
        "skill_trigger_tokens", "task_trigger_tokens", "unique_weight",
        "margin",  "label_flip_rate", "seed"};
    return keys;
}

const std::vector<std::string>& top_level_keys() {
    static const std::vector<std::string> keys = {
        "model", "train", "benchmark", "seeds", "out_dir", "data_dir", "ablate_task_counts"};
    return keys;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;  // seed is filled per run; max_steps stays internal
    if (j.contains("learning_rate")) cfg.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("weight_decay")) cfg.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("warmup_ratio")) cfg.warmup_ratio = j.at("warmup_ratio").get<double>();
    if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("mixing")) {
        const std::string name = j.at("mixing").get<std::string>();
        if (name == "round_robin") {
            cfg.mixing = MixStrategy::round_robin;
        } else if (name == "proportional") {
            cfg.mixing = MixStrategy::proportional;
        } else {
            throw ContractError("config: unknown mixing strategy '" + name + "'");
        }
    }
    if (j.contains("eval_batch_size")) {
        cfg.eval_batch_size = j.at("eval_batch_size").get<std::size_t>();
    }
    if (j.contains("log_every")) cfg.log_every = j.at("log_every").get<std::size_t>();
    if (j.contains("routing_lr_multiplier")) {
        cfg.routing_lr_multiplier = j.at("routing_lr_multiplier").get<double>();
    }
    return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["learning_rate"] = cfg.learning_rate;
    j["weight_decay"] = cfg.weight_decay;
    j["warmup_ratio"] = cfg.warmup_ratio;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["mixing"] = cfg.mixing == MixStrategy::round_robin ? "round_robin" : "proportional";
    j["eval_batch_size"] = cfg.eval_batch_size;
    j["log_every"] = cfg.log_every;
    j["routing_lr_multiplier"] = cfg.routing_lr_multiplier;
    return j;
}

BenchmarkConfig benchmark_config_from_json(const json& j) {
    BenchmarkConfig cfg;
    if (j.contains("K")) cfg.K = j.at("K").get<std::size_t>();
    if (j.contains("T")) cfg.T = j.at("T").get<std::size_t>();
    if (j.contains("n_groups")) cfg.n_groups = j.at("n_groups").get<std::size_t>();
    if (j.contains("skills_per_group")) {
        cfg.skills_per_group = j.at("skills_per_group").get<std::size_t>();
    }
    if (j.contains("seq_len")) cfg.seq_len = j.at("seq_len").get<std::size_t>();
    if (j.contains("vocab_size")) cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    if (j.contains("n_train")) cfg.n_train = j.at("n_train").get<std::size_t>();
    if (j.contains("n_eval")) cfg.n_eval = j.at("n_eval").get<std::size_t>();
    if (j.contains("skill_trigger_tokens")) {
        cfg.skill_trigger_tokens = j.at("skill_trigger_tokens").get<std::size_t>();
    }
    if (j.contains("task_trigger_tokens")) {
        cfg.task_trigger_tokens = j.at("task_trigger_tokens").get<std::size_t>();
    }
    if (j.contains("unique_weight")) cfg.unique_weight = j.at("unique_weight").get<double>();
    if (j.contains("margin")) cfg.margin = j.at("margin").get<double>();
    if (j.contains("label_flip_rate")) {
        cfg.label_flip_rate = j.at("label_flip_rate").get<double>();
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

json benchmark_config_to_json(const BenchmarkConfig& cfg) {
    json j;
    j["K"] = cfg.K;
    j["T"] = cfg.T;
    j["n_groups"] = cfg.n_groups;
    j["skills_per_group"] = cfg.skills_per_group;
    j["seq_len"] = cfg.seq_len;
    j["vocab_size"] = cfg.vocab_size;
    j["n_train"] = cfg.n_train;
    j["n_eval"] = cfg.n_eval;
    j["skill_trigger_tokens"] = cfg.skill_trigger_tokens;
    j["task_trigger_tokens"] = cfg.task_trigger_tokens;
    j["unique_weight"] = cfg.unique_weight;
    j["margin"] = cfg.margin;
    j["label_flip_rate"] = cfg.label_flip_rate;
    j["seed"] = cfg.seed;
    return j;
}

// vocab / sequence length / classes / task count come from the data, the
// run seed from the seed list; everything else from the config's model block.
ModelConfig derived_model_config(const ExperimentConfig& cfg, const Benchmark& bench,
                                 std::uint64_t seed) {
    ModelConfig m = cfg.model;
    m.vocab_size = bench.vocab_size;
    m.max_seq_len = bench.seq_len;
    m.n_classes = bench.n_classes;
    m.sequence_mode = bench.sequence_mode;
    m.n_tasks = bench.tasks.size();
    m.seed = seed;
    validate_model_config(m);
    return m;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
    std::string out = "step,task,split,loss,exact_match,rouge1,rougeL,rougeLsum\n";
    for (const MetricRow& row : rows) {
        out += std::to_string(row.step) + ',' + row.task + ',' + row.split + ',';
        out += format_double(row.loss) + ',';
        out += format_double(row.metrics.exact_match) + ',';
        out += format_double(row.metrics.rouge1) + ',';
        out += format_double(row.metrics.rougeL) + ',';
        out += format_double(row.metrics.rougeLsum) + '\n';
    }
    return out;
}

json metric_values_to_json(const MetricValues& m) {
    json j;
    j["exact_match"] = m.exact_match;
    j["rouge1"] = m.rouge1;
    j["rougeL"] = m.rougeL;
    j["rougeLsum"] = m.rougeLsum;
    return j;
}

json report_to_json(const MetricReport& report) {
    json j = metric_values_to_json(report.average);
    j["loss"] = report.loss;
    json per = json::array();
    for (const TaskMetrics& t : report.per_task) {
        json row = metric_values_to_json(t.metrics);
        row["task"] = t.task;
        row["loss"] = t.loss;
        per.push_back(std::move(row));
    }
    j["per_task"] = std::move(per);
    return j;
}

double median(std::vector<double> v) {
    if (v.empty()) throw ContractError("median of an empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Medians across seeds of the per-run eval averages.
struct SeedAggregate {
    std::vector<double> loss, em, r1, rL, rLsum;

    void add(const MetricReport& r) {
        loss.push_back(r.loss);
        em.push_back(r.average.exact_match);
        r1.push_back(r.average.rouge1);
        rL.push_back(r.average.rougeL);
        rLsum.push_back(r.average.rougeLsum);
    }
    json to_json() const {
        json j;
        j["loss"] = median(loss);
        j["exact_match"] = median(em);
        j["rouge1"] = median(r1);
        j["rougeL"] = median(rL);
        j["rougeLsum"] = median(rLsum);
        return j;
    }
};

void write_json_file(const fs::path& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

// Clear a stale marker from an earlier failed invocation of the same out dir.
void reset_failure_marker(const fs::path& out_dir) {
    std::error_code ec;
    fs::remove(out_dir / ".failed", ec);
}

void mark_failed(const fs::path& out_dir, const std::string& reason) {
    write_text_file(out_dir / ".failed", reason + "\n");
}

// Two fresh short runs from the same seed must produce bit-identical loss
// trajectories; anything nondeterministic (unseeded state, map iteration
// order, uninitialized memory) shows up here.
bool determinism_audit(const ModelConfig& mcfg, const TrainConfig& tcfg, const Benchmark& bench,
                       std::size_t probe_steps) {
    if (probe_steps == 0) return true;
    TrainConfig probe = tcfg;
    probe.max_steps = probe_steps;
    probe.log_every = 0;
    auto losses = [&]() {
        TransformerModel model = build_model(mcfg);
        return train(model, bench, probe).step_losses;
    };
    const std::vector<double> first = losses();
    const std::vector<double> second = losses();
    return !first.empty() && first == second;
}

json audits_to_json(const RunOutcome& oc) {
    json j;
    j["frozen_weights"] = oc.frozen_audit;
    j["determinism"] = oc.determinism_audit;
    return j;
}

std::string seed_dir_name(std::uint64_t seed) { return "seed" + std::to_string(seed); }

struct VariantPlan {
    std::string name;
    ModelConfig model;
};

std::vector<VariantPlan> compare_variants(const ModelConfig& base) {
    std::vector<VariantPlan> plans;
    for (RoutingVariant v : {RoutingVariant::single_lora, RoutingVariant::moe_lora,
                             RoutingVariant::poly, RoutingVariant::cpoly}) {
        ModelConfig m = base;
        apply_variant_preset(m, v);
        plans.push_back({variant_name(v), m});
    }
    return plans;
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j) {
    check_keys(j, top_level_keys(), "");
    ExperimentConfig cfg;
    if (j.contains("model")) {
        check_keys(j.at("model"), model_config_keys(), "model.");
        cfg.model = model_config_from_json(j.at("model"));
    }
    if (j.contains("train")) {
        check_keys(j.at("train"), train_config_keys(), "train.");
        cfg.train = train_config_from_json(j.at("train"));
    }
    if (j.contains("benchmark")) {
        check_keys(j.at("benchmark"), benchmark_config_keys(), "benchmark.");
        cfg.benchmark = benchmark_config_from_json(j.at("benchmark"));
    }
    if (j.contains("seeds")) {
        cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (cfg.seeds.empty()) throw ContractError("config: 'seeds' must not be empty");
    }
    if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("data_dir")) cfg.data_dir = j.at("data_dir").get<std::string>();
    if (j.contains("ablate_task_counts")) {
        cfg.ablate_task_counts = j.at("ablate_task_counts").get<std::vector<std::size_t>>();
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ContractError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    // resolved_config.json files wrap the config; accept them directly so a
    // finished run can seed a new one.
    if (j.is_object() && j.contains("config") && j.contains("inputs_hash")) {
        return parse_experiment_config(j.at("config"));
    }
    return parse_experiment_config(j);
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["model"] = model_config_to_json(cfg.model);
    j["train"] = train_config_to_json(cfg.train);
    j["benchmark"] = benchmark_config_to_json(cfg.benchmark);
    j["seeds"] = cfg.seeds;
    j["out_dir"] = cfg.out_dir;
    j["data_dir"] = cfg.data_dir;
    j["ablate_task_counts"] = cfg.ablate_task_counts;
    return j;
}

void apply_variant_preset(ModelConfig& cfg, RoutingVariant variant) {
    const std::size_t total_skills = cfg.A + cfg.B;
    if (total_skills == 0) throw ContractError("variant preset: A + B must be positive");
    switch (variant) {
        case RoutingVariant::single_lora:
            // one shared module at rank S*r keeps the common-pool budget
            // (2*d*S*r) identical to S modules of rank r
            cfg.A = 1;
            cfg.B = 0;
            cfg.r = total_skills * cfg.r;
            break;
        case RoutingVariant::moe_lora:
        case RoutingVariant::poly:
            cfg.A = total_skills;
            cfg.B = 0;
            break;
        case RoutingVariant::cpoly:
            if (cfg.B == 0) {
                if (total_skills < 2) {
                    throw ContractError("variant preset: cpoly needs A + B >= 2");
                }
                cfg.A = total_skills - 1;
                cfg.B = 1;
            }
            break;
    }
    cfg.variant = variant;
}

void apply_overrides(ExperimentConfig& cfg, const CliOverrides& overrides) {
    if (overrides.seed) cfg.seeds = {*overrides.seed};
    if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;
    if (overrides.variant) {
        apply_variant_preset(cfg.model, variant_from_name(*overrides.variant));
    }
    if (overrides.hard_eval) cfg.model.hard_eval = true;
    if (overrides.mask_off_diagonal) cfg.model.mask_off_diagonal = true;
}

BenchmarkBundle prepare_benchmark(const ExperimentConfig& cfg) {
    if (!cfg.data_dir.empty()) {
        const fs::path dir = cfg.data_dir;
        Benchmark bench = load_benchmark(dir);
        std::string sig = sha256_hex(read_text_file(dir / "train.jsonl") +
                                     read_text_file(dir / "eval.jsonl") +
                                     read_text_file(dir / "ground_truth.json"));
        return {std::move(bench), std::move(sig)};
    }
    // the generator is deterministic, so the benchmark config is the content
    Benchmark bench = generate_benchmark(cfg.benchmark);
    std::string sig = sha256_hex(benchmark_config_to_json(cfg.benchmark).dump());
    return {std::move(bench), std::move(sig)};
}

RunOutcome run_single(const ExperimentConfig& cfg, const BenchmarkBundle& data,
                      std::uint64_t seed, const fs::path& run_dir) {
    fs::create_directories(run_dir);
    reset_failure_marker(run_dir);

    const ModelConfig mcfg = derived_model_config(cfg, data.bench, seed);
    TrainConfig tcfg = cfg.train;
    tcfg.seed = seed;

    json resolved;
    resolved["config"] = experiment_config_to_json(cfg);
    resolved["config"]["model"] = model_config_to_json(mcfg);
    resolved["config"]["seeds"] = std::vector<std::uint64_t>{seed};
    resolved["seed"] = seed;
    const std::string inputs_hash =
        sha256_hex(resolved["config"].dump() + data.signature);
    resolved["inputs_hash"] = inputs_hash;
    write_json_file(run_dir / "resolved_config.json", resolved);

    TransformerModel model = build_model(mcfg);

    std::vector<std::pair<std::string, std::vector<double>>> frozen_before;
    for (auto& named : all_named_tensors(model)) {
        if (named.frozen) frozen_before.emplace_back(named.name, named.tensor.values());
    }

    TrainResult result = train(model, data.bench, tcfg);

    RunOutcome outcome;
    outcome.final_eval = result.final_eval;
    outcome.total_steps = result.total_steps;

    outcome.frozen_audit = true;
    for (auto& named : all_named_tensors(model)) {
        if (!named.frozen) continue;
        const auto it = std::find_if(frozen_before.begin(), frozen_before.end(),
                                     [&](const auto& p) { return p.first == named.name; });
        if (it == frozen_before.end() || it->second != named.tensor.values()) {
            outcome.frozen_audit = false;
            break;
        }
    }

    const std::size_t probe_steps = std::min<std::size_t>(8, result.total_steps);
    outcome.determinism_audit = determinism_audit(mcfg, tcfg, data.bench, probe_steps);

    for (const ParamRef& p : trainable_params(model)) {
        (p.is_routing ? outcome.routing_params : outcome.adapter_params) += p.tensor.size();
    }

    write_text_file(run_dir / "metrics.csv", metrics_csv(result.history));
    save_checkpoint(model, run_dir / "checkpoint");
    export_heatmaps(model, run_dir / "allocation");

    json summary;
    summary["seed"] = seed;
    summary["total_steps"] = result.total_steps;
    summary["final_eval"] = report_to_json(result.final_eval);
    summary["trainable_params"] = count_trainable(model);
    summary["adapter_params"] = outcome.adapter_params;
    summary["routing_params"] = outcome.routing_params;
    summary["audits"] = audits_to_json(outcome);
    summary["inputs_hash"] = inputs_hash;
    write_json_file(run_dir / "summary.json", summary);

    if (!outcome.frozen_audit || !outcome.determinism_audit) {
        mark_failed(run_dir, "audit failure (frozen_weights=" +
                                 std::string(outcome.frozen_audit ? "ok" : "FAILED") +
                                 ", determinism=" +
                                 std::string(outcome.determinism_audit ? "ok" : "FAILED") + ")");
    }
    return outcome;
}

int run_gen_data(const ExperimentConfig& cfg) {
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    reset_failure_marker(out);

    const Benchmark bench = generate_benchmark(cfg.benchmark);
    save_benchmark(bench, out);

    json resolved;
    resolved["config"] = experiment_config_to_json(cfg);
    resolved["inputs_hash"] =
        sha256_hex(resolved["config"].dump() +
                   sha256_hex(benchmark_config_to_json(cfg.benchmark).dump()));
    write_json_file(out / "resolved_config.json", resolved);

    std::size_t total_train = 0, total_eval = 0;
    json tasks = json::array();
    for (const TaskData& task : bench.tasks) {
        total_train += task.train.size();
        total_eval += task.eval.size();
        json t;
        t["name"] = task.name;
        t["n_train"] = task.train.size();
        t["n_eval"] = task.eval.size();
        tasks.push_back(std::move(t));
    }
    json summary;
    summary["tasks"] = std::move(tasks);
    summary["n_tasks"] = bench.tasks.size();
    summary["total_train"] = total_train;
    summary["total_eval"] = total_eval;
    summary["vocab_size"] = bench.vocab_size;
    summary["seq_len"] = bench.seq_len;
    summary["n_classes"] = bench.n_classes;
    summary["latent_skills"] = bench.truth.K;
    summary["inputs_hash"] = resolved["inputs_hash"];
    write_json_file(out / "summary.json", summary);
    return 0;
}

int run_train(const ExperimentConfig& cfg) {
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    reset_failure_marker(out);

    const BenchmarkBundle data = prepare_benchmark(cfg);

    json resolved;
    resolved["config"] = experiment_config_to_json(cfg);
    const std::string inputs_hash = sha256_hex(resolved["config"].dump() + data.signature);
    resolved["inputs_hash"] = inputs_hash;
    write_json_file(out / "resolved_config.json", resolved);

    bool all_ok = true;
    SeedAggregate agg;
    json runs = json::array();
    for (std::uint64_t seed : cfg.seeds) {
        const RunOutcome oc = run_single(cfg, data, seed, out / seed_dir_name(seed));
        all_ok = all_ok && oc.frozen_audit && oc.determinism_audit;
        agg.add(oc.final_eval);
        json r;
        r["seed"] = seed;
        r["total_steps"] = oc.total_steps;
        r["final_eval"] = report_to_json(oc.final_eval);
        r["audits"] = audits_to_json(oc);
        runs.push_back(std::move(r));
    }

    json summary;
    summary["seeds"] = cfg.seeds;
    summary["runs"] = std::move(runs);
    summary["median"] = agg.to_json();
    summary["all_audits_passed"] = all_ok;
    summary["inputs_hash"] = inputs_hash;
    write_json_file(out / "summary.json", summary);

    if (!all_ok) {
        mark_failed(out, "one or more seed runs failed an audit");
        return 1;
    }
    return 0;
}

int run_ablate(const ExperimentConfig& cfg) {
    const std::size_t total_skills = cfg.model.A + cfg.model.B;
    if (total_skills < 4) {
        throw ContractError("ablate: the (A,B) grid needs A + B >= 4");
    }
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    reset_failure_marker(out);

    const BenchmarkBundle data = prepare_benchmark(cfg);

    json resolved;
    resolved["config"] = experiment_config_to_json(cfg);
    const std::string inputs_hash = sha256_hex(resolved["config"].dump() + data.signature);
    resolved["inputs_hash"] = inputs_hash;
    write_json_file(out / "resolved_config.json", resolved);

    bool all_ok = true;
    std::string csv = "a,b,variant,seed,loss,exact_match,rouge1,rougeL,rougeLsum\n";
    json cells = json::array();

    // fixed total skill count: trade common capacity against task-specific
    const std::vector<std::pair<std::size_t, std::size_t>> grid = {
        {total_skills, 0},
        {total_skills - 1, 1},
        {total_skills - 2, 2},
        {total_skills - 3, 3}};
    for (const auto& [a, b] : grid) {
        ExperimentConfig sub = cfg;
        sub.model.A = a;
        sub.model.B = b;
        sub.model.variant = b == 0 ? RoutingVariant::poly : RoutingVariant::cpoly;
        const std::string cell_name = "a" + std::to_string(a) + "_b" + std::to_string(b);

        SeedAggregate agg;
        for (std::uint64_t seed : cfg.seeds) {
            const RunOutcome oc =
                run_single(sub, data, seed, out / cell_name / seed_dir_name(seed));
            all_ok = all_ok && oc.frozen_audit && oc.determinism_audit;
            agg.add(oc.final_eval);
            csv += std::to_string(a) + ',' + std::to_string(b) + ',' +
                   variant_name(sub.model.variant) + ',' + std::to_string(seed) + ',' +
                   format_double(oc.final_eval.loss) + ',' +
                   format_double(oc.final_eval.average.exact_match) + ',' +
                   format_double(oc.final_eval.average.rouge1) + ',' +
                   format_double(oc.final_eval.average.rougeL) + ',' +
                   format_double(oc.final_eval.average.rougeLsum) + '\n';
        }
        json cell;
        cell["a"] = a;
        cell["b"] = b;
        cell["variant"] = variant_name(sub.model.variant);
        cell["median"] = agg.to_json();
        cells.push_back(std::move(cell));
    }
    write_text_file(out / "ablation.csv", csv);

    // optional task-count sweep at the base (A,B); tasks pair up into groups
    json sweep = json::array();
    if (!cfg.ablate_task_counts.empty()) {
        std::string sweep_csv = "t,variant,seed,loss,exact_match,rouge1,rougeL,rougeLsum\n";
        for (std::size_t t : cfg.ablate_task_counts) {
            if (t < 2 || t % 2 != 0) {
                throw ContractError("ablate: task counts must be even and >= 2");
            }
            ExperimentConfig sub = cfg;
            sub.data_dir.clear();  // sweep regenerates at each size
            sub.benchmark.T = t;
            sub.benchmark.n_groups = t / 2;
            const BenchmarkBundle sub_data = prepare_benchmark(sub);
            SeedAggregate agg;
            for (std::uint64_t seed : cfg.seeds) {
                const RunOutcome oc = run_single(
                    sub, sub_data, seed,
                    out / ("tasks" + std::to_string(t)) / seed_dir_name(seed));
                all_ok = all_ok && oc.frozen_audit && oc.determinism_audit;
                agg.add(oc.final_eval);
                sweep_csv += std::to_string(t) + ',' + variant_name(sub.model.variant) + ',' +
                             std::to_string(seed) + ',' + format_double(oc.final_eval.loss) +
                             ',' + format_double(oc.final_eval.average.exact_match) + ',' +
                             format_double(oc.final_eval.average.rouge1) + ',' +
                             format_double(oc.final_eval.average.rougeL) + ',' +
                             format_double(oc.final_eval.average.rougeLsum) + '\n';
            }
            json row;
            row["t"] = t;
            row["median"] = agg.to_json();
            sweep.push_back(std::move(row));
        }
        write_text_file(out / "task_sweep.csv", sweep_csv);
    }

    json summary;
    summary["grid"] = std::move(cells);
    summary["task_sweep"] = std::move(sweep);
    summary["all_audits_passed"] = all_ok;
    summary["inputs_hash"] = inputs_hash;
    write_json_file(out / "summary.json", summary);

    if (!all_ok) {
        mark_failed(out, "one or more ablation runs failed an audit");
        return 1;
    }
    return 0;
}

int run_compare(const ExperimentConfig& cfg) {
    const fs::path out = cfg.out_dir;
    fs::create_directories(out);
    reset_failure_marker(out);

    const BenchmarkBundle data = prepare_benchmark(cfg);
    const std::size_t n_tasks = data.bench.tasks.size();
    const std::size_t n_matrices = 3 * cfg.model.n_layers;

    const std::vector<VariantPlan> plans = compare_variants(cfg.model);

    // task-agnostic and task-routed baselines must spend the same adapter
    // budget; cpoly adds its task-specific pool on top by design
    std::vector<std::size_t> budgets;
    for (const VariantPlan& plan : plans) {
        budgets.push_back(param_count(plan.model.A, plan.model.B, n_tasks, plan.model.r,
                                      plan.model.d_model, n_matrices)
                              .adapter);
    }
    if (budgets[0] != budgets[1] || budgets[1] != budgets[2]) {
        throw ContractError("compare: adapter budget parity violated across baselines");
    }

    json resolved;
    resolved["config"] = experiment_config_to_json(cfg);
    const std::string inputs_hash = sha256_hex(resolved["config"].dump() + data.signature);
    resolved["inputs_hash"] = inputs_hash;
    write_json_file(out / "resolved_config.json", resolved);

    bool all_ok = true;
    std::string csv =
        "variant,seed,adapter_params,routing_params,loss,exact_match,rouge1,rougeL,rougeLsum\n";
    json variants = json::array();
    for (const VariantPlan& plan : plans) {
        ExperimentConfig sub = cfg;
        sub.model = plan.model;
        SeedAggregate agg;
        std::size_t adapter_params = 0, routing_params = 0;
        for (std::uint64_t seed : cfg.seeds) {
            const RunOutcome oc =
                run_single(sub, data, seed, out / plan.name / seed_dir_name(seed));
            all_ok = all_ok && oc.frozen_audit && oc.determinism_audit;
            agg.add(oc.final_eval);
            adapter_params = oc.adapter_params;
            routing_params = oc.routing_params;
            csv += plan.name + ',' + std::to_string(seed) + ',' +
                   std::to_string(oc.adapter_params) + ',' +
                   std::to_string(oc.routing_params) + ',' +
                   format_double(oc.final_eval.loss) + ',' +
                   format_double(oc.final_eval.average.exact_match) + ',' +
                   format_double(oc.final_eval.average.rouge1) + ',' +
                   format_double(oc.final_eval.average.rougeL) + ',' +
                   format_double(oc.final_eval.average.rougeLsum) + '\n';
        }
        json v;
        v["name"] = plan.name;
        v["A"] = plan.model.A;
        v["B"] = plan.model.B;
        v["r"] = plan.model.r;
        v["adapter_params"] = adapter_params;
        v["routing_params"] = routing_params;
        v["median"] = agg.to_json();
        variants.push_back(std::move(v));
    }
    write_text_file(out / "comparison.csv", csv);

    json summary;
    summary["variants"] = std::move(variants);
    summary["baseline_adapter_params"] = budgets[0];
    summary["all_audits_passed"] = all_ok;
    summary["inputs_hash"] = inputs_hash;
    write_json_file(out / "summary.json", summary);

    if (!all_ok) {
        mark_failed(out, "one or more comparison runs failed an audit");
        return 1;
    }
    return 0;
}

int run_analyze(const ExperimentConfig& cfg, const std::string& run_dir) {
    if (run_dir.empty()) {
        throw ContractError("analyze: requires a trained run directory (--out)");
    }
    const fs::path dir = run_dir;
    TransformerModel model = load_checkpoint(dir / "checkpoint");

    const BenchmarkBundle data = prepare_benchmark(cfg);
    if (data.bench.tasks.size() != model.config.n_tasks) {
        throw ContractError("analyze: benchmark task count does not match the checkpoint");
    }

    const fs::path adir = dir / "analysis";
    fs::create_directories(adir);
    reset_failure_marker(adir);

    export_heatmaps(model, adir);

    std::vector<std::string> names;
    for (const TaskData& task : data.bench.tasks) names.push_back(task.name);

    const std::vector<std::vector<double>> profiles = routing_profiles(model);
    const Dendrogram dendro = cluster_tasks(profiles);

    json dj;
    dj["n_leaves"] = dendro.n_leaves;
    dj["leaf_names"] = names;
    json merges = json::array();
    for (const Merge& m : dendro.merges) {
        json row;
        row["left"] = m.left;
        row["right"] = m.right;
        row["distance"] = m.distance;
        row["size"] = m.size;
        merges.push_back(std::move(row));
    }
    dj["merges"] = std::move(merges);
    write_json_file(adir / "dendrogram.json", dj);
    write_text_file(adir / "dendrogram.newick", dendrogram_to_newick(dendro, names) + "\n");

    const std::vector<int>& truth = data.bench.truth.group_labels;
    json summary;
    summary["n_tasks"] = names.size();
    summary["task_names"] = names;
    if (truth.size() == names.size() && !truth.empty()) {
        std::vector<int> distinct(truth);
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        const std::size_t k = distinct.size();
        const std::vector<int> predicted = cut_dendrogram(dendro, k);
        summary["n_clusters"] = k;
        summary["predicted_labels"] = predicted;
        summary["truth_labels"] = truth;
        summary["ari"] = adjusted_rand_index(predicted, truth);
    } else {
        // external datasets carry no ground-truth grouping
        summary["ari"] = nullptr;
    }
    write_json_file(adir / "summary.json", summary);
    return 0;
}

}  // namespace cpoly
