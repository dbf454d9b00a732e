// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpoly/model.hpp"

namespace cpoly {

// Linear ramp 0 -> base_lr over ceil(warmup_ratio * total_steps) steps, then
// linear decay to 0 at total_steps. step counts completed optimizer steps.
double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_ratio);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// One decoupled-decay update on a flat buffer. t is the 1-based step count
// used for bias correction; decay applies before the moment update.
void adamw_update(std::vector<double>& theta, const std::vector<double>& grad,
                  std::vector<double>& m, std::vector<double>& v, std::size_t t, double lr,
                  const AdamWConfig& cfg);

class AdamW {
  public:
    AdamW(std::vector<ParamRef> params, AdamWConfig cfg);

    // Routing parameters train at lr * routing_lr_multiplier.
    void step(double lr, double routing_lr_multiplier = 1.0);
    void zero_grad();
    std::size_t step_count() const { return t_; }

  private:
    struct Moments {
        std::vector<double> m, v;
    };
    std::vector<ParamRef> params_;
    std::vector<Moments> moments_;
    AdamWConfig cfg_;
    std::size_t t_ = 0;
};

// --- metrics ---------------------------------------------------------------

struct MetricValues {
    double exact_match = 0.0;
    double rouge1 = 0.0;
    double rougeL = 0.0;
    double rougeLsum = 0.0;
};

std::size_t lcs_length(const std::vector<int>& a, const std::vector<int>& b);
double rouge1_f1(const std::vector<int>& pred, const std::vector<int>& ref);
double rougeL_f1(const std::vector<int>& pred, const std::vector<int>& ref);
// Splits both sides on newline_id segments and scores union-LCS; with no
// separator present this reduces to plain rougeL on most inputs.
double rougeLsum_f1(const std::vector<int>& pred, const std::vector<int>& ref, int newline_id);

MetricValues sequence_metrics(const std::vector<std::vector<int>>& preds,
                              const std::vector<std::vector<int>>& refs, int newline_id = -1);

// --- training --------------------------------------------------------------

enum class MixStrategy { round_robin, proportional };

struct TrainConfig {
    double learning_rate = 5e-5;  // faithful preset; desk-scale runs override
    double weight_decay = 0.01;
    double warmup_ratio = 0.06;
    std::size_t epochs = 3;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;
    MixStrategy mixing = MixStrategy::round_robin;
    double routing_lr_multiplier = 10.0;
    std::size_t eval_batch_size = 50;
    std::size_t log_every = 50;
    std::size_t max_steps = 0;  // 0 = full schedule; used by determinism probes
};

struct MetricRow {
    std::size_t step = 0;
    std::string task;
    std::string split;
    double loss = 0.0;
    MetricValues metrics;
};

struct TaskMetrics {
    std::string task;
    double loss = 0.0;
    MetricValues metrics;
};

struct MetricReport {
    std::vector<TaskMetrics> per_task;
    double loss = 0.0;          // unweighted mean over tasks
    MetricValues average;       // unweighted mean over tasks
};

struct TrainResult {
    std::vector<MetricRow> history;
    std::vector<double> step_losses;  // every step, for determinism audits
    MetricReport final_eval;
    std::size_t total_steps = 0;
};

MetricReport evaluate(TransformerModel& model, const Benchmark& bench,
                      std::size_t eval_batch_size, bool on_train_split = false);

// Round-robin (default) or size-proportional task mixing; AdamW with the
// warmup/decay schedule above; deterministic under cfg.seed.
TrainResult train(TransformerModel& model, const Benchmark& bench, const TrainConfig& cfg);

}  // namespace cpoly
