// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "cpoly/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "cpoly/errors.hpp"

namespace cpoly {

double lr_at(std::size_t step, std::size_t total_steps, double base_lr, double warmup_ratio) {
    if (total_steps == 0) throw ContractError("lr_at: total_steps == 0");
    if (step > total_steps) {
        throw ContractError("lr_at: step " + std::to_string(step) + " beyond total " +
                            std::to_string(total_steps));
    }
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
        throw ContractError("lr_at: warmup_ratio outside [0, 1)");
    }
    const auto warmup = static_cast<std::size_t>(
        std::ceil(warmup_ratio * static_cast<double>(total_steps)));
    if (step < warmup) {
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (total_steps == warmup) return base_lr;
    return base_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

void adamw_update(std::vector<double>& theta, const std::vector<double>& grad,
                  std::vector<double>& m, std::vector<double>& v, std::size_t t, double lr,
                  const AdamWConfig& cfg) {
    if (theta.size() != grad.size() || m.size() != theta.size() || v.size() != theta.size()) {
        throw ShapeError("adamw_update: buffer sizes disagree");
    }
    if (t == 0) throw ContractError("adamw_update: t is 1-based");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] -= lr * cfg.weight_decay * theta[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

AdamW::AdamW(std::vector<ParamRef> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    moments_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        moments_[i].m.assign(params_[i].tensor.size(), 0.0);
        moments_[i].v.assign(params_[i].tensor.size(), 0.0);
    }
}

void AdamW::step(double lr, double routing_lr_multiplier) {
    ++t_;
    std::vector<double> zero;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        const auto& node = *p.tensor.node_ptr();
        const std::vector<double>* grad = &node.grad;
        if (grad->empty()) {
            zero.assign(p.tensor.size(), 0.0);
            grad = &zero;
        }
        for (double g : *grad) {
            if (std::isnan(g)) throw NumericError("NaN gradient in parameter " + p.name);
        }
        const double plr = p.is_routing ? lr * routing_lr_multiplier : lr;
        adamw_update(p.tensor.values(), *grad, moments_[i].m, moments_[i].v, t_, plr, cfg_);
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

// --- metrics ----------------------------------------------------------------

std::size_t lcs_length(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = (a[i - 1] == b[j - 1]) ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

namespace {

double f1(double match, double pred_len, double ref_len) {
    if (pred_len == 0.0 && ref_len == 0.0) return 1.0;  // two empties are identical
    if (pred_len == 0.0 || ref_len == 0.0) return 0.0;
    const double p = match / pred_len;
    const double r = match / ref_len;
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

std::vector<std::vector<int>> split_on(const std::vector<int>& seq, int sep) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    for (int tok : seq) {
        if (tok == sep) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(tok);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

// Ref positions touched by one canonical LCS alignment (diagonal-first
// backtrack), for union-LCS.
std::vector<bool> lcs_hit_positions(const std::vector<int>& ref, const std::vector<int>& cand) {
    const std::size_t n = ref.size(), m = cand.size();
    std::vector<std::vector<std::size_t>> dp(n + 1, std::vector<std::size_t>(m + 1, 0));
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            dp[i][j] = (ref[i - 1] == cand[j - 1]) ? dp[i - 1][j - 1] + 1
                                                   : std::max(dp[i - 1][j], dp[i][j - 1]);
        }
    }
    std::vector<bool> hit(n, false);
    std::size_t i = n, j = m;
    while (i > 0 && j > 0) {
        if (ref[i - 1] == cand[j - 1] && dp[i][j] == dp[i - 1][j - 1] + 1) {
            hit[i - 1] = true;
            --i;
            --j;
        } else if (dp[i - 1][j] >= dp[i][j - 1]) {
            --i;
        } else {
            --j;
        }
    }
    return hit;
}

}  // namespace

double rouge1_f1(const std::vector<int>& pred, const std::vector<int>& ref) {
    std::unordered_map<int, std::size_t> ref_counts;
    for (int tok : ref) ++ref_counts[tok];
    double match = 0.0;
    for (int tok : pred) {
        auto it = ref_counts.find(tok);
        if (it != ref_counts.end() && it->second > 0) {
            --it->second;
            match += 1.0;
        }
    }
    return f1(match, static_cast<double>(pred.size()), static_cast<double>(ref.size()));
}

double rougeL_f1(const std::vector<int>& pred, const std::vector<int>& ref) {
    const double match = static_cast<double>(lcs_length(pred, ref));
    return f1(match, static_cast<double>(pred.size()), static_cast<double>(ref.size()));
}

double rougeLsum_f1(const std::vector<int>& pred, const std::vector<int>& ref, int newline_id) {
    const auto pred_segs = split_on(pred, newline_id);
    const auto ref_segs = split_on(ref, newline_id);
    double pred_len = 0.0, ref_len = 0.0, match = 0.0;
    for (const auto& s : pred_segs) pred_len += static_cast<double>(s.size());
    for (const auto& s : ref_segs) ref_len += static_cast<double>(s.size());
    for (const auto& r : ref_segs) {
        std::vector<bool> hits(r.size(), false);
        for (const auto& c : pred_segs) {
            const auto h = lcs_hit_positions(r, c);
            for (std::size_t i = 0; i < r.size(); ++i) hits[i] = hits[i] || h[i];
        }
        for (bool b : hits) match += b ? 1.0 : 0.0;
    }
    return f1(match, pred_len, ref_len);
}

MetricValues sequence_metrics(const std::vector<std::vector<int>>& preds,
                              const std::vector<std::vector<int>>& refs, int newline_id) {
    if (preds.size() != refs.size()) {
        throw ContractError("metrics: " + std::to_string(preds.size()) + " predictions vs " +
                            std::to_string(refs.size()) + " references");
    }
    if (refs.empty()) throw ContractError("metrics: empty reference set");
    MetricValues total;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        total.exact_match += preds[i] == refs[i] ? 1.0 : 0.0;
        total.rouge1 += rouge1_f1(preds[i], refs[i]);
        total.rougeL += rougeL_f1(preds[i], refs[i]);
        total.rougeLsum += rougeLsum_f1(preds[i], refs[i], newline_id);
    }
    const auto n = static_cast<double>(preds.size());
    total.exact_match /= n;
    total.rouge1 /= n;
    total.rougeL /= n;
    total.rougeLsum /= n;
    return total;
}

// --- training ---------------------------------------------------------------

namespace {

TaskBatch make_batch(const Benchmark& bench, std::size_t task,
                     const std::vector<std::size_t>& idx, bool train_split) {
    const auto& data = bench.tasks[task];
    const auto& split = train_split ? data.train : data.eval;
    TaskBatch batch;
    batch.task_id = task;
    for (std::size_t i : idx) {
        batch.tokens.push_back(split[i].tokens);
        batch.labels.push_back(split[i].label);
        if (bench.sequence_mode) batch.target_seqs.push_back(split[i].target_seq);
    }
    return batch;
}

Tensor batch_loss(Tape& tape, const Tensor& logits, const TaskBatch& batch, bool sequence_mode) {
    if (sequence_mode) {
        std::vector<int> flat;
        for (const auto& seq : batch.target_seqs) flat.insert(flat.end(), seq.begin(), seq.end());
        return ops::cross_entropy_with_logits(tape, logits, flat);
    }
    return ops::cross_entropy_with_logits(tape, logits, batch.labels);
}

std::vector<std::vector<int>> batch_predictions(const Tensor& logits, const TaskBatch& batch,
                                                bool sequence_mode) {
    std::vector<std::vector<int>> preds;
    const std::size_t rows = logits.rows(), cols = logits.cols();
    auto argmax_row = [&](std::size_t row) {
        const double* p = logits.values().data() + row * cols;
        std::size_t best = 0;
        for (std::size_t j = 1; j < cols; ++j) {
            if (p[j] > p[best]) best = j;
        }
        return static_cast<int>(best);
    };
    if (sequence_mode) {
        const std::size_t seq = batch.tokens[0].size();
        for (std::size_t e = 0; e < batch.tokens.size(); ++e) {
            std::vector<int> s;
            for (std::size_t p = 0; p < seq; ++p) s.push_back(argmax_row(e * seq + p));
            preds.push_back(std::move(s));
        }
    } else {
        for (std::size_t row = 0; row < rows; ++row) preds.push_back({argmax_row(row)});
    }
    return preds;
}

std::vector<std::vector<int>> batch_references(const TaskBatch& batch, bool sequence_mode) {
    std::vector<std::vector<int>> refs;
    if (sequence_mode) {
        refs = batch.target_seqs;
    } else {
        for (int label : batch.labels) refs.push_back({label});
    }
    return refs;
}

// Per-task shuffled index stream; reshuffles with a fresh key on each wrap.
struct TaskCursor {
    std::vector<std::size_t> order;
    std::size_t pos = 0;
    std::size_t wraps = 0;

    void reshuffle(std::uint64_t seed, std::size_t task, std::size_t n) {
        order.resize(n);
        std::iota(order.begin(), order.end(), 0);
        Rng rng = Rng::keyed({seed, stream::kShuffle, task, wraps});
        for (std::size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[rng.next_index(i)]);
        }
        pos = 0;
        ++wraps;
    }

    std::vector<std::size_t> next(std::uint64_t seed, std::size_t task, std::size_t n,
                                  std::size_t count) {
        std::vector<std::size_t> out;
        while (out.size() < count) {
            if (pos >= order.size()) reshuffle(seed, task, n);
            out.push_back(order[pos++]);
        }
        return out;
    }
};

}  // namespace

MetricReport evaluate(TransformerModel& model, const Benchmark& bench,
                      std::size_t eval_batch_size, bool on_train_split) {
    if (eval_batch_size == 0) throw ContractError("evaluate: batch size 0");
    MetricReport report;
    Rng unused = Rng::keyed({0});
    for (std::size_t t = 0; t < bench.tasks.size(); ++t) {
        const auto& split = on_train_split ? bench.tasks[t].train : bench.tasks[t].eval;
        if (split.empty()) throw ContractError("evaluate: task " + bench.tasks[t].name + " empty");
        std::vector<std::vector<int>> preds, refs;
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < split.size(); start += eval_batch_size) {
            const std::size_t end = std::min(split.size(), start + eval_batch_size);
            std::vector<std::size_t> idx(end - start);
            std::iota(idx.begin(), idx.end(), start);
            TaskBatch batch = make_batch(bench, t, idx, on_train_split);
            Tape tape;
            Tensor logits = model_forward(tape, model, batch, Mode::eval, unused);
            Tensor loss = batch_loss(tape, logits, batch, bench.sequence_mode);
            loss_sum += loss.scalar() * static_cast<double>(end - start);
            auto p = batch_predictions(logits, batch, bench.sequence_mode);
            auto r = batch_references(batch, bench.sequence_mode);
            preds.insert(preds.end(), p.begin(), p.end());
            refs.insert(refs.end(), r.begin(), r.end());
        }
        TaskMetrics tm;
        tm.task = bench.tasks[t].name;
        tm.loss = loss_sum / static_cast<double>(split.size());
        tm.metrics = sequence_metrics(preds, refs);
        report.per_task.push_back(std::move(tm));
    }
    const auto n = static_cast<double>(report.per_task.size());
    for (const auto& tm : report.per_task) {
        report.loss += tm.loss / n;
        report.average.exact_match += tm.metrics.exact_match / n;
        report.average.rouge1 += tm.metrics.rouge1 / n;
        report.average.rougeL += tm.metrics.rougeL / n;
        report.average.rougeLsum += tm.metrics.rougeLsum / n;
    }
    return report;
}

TrainResult train(TransformerModel& model, const Benchmark& bench, const TrainConfig& cfg) {
    if (cfg.batch_size == 0) throw ContractError("train: batch size 0");
    const std::size_t T = bench.tasks.size();
    if (T == 0) throw ContractError("train: no tasks");
    if (T != model.config.n_tasks) {
        throw ContractError("train: model expects " + std::to_string(model.config.n_tasks) +
                            " tasks, benchmark has " + std::to_string(T));
    }
    for (const auto& task : bench.tasks) {
        if (task.train.empty()) throw ContractError("train: task " + task.name + " has no data");
    }

    std::size_t steps_per_epoch = 0;
    std::vector<std::size_t> task_sizes(T);
    for (std::size_t t = 0; t < T; ++t) {
        task_sizes[t] = bench.tasks[t].train.size();
        steps_per_epoch += (task_sizes[t] + cfg.batch_size - 1) / cfg.batch_size;
    }
    const std::size_t scheduled = cfg.epochs * steps_per_epoch;
    const std::size_t total =
        cfg.max_steps > 0 ? std::min(cfg.max_steps, scheduled) : scheduled;

    TrainResult result;
    result.total_steps = total;
    if (total == 0) {
        if (cfg.epochs > 0) {
            result.final_eval = evaluate(model, bench, cfg.eval_batch_size);
        }
        return result;
    }

    AdamWConfig opt_cfg;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW opt(trainable_params(model), opt_cfg);
    std::vector<TaskCursor> cursors(T);
    Rng task_pick = Rng::keyed({cfg.seed, stream::kShuffle, 0xffffffffULL});
    const std::size_t total_examples =
        std::accumulate(task_sizes.begin(), task_sizes.end(), std::size_t{0});

    for (std::size_t step = 0; step < total; ++step) {
        std::size_t task = 0;
        if (cfg.mixing == MixStrategy::round_robin) {
            task = step % T;
        } else {
            std::size_t pick = task_pick.next_index(total_examples);
            while (pick >= task_sizes[task]) {
                pick -= task_sizes[task];
                ++task;
            }
        }
        const auto idx = cursors[task].next(cfg.seed, task, task_sizes[task], cfg.batch_size);
        TaskBatch batch = make_batch(bench, task, idx, /*train_split=*/true);

        Tape tape;
        Rng step_rng = Rng::keyed({cfg.seed, stream::kRouting, step});
        Tensor logits = model_forward(tape, model, batch, Mode::train, step_rng);
        Tensor loss = batch_loss(tape, logits, batch, bench.sequence_mode);
        const double loss_value = loss.scalar();
        if (std::isnan(loss_value)) {
            throw NumericError("train: loss diverged to NaN at step " + std::to_string(step) +
                               " (task " + bench.tasks[task].name + ")");
        }
        result.step_losses.push_back(loss_value);
        tape.backward(loss);
        for (auto& layer : model.layers) {
            apply_off_diagonal_mask(layer.q.allocation);
            apply_off_diagonal_mask(layer.k.allocation);
            apply_off_diagonal_mask(layer.v.allocation);
        }
        opt.step(lr_at(step, total, cfg.learning_rate, cfg.warmup_ratio),
                 cfg.routing_lr_multiplier);
        opt.zero_grad();

        if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == total)) {
            MetricRow row;
            row.step = step;
            row.task = bench.tasks[task].name;
            row.split = "train";
            row.loss = loss_value;
            row.metrics = sequence_metrics(batch_predictions(logits, batch, bench.sequence_mode),
                                           batch_references(batch, bench.sequence_mode));
            result.history.push_back(std::move(row));
        }
        const bool epoch_end = (step + 1) % steps_per_epoch == 0 || step + 1 == total;
        if (epoch_end) {
            MetricReport report = evaluate(model, bench, cfg.eval_batch_size);
            for (const auto& tm : report.per_task) {
                MetricRow row;
                row.step = step + 1;
                row.task = tm.task;
                row.split = "eval";
                row.loss = tm.loss;
                row.metrics = tm.metrics;
                result.history.push_back(std::move(row));
            }
            if (step + 1 == total) result.final_eval = std::move(report);
        }
    }
    return result;
}

}  // namespace cpoly
