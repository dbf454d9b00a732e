// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "cpoly/model.hpp"

#include <cmath>

#include "cpoly/errors.hpp"

namespace cpoly {

void validate_model_config(const ModelConfig& cfg) {
    if (cfg.d_model == 0 || cfg.n_heads == 0 || cfg.n_layers == 0 || cfg.d_ff == 0 ||
        cfg.vocab_size == 0 || cfg.max_seq_len == 0 || cfg.n_tasks == 0) {
        throw ContractError("model config: zero-sized dimension");
    }
    if (cfg.d_model % cfg.n_heads != 0) {
        throw ContractError("model config: d_model " + std::to_string(cfg.d_model) +
                            " not divisible by n_heads " + std::to_string(cfg.n_heads));
    }
    if (!cfg.sequence_mode && cfg.n_classes < 2) {
        throw ContractError("model config: classification needs n_classes >= 2");
    }
    if (cfg.r == 0 || cfg.A == 0) throw ContractError("model config: A and r must be >= 1");
    switch (cfg.variant) {
        case RoutingVariant::single_lora:
            if (cfg.A != 1 || cfg.B != 0) {
                throw ContractError("model config: lora variant needs A=1, B=0");
            }
            break;
        case RoutingVariant::moe_lora:
        case RoutingVariant::poly:
            if (cfg.B != 0) {
                throw ContractError("model config: " + variant_name(cfg.variant) +
                                    " variant needs B=0");
            }
            break;
        case RoutingVariant::cpoly:
            if (cfg.B < 1) throw ContractError("model config: cpoly variant needs B >= 1");
            break;
    }
}

namespace {

Tensor frozen_gaussian(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
    Tensor t = Tensor::zeros({rows, cols}, /*requires_grad=*/false);
    for (double& v : t.values()) v = rng.next_gaussian() * stddev;
    return t;
}

AdaptedMatrix build_adapted(const ModelConfig& cfg, std::size_t layer, std::size_t mat_idx,
                            const char* mat_name, Rng& base_rng) {
    AdaptedMatrix m;
    m.name = "layer" + std::to_string(layer) + "." + mat_name;
    m.base = frozen_gaussian(base_rng, cfg.d_model, cfg.d_model,
                             1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
    Rng inv_rng = Rng::keyed({cfg.seed, stream::kInitAdapter, layer, mat_idx});
    m.inventory = init_inventory(cfg.A, cfg.B, cfg.n_tasks, cfg.d_model, cfg.r, inv_rng);
    if (cfg.variant != RoutingVariant::single_lora) {
        Rng alloc_rng = Rng::keyed({cfg.seed, stream::kInitAllocation, layer, mat_idx});
        m.allocation = init_allocation(cfg.n_tasks, cfg.A, cfg.B, cfg.variant, alloc_rng);
        m.allocation.mask_off_diagonal = cfg.mask_off_diagonal;
    } else {
        m.allocation.variant = RoutingVariant::single_lora;
        m.allocation.T = cfg.n_tasks;
        m.allocation.A = 1;
    }
    return m;
}

Tensor sinusoid_positions(std::size_t max_len, std::size_t d) {
    Tensor pe = Tensor::zeros({max_len, d}, /*requires_grad=*/false);
    for (std::size_t pos = 0; pos < max_len; ++pos) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            pe.values()[pos * d + i] = std::sin(angle);
            if (i + 1 < d) pe.values()[pos * d + i + 1] = std::cos(angle);
        }
    }
    return pe;
}

void collect_matrix_params(AdaptedMatrix& m, std::vector<ParamRef>& out) {
    for (std::size_t i = 0; i < m.inventory.common.size(); ++i) {
        out.push_back({m.name + ".common" + std::to_string(i) + ".down",
                       m.inventory.common[i].down, false});
        out.push_back(
            {m.name + ".common" + std::to_string(i) + ".up", m.inventory.common[i].up, false});
    }
    for (std::size_t i = 0; i < m.inventory.specific.size(); ++i) {
        out.push_back({m.name + ".specific" + std::to_string(i) + ".down",
                       m.inventory.specific[i].down, false});
        out.push_back(
            {m.name + ".specific" + std::to_string(i) + ".up", m.inventory.specific[i].up, false});
    }
    if (m.allocation.logits_A.defined()) {
        out.push_back({m.name + ".alloc.logits_a", m.allocation.logits_A, true});
    }
    if (m.allocation.weights_B.defined()) {
        // W_B scales module outputs the way module weights do, so it trains
        // at the base lr; the routing multiplier is for sharpening W_A only
        out.push_back({m.name + ".alloc.weights_b", m.allocation.weights_B, false});
    }
}

}  // namespace

TransformerModel build_model(const ModelConfig& cfg) {
    validate_model_config(cfg);
    TransformerModel model;
    model.config = cfg;
    Rng base_rng = Rng::keyed({cfg.seed, stream::kInitBase});
    model.embedding = frozen_gaussian(base_rng, cfg.vocab_size, cfg.d_model, 1.0);
    model.pos_encoding = sinusoid_positions(cfg.max_seq_len, cfg.d_model);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    model.layers.reserve(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        TransformerLayer layer;
        layer.q = build_adapted(cfg, l, 0, "q", base_rng);
        layer.k = build_adapted(cfg, l, 1, "k", base_rng);
        layer.v = build_adapted(cfg, l, 2, "v", base_rng);
        layer.w_o = frozen_gaussian(base_rng, cfg.d_model, cfg.d_model, inv_sqrt_d);
        layer.w_ff1 = frozen_gaussian(base_rng, cfg.d_model, cfg.d_ff, inv_sqrt_d);
        layer.w_ff2 = frozen_gaussian(base_rng, cfg.d_ff, cfg.d_model,
                                      1.0 / std::sqrt(static_cast<double>(cfg.d_ff)));
        model.layers.push_back(std::move(layer));
    }
    const std::size_t out_dim = cfg.sequence_mode ? cfg.vocab_size : cfg.n_classes;
    model.head = frozen_gaussian(base_rng, cfg.d_model, out_dim, inv_sqrt_d);
    return model;
}

Tensor model_forward(Tape& tape, TransformerModel& model, const TaskBatch& batch, Mode mode,
                     Rng& rng) {
    const ModelConfig& cfg = model.config;
    if (batch.task_id >= cfg.n_tasks) {
        throw ContractError("forward: unknown task id " + std::to_string(batch.task_id));
    }
    if (batch.tokens.empty()) throw ContractError("forward: empty batch");
    const std::size_t bsz = batch.tokens.size();
    const std::size_t seq = batch.tokens[0].size();
    if (seq == 0 || seq > cfg.max_seq_len) {
        throw ContractError("forward: sequence length " + std::to_string(seq) + " outside [1, " +
                            std::to_string(cfg.max_seq_len) + "]");
    }
    for (const auto& row : batch.tokens) {
        if (row.size() != seq) throw ContractError("forward: ragged batch");
        for (int id : row) {
            if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
                throw ContractError("forward: token id " + std::to_string(id) +
                                    " outside vocab of " + std::to_string(cfg.vocab_size));
            }
        }
    }

    const std::size_t d = cfg.d_model;
    Tensor x = Tensor::zeros({bsz * seq, d}, /*requires_grad=*/false);
    for (std::size_t e = 0; e < bsz; ++e) {
        for (std::size_t p = 0; p < seq; ++p) {
            const auto tok = static_cast<std::size_t>(batch.tokens[e][p]);
            double* row = x.values().data() + (e * seq + p) * d;
            const double* emb = model.embedding.values().data() + tok * d;
            const double* pe = model.pos_encoding.values().data() + p * d;
            for (std::size_t i = 0; i < d; ++i) row[i] = emb[i] + pe[i];
        }
    }

    RoutingOptions ropts{cfg.normalize_routing, cfg.hard_eval};
    const std::size_t heads = cfg.n_heads;
    const std::size_t dh = d / heads;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (auto& layer : model.layers) {
        Tensor q = compose(tape, x, layer.q.base, batch.task_id, layer.q.adapter(), mode, rng,
                           ropts);
        Tensor k = compose(tape, x, layer.k.base, batch.task_id, layer.k.adapter(), mode, rng,
                           ropts);
        Tensor v = compose(tape, x, layer.v.base, batch.task_id, layer.v.adapter(), mode, rng,
                           ropts);
        std::vector<Tensor> example_ctx;
        example_ctx.reserve(bsz);
        for (std::size_t e = 0; e < bsz; ++e) {
            Tensor qe = ops::slice_rows(tape, q, e * seq, (e + 1) * seq);
            Tensor ke = ops::slice_rows(tape, k, e * seq, (e + 1) * seq);
            Tensor ve = ops::slice_rows(tape, v, e * seq, (e + 1) * seq);
            std::vector<Tensor> head_ctx;
            head_ctx.reserve(heads);
            for (std::size_t h = 0; h < heads; ++h) {
                Tensor qh = ops::slice_cols(tape, qe, h * dh, (h + 1) * dh);
                Tensor kh = ops::slice_cols(tape, ke, h * dh, (h + 1) * dh);
                Tensor vh = ops::slice_cols(tape, ve, h * dh, (h + 1) * dh);
                Tensor scores =
                    ops::scale(tape, ops::matmul(tape, qh, ops::transpose(tape, kh)), attn_scale);
                Tensor attn = ops::softmax_rows(tape, scores);
                head_ctx.push_back(ops::matmul(tape, attn, vh));
            }
            example_ctx.push_back(ops::concat_cols(tape, head_ctx));
        }
        Tensor ctx = ops::concat_rows(tape, example_ctx);
        x = ops::add(tape, x, ops::matmul(tape, ctx, layer.w_o));
        Tensor ff = ops::matmul(tape, ops::relu(tape, ops::matmul(tape, x, layer.w_ff1)),
                                layer.w_ff2);
        x = ops::add(tape, x, ff);
    }

    if (cfg.sequence_mode) return ops::matmul(tape, x, model.head);

    Tensor pool = Tensor::zeros({bsz, bsz * seq}, /*requires_grad=*/false);
    const double inv_seq = 1.0 / static_cast<double>(seq);
    for (std::size_t e = 0; e < bsz; ++e) {
        for (std::size_t p = 0; p < seq; ++p) pool.values()[e * (bsz * seq) + e * seq + p] = inv_seq;
    }
    Tensor pooled = ops::matmul(tape, pool, x);
    return ops::matmul(tape, pooled, model.head);
}

std::vector<ParamRef> trainable_params(TransformerModel& model) {
    std::vector<ParamRef> out;
    for (auto& layer : model.layers) {
        collect_matrix_params(layer.q, out);
        collect_matrix_params(layer.k, out);
        collect_matrix_params(layer.v, out);
    }
    return out;
}

std::vector<NamedTensor> all_named_tensors(TransformerModel& model) {
    std::vector<NamedTensor> out;
    out.push_back({"embedding", model.embedding, true});
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& layer = model.layers[l];
        for (AdaptedMatrix* m : {&layer.q, &layer.k, &layer.v}) {
            out.push_back({m->name + ".base", m->base, true});
            std::vector<ParamRef> params;
            collect_matrix_params(*m, params);
            for (auto& p : params) out.push_back({p.name, p.tensor, false});
        }
        const std::string prefix = "layer" + std::to_string(l) + ".";
        out.push_back({prefix + "w_o", layer.w_o, true});
        out.push_back({prefix + "w_ff1", layer.w_ff1, true});
        out.push_back({prefix + "w_ff2", layer.w_ff2, true});
    }
    out.push_back({"head", model.head, true});
    return out;
}

std::size_t count_trainable(TransformerModel& model) {
    std::size_t total = 0;
    for (const auto& p : trainable_params(model)) total += p.tensor.size();
    return total;
}

}  // namespace cpoly
