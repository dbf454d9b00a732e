// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "cpoly/taskgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cpoly/errors.hpp"
#include "cpoly/rng.hpp"
#include "cpoly/util.hpp"

namespace cpoly {

namespace {

using nlohmann::json;

std::vector<std::vector<int>> combinations(std::size_t k, std::size_t choose) {
    std::vector<std::vector<int>> out;
    std::vector<int> idx(choose);
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
        out.push_back(idx);
        int pos = static_cast<int>(choose) - 1;
        while (pos >= 0 && idx[static_cast<std::size_t>(pos)] ==
                               static_cast<int>(k - choose + static_cast<std::size_t>(pos))) {
            --pos;
        }
        if (pos < 0) break;
        ++idx[static_cast<std::size_t>(pos)];
        for (std::size_t j = static_cast<std::size_t>(pos) + 1; j < choose; ++j) {
            idx[j] = idx[j - 1] + 1;
        }
    }
    return out;
}

template <class T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[rng.next_index(i)]);
    }
}

int parse_int_token(const std::string& s, const char* what) {
    int value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw IoError(std::string(what) + ": cannot parse integer from '" + s + "'");
    }
    return value;
}

}  // namespace

BenchmarkGenerator::BenchmarkGenerator(const BenchmarkConfig& c) : cfg(c) {
    if (cfg.T < 2 || cfg.K < 2) throw ContractError("benchmark: need T >= 2 and K >= 2");
    if (cfg.n_groups < 1 || cfg.T % cfg.n_groups != 0) {
        throw ContractError("benchmark: T must be a positive multiple of n_groups");
    }
    if (cfg.skills_per_group < 2 || cfg.skills_per_group > cfg.K) {
        throw ContractError("benchmark: skills_per_group outside [2, K]");
    }
    const std::size_t needed =
        cfg.K * cfg.skill_trigger_tokens + cfg.T * cfg.task_trigger_tokens;
    if (needed > cfg.vocab_size) {
        throw ContractError("benchmark: vocabulary of " + std::to_string(cfg.vocab_size) +
                            " too small for " + std::to_string(cfg.K) + " skill patterns plus " +
                            std::to_string(cfg.T) + " tie-break patterns (" +
                            std::to_string(needed) + " trigger tokens)");
    }

    Rng rng = Rng::keyed({cfg.seed, stream::kData});
    std::vector<int> token_order(cfg.vocab_size);
    std::iota(token_order.begin(), token_order.end(), 0);
    shuffle_in_place(token_order, rng);

    skill_weights.assign(cfg.K, std::vector<double>(cfg.vocab_size, 0.0));
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < cfg.K; ++k) {
        for (std::size_t i = 0; i < cfg.skill_trigger_tokens; ++i) {
            const int tok = token_order[cursor++];
            skill_weights[k][static_cast<std::size_t>(tok)] =
                rng.next_uniform() < 0.5 ? -1.0 : 1.0;
        }
    }
    task_trigger_pool.assign(token_order.begin() + static_cast<std::ptrdiff_t>(cursor),
                             token_order.begin() +
                                 static_cast<std::ptrdiff_t>(cursor +
                                                             cfg.T * cfg.task_trigger_tokens));

    // Pick n_groups distinct skill subsets whose union covers every skill, so
    // the ground-truth assignment has no dead columns. Among covering picks,
    // prefer the smallest achievable pairwise overlap: near-disjoint subsets
    // keep distinct groups distinguishable in routing space, which is the
    // point of having ground-truth structure at all.
    auto combos = combinations(cfg.K, cfg.skills_per_group);
    if (combos.size() < cfg.n_groups) {
        throw ContractError("benchmark: fewer skill subsets than groups");
    }
    const auto overlap = [](const std::vector<int>& a, const std::vector<int>& b) {
        std::size_t n = 0;
        for (int s : a) n += static_cast<std::size_t>(std::count(b.begin(), b.end(), s));
        return n;
    };
    for (std::size_t max_overlap = 0; max_overlap <= cfg.skills_per_group; ++max_overlap) {
        for (int attempt = 0; attempt < 200; ++attempt) {
            shuffle_in_place(combos, rng);
            std::vector<std::vector<int>> picked;
            for (const auto& c : combos) {
                const bool ok = std::all_of(picked.begin(), picked.end(), [&](const auto& p) {
                    return overlap(c, p) <= max_overlap;
                });
                if (!ok) continue;
                picked.push_back(c);
                if (picked.size() == cfg.n_groups) break;
            }
            if (picked.size() < cfg.n_groups) continue;
            std::vector<bool> used(cfg.K, false);
            for (const auto& g : picked) {
                for (int s : g) used[static_cast<std::size_t>(s)] = true;
            }
            if (!std::all_of(used.begin(), used.end(), [](bool b) { return b; })) continue;
            group_skills = std::move(picked);
            for (auto& g : group_skills) std::sort(g.begin(), g.end());
            return;
        }
    }
    throw ContractError("benchmark: could not cover all skills with the group count");
}

std::vector<double> BenchmarkGenerator::unique_weights(std::uint64_t unique_seed) const {
    Rng rng = Rng::keyed({unique_seed});
    std::vector<int> pool = task_trigger_pool;
    std::vector<double> w(cfg.vocab_size, 0.0);
    for (std::size_t i = 0; i < cfg.task_trigger_tokens; ++i) {
        const std::size_t pick = rng.next_index(pool.size());
        w[static_cast<std::size_t>(pool[pick])] = rng.next_uniform() < 0.5 ? -1.0 : 1.0;
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return w;
}

std::vector<double> BenchmarkGenerator::class_scores(const TaskSpec& spec,
                                                     const std::vector<double>& unique_w,
                                                     const std::vector<int>& tokens) const {
    double unique = 0.0;
    for (int tok : tokens) unique += unique_w[static_cast<std::size_t>(tok)];
    std::vector<double> scores(spec.ground_truth_skills.size());
    for (std::size_t j = 0; j < scores.size(); ++j) {
        const auto& w = skill_weights[static_cast<std::size_t>(spec.ground_truth_skills[j])];
        double s = 0.0;
        for (int tok : tokens) s += w[static_cast<std::size_t>(tok)];
        scores[j] = spec.skill_coeffs[j] * s + cfg.unique_weight * spec.unique_signs[j] * unique;
    }
    return scores;
}

Benchmark BenchmarkGenerator::generate() const {
    Benchmark bench;
    bench.vocab_size = cfg.vocab_size;
    bench.seq_len = cfg.seq_len;
    bench.n_classes = cfg.skills_per_group;
    bench.truth.K = cfg.K;
    const std::size_t tasks_per_group = cfg.T / cfg.n_groups;

    Rng seed_rng = Rng::keyed({cfg.seed, stream::kData, 1});
    for (std::size_t t = 0; t < cfg.T; ++t) {
        const std::size_t g = t / tasks_per_group;
        TaskSpec spec;
        spec.task_id = t;
        spec.ground_truth_skills = group_skills[g];
        // Intensities stay in [0.5, 1.5]: bounded away from zero so every
        // skill in the subset matters for every task that owns it.
        Rng coeff_rng = Rng::keyed({cfg.seed, stream::kData, 3, t});
        for (std::size_t i = 0; i < spec.ground_truth_skills.size(); ++i) {
            spec.skill_coeffs.push_back(0.5 + coeff_rng.next_uniform());
        }
        for (std::size_t i = 0; i < spec.ground_truth_skills.size(); ++i) {
            spec.unique_signs.push_back(coeff_rng.next_uniform() < 0.5 ? -1.0 : 1.0);
        }
        spec.unique_transform_seed = seed_rng.next_u64();
        spec.n_train = cfg.n_train;
        spec.n_eval = cfg.n_eval;
        bench.specs.push_back(spec);
        std::vector<int> row(cfg.K, 0);
        for (int k : spec.ground_truth_skills) row[static_cast<std::size_t>(k)] = 1;
        bench.truth.task_skills.push_back(std::move(row));
        bench.truth.group_labels.push_back(static_cast<int>(g));
    }

    for (std::size_t t = 0; t < cfg.T; ++t) {
        const TaskSpec& spec = bench.specs[t];
        const std::vector<double> unique_w = unique_weights(spec.unique_transform_seed);
        Rng rng = Rng::keyed({cfg.seed, stream::kData, 2, t});
        const std::size_t total = cfg.n_train + cfg.n_eval;
        std::vector<Example> pool;
        pool.reserve(total);
        for (std::size_t i = 0; i < total; ++i) {
            Example ex;
            int attempts = 0;
            while (true) {
                if (++attempts > 10000) {
                    throw NumericError("benchmark: rejection sampling stuck at task " +
                                       std::to_string(t) + " (margin too large?)");
                }
                ex.tokens.resize(cfg.seq_len);
                for (auto& tok : ex.tokens) {
                    tok = static_cast<int>(rng.next_index(cfg.vocab_size));
                }
                const auto scores = class_scores(spec, unique_w, ex.tokens);
                std::size_t best = 0, second = 1;
                if (scores[second] > scores[best]) std::swap(best, second);
                for (std::size_t j = 2; j < scores.size(); ++j) {
                    if (scores[j] > scores[best]) {
                        second = best;
                        best = j;
                    } else if (scores[j] > scores[second]) {
                        second = j;
                    }
                }
                if (scores[best] - scores[second] < cfg.margin) continue;
                ex.label = static_cast<int>(best);
                break;
            }
            if (cfg.label_flip_rate > 0.0 && rng.next_uniform() < cfg.label_flip_rate) {
                const int shift = 1 + static_cast<int>(rng.next_index(bench.n_classes - 1));
                ex.label = (ex.label + shift) % static_cast<int>(bench.n_classes);
            }
            pool.push_back(std::move(ex));
        }

        // Hash-based disjoint split on the example index: lowest-hashed
        // indices form the eval set.
        std::vector<std::size_t> order(total);
        std::iota(order.begin(), order.end(), 0);
        std::vector<std::uint64_t> hashes(total);
        for (std::size_t i = 0; i < total; ++i) {
            hashes[i] = splitmix64(splitmix64(cfg.seed + 0x517cc1b727220a95ULL + t) + i);
        }
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return hashes[a] != hashes[b] ? hashes[a] < hashes[b] : a < b;
        });
        std::vector<std::size_t> eval_idx(order.begin(),
                                          order.begin() + static_cast<std::ptrdiff_t>(cfg.n_eval));
        std::sort(eval_idx.begin(), eval_idx.end());
        std::vector<bool> is_eval(total, false);
        for (std::size_t i : eval_idx) is_eval[i] = true;

        TaskData data;
        data.name = "task" + std::to_string(t);
        for (std::size_t i = 0; i < total; ++i) {
            (is_eval[i] ? data.eval : data.train).push_back(std::move(pool[i]));
        }
        bench.tasks.push_back(std::move(data));
    }
    return bench;
}

Benchmark generate_benchmark(const BenchmarkConfig& cfg) {
    return BenchmarkGenerator(cfg).generate();
}

std::vector<JsonlRecord> read_jsonl(const std::filesystem::path& path) {
    const std::string content = read_text_file(path);
    std::vector<JsonlRecord> out;
    std::istringstream in(content);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!obj.is_object() || !obj.contains("task") || !obj.contains("input") ||
            !obj.contains("target") || !obj["task"].is_string() || !obj["input"].is_string() ||
            !obj["target"].is_string()) {
            throw IoError(path.string() + ":" + std::to_string(line_no) +
                          ": expected string fields task/input/target");
        }
        out.push_back({obj["task"].get<std::string>(), obj["input"].get<std::string>(),
                       obj["target"].get<std::string>()});
    }
    if (out.empty()) throw IoError(path.string() + ": no records");
    return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<JsonlRecord>& records) {
    std::string out;
    for (const auto& rec : records) {
        json obj;
        obj["task"] = rec.task;
        obj["input"] = rec.input;
        obj["target"] = rec.target;
        out += obj.dump();
        out += '\n';
    }
    write_text_file(path, out);
}

std::vector<std::string> split_whitespace(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

int Vocabulary::token_id(const std::string& token) const {
    const auto it = lookup.find(token);
    return it == lookup.end() ? 1 : it->second;
}

Vocabulary build_vocabulary(const std::vector<JsonlRecord>& records) {
    std::unordered_map<std::string, std::size_t> freq;
    std::unordered_map<std::string, std::size_t> first_seen;
    std::size_t counter = 0;
    auto visit = [&](const std::string& text) {
        for (auto& tok : split_whitespace(text)) {
            if (!freq.count(tok)) first_seen[tok] = counter++;
            ++freq[tok];
        }
    };
    for (const auto& rec : records) {
        visit(rec.input);
        visit(rec.target);
    }
    std::vector<std::string> tokens;
    tokens.reserve(freq.size());
    for (const auto& [tok, _] : freq) tokens.push_back(tok);
    std::sort(tokens.begin(), tokens.end(), [&](const std::string& a, const std::string& b) {
        if (freq[a] != freq[b]) return freq[a] > freq[b];
        return first_seen[a] < first_seen[b];
    });
    Vocabulary vocab;
    vocab.id_to_token = {"<pad>", "<unk>"};
    for (auto& tok : tokens) vocab.id_to_token.push_back(tok);
    for (std::size_t i = 0; i < vocab.id_to_token.size(); ++i) {
        vocab.lookup[vocab.id_to_token[i]] = static_cast<int>(i);
    }
    return vocab;
}

namespace {

// Shared shape for external-jsonl and saved-benchmark loading.
struct RawSplit {
    std::vector<JsonlRecord> train, eval;
};

std::vector<std::string> task_order(const RawSplit& raw) {
    std::vector<std::string> order;
    auto note = [&](const std::string& name) {
        if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
    };
    for (const auto& r : raw.train) note(r.task);
    for (const auto& r : raw.eval) note(r.task);
    return order;
}

}  // namespace

LoadedDataset load_jsonl_dataset(const std::filesystem::path& train_path,
                                 const std::filesystem::path& eval_path) {
    RawSplit raw{read_jsonl(train_path), read_jsonl(eval_path)};
    LoadedDataset out;
    out.vocab = build_vocabulary(raw.train);

    const auto names = task_order(raw);
    std::unordered_map<std::string, std::size_t> task_index;
    for (std::size_t i = 0; i < names.size(); ++i) {
        task_index[names[i]] = i;
        TaskData data;
        data.name = names[i];
        out.benchmark.tasks.push_back(std::move(data));
    }

    bool classification = true;
    int max_class = 0;
    auto scan = [&](const std::vector<JsonlRecord>& records) {
        for (const auto& rec : records) {
            const auto toks = split_whitespace(rec.target);
            int value = 0;
            if (toks.size() != 1) {
                classification = false;
                continue;
            }
            const auto [ptr, ec] =
                std::from_chars(toks[0].data(), toks[0].data() + toks[0].size(), value);
            if (ec != std::errc() || ptr != toks[0].data() + toks[0].size() || value < 0) {
                classification = false;
            } else {
                max_class = std::max(max_class, value);
            }
        }
    };
    scan(raw.train);
    scan(raw.eval);
    out.benchmark.sequence_mode = !classification;
    out.benchmark.n_classes = classification ? static_cast<std::size_t>(max_class) + 1 : 0;
    if (classification && out.benchmark.n_classes < 2) out.benchmark.n_classes = 2;

    std::size_t max_len = 1;
    auto convert = [&](const std::vector<JsonlRecord>& records, bool eval_split) {
        for (const auto& rec : records) {
            Example ex;
            for (const auto& tok : split_whitespace(rec.input)) {
                ex.tokens.push_back(out.vocab.token_id(tok));
            }
            if (ex.tokens.empty()) ex.tokens.push_back(0);
            if (classification) {
                ex.label = parse_int_token(split_whitespace(rec.target)[0], "target");
            } else {
                for (const auto& tok : split_whitespace(rec.target)) {
                    ex.target_seq.push_back(out.vocab.token_id(tok));
                }
                if (ex.target_seq.size() != ex.tokens.size()) {
                    throw IoError("sequence targets must match input length (task " + rec.task +
                                  ")");
                }
            }
            max_len = std::max(max_len, ex.tokens.size());
            auto& task = out.benchmark.tasks[task_index[rec.task]];
            (eval_split ? task.eval : task.train).push_back(std::move(ex));
        }
    };
    convert(raw.train, false);
    convert(raw.eval, true);

    // Rectangular shape for batching: right-pad with PAD (and PAD targets).
    for (auto& task : out.benchmark.tasks) {
        for (auto* split : {&task.train, &task.eval}) {
            for (auto& ex : *split) {
                ex.tokens.resize(max_len, 0);
                if (!classification) ex.target_seq.resize(max_len, 0);
            }
        }
    }
    out.benchmark.vocab_size = out.vocab.size();
    out.benchmark.seq_len = max_len;
    return out;
}

void save_benchmark(const Benchmark& bench, const std::filesystem::path& dir) {
    auto render = [&](const Example& ex) {
        JsonlRecord rec;
        std::string input;
        for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
            if (i) input += ' ';
            input += 't' + std::to_string(ex.tokens[i]);
        }
        rec.input = std::move(input);
        if (bench.sequence_mode) {
            std::string target;
            for (std::size_t i = 0; i < ex.target_seq.size(); ++i) {
                if (i) target += ' ';
                target += 't' + std::to_string(ex.target_seq[i]);
            }
            rec.target = std::move(target);
        } else {
            rec.target = std::to_string(ex.label);
        }
        return rec;
    };
    std::vector<JsonlRecord> train, eval;
    for (const auto& task : bench.tasks) {
        for (const auto& ex : task.train) {
            auto rec = render(ex);
            rec.task = task.name;
            train.push_back(std::move(rec));
        }
        for (const auto& ex : task.eval) {
            auto rec = render(ex);
            rec.task = task.name;
            eval.push_back(std::move(rec));
        }
    }
    write_jsonl(dir / "train.jsonl", train);
    write_jsonl(dir / "eval.jsonl", eval);

    json truth;
    truth["K"] = bench.truth.K;
    truth["task_skills"] = bench.truth.task_skills;
    truth["group_labels"] = bench.truth.group_labels;
    truth["vocab_size"] = bench.vocab_size;
    truth["seq_len"] = bench.seq_len;
    truth["n_classes"] = bench.n_classes;
    truth["sequence_mode"] = bench.sequence_mode;
    json specs = json::array();
    for (const auto& spec : bench.specs) {
        json s;
        s["task_id"] = spec.task_id;
        s["ground_truth_skills"] = spec.ground_truth_skills;
        s["skill_coeffs"] = spec.skill_coeffs;
        s["unique_signs"] = spec.unique_signs;
        s["unique_transform_seed"] = spec.unique_transform_seed;
        s["n_train"] = spec.n_train;
        s["n_eval"] = spec.n_eval;
        specs.push_back(s);
    }
    truth["specs"] = specs;
    write_text_file(dir / "ground_truth.json", truth.dump(2) + "\n");
}

Benchmark load_benchmark(const std::filesystem::path& dir) {
    json truth;
    try {
        truth = json::parse(read_text_file(dir / "ground_truth.json"));
    } catch (const json::exception& e) {
        throw IoError((dir / "ground_truth.json").string() + ": " + e.what());
    }
    Benchmark bench;
    bench.truth.K = truth.at("K").get<std::size_t>();
    bench.truth.task_skills = truth.at("task_skills").get<std::vector<std::vector<int>>>();
    bench.truth.group_labels = truth.at("group_labels").get<std::vector<int>>();
    bench.vocab_size = truth.at("vocab_size").get<std::size_t>();
    bench.seq_len = truth.at("seq_len").get<std::size_t>();
    bench.n_classes = truth.at("n_classes").get<std::size_t>();
    bench.sequence_mode = truth.at("sequence_mode").get<bool>();
    for (const auto& s : truth.at("specs")) {
        TaskSpec spec;
        spec.task_id = s.at("task_id").get<std::size_t>();
        spec.ground_truth_skills = s.at("ground_truth_skills").get<std::vector<int>>();
        spec.skill_coeffs = s.at("skill_coeffs").get<std::vector<double>>();
        spec.unique_signs = s.at("unique_signs").get<std::vector<double>>();
        spec.unique_transform_seed = s.at("unique_transform_seed").get<std::uint64_t>();
        spec.n_train = s.at("n_train").get<std::size_t>();
        spec.n_eval = s.at("n_eval").get<std::size_t>();
        bench.specs.push_back(std::move(spec));
    }

    RawSplit raw{read_jsonl(dir / "train.jsonl"), read_jsonl(dir / "eval.jsonl")};
    const auto names = task_order(raw);
    std::unordered_map<std::string, std::size_t> task_index;
    for (std::size_t i = 0; i < names.size(); ++i) {
        task_index[names[i]] = i;
        TaskData data;
        data.name = names[i];
        bench.tasks.push_back(std::move(data));
    }
    auto parse_tokens = [](const std::string& text) {
        std::vector<int> out;
        for (const auto& tok : split_whitespace(text)) {
            if (tok.size() < 2 || tok[0] != 't') {
                throw IoError("saved benchmark: bad token '" + tok + "'");
            }
            out.push_back(parse_int_token(tok.substr(1), "token"));
        }
        return out;
    };
    auto convert = [&](const std::vector<JsonlRecord>& records, bool eval_split) {
        for (const auto& rec : records) {
            Example ex;
            ex.tokens = parse_tokens(rec.input);
            if (bench.sequence_mode) {
                ex.target_seq = parse_tokens(rec.target);
            } else {
                ex.label = parse_int_token(rec.target, "label");
            }
            auto& task = bench.tasks[task_index.at(rec.task)];
            (eval_split ? task.eval : task.train).push_back(std::move(ex));
        }
    };
    convert(raw.train, false);
    convert(raw.eval, true);
    return bench;
}

}  // namespace cpoly
