// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace cpoly {

// One task's slice of a training batch. Routing is task-indexed, so batches
// never mix tasks.
struct TaskBatch {
    std::size_t task_id = 0;
    std::vector<std::vector<int>> tokens;       // batch x seq, rectangular
    std::vector<int> labels;                    // class ids (classification)
    std::vector<std::vector<int>> target_seqs;  // sequence mode only
};

struct Example {
    std::vector<int> tokens;
    int label = 0;
    std::vector<int> target_seq;  // sequence mode only
};

struct TaskData {
    std::string name;
    std::vector<Example> train;
    std::vector<Example> eval;
};

// Which latent skills generate each task, and the group structure tasks
// share. The evaluation-only counterpart of the learned allocation.
struct GroundTruthAssignment {
    std::size_t K = 0;
    std::vector<std::vector<int>> task_skills;  // T x K, 0/1
    std::vector<int> group_labels;              // T entries; same label = same skill subset
};

struct TaskSpec {
    std::size_t task_id = 0;
    std::vector<int> ground_truth_skills;  // indices into the K latent skills
    std::vector<double> skill_coeffs;      // per-skill intensities, aligned with the above
    std::vector<double> unique_signs;      // +/-1 per class on the tie-break term
    std::uint64_t unique_transform_seed = 0;
    std::size_t n_train = 0;
    std::size_t n_eval = 0;
};

struct Benchmark {
    std::vector<TaskData> tasks;
    std::vector<TaskSpec> specs;
    GroundTruthAssignment truth;
    std::size_t vocab_size = 0;
    std::size_t seq_len = 0;
    std::size_t n_classes = 2;
    bool sequence_mode = false;
};

struct BenchmarkConfig {
    std::size_t K = 6;  // latent skills
    std::size_t T = 8;  // tasks
    std::size_t n_groups = 4;
    std::size_t skills_per_group = 3;
    std::size_t seq_len = 16;
    std::size_t vocab_size = 64;
    std::size_t n_train = 1000;
    std::size_t n_eval = 100;
    std::size_t skill_trigger_tokens = 6;  // vocab tokens per latent skill
    std::size_t task_trigger_tokens = 3;   // per-task tie-break triggers
    double unique_weight = 0.75;           // tie-break strength vs. skill scores
    double margin = 0.5;                   // reject top-two class score gaps below this
    double label_flip_rate = 0.1;          // rotate this fraction of labels off-class
    std::uint64_t seed = 1234;
};

// Deterministic synthetic multi-task benchmark. Each latent skill scores a
// sequence by signed counts of its trigger tokens; a task holds one class per
// skill in its group's subset and labels a sequence with the argmax class.
// Class j's score is the task's intensity for skill j times that skill's
// score, plus a task-unique tie-break term. Solving a task therefore needs
// every one of its skills as a separate feature — tasks in one group share
// the exact same skill subset but weight the skills with their own
// intensities. Trigger vocab regions for skills and tie-breaks are disjoint.
struct BenchmarkGenerator {
    explicit BenchmarkGenerator(const BenchmarkConfig& cfg);

    BenchmarkConfig cfg;
    std::vector<std::vector<double>> skill_weights;  // K x vocab, +/-1 on triggers
    std::vector<int> task_trigger_pool;              // tie-break tokens live here
    std::vector<std::vector<int>> group_skills;      // n_groups x skills_per_group

    // Tie-break weights derive from the seed alone, so equal seeds give
    // identical label functions.
    std::vector<double> unique_weights(std::uint64_t unique_seed) const;
    std::vector<double> class_scores(const TaskSpec& spec, const std::vector<double>& unique_w,
                                     const std::vector<int>& tokens) const;

    Benchmark generate() const;
};

Benchmark generate_benchmark(const BenchmarkConfig& cfg);

// JSONL interchange: objects with string fields `task`, `input`, `target`.
struct JsonlRecord {
    std::string task;
    std::string input;
    std::string target;
};

std::vector<JsonlRecord> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<JsonlRecord>& records);

std::vector<std::string> split_whitespace(const std::string& text);

// Whitespace vocabulary ordered by frequency (ties by first appearance),
// with ids 0/1 reserved for PAD/UNK.
struct Vocabulary {
    std::vector<std::string> id_to_token;  // [0]="<pad>", [1]="<unk>"
    std::unordered_map<std::string, int> lookup;

    int token_id(const std::string& token) const;
    std::size_t size() const { return id_to_token.size(); }
};

Vocabulary build_vocabulary(const std::vector<JsonlRecord>& records);

// Tasks indexed by first appearance; classification when every target is a
// single token that parses as a class id, sequence mode otherwise (targets
// must then match their input lengths). Vocabulary is built from the train
// split only, so unseen eval tokens fall to UNK.
struct LoadedDataset {
    Benchmark benchmark;  // truth left empty (unknown for external data)
    Vocabulary vocab;
};

LoadedDataset load_jsonl_dataset(const std::filesystem::path& train_path,
                                 const std::filesystem::path& eval_path);

// Persists a generated benchmark as train.jsonl / eval.jsonl /
// ground_truth.json; load_benchmark is its exact inverse.
void save_benchmark(const Benchmark& bench, const std::filesystem::path& dir);
Benchmark load_benchmark(const std::filesystem::path& dir);

}  // namespace cpoly
