// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cpoly/model.hpp"

namespace cpoly {

// Agglomerative merge list, scipy-style: leaves are 0..T-1, merge i creates
// cluster id T+i. left < right always.
struct Merge {
    int left = 0;
    int right = 0;
    double distance = 0.0;
    int size = 0;
};

struct Dendrogram {
    std::size_t n_leaves = 0;
    std::vector<Merge> merges;  // T-1 entries
};

// Average-linkage (mean pairwise Euclidean) agglomeration. Ties break toward
// the lexicographically lowest (left, right) cluster-id pair, so two
// identical profiles with the lowest ids merge first.
Dendrogram cluster_tasks(const std::vector<std::vector<double>>& profiles);

// Labels per leaf after keeping only the first T-k merges; groups are
// numbered by their smallest member.
std::vector<int> cut_dendrogram(const Dendrogram& dendro, std::size_t k);

// Standard pair-counting ARI. Degenerate contingency (expected == maximum)
// returns 1 for identical partitions, else 0.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

std::string dendrogram_to_newick(const Dendrogram& dendro,
                                 const std::vector<std::string>& leaf_names);

// Per-task concatenation of the allocation row as applied in eval mode —
// normalized common weights, then raw specific weights when the variant has
// them — across every adapted matrix, in layer-then-q/k/v order.
std::vector<std::vector<double>> routing_profiles(TransformerModel& model);

// One CSV per adapted matrix (header task,skill_*,specific_*), raw plus a
// block-wise min-max normalized variant with suffix "_minmax".
void export_heatmaps(TransformerModel& model, const std::filesystem::path& dir);

}  // namespace cpoly
