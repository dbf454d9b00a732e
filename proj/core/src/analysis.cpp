// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#include "cpoly/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "cpoly/errors.hpp"
#include "cpoly/util.hpp"

namespace cpoly {

namespace {

// Mean pairwise distance with members visited in ascending-id order; the
// test oracle mirrors this exact accumulation order.
double cluster_distance(const std::vector<int>& a, const std::vector<int>& b,
                        const std::vector<std::vector<double>>& leaf_dist) {
    double sum = 0.0;
    for (int i : a) {
        for (int j : b) sum += leaf_dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    return sum / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

struct Cluster {
    int id = 0;
    std::vector<int> members;  // ascending leaf ids
};

}  // namespace

Dendrogram cluster_tasks(const std::vector<std::vector<double>>& profiles) {
    const std::size_t n = profiles.size();
    if (n < 2) throw ContractError("cluster_tasks: need at least 2 profiles");
    for (const auto& p : profiles) {
        if (p.size() != profiles[0].size()) {
            throw ContractError("cluster_tasks: profile lengths disagree");
        }
    }
    std::vector<std::vector<double>> leaf_dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double sq = 0.0;
            for (std::size_t d = 0; d < profiles[i].size(); ++d) {
                const double diff = profiles[i][d] - profiles[j][d];
                sq += diff * diff;
            }
            leaf_dist[i][j] = leaf_dist[j][i] = std::sqrt(sq);
        }
    }

    std::vector<Cluster> active;
    for (std::size_t i = 0; i < n; ++i) active.push_back({static_cast<int>(i), {static_cast<int>(i)}});
    Dendrogram out;
    out.n_leaves = n;
    for (std::size_t round = 0; round + 1 < n; ++round) {
        std::size_t best_i = 0, best_j = 1;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < active.size(); ++i) {
            for (std::size_t j = i + 1; j < active.size(); ++j) {
                const double d = cluster_distance(active[i].members, active[j].members, leaf_dist);
                if (d < best) {  // scan order is ascending (id_i, id_j): ties keep the lowest pair
                    best = d;
                    best_i = i;
                    best_j = j;
                }
            }
        }
        Cluster merged;
        merged.id = static_cast<int>(n + round);
        std::merge(active[best_i].members.begin(), active[best_i].members.end(),
                   active[best_j].members.begin(), active[best_j].members.end(),
                   std::back_inserter(merged.members));
        out.merges.push_back({active[best_i].id, active[best_j].id, best,
                              static_cast<int>(merged.members.size())});
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_j));
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_i));
        active.push_back(std::move(merged));
    }
    return out;
}

std::vector<int> cut_dendrogram(const Dendrogram& dendro, std::size_t k) {
    const std::size_t n = dendro.n_leaves;
    if (k < 1 || k > n) throw ContractError("cut_dendrogram: k outside [1, n_leaves]");
    std::vector<std::vector<int>> components(n + dendro.merges.size());
    for (std::size_t i = 0; i < n; ++i) components[i] = {static_cast<int>(i)};
    std::vector<bool> alive(components.size(), false);
    for (std::size_t i = 0; i < n; ++i) alive[i] = true;
    for (std::size_t m = 0; m < n - k; ++m) {
        const auto& merge = dendro.merges[m];
        auto& dst = components[n + m];
        const auto& a = components[static_cast<std::size_t>(merge.left)];
        const auto& b = components[static_cast<std::size_t>(merge.right)];
        std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(dst));
        alive[static_cast<std::size_t>(merge.left)] = false;
        alive[static_cast<std::size_t>(merge.right)] = false;
        alive[n + m] = true;
    }
    std::vector<std::vector<int>> groups;
    for (std::size_t i = 0; i < components.size(); ++i) {
        if (alive[i]) groups.push_back(components[i]);
    }
    std::sort(groups.begin(), groups.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
    std::vector<int> labels(n, 0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (int leaf : groups[g]) labels[static_cast<std::size_t>(leaf)] = static_cast<int>(g);
    }
    return labels;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() || b.empty() || a.size() != b.size()) {
        throw ContractError("adjusted_rand_index: partitions must be nonempty and equal-sized");
    }
    std::map<int, std::size_t> amap, bmap;
    for (int label : a) amap.emplace(label, amap.size());
    for (int label : b) bmap.emplace(label, bmap.size());
    std::vector<std::vector<std::size_t>> table(amap.size(),
                                                std::vector<std::size_t>(bmap.size(), 0));
    for (std::size_t i = 0; i < a.size(); ++i) ++table[amap[a[i]]][bmap[b[i]]];
    auto comb2 = [](std::size_t x) {
        return static_cast<double>(x) * (static_cast<double>(x) - 1.0) / 2.0;
    };
    double sum_cells = 0.0, sum_rows = 0.0, sum_cols = 0.0;
    for (std::size_t i = 0; i < table.size(); ++i) {
        std::size_t row_total = 0;
        for (std::size_t j = 0; j < table[i].size(); ++j) {
            sum_cells += comb2(table[i][j]);
            row_total += table[i][j];
        }
        sum_rows += comb2(row_total);
    }
    for (std::size_t j = 0; j < bmap.size(); ++j) {
        std::size_t col_total = 0;
        for (std::size_t i = 0; i < table.size(); ++i) col_total += table[i][j];
        sum_cols += comb2(col_total);
    }
    const double expected = sum_rows * sum_cols / comb2(a.size());
    const double maximum = 0.5 * (sum_rows + sum_cols);
    if (maximum == expected) {
        // Degenerate partitions (all-singleton / all-together): 1 iff equal
        // as set partitions.
        for (std::size_t i = 0; i < a.size(); ++i) {
            for (std::size_t j = i + 1; j < a.size(); ++j) {
                if ((a[i] == a[j]) != (b[i] == b[j])) return 0.0;
            }
        }
        return 1.0;
    }
    return (sum_cells - expected) / (maximum - expected);
}

namespace {

std::string newick_node(const Dendrogram& dendro, const std::vector<std::string>& names, int id,
                        double parent_height) {
    const auto n = static_cast<int>(dendro.n_leaves);
    if (id < n) {
        return names[static_cast<std::size_t>(id)] + ":" +
               format_double(parent_height / 2.0);
    }
    const Merge& m = dendro.merges[static_cast<std::size_t>(id - n)];
    const std::string body = "(" + newick_node(dendro, names, m.left, m.distance) + "," +
                             newick_node(dendro, names, m.right, m.distance) + ")";
    return body + ":" + format_double((parent_height - m.distance) / 2.0);
}

}  // namespace

std::string dendrogram_to_newick(const Dendrogram& dendro,
                                 const std::vector<std::string>& leaf_names) {
    if (leaf_names.size() != dendro.n_leaves) {
        throw ContractError("dendrogram_to_newick: need one name per leaf");
    }
    if (dendro.merges.empty()) throw ContractError("dendrogram_to_newick: no merges");
    const Merge& root = dendro.merges.back();
    const std::string body = "(" + newick_node(dendro, leaf_names, root.left, root.distance) +
                             "," + newick_node(dendro, leaf_names, root.right, root.distance) +
                             ")";
    return body + ";";
}

std::vector<std::vector<double>> routing_profiles(TransformerModel& model) {
    const std::size_t T = model.config.n_tasks;
    std::vector<std::vector<double>> profiles(T);
    RoutingOptions opts;
    opts.normalize = true;
    opts.hard_eval = false;
    Rng unused = Rng::keyed({0});
    for (auto& layer : model.layers) {
        for (AdaptedMatrix* mat : {&layer.q, &layer.k, &layer.v}) {
            for (std::size_t t = 0; t < T; ++t) {
                Tape tape;
                RoutingWeights w =
                    routing_weights(tape, mat->allocation, t, Mode::eval, unused, opts);
                // A task's profile is its full allocation row as applied:
                // normalized common weights, then raw specific weights. The
                // specific block matters — tasks that borrow each other's
                // specific modules are revealed as related there.
                const auto& vals = w.common.values();
                profiles[t].insert(profiles[t].end(), vals.begin(), vals.end());
                if (w.specific.defined()) {
                    const auto& sp = w.specific.values();
                    profiles[t].insert(profiles[t].end(), sp.begin(), sp.end());
                }
            }
        }
    }
    return profiles;
}

namespace {

void write_heatmap_csv(const std::filesystem::path& path, std::size_t T, std::size_t A,
                       std::size_t n_specific,
                       const std::vector<std::vector<double>>& common_rows,
                       const std::vector<std::vector<double>>& specific_rows) {
    std::string csv = "task";
    for (std::size_t i = 0; i < A; ++i) csv += ",skill_" + std::to_string(i);
    for (std::size_t i = 0; i < n_specific; ++i) csv += ",specific_" + std::to_string(i);
    csv += "\n";
    for (std::size_t t = 0; t < T; ++t) {
        csv += std::to_string(t);
        for (double v : common_rows[t]) csv += "," + format_double(v);
        if (n_specific > 0) {
            for (double v : specific_rows[t]) csv += "," + format_double(v);
        }
        csv += "\n";
    }
    write_text_file(path, csv);
}

std::vector<std::vector<double>> minmax_block(const std::vector<std::vector<double>>& rows) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& row : rows) {
        for (double v : row) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    std::vector<std::vector<double>> out = rows;
    for (auto& row : out) {
        for (double& v : row) v = (hi > lo) ? (v - lo) / (hi - lo) : 0.0;
    }
    return out;
}

}  // namespace

void export_heatmaps(TransformerModel& model, const std::filesystem::path& dir) {
    if (model.config.variant == RoutingVariant::single_lora) return;  // nothing to export
    const std::size_t T = model.config.n_tasks;
    RoutingOptions opts;
    opts.normalize = true;
    opts.hard_eval = false;
    Rng unused = Rng::keyed({0});
    for (auto& layer : model.layers) {
        for (AdaptedMatrix* mat : {&layer.q, &layer.k, &layer.v}) {
            std::vector<std::vector<double>> common_rows(T), specific_rows(T);
            for (std::size_t t = 0; t < T; ++t) {
                Tape tape;
                RoutingWeights w =
                    routing_weights(tape, mat->allocation, t, Mode::eval, unused, opts);
                common_rows[t] = w.common.values();
                if (w.specific.defined()) specific_rows[t] = w.specific.values();
            }
            const std::size_t n_specific =
                mat->allocation.weights_B.defined() ? T * model.config.B : 0;
            std::string base = "alloc_" + mat->name;
            std::replace(base.begin(), base.end(), '.', '_');
            write_heatmap_csv(dir / (base + ".csv"), T, model.config.A, n_specific, common_rows,
                              specific_rows);
            write_heatmap_csv(dir / (base + "_minmax.csv"), T, model.config.A, n_specific,
                              minmax_block(common_rows), minmax_block(specific_rows));
        }
    }
}

}  // namespace cpoly
