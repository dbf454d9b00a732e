// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

// Clustering, ARI, newick export, and routing-profile extraction. The
// average-linkage oracle below re-implements the whole algorithm
// independently and must agree bitwise, including tie-breaks.

#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "cpoly/analysis.hpp"
#include "cpoly/errors.hpp"
#include "cpoly/model.hpp"
#include "cpoly/rng.hpp"
#include "cpoly/util.hpp"
#include "test_util.hpp"

using namespace cpoly;
using cpoly_test::TempDir;

namespace {

// Independent average-linkage reference. Mirrors the production contract:
// Euclidean leaf metric, mean pairwise cluster distance accumulated over
// ascending member ids, strict-less tie-break over the active-list scan, and
// merged clusters appended at the back with id n_leaves + round.
Dendrogram linkage_oracle(const std::vector<std::vector<double>>& profiles) {
    const std::size_t n = profiles.size();
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double sq = 0.0;
            for (std::size_t d = 0; d < profiles[i].size(); ++d) {
                const double diff = profiles[i][d] - profiles[j][d];
                sq += diff * diff;
            }
            dist[i][j] = std::sqrt(sq);
        }
    }
    struct Node {
        int id;
        std::vector<int> members;
    };
    std::vector<Node> active;
    for (std::size_t i = 0; i < n; ++i) active.push_back({static_cast<int>(i), {static_cast<int>(i)}});
    Dendrogram out;
    out.n_leaves = n;
    for (std::size_t round = 0; round + 1 < n; ++round) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 1;
        for (std::size_t i = 0; i < active.size(); ++i) {
            for (std::size_t j = i + 1; j < active.size(); ++j) {
                double sum = 0.0;
                for (int a : active[i].members) {
                    for (int b : active[j].members) {
                        sum += dist[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
                    }
                }
                const double d = sum / (static_cast<double>(active[i].members.size()) *
                                        static_cast<double>(active[j].members.size()));
                if (d < best) {
                    best = d;
                    bi = i;
                    bj = j;
                }
            }
        }
        Node merged;
        merged.id = static_cast<int>(n + round);
        merged.members = active[bi].members;
        merged.members.insert(merged.members.end(), active[bj].members.begin(),
                              active[bj].members.end());
        std::sort(merged.members.begin(), merged.members.end());
        out.merges.push_back(
            {active[bi].id, active[bj].id, best, static_cast<int>(merged.members.size())});
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(bj));
        active.erase(active.begin() + static_cast<std::ptrdiff_t>(bi));
        active.push_back(merged);
    }
    return out;
}

std::vector<std::vector<double>> random_profiles(Rng& rng, std::size_t n, std::size_t dim) {
    std::vector<std::vector<double>> p(n, std::vector<double>(dim));
    for (auto& row : p) {
        for (double& v : row) v = rng.next_uniform();
    }
    return p;
}

ModelConfig analysis_model_config(RoutingVariant variant) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.d_ff = 8;
    cfg.vocab_size = 12;
    cfg.max_seq_len = 5;
    cfg.n_classes = 3;
    cfg.n_tasks = 4;
    cfg.variant = variant;
    cfg.A = variant == RoutingVariant::single_lora ? 1 : 3;
    cfg.B = variant == RoutingVariant::cpoly ? 1 : 0;
    cfg.r = 2;
    cfg.seed = 31;
    return cfg;
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        lines.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t end = line.find(',', start);
        if (end == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, end - start));
        start = end + 1;
    }
}

}  // namespace

TEST_CASE("cluster_tasks matches the brute-force linkage oracle") {
    Rng rng = Rng::keyed({29, 0});
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 4 + rng.next_index(5);  // up to 8 leaves
        const std::size_t dim = 3 + rng.next_index(4);
        std::vector<std::vector<double>> profiles = random_profiles(rng, n, dim);
        Dendrogram got = cluster_tasks(profiles);
        Dendrogram want = linkage_oracle(profiles);
        REQUIRE(got.n_leaves == want.n_leaves);
        REQUIRE(got.merges.size() == want.merges.size());
        for (std::size_t m = 0; m < got.merges.size(); ++m) {
            CHECK(got.merges[m].left == want.merges[m].left);
            CHECK(got.merges[m].right == want.merges[m].right);
            CHECK(got.merges[m].size == want.merges[m].size);
            CHECK(got.merges[m].distance == want.merges[m].distance);
        }
    }
}

TEST_CASE("identical profiles merge first at distance zero") {
    std::vector<std::vector<double>> profiles = {
        {0.2, 0.8, 0.1}, {0.9, 0.05, 0.4}, {0.2, 0.8, 0.1}, {0.1, 0.1, 0.9}};
    Dendrogram d = cluster_tasks(profiles);
    CHECK(d.merges[0].left == 0);
    CHECK(d.merges[0].right == 2);
    CHECK(d.merges[0].distance == 0.0);
    CHECK(d.merges[0].size == 2);
}

TEST_CASE("simplex corners tie-break to the lowest pair and merged ids append") {
    std::vector<std::vector<double>> corners = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    Dendrogram d = cluster_tasks(corners);
    REQUIRE(d.merges.size() == 2);
    CHECK(d.merges[0].left == 0);
    CHECK(d.merges[0].right == 1);
    CHECK(d.merges[0].distance == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
    // Remaining leaf 2 then meets the merged cluster (id n_leaves + 0 == 3).
    CHECK(d.merges[1].left == 2);
    CHECK(d.merges[1].right == 3);
    CHECK(d.merges[1].size == 3);

    std::vector<int> labels = cut_dendrogram(d, 2);
    CHECK(labels == std::vector<int>{0, 0, 1});
}

TEST_CASE("merge distances are non-decreasing") {
    Rng rng = Rng::keyed({29, 1});
    for (int trial = 0; trial < 10; ++trial) {
        Dendrogram d = cluster_tasks(random_profiles(rng, 8, 5));
        for (std::size_t m = 1; m < d.merges.size(); ++m) {
            CHECK(d.merges[m].distance >=
                  d.merges[m - 1].distance - 1e-9 * (1.0 + d.merges[m - 1].distance));
        }
    }
}

TEST_CASE("cut_dendrogram labels every k consistently") {
    Rng rng = Rng::keyed({29, 2});
    const std::size_t n = 7;
    Dendrogram d = cluster_tasks(random_profiles(rng, n, 4));
    for (std::size_t k = 1; k <= n; ++k) {
        std::vector<int> labels = cut_dendrogram(d, k);
        REQUIRE(labels.size() == n);
        std::vector<int> seen;
        for (int l : labels) {
            if (std::find(seen.begin(), seen.end(), l) == seen.end()) seen.push_back(l);
        }
        CHECK(seen.size() == k);
        // Group numbering follows the smallest member: first appearance order.
        for (std::size_t g = 0; g < seen.size(); ++g) CHECK(seen[g] == static_cast<int>(g));
    }
    CHECK(cut_dendrogram(d, n) == std::vector<int>{0, 1, 2, 3, 4, 5, 6});
    CHECK(cut_dendrogram(d, 1) == std::vector<int>(n, 0));
    CHECK_THROWS_AS(cut_dendrogram(d, 0), ContractError);
    CHECK_THROWS_AS(cut_dendrogram(d, n + 1), ContractError);
}

TEST_CASE("cluster_tasks validates its input") {
    CHECK_THROWS_AS(cluster_tasks({{1.0, 2.0}}), ContractError);
    CHECK_THROWS_AS(cluster_tasks({{1.0, 2.0}, {1.0}}), ContractError);
}

TEST_CASE("adjusted rand index reference values") {
    CHECK(adjusted_rand_index({0, 0, 1, 1}, {0, 0, 1, 1}) == 1.0);
    CHECK(adjusted_rand_index({0, 0, 1, 1}, {1, 1, 0, 0}) == 1.0);  // relabeled
    CHECK(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 0, 1}) ==
          doctest::Approx(-0.5).epsilon(1e-12));
    // Singletons against one blob: maximum disagreement short of adversarial,
    // lands at exactly zero.
    CHECK(adjusted_rand_index({0, 1, 2, 3}, {0, 0, 0, 0}) == 0.0);
    // Degenerate equal partitions hit the guarded branch.
    CHECK(adjusted_rand_index({0, 0, 0}, {5, 5, 5}) == 1.0);
    CHECK(adjusted_rand_index({0, 1, 2}, {7, 3, 9}) == 1.0);

    CHECK_THROWS_AS(adjusted_rand_index({}, {}), ContractError);
    CHECK_THROWS_AS(adjusted_rand_index({0, 1}, {0}), ContractError);
}

TEST_CASE("adjusted rand index symmetry and relabel invariance") {
    Rng rng = Rng::keyed({29, 3});
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> a(10), b(10);
        for (int& l : a) l = static_cast<int>(rng.next_index(3));
        for (int& l : b) l = static_cast<int>(rng.next_index(4));
        const double ab = adjusted_rand_index(a, b);
        CHECK(adjusted_rand_index(b, a) == doctest::Approx(ab).epsilon(1e-12));
        std::vector<int> relabeled = a;
        for (int& l : relabeled) l = 10 - l * 3;  // injective remap
        CHECK(adjusted_rand_index(relabeled, b) == doctest::Approx(ab).epsilon(1e-12));
        CHECK(ab <= 1.0 + 1e-12);
    }
}

TEST_CASE("newick export golden string") {
    Dendrogram d;
    d.n_leaves = 3;
    d.merges = {{0, 1, 1.0, 2}, {3, 2, 2.5, 3}};
    CHECK(dendrogram_to_newick(d, {"t0", "t1", "t2"}) ==
          "((t0:0.5,t1:0.5):0.75,t2:1.25);");
    CHECK_THROWS_AS(dendrogram_to_newick(d, {"t0", "t1"}), ContractError);
    Dendrogram empty;
    empty.n_leaves = 2;
    CHECK_THROWS_AS(dendrogram_to_newick(empty, {"a", "b"}), ContractError);
}

TEST_CASE("routing profiles expose normalized common and raw specific rows") {
    SUBCASE("single_lora profiles are the constant weight") {
        TransformerModel model = build_model(analysis_model_config(RoutingVariant::single_lora));
        std::vector<std::vector<double>> p = routing_profiles(model);
        REQUIRE(p.size() == 4);
        for (const auto& row : p) {
            REQUIRE(row.size() == 3);  // one weight per adapted matrix
            for (double v : row) CHECK(v == 1.0);
        }
    }
    SUBCASE("poly profiles are normalized per matrix") {
        TransformerModel model = build_model(analysis_model_config(RoutingVariant::poly));
        std::vector<std::vector<double>> p = routing_profiles(model);
        REQUIRE(p.size() == 4);
        for (const auto& row : p) {
            REQUIRE(row.size() == 9);  // 3 matrices x A=3
            for (std::size_t m = 0; m < 3; ++m) {
                double sum = 0.0;
                for (std::size_t i = 0; i < 3; ++i) sum += row[m * 3 + i];
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
            }
        }
    }
    SUBCASE("fresh cpoly profiles carry the identity specific block") {
        TransformerModel model = build_model(analysis_model_config(RoutingVariant::cpoly));
        std::vector<std::vector<double>> p = routing_profiles(model);
        REQUIRE(p.size() == 4);
        const std::size_t chunk = 3 + 4;  // A + T*B per matrix
        for (std::size_t t = 0; t < 4; ++t) {
            REQUIRE(p[t].size() == 3 * chunk);
            for (std::size_t m = 0; m < 3; ++m) {
                for (std::size_t s = 0; s < 4; ++s) {
                    const double v = p[t][m * chunk + 3 + s];
                    CHECK(v == (s == t ? 1.0 : 0.0));
                }
            }
        }
    }
    SUBCASE("profile extraction is repeatable") {
        TransformerModel model = build_model(analysis_model_config(RoutingVariant::cpoly));
        CHECK(routing_profiles(model) == routing_profiles(model));
    }
}

TEST_CASE("heatmap export writes per-matrix CSVs deterministically") {
    TransformerModel model = build_model(analysis_model_config(RoutingVariant::cpoly));
    TempDir first("heatmap_a");
    TempDir second("heatmap_b");
    export_heatmaps(model, first.path);
    export_heatmaps(model, second.path);

    const std::vector<std::string> names = {"alloc_layer0_q", "alloc_layer0_k", "alloc_layer0_v"};
    for (const std::string& name : names) {
        for (const std::string& suffix : {std::string{".csv"}, std::string{"_minmax.csv"}}) {
            const auto path_a = first.path / (name + suffix);
            const auto path_b = second.path / (name + suffix);
            REQUIRE(std::filesystem::exists(path_a));
            const std::string text_a = read_text_file(path_a);
            CHECK(text_a == read_text_file(path_b));

            std::vector<std::string> lines = split_lines(text_a);
            REQUIRE(lines.size() == 5);  // header + T rows
            CHECK(lines[0] ==
                  "task,skill_0,skill_1,skill_2,specific_0,specific_1,specific_2,specific_3");
            for (std::size_t t = 0; t < 4; ++t) {
                std::vector<std::string> fields = split_fields(lines[t + 1]);
                REQUIRE(fields.size() == 8);
                CHECK(fields[0] == std::to_string(t));
                if (suffix == ".csv") {
                    // Fresh init: raw specific block is the identity.
                    for (std::size_t s = 0; s < 4; ++s) {
                        CHECK(fields[4 + s] == (s == t ? "1" : "0"));
                    }
                    for (std::size_t i = 1; i <= 3; ++i) {
                        CHECK(std::stod(fields[i]) == doctest::Approx(0.25).epsilon(1e-2));
                    }
                } else {
                    for (std::size_t i = 1; i < fields.size(); ++i) {
                        const double v = std::stod(fields[i]);
                        CHECK(v >= 0.0);
                        CHECK(v <= 1.0);
                    }
                }
            }
        }
    }
}

TEST_CASE("heatmap export skips single_lora") {
    TransformerModel model = build_model(analysis_model_config(RoutingVariant::single_lora));
    TempDir dir("heatmap_lora");
    export_heatmaps(model, dir.path);
    CHECK(std::filesystem::is_empty(dir.path));
}

TEST_CASE("well-separated profile groups recover the ground truth at the cut") {
    // Two tight groups: the cut at k=2 must reproduce them with ARI 1.
    std::vector<std::vector<double>> profiles = {
        {0.9, 0.1, 0.0}, {0.88, 0.12, 0.01}, {0.1, 0.85, 0.9}, {0.12, 0.9, 0.88}};
    Dendrogram d = cluster_tasks(profiles);
    std::vector<int> labels = cut_dendrogram(d, 2);
    CHECK(adjusted_rand_index(labels, {0, 0, 1, 1}) == 1.0);
}
