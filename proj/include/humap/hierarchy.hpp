#ifndef HUMAP_HIERARCHY_HPP
#define HUMAP_HIERARCHY_HPP

#include "common.hpp"
#include "data_matrix.hpp"
#include "fuzzy_graph.hpp"
#include "graph.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

/**
 * @file hierarchy.hpp
 *
 * @brief Bottom-up construction of the landmark hierarchy.
 *
 * Each level above the data is a set of landmarks drawn from the level below
 * by random walks on its Markov chain. Landmarks are compared through the
 * overlap of their representation neighborhoods, which yields a sparse
 * dissimilarity and from it the next level's neighbor graph.
 */

namespace humap {

/**
 * @brief Landmarks of one level, as indices into the level below.
 */
struct LandmarkSet {
    std::size_t level = 0;
    std::vector<std::size_t> landmark_ids;     ///< Sorted ascending.
    std::vector<std::uint64_t> visit_counts;   ///< Walk-endpoint tally per lower-level point.

    std::size_t size() const { return landmark_ids.size(); }

    /// Maps lower-level points to their landmark row, or `no_index`.
    std::vector<std::size_t> row_lookup(std::size_t n_lower) const {
        std::vector<std::size_t> lookup(n_lower, no_index);
        for (std::size_t r = 0; r < landmark_ids.size(); ++r) {
            lookup[landmark_ids[r]] = r;
        }
        return lookup;
    }

    bool operator==(const LandmarkSet&) const = default;
};

/**
 * @brief Binary sparse matrix with one row per landmark and one column per
 * lower-level point.
 */
struct RNHMatrix {
    std::size_t n_landmarks = 0;
    std::size_t n_points = 0;
    std::vector<std::size_t> offsets{0};
    std::vector<std::size_t> columns;

    std::span<const std::size_t> row(std::size_t u) const {
        return {columns.data() + offsets[u], offsets[u + 1] - offsets[u]};
    }

    std::size_t row_sum(std::size_t u) const { return offsets[u + 1] - offsets[u]; }

    bool contains(std::size_t u, std::size_t v) const {
        auto r = row(u);
        return std::binary_search(r.begin(), r.end(), v);
    }

    bool operator==(const RNHMatrix&) const = default;
};

/**
 * @brief Representing landmark of every lower-level point.
 *
 * `parent[x]` is the row of x's landmark in the upper level. Landmarks map to
 * their own row.
 */
struct AssociationMap {
    std::vector<std::size_t> parent;

    bool operator==(const AssociationMap&) const = default;
};

inline std::size_t walk_step(const SparseGraph& transition, std::size_t from, Rng& rng) {
    auto cols = transition.row_columns(from);
    if (cols.empty()) {
        return from;
    }
    auto probs = transition.row_weights(from);
    double u = uniform01(rng), acc = 0;
    for (std::size_t e = 0; e < cols.size(); ++e) {
        acc += probs[e];
        if (u < acc) {
            return cols[e];
        }
    }
    return cols.back();
}

/**
 * Simulates `walks_per_point` walks of `walk_length` steps from every point,
 * tallies where they end and keeps the `target_count` most visited points.
 * Count ties go to the lower index. Each start point owns its random stream,
 * so results do not depend on the thread count.
 */
inline LandmarkSet select_landmarks(const SparseGraph& transition, std::size_t target_count,
    std::size_t walks_per_point = 10, std::size_t walk_length = 10, std::uint64_t seed = 0,
    const Execution& exec = {})
{
    const std::size_t n = transition.n_rows;
    if (target_count >= n) {
        fail(ErrorKind::parameter, "landmark count " + std::to_string(target_count) +
            " must be smaller than the level size " + std::to_string(n));
    }
    if (target_count == 0) {
        fail(ErrorKind::parameter, "landmark count must be positive");
    }

    std::vector<std::size_t> endpoints(n * walks_per_point);
    parallel_for(n, exec, [&](std::size_t start) {
        auto rng = make_rng(seed, "landmark-walk", start);
        for (std::size_t w = 0; w < walks_per_point; ++w) {
            std::size_t cur = start;
            for (std::size_t s = 0; s < walk_length; ++s) {
                cur = walk_step(transition, cur, rng);
            }
            endpoints[start * walks_per_point + w] = cur;
        }
    });

    LandmarkSet out;
    out.visit_counts.assign(n, 0);
    for (auto e : endpoints) {
        ++out.visit_counts[e];
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + target_count, order.end(), [&](std::size_t a, std::size_t b) {
        return out.visit_counts[a] > out.visit_counts[b] || (out.visit_counts[a] == out.visit_counts[b] && a < b);
    });
    out.landmark_ids.assign(order.begin(), order.begin() + target_count);
    std::sort(out.landmark_ids.begin(), out.landmark_ids.end());
    return out;
}

/// Number of immediate neighbors added per landmark for a given `beta`.
inline std::size_t local_augmentation_count(double beta, std::size_t neighborhood_size) {
    return static_cast<std::size_t>(std::floor(beta * static_cast<double>(neighborhood_size) + 1e-9));
}

/**
 * Builds the representation neighborhoods of the landmarks.
 *
 * From every non-landmark, `omega` walks of at most `upsilon` steps run on the
 * lower level's Markov chain. A walk stops at the first landmark it reaches
 * and marks the start point in that landmark's row; walks that reach no
 * landmark are discarded. Each landmark row also holds the landmark itself
 * and its first `floor(beta * |NH|)` nearest neighbors.
 */
inline RNHMatrix representation_neighborhoods(const NeighborGraph& graph_lower, const SparseGraph& strengths_lower,
    const LandmarkSet& landmarks, std::size_t omega = 20, std::size_t upsilon = 30, double beta = 0,
    std::uint64_t seed = 0, const Execution& exec = {})
{
    if (beta < 0 || beta > 1) {
        fail(ErrorKind::parameter, "beta must lie in [0, 1]");
    }
    const std::size_t n = graph_lower.size();
    const auto lookup = landmarks.row_lookup(n);
    const auto transition = transition_matrix(strengths_lower);

    // hits[x] lists the landmark rows reached from non-landmark x.
    std::vector<std::vector<std::size_t>> hits(n);
    parallel_for(n, exec, [&](std::size_t start) {
        if (lookup[start] != no_index) {
            return;
        }
        auto rng = make_rng(seed, "rnh-walk", start);
        auto& found = hits[start];
        for (std::size_t w = 0; w < omega; ++w) {
            std::size_t cur = start;
            for (std::size_t s = 0; s < upsilon; ++s) {
                cur = walk_step(transition, cur, rng);
                if (lookup[cur] != no_index) {
                    found.push_back(lookup[cur]);
                    break;
                }
            }
        }
    });

    std::vector<std::vector<std::size_t>> rows(landmarks.size());
    for (std::size_t x = 0; x < n; ++x) {
        for (auto r : hits[x]) {
            rows[r].push_back(x);
        }
    }
    for (std::size_t r = 0; r < landmarks.size(); ++r) {
        auto l = landmarks.landmark_ids[r];
        rows[r].push_back(l);
        auto nbrs = graph_lower.row_indices(l);
        auto count = std::min(nbrs.size(), local_augmentation_count(beta, nbrs.size()));
        rows[r].insert(rows[r].end(), nbrs.begin(), nbrs.begin() + count);
    }

    RNHMatrix rnh;
    rnh.n_landmarks = landmarks.size();
    rnh.n_points = n;
    rnh.offsets.assign(landmarks.size() + 1, 0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto& row = rows[r];
        std::sort(row.begin(), row.end());
        row.erase(std::unique(row.begin(), row.end()), row.end());
        rnh.columns.insert(rnh.columns.end(), row.begin(), row.end());
        rnh.offsets[r + 1] = rnh.columns.size();
    }
    return rnh;
}

/**
 * Dissimilarity `1 - |RNH_u ∩ RNH_v| / M` between landmarks, where M is the
 * largest row sum. Only pairs with a non-empty intersection are stored, and
 * the diagonal is excluded.
 */
inline SparseGraph landmark_dissimilarity(const RNHMatrix& rnh, const Execution& exec = {}) {
    const std::size_t L = rnh.n_landmarks;
    if (L == 0) {
        fail(ErrorKind::parameter, "representation matrix has no rows");
    }
    std::size_t max_sum = 0;
    for (std::size_t u = 0; u < L; ++u) {
        max_sum = std::max(max_sum, rnh.row_sum(u));
    }
    if (max_sum == 0) {
        fail(ErrorKind::degenerate, "all representation neighborhoods are empty");
    }

    // Inverted index: lower-level point -> landmark rows containing it.
    std::vector<std::size_t> col_offsets(rnh.n_points + 1, 0);
    for (auto c : rnh.columns) {
        ++col_offsets[c + 1];
    }
    std::partial_sum(col_offsets.begin(), col_offsets.end(), col_offsets.begin());
    std::vector<std::size_t> col_rows(rnh.columns.size());
    {
        std::vector<std::size_t> fill(col_offsets.begin(), col_offsets.end() - 1);
        for (std::size_t u = 0; u < L; ++u) {
            for (auto c : rnh.row(u)) {
                col_rows[fill[c]++] = u;
            }
        }
    }

    const double M = static_cast<double>(max_sum);
    std::vector<std::vector<SparseGraph::Entry>> rows(L);
    parallel_blocks(L, exec.threads(), [&](std::size_t start, std::size_t stop) {
        std::vector<std::size_t> counts(L, 0);
        std::vector<std::size_t> touched;
        for (std::size_t u = start; u < stop; ++u) {
            for (auto c : rnh.row(u)) {
                for (auto e = col_offsets[c]; e < col_offsets[c + 1]; ++e) {
                    auto v = col_rows[e];
                    if (v != u && counts[v]++ == 0) {
                        touched.push_back(v);
                    }
                }
            }
            auto& row = rows[u];
            row.reserve(touched.size());
            for (auto v : touched) {
                row.emplace_back(v, 1.0 - static_cast<double>(counts[v]) / M);
                counts[v] = 0;
            }
            touched.clear();
        }
    });
    return SparseGraph::from_rows(L, L, std::move(rows));
}

/**
 * Gives every landmark without stored dissimilarities its `k` closest other
 * landmarks by breadth-first search over the lower level's neighbor graph
 * (edges taken in both directions), at the maximal dissimilarity 1. Entries
 * are added symmetrically. Rows that already hold entries are untouched.
 * A landmark whose component holds no other landmark is linked to the `k`
 * landmarks nearest under `distance` (lower-level point indices), when given.
 */
inline SparseGraph link_isolated_landmarks(const SparseGraph& dissim, const NeighborGraph& graph_lower,
    const LandmarkSet& landmarks, std::size_t k,
    const std::function<double(std::size_t, std::size_t)>& distance = {})
{
    std::vector<std::size_t> isolated;
    for (std::size_t u = 0; u < dissim.n_rows; ++u) {
        if (dissim.row_size(u) == 0) {
            isolated.push_back(u);
        }
    }
    if (isolated.empty()) {
        return dissim;
    }

    const std::size_t n = graph_lower.size();
    std::vector<std::vector<std::size_t>> adj(n);
    for (std::size_t x = 0; x < n; ++x) {
        for (auto y : graph_lower.row_indices(x)) {
            adj[x].push_back(y);
            adj[y].push_back(x);
        }
    }
    const auto lookup = landmarks.row_lookup(n);

    std::vector<std::vector<SparseGraph::Entry>> rows(dissim.n_rows);
    for (std::size_t u = 0; u < dissim.n_rows; ++u) {
        auto cols = dissim.row_columns(u);
        auto vals = dissim.row_weights(u);
        for (std::size_t e = 0; e < cols.size(); ++e) {
            rows[u].emplace_back(cols[e], vals[e]);
        }
    }
    auto add = [&rows](std::size_t a, std::size_t b) {
        auto& row = rows[a];
        if (std::none_of(row.begin(), row.end(), [b](const SparseGraph::Entry& e) { return e.first == b; })) {
            row.emplace_back(b, 1.0);
        }
    };

    std::vector<char> seen(n, 0);
    std::vector<std::size_t> queue;
    for (auto u : isolated) {
        auto start = landmarks.landmark_ids[u];
        queue.assign(1, start);
        seen[start] = 1;
        std::size_t found = 0;
        for (std::size_t head = 0; head < queue.size() && found < k; ++head) {
            auto x = queue[head];
            if (x != start && lookup[x] != no_index) {
                add(u, lookup[x]);
                add(lookup[x], u);
                ++found;
            }
            for (auto y : adj[x]) {
                if (!seen[y]) {
                    seen[y] = 1;
                    queue.push_back(y);
                }
            }
        }
        for (auto x : queue) {
            seen[x] = 0;
        }
        if (found == 0 && distance) {
            std::vector<std::pair<double, std::size_t>> ranked;
            for (std::size_t v = 0; v < landmarks.size(); ++v) {
                if (v != u) {
                    ranked.emplace_back(distance(start, landmarks.landmark_ids[v]), v);
                }
            }
            auto keep = std::min(k, ranked.size());
            std::partial_sort(ranked.begin(), ranked.begin() + keep, ranked.end());
            for (std::size_t e = 0; e < keep; ++e) {
                add(u, ranked[e].second);
                add(ranked[e].second, u);
            }
        }
    }
    return SparseGraph::from_rows(dissim.n_rows, dissim.n_cols, std::move(rows));
}

/**
 * Per-row selection of the `k` smallest stored dissimilarities, sorted
 * ascending with ties by lower index. Rows with fewer entries keep them all.
 */
inline NeighborGraph knn_from_dissimilarity(const SparseGraph& dissim, std::size_t k) {
    std::vector<std::vector<Neighbor>> rows(dissim.n_rows);
    for (std::size_t u = 0; u < dissim.n_rows; ++u) {
        auto cols = dissim.row_columns(u);
        auto vals = dissim.row_weights(u);
        if (cols.empty()) {
            fail(ErrorKind::degenerate, "landmark " + std::to_string(u) +
                " shares no representation neighborhood with any other landmark");
        }
        auto& row = rows[u];
        for (std::size_t e = 0; e < cols.size(); ++e) {
            row.push_back({cols[e], vals[e]});
        }
        auto keep = std::min(k, row.size());
        std::partial_sort(row.begin(), row.begin() + keep, row.end(), closer);
        row.resize(keep);
    }
    return NeighborGraph::from_rows(k, rows);
}

/**
 * Assigns every lower-level point to one landmark.
 *
 * (a) Each landmark claims its neighbors; a point claimed several times goes
 * to the closest claimant, measured in the level's own neighbor distance.
 * (b) Remaining points scan their neighbors nearest-first and take the first
 * landmark, or the landmark of the first already-associated neighbor.
 * (c) Anything left runs a depth-first search over the directed neighbor
 * graph and takes the first landmark found. If none is reachable, the search
 * is repeated with edges followed in both directions. Points whose weakly
 * connected component holds no landmark raise `unassociated`.
 */
inline AssociationMap associate_landmarks(const NeighborGraph& graph_lower, const LandmarkSet& landmarks) {
    const std::size_t n = graph_lower.size();
    const auto lookup = landmarks.row_lookup(n);

    AssociationMap out;
    out.parent.assign(n, no_index);
    std::vector<double> claim_distance(n, std::numeric_limits<double>::infinity());

    for (std::size_t r = 0; r < landmarks.size(); ++r) {
        auto l = landmarks.landmark_ids[r];
        out.parent[l] = r;
        auto idx = graph_lower.row_indices(l);
        auto dist = graph_lower.row_distances(l);
        for (std::size_t e = 0; e < idx.size(); ++e) {
            auto v = idx[e];
            if (lookup[v] == no_index && dist[e] < claim_distance[v]) {
                claim_distance[v] = dist[e];
                out.parent[v] = r;
            }
        }
    }

    for (std::size_t u = 0; u < n; ++u) {
        if (out.parent[u] != no_index) {
            continue;
        }
        for (auto v : graph_lower.row_indices(u)) {
            if (out.parent[v] != no_index) {
                out.parent[u] = out.parent[v];
                break;
            }
        }
    }

    std::vector<char> visited(n, 0);
    std::vector<std::size_t> stack, seen;
    std::vector<std::vector<std::size_t>> incoming;
    for (std::size_t u = 0; u < n; ++u) {
        if (out.parent[u] != no_index) {
            continue;
        }
        stack.assign(1, u);
        std::size_t found = no_index;
        while (!stack.empty() && found == no_index) {
            auto cur = stack.back();
            stack.pop_back();
            if (visited[cur]) {
                continue;
            }
            visited[cur] = 1;
            seen.push_back(cur);
            if (lookup[cur] != no_index) {
                found = lookup[cur];
                break;
            }
            auto nbrs = graph_lower.row_indices(cur);
            for (auto it = nbrs.rbegin(); it != nbrs.rend(); ++it) {
                if (!visited[*it]) {
                    stack.push_back(*it);
                }
            }
        }
        for (auto s : seen) {
            visited[s] = 0;
        }
        seen.clear();
        if (found == no_index) {
            if (incoming.empty()) {
                incoming.resize(n);
                for (std::size_t x = 0; x < n; ++x) {
                    for (auto y : graph_lower.row_indices(x)) {
                        incoming[y].push_back(x);
                    }
                }
            }
            stack.assign(1, u);
            while (!stack.empty() && found == no_index) {
                auto cur = stack.back();
                stack.pop_back();
                if (visited[cur]) {
                    continue;
                }
                visited[cur] = 1;
                seen.push_back(cur);
                if (lookup[cur] != no_index) {
                    found = lookup[cur];
                    break;
                }
                auto nbrs = graph_lower.row_indices(cur);
                for (auto it = incoming[cur].rbegin(); it != incoming[cur].rend(); ++it) {
                    if (!visited[*it]) {
                        stack.push_back(*it);
                    }
                }
                for (auto it = nbrs.rbegin(); it != nbrs.rend(); ++it) {
                    if (!visited[*it]) {
                        stack.push_back(*it);
                    }
                }
            }
            for (auto s : seen) {
                visited[s] = 0;
            }
            seen.clear();
        }
        if (found == no_index) {
            fail(ErrorKind::unassociated, "point " + std::to_string(u) + " cannot reach any landmark");
        }
        out.parent[u] = found;
    }
    return out;
}

/**
 * @brief Construction parameters shared by all levels.
 */
struct HierarchyParams {
    std::size_t k = 15;
    std::size_t n_walks = 10;       ///< Landmark-selection walks per point.
    std::size_t walk_length = 10;   ///< Steps per landmark-selection walk.
    std::size_t omega = 20;         ///< Representation walks per non-landmark.
    std::size_t upsilon = 30;       ///< Maximum steps per representation walk.
    double beta = 0;                ///< Fraction of each landmark's neighbors added to its neighborhood.
    double theta = 0.01;            ///< Movement fraction of inherited points during layout.
    std::uint64_t seed = 0;

    bool operator==(const HierarchyParams&) const = default;
};

struct HierarchyLevel {
    std::vector<std::size_t> point_ids;   ///< Level-0 index of every point on this level.
    NeighborGraph graph;
    std::vector<KernelRow> kernels;
    SparseGraph strengths;

    // Present on every level above 0; they relate this level to the one below.
    LandmarkSet landmarks;
    RNHMatrix rnh;
    AssociationMap association;           ///< Over the points of the level below.

    std::size_t size() const { return point_ids.size(); }

    bool operator==(const HierarchyLevel&) const = default;
};

struct Hierarchy {
    HierarchyParams params;
    std::vector<HierarchyLevel> levels;   ///< Level 0 is the full data set.

    std::size_t n_levels() const { return levels.size(); }
    std::size_t top() const { return levels.size() - 1; }

    std::vector<std::size_t> level_sizes() const {
        std::vector<std::size_t> sizes;
        for (const auto& l : levels) {
            sizes.push_back(l.size());
        }
        return sizes;
    }

    bool operator==(const Hierarchy&) const = default;
};

inline void validate_level_sizes(std::span<const std::size_t> level_sizes, std::size_t n_points, std::size_t k) {
    if (level_sizes.empty()) {
        fail(ErrorKind::parameter, "at least one level size is required");
    }
    for (std::size_t i = 1; i < level_sizes.size(); ++i) {
        if (level_sizes[i] >= level_sizes[i - 1]) {
            fail(ErrorKind::parameter, "level sizes must be strictly decreasing");
        }
    }
    if (level_sizes[0] != n_points) {
        fail(ErrorKind::parameter, "the first level size must equal the number of points (" +
            std::to_string(n_points) + ")");
    }
    if (k < 1 || k >= level_sizes.back()) {
        fail(ErrorKind::parameter, "k must satisfy 1 <= k < smallest level size");
    }
}

/// Seed of one construction stage on one level.
inline std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage, std::size_t level) {
    return make_rng(seed, stage, level)();
}

/// Receives the wall time of each construction stage.
using StageObserver = std::function<void(std::string_view stage, std::size_t level, double seconds)>;

/**
 * Builds the hierarchy from the data upwards. `level_sizes[0]` must equal the
 * number of points and the sizes must strictly decrease.
 */
inline Hierarchy build_hierarchy(const DataMatrix& data, std::span<const std::size_t> level_sizes,
    const HierarchyParams& params = {}, const Execution& exec = {}, const StageObserver& observe = {})
{
    auto timed = [&](std::string_view stage, std::size_t level, auto&& fn) {
        auto start = std::chrono::steady_clock::now();
        fn();
        if (observe) {
            observe(stage, level, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        }
    };

    validate_level_sizes(level_sizes, data.n_points(), params.k);
    if (params.beta < 0 || params.beta > 1) {
        fail(ErrorKind::parameter, "beta must lie in [0, 1]");
    }
    if (params.theta < 0 || params.theta > 1) {
        fail(ErrorKind::parameter, "theta must lie in [0, 1]");
    }

    Hierarchy h;
    h.params = params;

    HierarchyLevel base;
    base.point_ids.resize(data.n_points());
    std::iota(base.point_ids.begin(), base.point_ids.end(), 0);
    timed("knn", 0, [&] { base.graph = build_knn(data, params.k, exec); });
    timed("kernels", 0, [&] {
        base.kernels = compute_kernels(base.graph, exec);
        base.strengths = membership_strengths(base.graph, base.kernels);
    });
    h.levels.push_back(std::move(base));

    for (std::size_t i = 1; i < level_sizes.size(); ++i) {
        const auto& lower = h.levels[i - 1];
        HierarchyLevel level;

        timed("landmarks", i, [&] {
            auto transition = transition_matrix(lower.strengths);
            level.landmarks = select_landmarks(transition, level_sizes[i], params.n_walks, params.walk_length,
                stage_seed(params.seed, "landmarks", i), exec);
            level.landmarks.level = i;
        });
        timed("neighborhoods", i, [&] {
            level.rnh = representation_neighborhoods(lower.graph, lower.strengths, level.landmarks,
                params.omega, params.upsilon, params.beta, stage_seed(params.seed, "rnh", i), exec);
        });
        timed("similarity", i, [&] {
            auto input_distance = [&](std::size_t a, std::size_t b) {
                return squared_distance(data.row(lower.point_ids[a]), data.row(lower.point_ids[b]));
            };
            auto dissim = link_isolated_landmarks(landmark_dissimilarity(level.rnh, exec), lower.graph,
                level.landmarks, params.k, input_distance);
            level.graph = knn_from_dissimilarity(dissim, params.k);
        });
        timed("association", i, [&] { level.association = associate_landmarks(lower.graph, level.landmarks); });
        timed("kernels", i, [&] {
            level.kernels = compute_kernels(level.graph, exec);
            level.strengths = membership_strengths(level.graph, level.kernels);
        });
        for (auto l : level.landmarks.landmark_ids) {
            level.point_ids.push_back(lower.point_ids[l]);
        }
        h.levels.push_back(std::move(level));
    }
    return h;
}

/**
 * Composes association maps from level 0 upwards: entry x is the index, on
 * `level`, of the ancestor of level-0 point x.
 */
inline std::vector<std::size_t> ancestors_at(const Hierarchy& h, std::size_t level) {
    std::vector<std::size_t> anc(h.levels[0].size());
    std::iota(anc.begin(), anc.end(), 0);
    for (std::size_t i = 1; i <= level; ++i) {
        for (auto& a : anc) {
            a = h.levels[i].association.parent[a];
        }
    }
    return anc;
}

}

#endif
