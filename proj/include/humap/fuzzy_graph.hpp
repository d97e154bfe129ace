#ifndef HUMAP_FUZZY_GRAPH_HPP
#define HUMAP_FUZZY_GRAPH_HPP

#include "common.hpp"
#include "data_matrix.hpp"
#include "graph.hpp"

#include <cmath>
#include <span>
#include <vector>

/**
 * @file fuzzy_graph.hpp
 *
 * @brief Exact kNN graph, adaptive membership strengths and the Markov
 * transition matrix used for landmark sampling.
 */

namespace humap {

/**
 * Exhaustive k-nearest-neighbor search under Euclidean distance.
 * Each row excludes the point itself and lists neighbors by ascending
 * distance, ties broken by lower index.
 */
inline NeighborGraph build_knn(const DataMatrix& data, std::size_t k, const Execution& exec = {}) {
    const std::size_t n = data.n_points();
    if (k < 1 || k >= n) {
        fail(ErrorKind::parameter, "k must satisfy 1 <= k < n_points (k = " + std::to_string(k) +
            ", n_points = " + std::to_string(n) + ")");
    }

    NeighborGraph graph;
    graph.k = k;
    graph.offsets.resize(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        graph.offsets[i] = i * k;
    }
    graph.indices.resize(n * k);
    graph.distances.resize(n * k);

    parallel_blocks(n, exec.threads(), [&](std::size_t start, std::size_t stop) {
        std::vector<Neighbor> candidates(n - 1);
        for (std::size_t i = start; i < stop; ++i) {
            auto xi = data.row(i);
            std::size_t c = 0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j != i) {
                    candidates[c++] = Neighbor{j, squared_distance(xi, data.row(j))};
                }
            }
            std::partial_sort(candidates.begin(), candidates.begin() + k, candidates.end(), closer);
            for (std::size_t r = 0; r < k; ++r) {
                graph.indices[i * k + r] = candidates[r].index;
                graph.distances[i * k + r] = std::sqrt(candidates[r].distance);
            }
        }
    });
    return graph;
}

/**
 * @brief Local kernel parameters of one point.
 */
struct KernelRow {
    double rho = 0;    ///< Distance to the closest neighbor.
    double sigma = 1;  ///< Bandwidth from the binary search.
    bool converged = false; ///< False when the search stopped at its iteration cap.

    bool operator==(const KernelRow&) const = default;
};

struct KernelSearch {
    double sigma_min = 1e-5;
    double sigma_max = 1e5;
    int max_iterations = 64;
    double relative_tolerance = 1e-3;
};

inline double kernel_strength(double distance, double rho, double sigma) {
    return distance <= rho ? 1.0 : std::exp(-(distance - rho) / sigma);
}

/**
 * Finds the bandwidth such that `2^(sum of strengths)` matches `k`.
 *
 * The search bisects log(sigma) between the configured bounds; the sum of
 * strengths is non-decreasing in sigma. When the target cannot be reached
 * (for example every distance equals rho, making the sum constant) the
 * search runs to its cap and returns the final midpoint.
 */
inline KernelRow smooth_knn_row(std::span<const double> distances, std::size_t k, const KernelSearch& search = {}) {
    if (distances.empty()) {
        fail(ErrorKind::input, "cannot fit a kernel to an empty neighbor row");
    }
    KernelRow out;
    out.rho = *std::min_element(distances.begin(), distances.end());

    const double target = static_cast<double>(k);
    const double tolerance = search.relative_tolerance * target;
    double lo = std::log(search.sigma_min), hi = std::log(search.sigma_max);

    for (int it = 0; it < search.max_iterations; ++it) {
        double mid = 0.5 * (lo + hi);
        double sigma = std::exp(mid);
        double total = 0;
        for (double d : distances) {
            total += kernel_strength(d, out.rho, sigma);
        }
        double achieved = std::exp2(total);
        if (std::abs(achieved - target) <= tolerance) {
            out.sigma = sigma;
            out.converged = true;
            return out;
        }
        if (achieved > target) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    out.sigma = std::exp(0.5 * (lo + hi));
    return out;
}

inline std::vector<KernelRow> compute_kernels(const NeighborGraph& graph, const Execution& exec = {}) {
    std::vector<KernelRow> kernels(graph.size());
    parallel_for(graph.size(), exec, [&](std::size_t i) {
        kernels[i] = smooth_knn_row(graph.row_distances(i), graph.k);
    });
    return kernels;
}

/**
 * Directed membership strengths `exp(-(d - rho) / sigma)` for every kNN edge.
 * Strengths that underflow to zero are dropped.
 */
inline SparseGraph membership_strengths(const NeighborGraph& graph, std::span<const KernelRow> kernels) {
    const std::size_t n = graph.size();
    if (kernels.size() != n) {
        fail(ErrorKind::parameter, "kernel count does not match the neighbor graph");
    }
    std::vector<std::vector<SparseGraph::Entry>> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto idx = graph.row_indices(i);
        auto dist = graph.row_distances(i);
        rows[i].reserve(idx.size());
        for (std::size_t e = 0; e < idx.size(); ++e) {
            double w = kernel_strength(dist[e], kernels[i].rho, kernels[i].sigma);
            if (w > 0) {
                rows[i].emplace_back(idx[e], w);
            }
        }
    }
    return SparseGraph::from_rows(n, n, std::move(rows));
}

/**
 * Row-normalizes strengths into transition probabilities of the finite
 * Markov chain.
 */
inline SparseGraph transition_matrix(const SparseGraph& strengths) {
    SparseGraph out = strengths;
    for (std::size_t r = 0; r < out.n_rows; ++r) {
        double total = 0;
        for (auto e = out.offsets[r]; e < out.offsets[r + 1]; ++e) {
            total += out.weights[e];
        }
        if (!(total > 0)) {
            fail(ErrorKind::degenerate, "row " + std::to_string(r) + " has no positive strength to normalize");
        }
        for (auto e = out.offsets[r]; e < out.offsets[r + 1]; ++e) {
            out.weights[e] /= total;
        }
    }
    return out;
}

}

#endif
