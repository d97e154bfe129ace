#ifndef HUMAP_METRICS_HPP
#define HUMAP_METRICS_HPP

#include "common.hpp"
#include "data_matrix.hpp"
#include "fuzzy_graph.hpp"
#include "hierarchy.hpp"
#include "layout.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cmath>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

/**
 * @file metrics.hpp
 *
 * @brief Embedding quality measures: neighborhood preservation,
 * trustworthiness and continuity, DEMaP and Procrustes disparity.
 */

namespace humap {

namespace detail {

inline void check_pair(const DataMatrix& high, std::span<const Point2> low) {
    if (high.n_points() != low.size()) {
        fail(ErrorKind::parameter, "high- and low-dimensional point counts differ (" +
            std::to_string(high.n_points()) + " vs " + std::to_string(low.size()) + ")");
    }
}

/**
 * 1-based rank of every other point by distance from `i`, ties by lower
 * index; `rank[i]` is 0.
 */
template<typename Dist>
void ranks_from(std::size_t i, std::size_t n, Dist&& dist, std::vector<Neighbor>& scratch, std::vector<std::size_t>& rank) {
    scratch.clear();
    for (std::size_t j = 0; j < n; ++j) {
        if (j != i) {
            scratch.push_back({j, dist(j)});
        }
    }
    std::sort(scratch.begin(), scratch.end(), closer);
    rank.assign(n, 0);
    for (std::size_t r = 0; r < scratch.size(); ++r) {
        rank[scratch[r].index] = r + 1;
    }
}

}

/**
 * Mean fraction of each point's k nearest neighbors in the data that are also
 * among its k nearest neighbors in the layout, for every k in [1, k_max].
 */
inline std::vector<double> neighborhood_preservation_curve(const DataMatrix& high, std::span<const Point2> low,
    std::size_t k_max, const Execution& exec = {})
{
    detail::check_pair(high, low);
    const std::size_t n = high.n_points();
    if (k_max < 1 || k_max >= n) {
        fail(ErrorKind::parameter, "neighborhood preservation needs 1 <= k < n (k = " + std::to_string(k_max) +
            ", n = " + std::to_string(n) + ")");
    }
    auto gh = build_knn(high, k_max, exec);
    auto gl = build_knn(from_coords(low), k_max, exec);

    std::vector<std::vector<std::size_t>> shared(n, std::vector<std::size_t>(k_max, 0));
    parallel_for(n, exec, [&](std::size_t i) {
        auto hi = gh.row_indices(i), lo = gl.row_indices(i);
        for (std::size_t k = 1; k <= k_max; ++k) {
            // |first k of hi ∩ first k of lo|, updated incrementally.
            std::size_t count = k > 1 ? shared[i][k - 2] : 0;
            auto h = hi[k - 1], l = lo[k - 1];
            count += std::find(lo.begin(), lo.begin() + k, h) != lo.begin() + k;
            count += h != l && std::find(hi.begin(), hi.begin() + k - 1, l) != hi.begin() + k - 1;
            shared[i][k - 1] = count;
        }
    });

    std::vector<double> curve(k_max);
    for (std::size_t k = 1; k <= k_max; ++k) {
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            total += static_cast<double>(shared[i][k - 1]) / static_cast<double>(k);
        }
        curve[k - 1] = total / static_cast<double>(n);
    }
    return curve;
}

inline double neighborhood_preservation(const DataMatrix& high, std::span<const Point2> low, std::size_t k,
    const Execution& exec = {})
{
    return neighborhood_preservation_curve(high, low, k, exec).back();
}

struct RankQuality {
    double continuity = 0;
    double trustworthiness = 0;
};

/**
 * Trustworthiness and continuity for every k in [1, k_max].
 *
 * Trustworthiness charges each layout neighbor that is not a data neighbor
 * by how far its data rank exceeds k; continuity charges each data neighbor
 * missing from the layout by its layout rank excess. Both are normalized by
 * 2 / (n k (2n - 3k - 1)), which requires 2k < n.
 */
inline std::vector<RankQuality> rank_quality_curve(const DataMatrix& high, std::span<const Point2> low,
    std::size_t k_max, const Execution& exec = {})
{
    detail::check_pair(high, low);
    const std::size_t n = high.n_points();
    if (k_max < 1 || 2 * k_max >= n) {
        fail(ErrorKind::parameter, "trustworthiness and continuity need 1 <= k < n/2 (k = " +
            std::to_string(k_max) + ", n = " + std::to_string(n) + ")");
    }
    auto low_data = from_coords(low);

    // Per point and k: (trustworthiness penalty, continuity penalty).
    std::vector<double> trust(n * k_max, 0), cont(n * k_max, 0);
    parallel_blocks(n, exec.threads(), [&](std::size_t start, std::size_t stop) {
        std::vector<Neighbor> scratch;
        std::vector<std::size_t> rank_high, rank_low, order_high(k_max), order_low(k_max);
        for (std::size_t i = start; i < stop; ++i) {
            detail::ranks_from(i, n, [&](std::size_t j) { return squared_distance(high.row(i), high.row(j)); },
                scratch, rank_high);
            for (std::size_t r = 0; r < k_max; ++r) {
                order_high[r] = scratch[r].index;
            }
            detail::ranks_from(i, n, [&](std::size_t j) { return squared_distance(low_data.row(i), low_data.row(j)); },
                scratch, rank_low);
            for (std::size_t r = 0; r < k_max; ++r) {
                order_low[r] = scratch[r].index;
            }
            for (std::size_t k = 1; k <= k_max; ++k) {
                double t = 0, c = 0;
                for (std::size_t r = 0; r < k; ++r) {
                    auto rh = rank_high[order_low[r]];
                    if (rh > k) {
                        t += static_cast<double>(rh - k);
                    }
                    auto rl = rank_low[order_high[r]];
                    if (rl > k) {
                        c += static_cast<double>(rl - k);
                    }
                }
                trust[i * k_max + k - 1] = t;
                cont[i * k_max + k - 1] = c;
            }
        }
    });

    std::vector<RankQuality> out(k_max);
    const double nd = static_cast<double>(n);
    for (std::size_t k = 1; k <= k_max; ++k) {
        double t = 0, c = 0;
        for (std::size_t i = 0; i < n; ++i) {
            t += trust[i * k_max + k - 1];
            c += cont[i * k_max + k - 1];
        }
        const double kd = static_cast<double>(k);
        const double scale = 2.0 / (nd * kd * (2.0 * nd - 3.0 * kd - 1.0));
        out[k - 1] = {1.0 - scale * c, 1.0 - scale * t};
    }
    return out;
}

inline RankQuality rank_quality(const DataMatrix& high, std::span<const Point2> low, std::size_t k,
    const Execution& exec = {})
{
    return rank_quality_curve(high, low, k, exec).back();
}

/// Ranks with ties sharing their average position (1-based).
inline std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    for (std::size_t s = 0; s < order.size();) {
        std::size_t e = s;
        while (e + 1 < order.size() && values[order[e + 1]] == values[order[s]]) {
            ++e;
        }
        double avg = 0.5 * static_cast<double>(s + e) + 1.0;
        for (std::size_t t = s; t <= e; ++t) {
            ranks[order[t]] = avg;
        }
        s = e + 1;
    }
    return ranks;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        fail(ErrorKind::degenerate, "rank correlation needs at least two paired values");
    }
    auto rx = average_ranks(x), ry = average_ranks(y);
    const double mean = 0.5 * static_cast<double>(x.size() + 1);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        double a = rx[i] - mean, b = ry[i] - mean;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if (sxx == 0 || syy == 0) {
        fail(ErrorKind::degenerate, "rank correlation is undefined for constant values");
    }
    return sxy / std::sqrt(sxx * syy);
}

struct DemapOptions {
    std::size_t knn_k = 15;
    std::size_t max_points = 2000;   ///< Larger inputs are subsampled to this many points.
    std::uint64_t seed = 0;
};

/// Indices of the points DEMaP evaluates: all of them, or a seeded sorted sample.
inline std::vector<std::size_t> demap_sample(std::size_t n, const DemapOptions& opt) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (n <= opt.max_points) {
        return idx;
    }
    auto rng = make_rng(opt.seed, "demap-sample");
    for (std::size_t i = 0; i < opt.max_points; ++i) {
        std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
    }
    idx.resize(opt.max_points);
    std::sort(idx.begin(), idx.end());
    return idx;
}

/**
 * Shortest-path distances from every point over the undirected kNN graph
 * weighted by Euclidean length. Row-major n x n; unreachable pairs are
 * infinite.
 */
inline std::vector<double> knn_geodesics(const DataMatrix& data, std::size_t k, const Execution& exec = {}) {
    const std::size_t n = data.n_points();
    auto g = build_knn(data, k, exec);
    std::vector<std::vector<Neighbor>> adj(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto idx = g.row_indices(i);
        auto dist = g.row_distances(i);
        for (std::size_t e = 0; e < idx.size(); ++e) {
            adj[i].push_back({idx[e], dist[e]});
            adj[idx[e]].push_back({i, dist[e]});
        }
    }
    std::vector<double> out(n * n, std::numeric_limits<double>::infinity());
    parallel_for(n, exec, [&](std::size_t s) {
        double* d = out.data() + s * n;
        using Item = std::pair<double, std::size_t>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
        d[s] = 0;
        heap.push({0.0, s});
        while (!heap.empty()) {
            auto [du, u] = heap.top();
            heap.pop();
            if (du > d[u]) {
                continue;
            }
            for (const auto& e : adj[u]) {
                double alt = du + e.distance;
                if (alt < d[e.index]) {
                    d[e.index] = alt;
                    heap.push({alt, e.index});
                }
            }
        }
    });
    return out;
}

/**
 * Spearman correlation between geodesic distances on the data's kNN graph
 * and Euclidean distances in the layout, over all pairs with a finite
 * geodesic.
 */
inline double demap(const DataMatrix& high, std::span<const Point2> low, const DemapOptions& opt = {},
    const Execution& exec = {})
{
    detail::check_pair(high, low);
    auto sample = demap_sample(high.n_points(), opt);
    auto sub = high.n_points() == sample.size() ? high : high.subset(sample);
    const std::size_t n = sample.size();
    if (opt.knn_k < 1 || opt.knn_k >= n) {
        fail(ErrorKind::parameter, "DEMaP needs 1 <= knn_k < n (knn_k = " + std::to_string(opt.knn_k) +
            ", n = " + std::to_string(n) + ")");
    }
    auto geo = knn_geodesics(sub, opt.knn_k, exec);
    std::vector<double> gx, ly;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double g = geo[i * n + j];
            if (std::isfinite(g)) {
                const auto& a = low[sample[i]];
                const auto& b = low[sample[j]];
                gx.push_back(g);
                ly.push_back(std::hypot(a[0] - b[0], a[1] - b[1]));
            }
        }
    }
    if (gx.size() < 2) {
        fail(ErrorKind::degenerate, "DEMaP needs at least two point pairs with a finite geodesic distance");
    }
    return spearman(gx, ly);
}

/**
 * Procrustes disparity after centering both sets, scaling them to unit
 * Frobenius norm and applying the best orthogonal map and scale:
 * `1 - (sum of singular values of A^T B)^2`, which lies in [0, 1].
 */
inline double procrustes_disparity(std::span<const Point2> a, std::span<const Point2> b) {
    if (a.size() != b.size()) {
        fail(ErrorKind::parameter, "Procrustes needs matched point sets of equal size");
    }
    if (a.size() < 2) {
        fail(ErrorKind::parameter, "Procrustes needs at least two points");
    }
    auto standardize = [](std::span<const Point2> pts) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(pts.size()), 2);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            m(static_cast<Eigen::Index>(i), 0) = pts[i][0];
            m(static_cast<Eigen::Index>(i), 1) = pts[i][1];
        }
        m.rowwise() -= m.colwise().mean();
        double norm = m.norm();
        if (!(norm > 0)) {
            fail(ErrorKind::degenerate, "Procrustes input has zero variance");
        }
        return Eigen::MatrixXd(m / norm);
    };
    auto ma = standardize(a), mb = standardize(b);
    Eigen::Matrix2d cross = ma.transpose() * mb;
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(cross);
    double s = svd.singularValues().sum();
    return std::max(0.0, 1.0 - s * s);
}

/**
 * Coordinates of the points shared by an embedding of one level and an
 * embedding of the level above: the upper level's landmarks that both
 * embeddings contain, matched by identity.
 */
inline std::pair<std::vector<Point2>, std::vector<Point2>> shared_points(const Hierarchy& h, const Embedding& lower,
    const Embedding& upper)
{
    if (upper.level != lower.level + 1 || upper.level >= h.n_levels()) {
        fail(ErrorKind::parameter, "shared points need embeddings of consecutive levels");
    }
    const auto& ids = h.levels[upper.level].landmarks.landmark_ids;
    std::vector<std::size_t> lower_row(h.levels[lower.level].size(), no_index);
    for (std::size_t r = 0; r < lower.point_ids.size(); ++r) {
        lower_row[lower.point_ids[r]] = r;
    }
    std::pair<std::vector<Point2>, std::vector<Point2>> out;
    for (std::size_t r = 0; r < upper.point_ids.size(); ++r) {
        auto row = lower_row[ids[upper.point_ids[r]]];
        if (row != no_index) {
            out.first.push_back(lower.coords[row]);
            out.second.push_back(upper.coords[r]);
        }
    }
    return out;
}

/// Procrustes disparity between consecutive-level embeddings over their shared points.
inline double level_disparity(const Hierarchy& h, const Embedding& lower, const Embedding& upper) {
    auto [a, b] = shared_points(h, lower, upper);
    return procrustes_disparity(a, b);
}

/**
 * @brief Quality measurements of one embedding.
 */
struct MetricsReport {
    std::size_t level = 0;
    std::string subset = "full";
    std::uint64_t seed = 0;
    std::size_t knn_k = 0;
    std::vector<std::size_t> ks;
    std::vector<double> neighborhood_preservation;
    std::vector<double> continuity;
    std::vector<double> trustworthiness;
    std::optional<double> demap;

    nlohmann::ordered_json to_json() const {
        auto curve = [this](const std::vector<double>& values) {
            nlohmann::ordered_json obj = nlohmann::ordered_json::object();
            for (std::size_t i = 0; i < values.size(); ++i) {
                obj[std::to_string(ks[i])] = values[i];
            }
            return obj;
        };
        nlohmann::ordered_json j;
        j["level"] = level;
        j["subset"] = subset;
        j["seed"] = seed;
        j["knn_k"] = knn_k;
        j["curves"] = nlohmann::ordered_json::object();
        if (!neighborhood_preservation.empty()) {
            j["curves"]["np"] = curve(neighborhood_preservation);
        }
        if (!continuity.empty()) {
            j["curves"]["continuity"] = curve(continuity);
            j["curves"]["trustworthiness"] = curve(trustworthiness);
        }
        if (demap) {
            j["demap"] = *demap;
        }
        return j;
    }

    /// One row per k; columns for metrics that were not computed are left empty.
    std::string to_csv() const {
        std::ostringstream out;
        out.precision(17);
        out << "level,subset,k,np,continuity,trustworthiness\n";
        for (std::size_t i = 0; i < ks.size(); ++i) {
            out << level << ',' << subset << ',' << ks[i] << ',';
            if (i < neighborhood_preservation.size()) {
                out << neighborhood_preservation[i];
            }
            out << ',';
            if (i < continuity.size()) {
                out << continuity[i] << ',' << trustworthiness[i];
            } else {
                out << ',';
            }
            out << '\n';
        }
        return out.str();
    }
};

struct MetricSelection {
    bool neighborhood_preservation = true;
    bool rank_quality = true;
    bool demap = true;
};

/**
 * Evaluates the selected metrics for k = 1..k_max. `high` holds the data rows
 * of the embedded points in embedding order. Curves stop early where k would
 * leave the metric's range: k < n for neighborhood preservation and 2k < n
 * for trustworthiness and continuity.
 */
inline MetricsReport evaluate_embedding(const DataMatrix& high, std::span<const Point2> low, std::size_t k_max,
    const MetricSelection& which, const DemapOptions& demap_opt, const Execution& exec = {})
{
    MetricsReport report;
    report.knn_k = demap_opt.knn_k;
    report.seed = demap_opt.seed;
    detail::check_pair(high, low);
    const std::size_t n = high.n_points();
    k_max = std::min(k_max, n > 0 ? n - 1 : 0);
    if (k_max < 1) {
        fail(ErrorKind::parameter, "metrics need at least two points");
    }
    for (std::size_t k = 1; k <= k_max; ++k) {
        report.ks.push_back(k);
    }
    if (which.neighborhood_preservation) {
        report.neighborhood_preservation = neighborhood_preservation_curve(high, low, k_max, exec);
    }
    const std::size_t rank_k = std::min(k_max, (n - 1) / 2);
    if (which.rank_quality && rank_k >= 1) {
        for (const auto& q : rank_quality_curve(high, low, rank_k, exec)) {
            report.continuity.push_back(q.continuity);
            report.trustworthiness.push_back(q.trustworthiness);
        }
    }
    if (which.demap) {
        report.demap = demap(high, low, demap_opt, exec);
    }
    return report;
}

}

#endif
