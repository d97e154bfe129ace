#ifndef HUMAP_GRAPH_HPP
#define HUMAP_GRAPH_HPP

#include "common.hpp"

#include <algorithm>
#include <span>
#include <utility>
#include <vector>

/**
 * @file graph.hpp
 *
 * @brief Compressed sparse row graph and ragged neighbor lists.
 */

namespace humap {

inline constexpr std::size_t no_index = static_cast<std::size_t>(-1);

/**
 * @brief Weighted sparse matrix in compressed sparse row layout.
 *
 * Column indices are strictly increasing within each row. Strength and
 * probability graphs never store zeros; dissimilarity graphs may store an
 * explicit 0 for identical pairs, since presence of the pair carries meaning.
 */
struct SparseGraph {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<std::size_t> offsets{0};
    std::vector<std::size_t> columns;
    std::vector<double> weights;

    std::size_t nnz() const { return columns.size(); }

    std::size_t row_size(std::size_t r) const { return offsets[r + 1] - offsets[r]; }

    std::span<const std::size_t> row_columns(std::size_t r) const {
        return {columns.data() + offsets[r], row_size(r)};
    }

    std::span<const double> row_weights(std::size_t r) const {
        return {weights.data() + offsets[r], row_size(r)};
    }

    /// Stored weight at (r, c), or 0 when absent.
    double at(std::size_t r, std::size_t c) const {
        auto cols = row_columns(r);
        auto it = std::lower_bound(cols.begin(), cols.end(), c);
        if (it == cols.end() || *it != c) {
            return 0;
        }
        return weights[offsets[r] + static_cast<std::size_t>(it - cols.begin())];
    }

    bool contains(std::size_t r, std::size_t c) const {
        auto cols = row_columns(r);
        return std::binary_search(cols.begin(), cols.end(), c);
    }

    bool operator==(const SparseGraph&) const = default;

    using Entry = std::pair<std::size_t, double>;

    /**
     * Builds from unsorted per-row entries. Duplicate columns within a row are
     * not allowed.
     */
    static SparseGraph from_rows(std::size_t n_rows, std::size_t n_cols, std::vector<std::vector<Entry>> rows) {
        SparseGraph g;
        g.n_rows = n_rows;
        g.n_cols = n_cols;
        g.offsets.assign(n_rows + 1, 0);
        std::size_t total = 0;
        for (std::size_t r = 0; r < n_rows; ++r) {
            total += rows[r].size();
            g.offsets[r + 1] = total;
        }
        g.columns.reserve(total);
        g.weights.reserve(total);
        for (auto& row : rows) {
            std::sort(row.begin(), row.end(), [](const Entry& a, const Entry& b) { return a.first < b.first; });
            for (std::size_t e = 0; e < row.size(); ++e) {
                if (row[e].first >= n_cols || (e && row[e].first == row[e - 1].first)) {
                    fail(ErrorKind::internal, "invalid or duplicate column in sparse row");
                }
                g.columns.push_back(row[e].first);
                g.weights.push_back(row[e].second);
            }
        }
        return g;
    }

    SparseGraph transpose() const {
        SparseGraph t;
        t.n_rows = n_cols;
        t.n_cols = n_rows;
        t.offsets.assign(n_cols + 1, 0);
        for (auto c : columns) {
            ++t.offsets[c + 1];
        }
        for (std::size_t c = 0; c < n_cols; ++c) {
            t.offsets[c + 1] += t.offsets[c];
        }
        t.columns.resize(nnz());
        t.weights.resize(nnz());
        std::vector<std::size_t> fill(t.offsets.begin(), t.offsets.end() - 1);
        for (std::size_t r = 0; r < n_rows; ++r) {
            for (std::size_t e = offsets[r]; e < offsets[r + 1]; ++e) {
                auto dest = fill[columns[e]]++;
                t.columns[dest] = r;
                t.weights[dest] = weights[e];
            }
        }
        return t;
    }

    /**
     * Keeps only rows and columns listed in `keep` (sorted, unique), renumbered
     * by their position in `keep`.
     */
    SparseGraph restrict_to(std::span<const std::size_t> keep) const {
        std::vector<std::size_t> remap(std::max(n_rows, n_cols), no_index);
        for (std::size_t i = 0; i < keep.size(); ++i) {
            remap[keep[i]] = i;
        }
        SparseGraph g;
        g.n_rows = g.n_cols = keep.size();
        g.offsets.assign(keep.size() + 1, 0);
        for (std::size_t i = 0; i < keep.size(); ++i) {
            auto cols = row_columns(keep[i]);
            auto vals = row_weights(keep[i]);
            for (std::size_t e = 0; e < cols.size(); ++e) {
                if (remap[cols[e]] != no_index) {
                    g.columns.push_back(remap[cols[e]]);
                    g.weights.push_back(vals[e]);
                }
            }
            g.offsets[i + 1] = g.columns.size();
        }
        return g;
    }
};

struct Neighbor {
    std::size_t index;
    double distance;
};

/**
 * @brief Directed k-nearest-neighbor structure with ragged rows.
 *
 * Rows are sorted by ascending distance, ties by lower index. Rows built from
 * raw data hold exactly `k` entries; rows built from sparse dissimilarities
 * may hold fewer when fewer candidates exist.
 */
struct NeighborGraph {
    std::size_t k = 0;
    std::vector<std::size_t> offsets{0};
    std::vector<std::size_t> indices;
    std::vector<double> distances;

    std::size_t size() const { return offsets.size() - 1; }

    std::size_t row_size(std::size_t r) const { return offsets[r + 1] - offsets[r]; }

    std::span<const std::size_t> row_indices(std::size_t r) const {
        return {indices.data() + offsets[r], row_size(r)};
    }

    std::span<const double> row_distances(std::size_t r) const {
        return {distances.data() + offsets[r], row_size(r)};
    }

    bool operator==(const NeighborGraph&) const = default;

    static NeighborGraph from_rows(std::size_t k, const std::vector<std::vector<Neighbor>>& rows) {
        NeighborGraph g;
        g.k = k;
        g.offsets.assign(rows.size() + 1, 0);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            g.offsets[r + 1] = g.offsets[r] + rows[r].size();
            for (const auto& nb : rows[r]) {
                g.indices.push_back(nb.index);
                g.distances.push_back(nb.distance);
            }
        }
        return g;
    }
};

/// Orders neighbor candidates by distance, then by index.
inline bool closer(const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}

}

#endif
