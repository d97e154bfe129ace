#ifndef HUMAP_PROJECTION_HPP
#define HUMAP_PROJECTION_HPP

#include "common.hpp"
#include "hierarchy.hpp"
#include "layout.hpp"

#include <optional>
#include <span>
#include <vector>

/**
 * @file projection.hpp
 *
 * @brief Top-down projection of hierarchy levels and drill-down subsets.
 *
 * Levels are projected from the top: the top level starts from a spectral
 * layout, every lower level starts from the coordinates of the level above.
 * Points that are landmarks of the level above keep their coordinates and
 * move only by the fraction theta; the remaining points start next to the
 * landmark that represents them.
 */

namespace humap {

struct ProjectionParams {
    LayoutParams layout;
    double theta = 0.01;
    double inherit_jitter = 1e-2;
    SpectralOptions spectral;
};

/**
 * Points of `level` whose representing landmark is in `selection`, given as
 * row indices on `level + 1`. Sorted ascending.
 */
inline std::vector<std::size_t> subset_points(const Hierarchy& h, std::size_t level, std::span<const std::size_t> selection) {
    const auto& parent = h.levels.at(level + 1).association.parent;
    std::vector<char> chosen(h.levels[level + 1].size(), 0);
    for (auto s : selection) {
        chosen[s] = 1;
    }
    std::vector<std::size_t> out;
    for (std::size_t m = 0; m < parent.size(); ++m) {
        if (chosen[parent[m]]) {
            out.push_back(m);
        }
    }
    return out;
}

/**
 * @brief Projects levels of one hierarchy and remembers the full-level
 * embeddings it has produced.
 */
class HierarchyProjector {
public:
    HierarchyProjector(const Hierarchy& h, ProjectionParams params) : h_(h), params_(std::move(params)) {
        embeddings_.resize(h.n_levels());
        graphs_.resize(h.n_levels());
    }

    const Hierarchy& hierarchy() const { return h_; }
    const ProjectionParams& params() const { return params_; }

    bool is_projected(std::size_t level) const { return level < embeddings_.size() && embeddings_[level].has_value(); }

    const Embedding& embedding(std::size_t level) const {
        if (!is_projected(level)) {
            fail(ErrorKind::ordering, "level " + std::to_string(level) + " has not been projected");
        }
        return *embeddings_[level];
    }

    /// Installs a previously computed full-level embedding, e.g. from a cache.
    void set_embedding(std::size_t level, Embedding emb) {
        check_level(level);
        if (emb.size() != h_.levels[level].size()) {
            fail(ErrorKind::parameter, "cached embedding size does not match level " + std::to_string(level));
        }
        embeddings_[level] = std::move(emb);
    }

    const SparseGraph& symmetric_graph(std::size_t level) {
        check_level(level);
        if (!graphs_[level]) {
            graphs_[level] = symmetrize(h_.levels[level].strengths);
        }
        return *graphs_[level];
    }

    /**
     * Projects a whole level. Every level below the top requires the level
     * above to be projected first.
     */
    const Embedding& project_level(std::size_t level, const ProgressCallback& progress = {}) {
        check_level(level);
        if (level == h_.top()) {
            const auto& sym = symmetric_graph(level);
            auto init = spectral_init(sym, stage_seed(params_.layout.seed, "spectral", level), params_.spectral);
            auto emb = run_layout(sym, std::move(init.coords), {}, level, stage_seed(params_.layout.seed, "layout", level), progress);
            emb.spectral_fallback = init.fallback;
            emb.level = level;
            embeddings_[level] = std::move(emb);
            return *embeddings_[level];
        }
        if (!is_projected(level + 1)) {
            fail(ErrorKind::ordering, "level " + std::to_string(level + 1) + " must be projected before level " +
                std::to_string(level));
        }
        std::vector<std::size_t> all(h_.levels[level].size());
        std::iota(all.begin(), all.end(), 0);
        auto emb = project_points(level, all, *embeddings_[level + 1], stage_seed(params_.layout.seed, "layout", level), progress);
        embeddings_[level] = std::move(emb);
        return *embeddings_[level];
    }

    /**
     * Projects only the points of `level` represented by the selected
     * landmarks. `selection` holds row indices on `level + 1`; the selected
     * landmarks start at their coordinates in `parent`, which defaults to the
     * projected full level above.
     */
    Embedding project_subset(std::size_t level, std::span<const std::size_t> selection,
        const Embedding* parent = nullptr, const ProgressCallback& progress = {})
    {
        check_level(level);
        if (level >= h_.top()) {
            fail(ErrorKind::parameter, "the top level has no landmarks above it to select");
        }
        if (selection.empty()) {
            fail(ErrorKind::parameter, "landmark selection is empty");
        }
        if (!parent) {
            if (!is_projected(level + 1)) {
                fail(ErrorKind::ordering, "level " + std::to_string(level + 1) + " must be projected before drilling into it");
            }
            parent = &*embeddings_[level + 1];
        }
        if (parent->level != level + 1) {
            fail(ErrorKind::parameter, "parent embedding belongs to level " + std::to_string(parent->level));
        }
        std::vector<char> in_parent(h_.levels[level + 1].size(), 0);
        for (auto p : parent->point_ids) {
            in_parent[p] = 1;
        }
        for (auto s : selection) {
            if (s >= in_parent.size() || !in_parent[s]) {
                fail(ErrorKind::parameter, "id " + std::to_string(s) + " is not a projected landmark of level " +
                    std::to_string(level + 1));
            }
        }
        auto points = subset_points(h_, level, selection);

        std::vector<std::size_t> sorted(selection.begin(), selection.end());
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        std::uint64_t digest = 0;
        for (auto s : sorted) {
            digest = digest * 1099511628211ull + s + 1;
        }
        // A selection covering the whole level reproduces project_level exactly.
        auto seed = points.size() == h_.levels[level].size() ? stage_seed(params_.layout.seed, "layout", level)
                                                             : stage_seed(params_.layout.seed ^ digest, "subset", level);
        return project_points(level, points, *parent, seed, progress);
    }

private:
    void check_level(std::size_t level) const {
        if (level >= h_.n_levels()) {
            fail(ErrorKind::parameter, "level " + std::to_string(level) + " does not exist (hierarchy has " +
                std::to_string(h_.n_levels()) + " levels)");
        }
    }

    Embedding run_layout(const SparseGraph& graph, std::vector<Point2> init, std::vector<std::uint8_t> fixed,
        std::size_t level, std::uint64_t seed, const ProgressCallback& progress) const
    {
        auto lp = params_.layout;
        lp.seed = seed;
        auto emb = optimize_layout(graph, std::move(init), std::move(fixed), params_.theta, lp, progress);
        emb.level = level;
        return emb;
    }

    Embedding project_points(std::size_t level, const std::vector<std::size_t>& points, const Embedding& parent,
        std::uint64_t seed, const ProgressCallback& progress)
    {
        const auto& upper = h_.levels[level + 1];
        std::vector<std::size_t> parent_row(upper.size(), no_index);
        for (std::size_t r = 0; r < parent.point_ids.size(); ++r) {
            parent_row[parent.point_ids[r]] = r;
        }

        auto rng = make_rng(seed, "inherit-jitter");
        std::vector<Point2> init(points.size());
        std::vector<std::uint8_t> fixed(points.size(), 0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            auto m = points[i];
            auto owner = upper.association.parent[m];
            auto row = parent_row[owner];
            if (row == no_index) {
                fail(ErrorKind::ordering, "landmark " + std::to_string(owner) + " of level " + std::to_string(level + 1) +
                    " has no projected coordinates");
            }
            init[i] = parent.coords[row];
            if (upper.landmarks.landmark_ids[owner] == m) {
                fixed[i] = 1;
            } else {
                init[i][0] += uniform(rng, -params_.inherit_jitter, params_.inherit_jitter);
                init[i][1] += uniform(rng, -params_.inherit_jitter, params_.inherit_jitter);
            }
        }

        const auto& sym = symmetric_graph(level);
        bool full = points.size() == h_.levels[level].size();
        auto emb = full ? run_layout(sym, std::move(init), std::move(fixed), level, seed, progress)
                        : run_layout(sym.restrict_to(points), std::move(init), std::move(fixed), level, seed, progress);
        emb.point_ids = points;
        return emb;
    }

    const Hierarchy& h_;
    ProjectionParams params_;
    std::vector<std::optional<Embedding>> embeddings_;
    std::vector<std::optional<SparseGraph>> graphs_;
};

}

#endif
