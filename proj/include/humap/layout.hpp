#ifndef HUMAP_LAYOUT_HPP
#define HUMAP_LAYOUT_HPP

#include "common.hpp"
#include "graph.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>

#include <array>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

/**
 * @file layout.hpp
 *
 * @brief Two-dimensional graph layout: fuzzy-union symmetrization, spectral
 * initialization and stochastic gradient optimization with partially fixed
 * points.
 */

namespace humap {

using Point2 = std::array<double, 2>;

/**
 * @brief A 2-D layout of (a subset of) one hierarchy level.
 */
struct Embedding {
    std::vector<Point2> coords;
    std::vector<std::uint8_t> fixed_mask;   ///< 1 for points inherited from the level above.
    double theta = 1;                       ///< Movement fraction applied to fixed points.
    std::size_t level = 0;
    std::vector<std::size_t> point_ids;     ///< Indices into the level's point set.
    bool spectral_fallback = false;         ///< Set when the eigensolver failed and a random start was used.

    std::size_t size() const { return coords.size(); }

    bool operator==(const Embedding&) const = default;
};

/**
 * Fuzzy union `a + b - a*b` of a directed strength matrix and its transpose.
 * Evaluated as `max + min * (1 - max)` so each entry is bounded below by the
 * larger direction and above by 1, and the result is exactly symmetric.
 */
inline SparseGraph symmetrize(const SparseGraph& strengths) {
    if (strengths.n_rows != strengths.n_cols) {
        fail(ErrorKind::parameter, "symmetrization requires a square matrix");
    }
    const auto t = strengths.transpose();
    const std::size_t n = strengths.n_rows;
    SparseGraph out;
    out.n_rows = out.n_cols = n;
    out.offsets.assign(n + 1, 0);
    for (std::size_t r = 0; r < n; ++r) {
        auto ac = strengths.row_columns(r), bc = t.row_columns(r);
        auto aw = strengths.row_weights(r), bw = t.row_weights(r);
        std::size_t x = 0, y = 0;
        while (x < ac.size() || y < bc.size()) {
            std::size_t col;
            double a = 0, b = 0;
            if (y == bc.size() || (x < ac.size() && ac[x] < bc[y])) {
                col = ac[x];
                a = aw[x++];
            } else if (x == ac.size() || bc[y] < ac[x]) {
                col = bc[y];
                b = bw[y++];
            } else {
                col = ac[x];
                a = aw[x++];
                b = bw[y++];
            }
            double hi = std::max(a, b), lo = std::min(a, b);
            double v = std::min(1.0, hi + lo * (1.0 - hi));
            if (v > 0) {
                out.columns.push_back(col);
                out.weights.push_back(v);
            }
        }
        out.offsets[r + 1] = out.columns.size();
    }
    return out;
}

struct CurveParams {
    double a = 0;
    double b = 0;
};

namespace detail {

struct CurveResidual {
    using Scalar = double;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;

    Eigen::ArrayXd x, y;

    int inputs() const { return 2; }
    int values() const { return static_cast<int>(x.size()); }

    int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& fvec) const {
        Eigen::ArrayXd pw = x.pow(2 * p(1));
        fvec = (1.0 / (1.0 + p(0) * pw) - y).matrix();
        return 0;
    }

    int df(const Eigen::VectorXd& p, Eigen::MatrixXd& jac) const {
        Eigen::ArrayXd pw = x.pow(2 * p(1));
        Eigen::ArrayXd denom = (1.0 + p(0) * pw).square();
        jac.col(0) = (-pw / denom).matrix();
        jac.col(1) = (-p(0) * pw * 2.0 * x.log() / denom).matrix();
        return 0;
    }
};

}

/**
 * Least-squares fit of `1 / (1 + a d^(2b))` to the offset exponential that is
 * 1 below `min_dist` and `exp(-(d - min_dist) / spread)` above it, sampled on
 * 300 points of (0, 3 * spread].
 */
inline CurveParams fit_curve_params(double min_dist = 0.1, double spread = 1.0) {
    if (!(min_dist > 0) || !(spread > 0) || min_dist > spread) {
        fail(ErrorKind::parameter, "curve fit requires 0 < min_dist <= spread");
    }
    constexpr int samples = 300;
    detail::CurveResidual f;
    f.x = Eigen::ArrayXd::LinSpaced(samples, 3.0 * spread / samples, 3.0 * spread);
    f.y = (f.x < min_dist).select(Eigen::ArrayXd::Ones(samples), (-(f.x - min_dist) / spread).exp());

    Eigen::VectorXd p(2);
    p << 1.0, 1.0;
    Eigen::LevenbergMarquardt<detail::CurveResidual> solver(f);
    solver.minimize(p);
    if (!std::isfinite(p(0)) || !std::isfinite(p(1)) || p(0) <= 0 || p(1) <= 0) {
        fail(ErrorKind::parameter, "curve fit diverged for min_dist = " + std::to_string(min_dist) +
            ", spread = " + std::to_string(spread));
    }
    return {p(0), p(1)};
}

struct SpectralOptions {
    std::size_t dense_limit = 1500;   ///< Components up to this size use a dense eigensolver.
    bool force_iterative = false;
    std::size_t lanczos_steps = 300;
    int max_restarts = 8;
    double tolerance = 1e-6;
    double jitter = 1e-4;
};

struct SpectralResult {
    std::vector<Point2> coords;
    bool fallback = false;
};

namespace detail {

/**
 * Connected components of a symmetric graph, each listed in ascending vertex
 * order; components are ordered by their smallest vertex.
 */
inline std::vector<std::vector<std::size_t>> components(const SparseGraph& g) {
    std::vector<std::size_t> label(g.n_rows, no_index);
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> queue;
    for (std::size_t s = 0; s < g.n_rows; ++s) {
        if (label[s] != no_index) {
            continue;
        }
        auto id = out.size();
        out.emplace_back();
        queue.assign(1, s);
        label[s] = id;
        while (!queue.empty()) {
            auto v = queue.back();
            queue.pop_back();
            out[id].push_back(v);
            for (auto w : g.row_columns(v)) {
                if (label[w] == no_index) {
                    label[w] = id;
                    queue.push_back(w);
                }
            }
        }
        std::sort(out[id].begin(), out[id].end());
    }
    return out;
}

/**
 * Normalized adjacency `D^-1/2 W D^-1/2` of one component, as a dense or
 * sparse operator over local indices.
 */
struct NormalizedAdjacency {
    std::vector<std::size_t> offsets, columns;
    std::vector<double> weights;
    Eigen::VectorXd sqrt_degree;

    NormalizedAdjacency(const SparseGraph& g, std::span<const std::size_t> members) {
        const std::size_t n = members.size();
        auto local = g.restrict_to(members);
        Eigen::VectorXd degree = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
        for (std::size_t r = 0; r < n; ++r) {
            for (double w : local.row_weights(r)) {
                degree(static_cast<Eigen::Index>(r)) += w;
            }
        }
        sqrt_degree = degree.cwiseSqrt();
        offsets = local.offsets;
        columns = local.columns;
        weights = local.weights;
        for (std::size_t r = 0; r < n; ++r) {
            for (auto e = offsets[r]; e < offsets[r + 1]; ++e) {
                weights[e] /= sqrt_degree(static_cast<Eigen::Index>(r)) * sqrt_degree(static_cast<Eigen::Index>(columns[e]));
            }
        }
    }

    Eigen::Index size() const { return sqrt_degree.size(); }

    void apply(const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
        y.setZero(x.size());
        for (Eigen::Index r = 0; r < x.size(); ++r) {
            double acc = 0;
            for (auto e = offsets[r]; e < offsets[r + 1]; ++e) {
                acc += weights[e] * x(static_cast<Eigen::Index>(columns[e]));
            }
            y(r) = acc;
        }
    }

    Eigen::MatrixXd dense() const {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(size(), size());
        for (Eigen::Index r = 0; r < size(); ++r) {
            for (auto e = offsets[r]; e < offsets[r + 1]; ++e) {
                m(r, static_cast<Eigen::Index>(columns[e])) = weights[e];
            }
        }
        return m;
    }
};

/**
 * Two leading eigenvectors of the normalized adjacency orthogonal to the
 * trivial one, i.e. the two smallest nontrivial eigenvectors of the
 * normalized Laplacian. Lanczos with full reorthogonalization and explicit
 * restarts. Returns false if the residuals do not reach the tolerance.
 */
inline bool lanczos_pair(const NormalizedAdjacency& op, Rng& rng, const SpectralOptions& opt, Eigen::MatrixXd& out) {
    const Eigen::Index n = op.size();
    const Eigen::VectorXd trivial = op.sqrt_degree.normalized();
    const Eigen::Index m = std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(opt.lanczos_steps));

    Eigen::VectorXd start(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        start(i) = uniform(rng, -1, 1);
    }

    Eigen::VectorXd tmp(n);
    for (int restart = 0; restart <= opt.max_restarts; ++restart) {
        Eigen::MatrixXd V(n, m);
        Eigen::VectorXd alpha(m), beta(m);
        Eigen::Index steps = 0;

        Eigen::VectorXd v = start - trivial * trivial.dot(start);
        v.normalize();
        for (Eigen::Index j = 0; j < m; ++j) {
            V.col(j) = v;
            op.apply(v, tmp);
            alpha(j) = v.dot(tmp);
            // Full reorthogonalization, twice, against the basis and the trivial vector.
            for (int pass = 0; pass < 2; ++pass) {
                tmp -= trivial * trivial.dot(tmp);
                tmp -= V.leftCols(j + 1) * (V.leftCols(j + 1).transpose() * tmp);
            }
            steps = j + 1;
            beta(j) = tmp.norm();
            if (beta(j) < 1e-12) {
                break;
            }
            v = tmp / beta(j);
        }
        if (steps < 2) {
            return false;
        }

        Eigen::MatrixXd T = Eigen::MatrixXd::Zero(steps, steps);
        for (Eigen::Index j = 0; j < steps; ++j) {
            T(j, j) = alpha(j);
            if (j + 1 < steps) {
                T(j, j + 1) = T(j + 1, j) = beta(j);
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(T);
        if (eig.info() != Eigen::Success) {
            return false;
        }
        Eigen::MatrixXd ritz = V.leftCols(steps) * eig.eigenvectors().rightCols(2);
        // Largest first.
        out.resize(n, 2);
        out.col(0) = ritz.col(1);
        out.col(1) = ritz.col(0);

        bool converged = true;
        for (int c = 0; c < 2; ++c) {
            double lambda = eig.eigenvalues()(steps - 1 - c);
            op.apply(out.col(c), tmp);
            if ((tmp - lambda * out.col(c)).norm() > opt.tolerance) {
                converged = false;
            }
        }
        if (converged || steps < m) {
            // A short run means the Krylov space became invariant: the Ritz pairs are exact.
            return true;
        }
        start = out.col(0) + out.col(1);
    }
    return false;
}

}

/**
 * Spectral layout from the two smallest nontrivial eigenvectors of the
 * symmetric normalized Laplacian, divided by the square root of the degree
 * and scaled into [-10, 10] with seeded jitter.
 * Disconnected components are laid out independently on a square grid inside
 * the same box. If an eigensolve fails, that component is drawn uniformly
 * from its box instead and `fallback` is set.
 */
inline SpectralResult spectral_init(const SparseGraph& sym, std::uint64_t seed, const SpectralOptions& opt = {}) {
    const std::size_t n = sym.n_rows;
    SpectralResult result;
    result.coords.assign(n, Point2{0, 0});
    if (n == 0) {
        return result;
    }

    auto comps = detail::components(sym);
    auto rng = make_rng(seed, "spectral");
    const std::size_t grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(comps.size()))));
    const double cell = 20.0 / static_cast<double>(grid);
    const double half = comps.size() == 1 ? 10.0 : 0.45 * cell;

    for (std::size_t c = 0; c < comps.size(); ++c) {
        const auto& members = comps[c];
        const std::size_t m = members.size();
        Eigen::MatrixXd local = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), 2);

        bool ok = true;
        if (m == 2) {
            local(0, 0) = -1;
            local(1, 0) = 1;
        } else if (m >= 3) {
            detail::NormalizedAdjacency op(sym, members);
            if (m <= opt.dense_limit && !opt.force_iterative) {
                // Eigenvalues ascend, so the trivial vector is last.
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(op.dense());
                ok = eig.info() == Eigen::Success;
                if (ok) {
                    local.col(0) = eig.eigenvectors().col(static_cast<Eigen::Index>(m) - 2);
                    local.col(1) = eig.eigenvectors().col(static_cast<Eigen::Index>(m) - 3);
                }
            } else {
                ok = detail::lanczos_pair(op, rng, opt, local);
            }
            if (ok) {
                // Back to the random-walk eigenvectors, which order a path monotonically.
                local.array().colwise() /= op.sqrt_degree.array();
            }
        }

        if (!ok || !local.allFinite()) {
            result.fallback = true;
            for (Eigen::Index i = 0; i < local.rows(); ++i) {
                local(i, 0) = uniform(rng, -1, 1);
                local(i, 1) = uniform(rng, -1, 1);
            }
        }

        double extent = local.cwiseAbs().maxCoeff();
        if (extent > 0) {
            local /= extent;
        }
        double cx = -10.0 + cell * (static_cast<double>(c % grid) + 0.5);
        double cy = -10.0 + cell * (static_cast<double>(c / grid) + 0.5);
        if (comps.size() == 1) {
            cx = cy = 0;
        }
        for (std::size_t i = 0; i < m; ++i) {
            auto& p = result.coords[members[i]];
            p[0] = cx + half * local(static_cast<Eigen::Index>(i), 0);
            p[1] = cy + half * local(static_cast<Eigen::Index>(i), 1);
        }
    }

    for (auto& p : result.coords) {
        p[0] += uniform(rng, -opt.jitter, opt.jitter);
        p[1] += uniform(rng, -opt.jitter, opt.jitter);
    }
    return result;
}

/**
 * @brief Optimizer settings. `a` and `b` are fitted from `min_dist` and
 * `spread` when left at zero.
 */
struct LayoutParams {
    std::size_t n_epochs = 0;        ///< 0 picks 500, or 200 above 10,000 points.
    double min_dist = 0.1;
    double spread = 1.0;
    double a = 0;
    double b = 0;
    std::size_t negative_sample_rate = 5;
    double learning_rate = 1.0;      ///< Decays linearly to zero over the epochs.
    std::uint64_t seed = 0;
    Execution execution;
};

inline std::size_t choose_epochs(std::size_t requested, std::size_t n_points) {
    if (requested) {
        return requested;
    }
    return n_points > 10000 ? 200 : 500;
}

using ProgressCallback = std::function<void(double)>;

namespace detail {

inline double clip_gradient(double g) {
    if (std::isnan(g)) {
        return 0;
    }
    return std::clamp(g, -4.0, 4.0);
}

template<bool Racy>
struct CoordStore {
    std::span<double> flat;

    double get(std::size_t p, int c) const {
        if constexpr (Racy) {
            return std::atomic_ref<double>(flat[2 * p + c]).load(std::memory_order_relaxed);
        } else {
            return flat[2 * p + c];
        }
    }

    void add(std::size_t p, int c, double delta) const {
        if constexpr (Racy) {
            std::atomic_ref<double> ref(flat[2 * p + c]);
            ref.store(ref.load(std::memory_order_relaxed) + delta, std::memory_order_relaxed);
        } else {
            flat[2 * p + c] += delta;
        }
    }
};

struct EdgeSchedule {
    std::vector<std::size_t> head, tail;
    std::vector<double> epochs_per_sample, next_sample, next_negative;
    double negatives_per_sample = 0;
};

template<bool Racy>
void run_edges(const EdgeSchedule& plan, std::size_t begin, std::size_t end, std::size_t epoch,
    std::size_t n_points, const CurveParams& curve, double alpha, double theta,
    const std::vector<std::uint8_t>& fixed, std::vector<double>& next_sample,
    std::vector<double>& next_negative, CoordStore<Racy> y, Rng& rng)
{
    const double a = curve.a, b = curve.b, e = static_cast<double>(epoch);
    auto move = [&](std::size_t p, int c, double delta) {
        if (fixed[p]) {
            if (theta == 0) {
                return;
            }
            delta *= theta;
        }
        y.add(p, c, delta);
    };

    for (std::size_t k = begin; k < end; ++k) {
        if (next_sample[k] > e) {
            continue;
        }
        const std::size_t i = plan.head[k], j = plan.tail[k];
        double dx = y.get(i, 0) - y.get(j, 0), dy = y.get(i, 1) - y.get(j, 1);
        double d2 = dx * dx + dy * dy;
        if (d2 > 0) {
            double coeff = -2.0 * a * b * std::pow(d2, b - 1.0) / (a * std::pow(d2, b) + 1.0);
            double gx = clip_gradient(coeff * dx) * alpha, gy = clip_gradient(coeff * dy) * alpha;
            move(i, 0, gx);
            move(i, 1, gy);
            move(j, 0, -gx);
            move(j, 1, -gy);
        }
        next_sample[k] += plan.epochs_per_sample[k];

        const double per_negative = plan.epochs_per_sample[k] / plan.negatives_per_sample;
        auto n_neg = static_cast<std::size_t>(std::max(0.0, (e - next_negative[k]) / per_negative));
        for (std::size_t s = 0; s < n_neg; ++s) {
            std::size_t other = uniform_index(rng, n_points);
            if (other == i) {
                continue;
            }
            double ox = y.get(i, 0) - y.get(other, 0), oy = y.get(i, 1) - y.get(other, 1);
            double o2 = ox * ox + oy * oy;
            double gx = 4.0, gy = 4.0;
            if (o2 > 0) {
                double coeff = 2.0 * b / ((0.001 + o2) * (a * std::pow(o2, b) + 1.0));
                gx = clip_gradient(coeff * ox);
                gy = clip_gradient(coeff * oy);
            }
            move(i, 0, gx * alpha);
            move(i, 1, gy * alpha);
        }
        next_negative[k] += static_cast<double>(n_neg) * per_negative;
    }
}

}

/**
 * Stochastic gradient layout of a symmetric graph.
 *
 * Every stored edge is sampled in proportion to its weight, with attraction
 * applied to both endpoints and repulsion from `negative_sample_rate` random
 * points per sample. Any displacement of a point whose `fixed_mask` entry is
 * set is multiplied by `theta`; with `theta == 0` those points are never
 * written. Gradient components are clamped to [-4, 4].
 *
 * Deterministic mode processes edges in storage order on one random stream.
 * Parallel mode splits edges into blocks whose threads update coordinates
 * without synchronization, so results vary between runs.
 */
inline Embedding optimize_layout(const SparseGraph& sym, std::vector<Point2> init, std::vector<std::uint8_t> fixed_mask,
    double theta, const LayoutParams& params, const ProgressCallback& progress = {})
{
    const std::size_t n = sym.n_rows;
    if (init.size() != n) {
        fail(ErrorKind::parameter, "initial layout size does not match the graph");
    }
    if (fixed_mask.empty()) {
        fixed_mask.assign(n, 0);
    } else if (fixed_mask.size() != n) {
        fail(ErrorKind::parameter, "fixed mask size does not match the graph");
    }
    if (!(theta >= 0 && theta <= 1)) {
        fail(ErrorKind::parameter, "theta must lie in [0, 1]");
    }
    for (const auto& p : init) {
        if (!std::isfinite(p[0]) || !std::isfinite(p[1])) {
            fail(ErrorKind::parameter, "initial layout contains non-finite coordinates");
        }
    }

    CurveParams curve{params.a, params.b};
    if (curve.a <= 0 || curve.b <= 0) {
        curve = fit_curve_params(params.min_dist, params.spread);
    }
    const std::size_t n_epochs = choose_epochs(params.n_epochs, n);

    detail::EdgeSchedule plan;
    double max_w = 0;
    for (double w : sym.weights) {
        max_w = std::max(max_w, w);
    }
    for (std::size_t r = 0; r < n; ++r) {
        auto cols = sym.row_columns(r);
        auto ws = sym.row_weights(r);
        for (std::size_t e = 0; e < cols.size(); ++e) {
            if (ws[e] <= 0 || cols[e] == r) {
                continue;
            }
            plan.head.push_back(r);
            plan.tail.push_back(cols[e]);
            plan.epochs_per_sample.push_back(max_w / ws[e]);
        }
    }
    plan.negatives_per_sample = static_cast<double>(std::max<std::size_t>(1, params.negative_sample_rate));
    auto next_sample = plan.epochs_per_sample;
    std::vector<double> next_negative(plan.epochs_per_sample.size());
    for (std::size_t k = 0; k < next_negative.size(); ++k) {
        next_negative[k] = plan.epochs_per_sample[k] / plan.negatives_per_sample;
    }

    std::vector<double> flat(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        flat[2 * i] = init[i][0];
        flat[2 * i + 1] = init[i][1];
    }

    const std::size_t nthreads = params.execution.threads();
    const std::size_t n_edges = plan.head.size();
    Rng serial_rng = make_rng(params.seed, "layout");

    for (std::size_t epoch = 0; epoch < n_epochs && n_edges && n > 1; ++epoch) {
        const double alpha = params.learning_rate * (1.0 - static_cast<double>(epoch) / static_cast<double>(n_epochs));
        if (nthreads <= 1) {
            detail::run_edges<false>(plan, 0, n_edges, epoch, n, curve, alpha, theta, fixed_mask,
                next_sample, next_negative, detail::CoordStore<false>{flat}, serial_rng);
        } else {
            parallel_blocks(n_edges, nthreads, [&](std::size_t begin, std::size_t end) {
                auto rng = make_rng(params.seed, "layout-parallel", epoch * 4096 + begin);
                detail::run_edges<true>(plan, begin, end, epoch, n, curve, alpha, theta, fixed_mask,
                    next_sample, next_negative, detail::CoordStore<true>{flat}, rng);
            });
        }
        if (progress) {
            progress(static_cast<double>(epoch + 1) / static_cast<double>(n_epochs));
        }
    }

    Embedding out;
    out.coords.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.coords[i] = {flat[2 * i], flat[2 * i + 1]};
    }
    out.fixed_mask = std::move(fixed_mask);
    out.theta = theta;
    out.point_ids.resize(n);
    std::iota(out.point_ids.begin(), out.point_ids.end(), 0);
    return out;
}

}

#endif
