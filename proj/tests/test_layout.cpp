#include "humap/fuzzy_graph.hpp"
#include "humap/layout.hpp"
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>

using namespace humap;
using humap::testing::make_blobs;
using humap::testing::make_uniform;

namespace {

SparseGraph strengths_of(const DataMatrix& data, std::size_t k) {
    auto g = build_knn(data, k);
    return membership_strengths(g, compute_kernels(g));
}

SparseGraph path_graph(std::size_t n) {
    std::vector<std::vector<SparseGraph::Entry>> rows(n);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        rows[i].emplace_back(i + 1, 1.0);
        rows[i + 1].emplace_back(i, 1.0);
    }
    return SparseGraph::from_rows(n, n, std::move(rows));
}

double curve(const CurveParams& c, double d) {
    return 1.0 / (1.0 + c.a * std::pow(d, 2 * c.b));
}

LayoutParams quick_params(std::size_t epochs = 50) {
    LayoutParams p;
    p.n_epochs = epochs;
    p.seed = 3;
    return p;
}

}

TEST(Symmetrize, HandExamples) {
    auto s = SparseGraph::from_rows(3, 3, {{{1, 1.0}, {2, 0.5}}, {}, {{0, 0.5}}});
    auto sym = symmetrize(s);
    EXPECT_EQ(sym.at(0, 1), 1.0);
    EXPECT_EQ(sym.at(1, 0), 1.0);
    EXPECT_EQ(sym.at(0, 2), 0.75);
    EXPECT_FALSE(sym.contains(1, 2));
    EXPECT_FALSE(sym.contains(2, 1));
}

TEST(Symmetrize, ExactSymmetryAndBounds) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto s = strengths_of(make_uniform(150, 4, seed), 3 + seed);
        auto sym = symmetrize(s);
        EXPECT_EQ(sym, sym.transpose());
        for (std::size_t r = 0; r < sym.n_rows; ++r) {
            auto cols = sym.row_columns(r);
            auto ws = sym.row_weights(r);
            for (std::size_t e = 0; e < cols.size(); ++e) {
                double a = s.at(r, cols[e]), b = s.at(cols[e], r);
                EXPECT_LE(ws[e], 1.0);
                EXPECT_GE(ws[e], std::max(a, b));
                EXPECT_NEAR(ws[e], a + b - a * b, 1e-12);
            }
        }
    }
}

TEST(FitCurveParams, DefaultsMatchReferenceFit) {
    LayoutParams defaults;
    EXPECT_EQ(defaults.min_dist, 0.1);
    EXPECT_EQ(defaults.spread, 1.0);
    auto c = fit_curve_params();
    // Reference least-squares fit on the same 300-point grid.
    EXPECT_NEAR(c.a, 1.5769420582521114, 1e-4);
    EXPECT_NEAR(c.b, 0.8950617804316287, 1e-4);
    EXPECT_NEAR(curve(c, 0.1), 1.0, 0.08);
    EXPECT_NEAR(curve(c, 3.0), std::exp(-2.9), 0.08);
}

TEST(FitCurveParams, OtherSettings) {
    auto c = fit_curve_params(0.5, 1.0);
    EXPECT_NEAR(c.a, 0.5830177719869769, 1e-4);
    EXPECT_NEAR(c.b, 1.3341894298378507, 1e-4);
    for (auto [md, sp] : {std::pair{0.01, 1.0}, {0.25, 2.0}, {0.5, 1.0}}) {
        auto f = fit_curve_params(md, sp);
        EXPECT_NEAR(curve(f, md), 1.0, 0.1);
        EXPECT_NEAR(curve(f, 3 * sp), std::exp(-(3 * sp - md) / sp), 0.08);
    }
}

TEST(FitCurveParams, RejectsBadSettings) {
    EXPECT_THROW(fit_curve_params(0.0, 1.0), Error);
    EXPECT_THROW(fit_curve_params(2.0, 1.0), Error);
}

TEST(SpectralInit, TwoPoints) {
    auto r = spectral_init(path_graph(2), 1);
    EXPECT_FALSE(r.fallback);
    ASSERT_EQ(r.coords.size(), 2u);
    EXPECT_TRUE(std::isfinite(r.coords[0][0]) && std::isfinite(r.coords[1][1]));
    EXPECT_NE(r.coords[0], r.coords[1]);
}

TEST(SpectralInit, PathFollowsFiedlerOrder) {
    const std::size_t n = 10;
    auto g = path_graph(n);
    auto r = spectral_init(g, 7);
    EXPECT_FALSE(r.fallback);

    // Dense oracle: second-smallest eigenvector of the normalized Laplacian.
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        w(i, i + 1) = w(i + 1, i) = 1;
    }
    Eigen::VectorXd dinv = w.rowwise().sum().cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(n, n) - dinv.asDiagonal() * w * dinv.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lap);
    Eigen::VectorXd fiedler = dinv.asDiagonal() * eig.eigenvectors().col(1);

    bool inc = true, dec = true, oracle_inc = true, oracle_dec = true;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        inc = inc && r.coords[i + 1][0] > r.coords[i][0];
        dec = dec && r.coords[i + 1][0] < r.coords[i][0];
        oracle_inc = oracle_inc && fiedler(i + 1) > fiedler(i);
        oracle_dec = oracle_dec && fiedler(i + 1) < fiedler(i);
    }
    EXPECT_TRUE(oracle_inc || oracle_dec);
    EXPECT_TRUE(inc || dec);
    // Same direction as the oracle up to sign and scale.
    Eigen::VectorXd x(n);
    for (std::size_t i = 0; i < n; ++i) {
        x(i) = r.coords[i][0];
    }
    double cosine = std::abs(x.normalized().dot(fiedler.normalized()));
    EXPECT_GT(cosine, 0.999);
}

TEST(SpectralInit, BoxAndJitter) {
    auto sym = symmetrize(strengths_of(make_blobs(300, 5, 1, 2), 10));
    auto r = spectral_init(sym, 1);
    double lo = INFINITY, hi = -INFINITY;
    for (auto& p : r.coords) {
        for (double v : p) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    EXPECT_LE(hi, 10 + 1e-4);
    EXPECT_GE(lo, -10 - 1e-4);
    EXPECT_GT(hi, 9.9);
    auto r2 = spectral_init(sym, 2);
    double moved = 0;
    for (std::size_t i = 0; i < r.coords.size(); ++i) {
        moved = std::max(moved, std::abs(r.coords[i][0] - r2.coords[i][0]));
    }
    EXPECT_GT(moved, 0);
    EXPECT_LE(moved, 2e-4);
}

TEST(SpectralInit, DisconnectedTrianglesGetDistinctCells) {
    std::vector<std::vector<SparseGraph::Entry>> rows(6);
    for (std::size_t base : {0u, 3u}) {
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                if (i != j) {
                    rows[base + i].emplace_back(base + j, 1.0);
                }
            }
        }
    }
    auto r = spectral_init(SparseGraph::from_rows(6, 6, std::move(rows)), 4);
    auto centroid = [&](std::size_t base) {
        Point2 c{0, 0};
        for (std::size_t i = 0; i < 3; ++i) {
            c[0] += r.coords[base + i][0] / 3;
            c[1] += r.coords[base + i][1] / 3;
        }
        return c;
    };
    auto a = centroid(0), b = centroid(3);
    EXPECT_GT(std::hypot(a[0] - b[0], a[1] - b[1]), 5.0);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_LT(std::hypot(r.coords[i][0] - a[0], r.coords[i][1] - a[1]), 5.0);
        EXPECT_LT(std::hypot(r.coords[3 + i][0] - b[0], r.coords[3 + i][1] - b[1]), 5.0);
    }
}

TEST(SpectralInit, IterativeSolverMatchesDense) {
    auto sym = symmetrize(strengths_of(make_blobs(400, 6, 1, 9), 12));
    auto dense = spectral_init(sym, 5);
    SpectralOptions opt;
    opt.force_iterative = true;
    auto iter = spectral_init(sym, 5, opt);
    EXPECT_FALSE(iter.fallback);
    // Eigenvectors agree up to sign, so compare absolute coordinates per axis.
    for (int axis = 0; axis < 2; ++axis) {
        Eigen::VectorXd x(sym.n_rows), y(sym.n_rows);
        for (std::size_t i = 0; i < sym.n_rows; ++i) {
            x(i) = dense.coords[i][axis];
            y(i) = iter.coords[i][axis];
        }
        EXPECT_GT(std::abs(x.normalized().dot(y.normalized())), 0.99) << "axis " << axis;
    }
}

TEST(OptimizeLayout, ThetaZeroFreezesFixedPoints) {
    auto sym = symmetrize(strengths_of(make_blobs(200, 4, 2, 1), 10));
    auto init = spectral_init(sym, 1).coords;
    std::vector<std::uint8_t> mask(200, 0);
    for (std::size_t i = 0; i < 200; i += 3) {
        mask[i] = 1;
    }
    auto emb = optimize_layout(sym, init, mask, 0.0, quick_params(200));
    std::size_t moved_free = 0;
    for (std::size_t i = 0; i < 200; ++i) {
        if (mask[i]) {
            EXPECT_EQ(std::memcmp(&emb.coords[i], &init[i], sizeof(Point2)), 0) << i;
        } else {
            moved_free += emb.coords[i] != init[i];
        }
    }
    EXPECT_GT(moved_free, 100u);
    EXPECT_EQ(emb.theta, 0.0);
    EXPECT_EQ(emb.fixed_mask, mask);
}

TEST(OptimizeLayout, FixedDisplacementScaledByTheta) {
    // One attractive update on a single edge whose head is fixed, negatives disabled.
    detail::EdgeSchedule plan;
    plan.head = {0};
    plan.tail = {1};
    plan.epochs_per_sample = {1.0};
    plan.negatives_per_sample = 5;
    const std::vector<std::uint8_t> fixed{1, 0};
    auto curve = fit_curve_params();
    auto step = [&](double theta) {
        std::vector<double> flat{0.0, 0.0, 1.5, -0.5};
        std::vector<double> next_sample{0.0}, next_negative{1e9};
        Rng rng(1);
        detail::run_edges<false>(plan, 0, 1, 1, 2, curve, 0.5, theta, fixed, next_sample, next_negative,
            detail::CoordStore<false>{flat}, rng);
        return flat;
    };
    auto full = step(1.0), part = step(0.25);
    EXPECT_NE(full[0], 0.0);
    EXPECT_DOUBLE_EQ(part[0], 0.25 * full[0]);
    EXPECT_DOUBLE_EQ(part[1], 0.25 * full[1]);
    EXPECT_EQ(part[2], full[2]);
    EXPECT_EQ(part[3], full[3]);
    auto none = step(0.0);
    EXPECT_EQ(none[0], 0.0);
    EXPECT_EQ(none[1], 0.0);
}

TEST(OptimizeLayout, MaskIrrelevantWithThetaOne) {
    auto sym = symmetrize(strengths_of(make_uniform(120, 3, 5), 8));
    auto init = spectral_init(sym, 2).coords;
    auto plain = optimize_layout(sym, init, {}, 1.0, quick_params());
    auto zeros = optimize_layout(sym, init, std::vector<std::uint8_t>(120, 0), 1.0, quick_params());
    auto ones = optimize_layout(sym, init, std::vector<std::uint8_t>(120, 1), 1.0, quick_params());
    EXPECT_EQ(plain.coords, zeros.coords);
    EXPECT_EQ(plain.coords, ones.coords);
}

TEST(OptimizeLayout, DeterministicAndFinite) {
    auto sym = symmetrize(strengths_of(make_blobs(300, 8, 3, 4), 15));
    auto init = spectral_init(sym, 2).coords;
    auto a = optimize_layout(sym, init, {}, 0.01, quick_params(100));
    auto b = optimize_layout(sym, init, {}, 0.01, quick_params(100));
    EXPECT_EQ(a, b);
    for (auto& p : a.coords) {
        EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
    }
    auto other = quick_params(100);
    other.seed = 4;
    EXPECT_NE(a.coords, optimize_layout(sym, init, {}, 0.01, other).coords);
}

TEST(OptimizeLayout, ParallelModeStaysFiniteAndFrozen) {
    auto sym = symmetrize(strengths_of(make_blobs(300, 8, 3, 4), 15));
    auto init = spectral_init(sym, 2).coords;
    std::vector<std::uint8_t> mask(300, 0);
    mask[0] = mask[10] = 1;
    auto p = quick_params(100);
    p.execution = Execution{ExecutionMode::parallel, 4};
    auto emb = optimize_layout(sym, init, mask, 0.0, p);
    EXPECT_EQ(emb.coords[0], init[0]);
    EXPECT_EQ(emb.coords[10], init[10]);
    for (auto& c : emb.coords) {
        EXPECT_TRUE(std::isfinite(c[0]) && std::isfinite(c[1]));
    }
}

TEST(OptimizeLayout, CoincidentStartStaysFinite) {
    auto sym = symmetrize(strengths_of(make_uniform(50, 2, 1), 5));
    std::vector<Point2> init(50, Point2{0, 0});
    auto emb = optimize_layout(sym, init, {}, 1.0, quick_params(30));
    for (auto& c : emb.coords) {
        EXPECT_TRUE(std::isfinite(c[0]) && std::isfinite(c[1]));
        EXPECT_LE(std::abs(c[0]), 4.0 * 5 * 30 * 50);
    }
}

TEST(OptimizeLayout, SeparatesClusters) {
    std::vector<std::size_t> labels;
    auto data = make_blobs(300, 10, 3, 6, 1.0, 10.0, &labels);
    auto sym = symmetrize(strengths_of(data, 15));
    auto emb = optimize_layout(sym, spectral_init(sym, 1).coords, {}, 1.0, quick_params(200));
    // Nearest layout neighbor shares the cluster label for nearly every point.
    std::size_t agree = 0;
    for (std::size_t i = 0; i < 300; ++i) {
        double best = INFINITY;
        std::size_t arg = 0;
        for (std::size_t j = 0; j < 300; ++j) {
            double d = std::hypot(emb.coords[i][0] - emb.coords[j][0], emb.coords[i][1] - emb.coords[j][1]);
            if (j != i && d < best) {
                best = d;
                arg = j;
            }
        }
        agree += labels[arg] == labels[i];
    }
    EXPECT_GE(agree, 295u);
}

TEST(OptimizeLayout, EpochDefaults) {
    EXPECT_EQ(choose_epochs(0, 10000), 500u);
    EXPECT_EQ(choose_epochs(0, 10001), 200u);
    EXPECT_EQ(choose_epochs(7, 10), 7u);
    LayoutParams p;
    EXPECT_EQ(p.negative_sample_rate, 5u);
    EXPECT_EQ(p.learning_rate, 1.0);
}

TEST(OptimizeLayout, RejectsBadInput) {
    auto sym = path_graph(3);
    std::vector<Point2> init(3, Point2{0, 0});
    EXPECT_THROW(optimize_layout(sym, init, {}, 1.5, quick_params()), Error);
    init[1][0] = NAN;
    EXPECT_THROW(optimize_layout(sym, init, {}, 0.5, quick_params()), Error);
    EXPECT_THROW(optimize_layout(sym, std::vector<Point2>(2), {}, 0.5, quick_params()), Error);
}

TEST(ClipGradient, Clamps) {
    EXPECT_EQ(detail::clip_gradient(10.0), 4.0);
    EXPECT_EQ(detail::clip_gradient(-1e300), -4.0);
    EXPECT_EQ(detail::clip_gradient(NAN), 0.0);
    EXPECT_EQ(detail::clip_gradient(0.5), 0.5);
}
