#include "humap/fuzzy_graph.hpp"
#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace humap;
using humap::testing::make_uniform;

namespace {

// Sorts every other point by (squared distance, index) and keeps the first k.
std::vector<std::vector<std::size_t>> brute_force_knn(const DataMatrix& data, std::size_t k) {
    std::vector<std::vector<std::size_t>> out(data.n_points());
    for (std::size_t i = 0; i < data.n_points(); ++i) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < data.n_points(); ++j) {
            if (j == i) {
                continue;
            }
            double s = 0;
            for (std::size_t d = 0; d < data.n_dims(); ++d) {
                double diff = data(i, d) - data(j, d);
                s += diff * diff;
            }
            all.emplace_back(s, j);
        }
        std::sort(all.begin(), all.end());
        for (std::size_t r = 0; r < k; ++r) {
            out[i].push_back(all[r].second);
        }
    }
    return out;
}

}

TEST(BuildKnn, CollinearPoints) {
    DataMatrix data(3, 1, {0.0, 1.0, 10.0});
    auto g = build_knn(data, 1);
    EXPECT_EQ(g.indices, (std::vector<std::size_t>{1, 0, 1}));
    EXPECT_DOUBLE_EQ(g.distances[2], 9.0);
}

TEST(BuildKnn, FirstDistanceIsRowMinimum) {
    auto data = make_uniform(60, 3, 5);
    auto g = build_knn(data, 1);
    for (std::size_t i = 0; i < data.n_points(); ++i) {
        double best = INFINITY;
        for (std::size_t j = 0; j < data.n_points(); ++j) {
            if (j != i) {
                best = std::min(best, std::sqrt(squared_distance(data.row(i), data.row(j))));
            }
        }
        EXPECT_DOUBLE_EQ(g.row_distances(i)[0], best);
    }
}

TEST(BuildKnn, MatchesExhaustiveSearch) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto data = make_uniform(100 + 80 * seed, 5, seed);
        auto g = build_knn(data, 10);
        auto oracle = brute_force_knn(data, 10);
        for (std::size_t i = 0; i < data.n_points(); ++i) {
            auto row = g.row_indices(i);
            ASSERT_EQ(std::vector<std::size_t>(row.begin(), row.end()), oracle[i]) << "row " << i;
            ASSERT_TRUE(std::is_sorted(g.row_distances(i).begin(), g.row_distances(i).end()));
        }
    }
}

TEST(BuildKnn, TiesGoToLowerIndex) {
    // Point 0 is equidistant from 1, 2 and 3.
    DataMatrix data(4, 2, {0, 0, 1, 0, 0, 1, -1, 0});
    auto g = build_knn(data, 2);
    EXPECT_EQ(g.row_indices(0)[0], 1u);
    EXPECT_EQ(g.row_indices(0)[1], 2u);
}

TEST(BuildKnn, ParallelMatchesSerial) {
    auto data = make_uniform(300, 4, 9);
    auto serial = build_knn(data, 7);
    auto parallel = build_knn(data, 7, Execution{ExecutionMode::parallel, 4});
    EXPECT_EQ(serial, parallel);
}

TEST(BuildKnn, RejectsBadK) {
    auto data = make_uniform(5, 2, 1);
    try {
        build_knn(data, 5);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::parameter);
    }
    EXPECT_THROW(build_knn(data, 0), Error);
}

TEST(DataMatrixInput, NanIsInputError) {
    try {
        DataMatrix bad(2, 1, {0.0, std::nan("")});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::input);
    }
}

TEST(SmoothKnnRow, NearestNeighborHasUnitStrength) {
    std::vector<double> d{0.5, 0.7, 1.3, 2.0};
    auto kr = smooth_knn_row(d, 4);
    EXPECT_EQ(kr.rho, 0.5);
    EXPECT_EQ(kernel_strength(0.5, kr.rho, kr.sigma), 1.0);
    EXPECT_EQ(kernel_strength(0.5, kr.rho, 1e-300), 1.0);
}

TEST(SmoothKnnRow, ConstantRowRunsToCap) {
    std::vector<double> d(6, 2.5);
    auto kr = smooth_knn_row(d, 6);
    EXPECT_FALSE(kr.converged);
    EXPECT_TRUE(std::isfinite(kr.sigma));
    EXPECT_GT(kr.sigma, 0);
    for (double x : d) {
        EXPECT_EQ(kernel_strength(x, kr.rho, kr.sigma), 1.0);
    }
}

TEST(SmoothKnnRow, MatchesGridScan) {
    std::vector<double> d{1.0, 2.0, 3.0, 4.0};
    // Scan sigma over 10^6 log-spaced samples in [1e-4, 1e4] for the smallest |2^sum - k|.
    double best_sigma = 0, best_residual = INFINITY;
    const int samples = 1000000;
    for (int s = 0; s < samples; ++s) {
        double sigma = std::pow(10.0, -4.0 + 8.0 * s / (samples - 1));
        double total = 0;
        for (double x : d) {
            total += std::exp(-(x - 1.0) / sigma);
        }
        double residual = std::abs(std::exp2(total) - 4.0);
        if (residual < best_residual) {
            best_residual = residual;
            best_sigma = sigma;
        }
    }
    EXPECT_NEAR(best_sigma, 1.6410288458827125, 1e-9);

    auto kr = smooth_knn_row(d, 4);
    EXPECT_TRUE(kr.converged);
    EXPECT_NEAR(kr.sigma, best_sigma, 1e-2 * best_sigma);
}

TEST(SmoothKnnRow, ResidualWithinTolerance) {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t k = 2 + trial % 30;
        std::vector<double> d(k);
        for (auto& x : d) {
            x = uniform(rng, 0, 10);
        }
        std::sort(d.begin(), d.end());
        auto kr = smooth_knn_row(d, k);
        ASSERT_TRUE(kr.converged);
        double total = 0;
        for (double x : d) {
            total += kernel_strength(x, kr.rho, kr.sigma);
        }
        EXPECT_LE(std::abs(std::exp2(total) - double(k)), 1e-3 * double(k));
    }
}

TEST(SmoothKnnRow, SigmaScalesWithDistances) {
    std::vector<double> d{0.3, 0.9, 1.1, 1.7, 2.2, 3.0};
    auto base = smooth_knn_row(d, d.size());
    for (double c : {2.0, 7.5, 40.0}) {
        std::vector<double> scaled(d);
        for (auto& x : scaled) {
            x *= c;
        }
        auto kr = smooth_knn_row(scaled, d.size());
        EXPECT_NEAR(kr.sigma / base.sigma, c, 2e-2 * c);
    }
}

TEST(SmoothKnnRow, EmptyRowIsInputError) {
    try {
        smooth_knn_row(std::vector<double>{}, 3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::input);
    }
}

TEST(MembershipStrengths, UnitExponent) {
    EXPECT_NEAR(kernel_strength(1.5, 0.5, 1.0), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(kernel_strength(0.5 + 0.37, 0.5, 0.37), 0.36787944117144233, 1e-12);
}

TEST(MembershipStrengths, MatchesScalarEvaluation) {
    DataMatrix data(5, 2, {0, 0, 1, 0, 0, 2, 3, 1, -1, -1});
    auto g = build_knn(data, 3);
    auto kernels = compute_kernels(g);
    auto s = membership_strengths(g, kernels);
    for (std::size_t i = 0; i < 5; ++i) {
        double rho = INFINITY;
        for (std::size_t j = 0; j < 5; ++j) {
            if (j != i && s.contains(i, j)) {
                rho = std::min(rho, std::hypot(data(i, 0) - data(j, 0), data(i, 1) - data(j, 1)));
            }
        }
        for (auto j : g.row_indices(i)) {
            double d = std::hypot(data(i, 0) - data(j, 0), data(i, 1) - data(j, 1));
            double expected = std::exp(-(d - rho) / kernels[i].sigma);
            EXPECT_NEAR(s.at(i, j), expected, 1e-12);
            EXPECT_GT(s.at(i, j), 0);
            EXPECT_LE(s.at(i, j), 1);
        }
    }
}

TEST(MembershipStrengths, NearestNeighborIsOne) {
    auto data = make_uniform(200, 6, 17);
    auto g = build_knn(data, 15);
    auto s = membership_strengths(g, compute_kernels(g));
    for (std::size_t i = 0; i < g.size(); ++i) {
        EXPECT_EQ(s.at(i, g.row_indices(i)[0]), 1.0);
    }
}

TEST(MembershipStrengths, DuplicatePointsGetFullStrength) {
    DataMatrix data(4, 1, {0, 0, 0, 5});
    auto g = build_knn(data, 2);
    auto kernels = compute_kernels(g);
    EXPECT_EQ(kernels[0].rho, 0.0);
    auto s = membership_strengths(g, kernels);
    EXPECT_EQ(s.at(0, 1), 1.0);
    EXPECT_EQ(s.at(0, 2), 1.0);
}

TEST(TransitionMatrix, EqualStrengths) {
    auto s = SparseGraph::from_rows(1, 5, {{{1, 0.4}, {2, 0.4}, {3, 0.4}, {4, 0.4}}});
    auto t = transition_matrix(s);
    for (double w : t.weights) {
        EXPECT_DOUBLE_EQ(w, 0.25);
    }
}

TEST(TransitionMatrix, DirectNormalization) {
    auto s = SparseGraph::from_rows(1, 4, {{{1, 1.0}, {2, 1.0}, {3, 2.0}}});
    auto t = transition_matrix(s);
    EXPECT_EQ(t.weights, (std::vector<double>{0.25, 0.25, 0.5}));
}

TEST(TransitionMatrix, RowsSumToOne) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto data = make_uniform(80, 3, seed);
        auto g = build_knn(data, 1 + seed % 12);
        auto t = transition_matrix(membership_strengths(g, compute_kernels(g)));
        for (std::size_t r = 0; r < t.n_rows; ++r) {
            auto w = t.row_weights(r);
            EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-9);
            for (double x : w) {
                EXPECT_GE(x, 0);
            }
        }
    }
}

TEST(TransitionMatrix, EmptyRowIsDegenerate) {
    auto s = SparseGraph::from_rows(2, 2, {{{1, 1.0}}, {}});
    try {
        transition_matrix(s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::degenerate);
    }
}
