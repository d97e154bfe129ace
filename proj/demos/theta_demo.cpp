// Builds a three-level hierarchy on Gaussian blobs and compares how much the
// layout shifts between levels for a few values of theta.
//
//   theta_demo [n_points] [seed]

#include "humap/humap.hpp"

#include <cstdio>
#include <cstdlib>
#include <random>

namespace {

humap::DataMatrix gaussian_blobs(std::size_t n, std::size_t dims, std::size_t clusters, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> centre(-10.0, 10.0);
    std::vector<double> centres(clusters * dims);
    for (auto& c : centres) {
        c = centre(gen);
    }
    std::vector<double> values(n * dims);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < dims; ++d) {
            values[i * dims + d] = centres[(i % clusters) * dims + d] + noise(gen);
        }
    }
    return humap::DataMatrix(n, dims, std::move(values));
}

}

int main(int argc, char** argv) {
    std::size_t n = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 3000;
    std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 0;
    if (n < 100) {
        std::fprintf(stderr, "need at least 100 points\n");
        return 2;
    }

    auto data = gaussian_blobs(n, 20, 4, seed);
    std::vector<std::size_t> sizes{n, n / 5, n / 20};
    humap::HierarchyParams hp;
    hp.seed = seed;
    auto h = humap::build_hierarchy(data, sizes, hp, {humap::ExecutionMode::parallel, 0});
    std::printf("levels:");
    for (const auto& level : h.levels) {
        std::printf(" %zu", level.size());
    }
    std::printf("\n\n%-8s %-12s %-12s %s\n", "theta", "disp(0,1)", "disp(1,2)", "NP@15 level 0");

    for (double theta : {0.0, 0.01, 0.1, 1.0}) {
        humap::ProjectionParams pp;
        pp.theta = theta;
        pp.layout.seed = seed;
        humap::HierarchyProjector proj(h, pp);
        for (std::size_t l = h.n_levels(); l-- > 0;) {
            proj.project_level(l);
        }
        double d01 = humap::level_disparity(h, proj.embedding(0), proj.embedding(1));
        double d12 = humap::level_disparity(h, proj.embedding(1), proj.embedding(2));
        auto np = humap::neighborhood_preservation_curve(data, proj.embedding(0).coords, 15);
        std::printf("%-8g %-12.5f %-12.5f %.4f\n", theta, d01, d12, np.back());
    }
}
