#ifndef HUMAP_TEST_FIXTURES_HPP
#define HUMAP_TEST_FIXTURES_HPP

#include "humap/common.hpp"
#include "humap/data_matrix.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace humap::testing {

/// Isotropic Gaussian clusters with centers drawn uniformly in [-center_box, center_box].
inline DataMatrix make_blobs(std::size_t n, std::size_t dims, std::size_t clusters, std::uint64_t seed,
    double stddev = 1.0, double center_box = 10.0, std::vector<std::size_t>* labels = nullptr)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> box(-center_box, center_box);
    std::normal_distribution<double> noise(0.0, stddev);
    std::vector<double> centers(clusters * dims);
    for (auto& c : centers) {
        c = box(rng);
    }
    std::vector<double> values(n * dims);
    if (labels) {
        labels->resize(n);
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = i % clusters;
        if (labels) {
            (*labels)[i] = c;
        }
        for (std::size_t d = 0; d < dims; ++d) {
            values[i * dims + d] = centers[c * dims + d] + noise(rng);
        }
    }
    return DataMatrix(n, dims, std::move(values));
}

inline DataMatrix make_uniform(std::size_t n, std::size_t dims, std::uint64_t seed, double lo = 0, double hi = 1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> values(n * dims);
    for (auto& v : values) {
        v = u(rng);
    }
    return DataMatrix(n, dims, std::move(values));
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
            ("humap-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}

#endif
