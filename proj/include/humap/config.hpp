#ifndef HUMAP_CONFIG_HPP
#define HUMAP_CONFIG_HPP

#include "common.hpp"
#include "hierarchy.hpp"
#include "persistence.hpp"
#include "projection.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

/**
 * @file config.hpp
 *
 * @brief Run configuration shared by the command-line tools.
 */

namespace humap {

struct RunConfig {
    std::string input;
    std::string format = "auto";
    std::vector<std::size_t> level_sizes;
    std::size_t k = 15;
    std::size_t n_walks = 10;
    std::size_t walk_length = 10;
    std::size_t omega = 20;
    std::size_t upsilon = 30;
    double beta = 0;
    double theta = 0.01;
    std::uint64_t seed = 0;
    std::size_t epochs = 0;   ///< 0 picks the default by level size.
    std::string output;
    std::string threads = "deterministic";

    /// Checks every field that does not need the input data.
    void validate() const {
        if (level_sizes.empty()) {
            fail(ErrorKind::parameter, "at least one level size is required");
        }
        for (std::size_t i = 1; i < level_sizes.size(); ++i) {
            if (level_sizes[i] >= level_sizes[i - 1]) {
                fail(ErrorKind::parameter, "level sizes must be strictly decreasing");
            }
        }
        if (k < 1 || k >= level_sizes.back()) {
            fail(ErrorKind::parameter, "k must satisfy 1 <= k < smallest level size");
        }
        if (n_walks < 1) {
            fail(ErrorKind::parameter, "n-walks must be at least 1");
        }
        if (!(beta >= 0 && beta <= 1)) {
            fail(ErrorKind::parameter, "beta must lie in [0, 1]");
        }
        if (!(theta >= 0 && theta <= 1)) {
            fail(ErrorKind::parameter, "theta must lie in [0, 1]");
        }
        if (threads != "deterministic" && threads != "parallel") {
            fail(ErrorKind::parameter, "threads must be 'deterministic' or 'parallel'");
        }
        io::parse_format(format);
        if (input.empty()) {
            fail(ErrorKind::parameter, "an input path is required");
        }
        if (output.empty()) {
            fail(ErrorKind::parameter, "an output directory is required");
        }
    }

    HierarchyParams hierarchy_params() const {
        return {k, n_walks, walk_length, omega, upsilon, beta, theta, seed};
    }

    Execution execution() const {
        return {threads == "parallel" ? ExecutionMode::parallel : ExecutionMode::deterministic, 0};
    }

    ProjectionParams projection_params() const {
        ProjectionParams p;
        p.theta = theta;
        p.layout.n_epochs = epochs;
        p.layout.seed = seed;
        p.layout.execution = execution();
        return p;
    }

    nlohmann::ordered_json to_json() const {
        return {{"input", input}, {"format", format}, {"level_sizes", level_sizes}, {"k", k}, {"n_walks", n_walks},
            {"walk_length", walk_length}, {"omega", omega}, {"upsilon", upsilon}, {"beta", beta}, {"theta", theta},
            {"seed", seed}, {"epochs", epochs}, {"output", output}, {"threads", threads}};
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        try {
            c.input = j.at("input").get<std::string>();
            c.format = j.value("format", c.format);
            c.level_sizes = j.at("level_sizes").get<std::vector<std::size_t>>();
            c.k = j.value("k", c.k);
            c.n_walks = j.value("n_walks", c.n_walks);
            c.walk_length = j.value("walk_length", c.walk_length);
            c.omega = j.value("omega", c.omega);
            c.upsilon = j.value("upsilon", c.upsilon);
            c.beta = j.value("beta", c.beta);
            c.theta = j.value("theta", c.theta);
            c.seed = j.value("seed", c.seed);
            c.epochs = j.value("epochs", c.epochs);
            c.output = j.value("output", c.output);
            c.threads = j.value("threads", c.threads);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::parameter, std::string("malformed run configuration: ") + e.what());
        }
        return c;
    }

    bool operator==(const RunConfig&) const = default;
};

/// Identifies the settings that determine a full-level projection.
inline std::uint64_t projection_key(const ProjectionParams& p) {
    nlohmann::ordered_json j{{"theta", p.theta}, {"jitter", p.inherit_jitter}, {"epochs", p.layout.n_epochs},
        {"min_dist", p.layout.min_dist}, {"spread", p.layout.spread}, {"a", p.layout.a}, {"b", p.layout.b},
        {"negative_sample_rate", p.layout.negative_sample_rate}, {"learning_rate", p.layout.learning_rate},
        {"seed", p.layout.seed}, {"parallel", p.layout.execution.mode == ExecutionMode::parallel}};
    return fnv1a(j.dump());
}

/**
 * Projection settings of a hierarchy directory: taken from its
 * `run_config.json` when present, otherwise defaults with the hierarchy's
 * theta and seed.
 */
inline ProjectionParams projection_for(const std::filesystem::path& dir, const Hierarchy& h) {
    auto path = dir / "run_config.json";
    if (std::filesystem::exists(path)) {
        return RunConfig::from_json(io::read_json(path)).projection_params();
    }
    ProjectionParams p;
    p.theta = h.params.theta;
    p.layout.seed = h.params.seed;
    return p;
}

}

#endif
