#ifndef HUMAP_CLI_HPP
#define HUMAP_CLI_HPP

#include "common.hpp"
#include "config.hpp"
#include "data_matrix.hpp"
#include "explorer.hpp"
#include "hierarchy.hpp"
#include "metrics.hpp"
#include "persistence.hpp"
#include "projection.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <iostream>
#include <sstream>

/**
 * @file cli.hpp
 *
 * @brief The `humap` command line: fit, project, drill, eval and serve.
 *
 * Results go to stdout as one JSON line per command. Failures go to stderr as
 * JSON lines with `code` and `message`, with exit status 2 for invalid
 * parameters or input, 3 for file system errors and 4 for anything else.
 */

namespace humap::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_validation = 2;
inline constexpr int exit_io = 3;
inline constexpr int exit_internal = 4;

inline int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::io: return exit_io;
        case ErrorKind::internal: return exit_internal;
        default: return exit_validation;
    }
}

inline void report_error(std::ostream& err, std::string_view code, std::string_view message) {
    err << nlohmann::json{{"code", code}, {"message", message}}.dump() << '\n';
}

/**
 * @brief Exclusive lock on a hierarchy directory, held through a
 * `.humap.lock` file containing the owner's pid. Locks left behind by dead
 * processes are taken over.
 */
class DirectoryLock {
public:
    explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".humap.lock") {
        for (int attempt = 0; attempt < 2; ++attempt) {
            int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
            if (fd >= 0) {
                auto pid = std::to_string(::getpid());
                [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
                ::close(fd);
                return;
            }
            if (errno != EEXIST) {
                fail(ErrorKind::io, "cannot create lock file " + path_.string());
            }
            if (!owner_is_dead()) {
                break;
            }
            std::error_code ec;
            std::filesystem::remove(path_, ec);
        }
        fail(ErrorKind::io, path_.parent_path().string() + " is locked by another humap process");
    }

    ~DirectoryLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }

    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    bool owner_is_dead() const {
        std::ifstream in(path_);
        long pid = 0;
        if (!(in >> pid) || pid <= 0) {
            return false;
        }
        return ::kill(static_cast<pid_t>(pid), 0) != 0 && errno == ESRCH;
    }

    std::filesystem::path path_;
};

inline double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline std::vector<std::size_t> read_selection(const std::filesystem::path& path) {
    auto in = io::open_input(path);
    std::vector<std::size_t> ids;
    std::string token;
    char c;
    auto flush = [&] {
        if (token.empty()) {
            return;
        }
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
        if (ec != std::errc() || ptr != token.data() + token.size()) {
            fail(ErrorKind::input, "selection file holds a non-integer id '" + token + "'");
        }
        ids.push_back(v);
        token.clear();
    };
    while (in.get(c)) {
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || std::isalpha(static_cast<unsigned char>(c))) {
            token += c;
        } else {
            flush();
        }
    }
    flush();
    if (ids.empty()) {
        fail(ErrorKind::parameter, "selection file " + path.string() + " holds no ids");
    }
    return ids;
}

/// Projection state of one hierarchy directory with the on-disk embedding cache.
struct Workspace {
    std::filesystem::path dir;
    Hierarchy hierarchy;
    ProjectionParams params;
    std::uint64_t key = 0;
    std::unique_ptr<HierarchyProjector> projector;

    Workspace(std::filesystem::path d, std::optional<std::size_t> epochs, std::optional<std::string> threads)
        : dir(std::move(d))
    {
        hierarchy = io::load_hierarchy(dir);
        params = projection_for(dir, hierarchy);
        if (epochs) {
            params.layout.n_epochs = *epochs;
        }
        if (threads) {
            if (*threads != "deterministic" && *threads != "parallel") {
                fail(ErrorKind::parameter, "threads must be 'deterministic' or 'parallel'");
            }
            params.layout.execution.mode = *threads == "parallel" ? ExecutionMode::parallel : ExecutionMode::deterministic;
        }
        key = projection_key(params);
        projector = std::make_unique<HierarchyProjector>(hierarchy, params);
    }

    void check_level(std::size_t level) const {
        if (level >= hierarchy.n_levels()) {
            fail(ErrorKind::parameter, "unknown level " + std::to_string(level) + " (hierarchy has " +
                std::to_string(hierarchy.n_levels()) + " levels)");
        }
    }

    /// Projects `level` and every missing level above it, top-down. Returns the levels computed.
    std::vector<std::size_t> ensure(std::size_t level) {
        check_level(level);
        std::vector<std::size_t> computed;
        for (std::size_t l = hierarchy.top() + 1; l-- > level;) {
            if (projector->is_projected(l)) {
                continue;
            }
            if (auto cached = io::load_cached_embedding(dir, l, key)) {
                projector->set_embedding(l, std::move(*cached));
                continue;
            }
            io::save_cached_embedding(dir, projector->project_level(l), key);
            computed.push_back(l);
        }
        return computed;
    }
};

struct Options {
    RunConfig fit;
    std::string hierarchy;
    std::size_t level = 0;
    std::string selection;
    std::string output;
    std::string coords_bin;
    std::optional<std::size_t> epochs;
    std::optional<std::string> threads;
    std::vector<std::size_t> levels;
    std::string metrics = "np,rank,demap";
    std::size_t k_max = 30;
    std::string input;
    std::string csv;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string ui_dir;
};

inline nlohmann::ordered_json cmd_fit(const RunConfig& cfg) {
    cfg.validate();
    auto t0 = std::chrono::steady_clock::now();
    auto data = io::read_matrix(cfg.input, io::parse_format(cfg.format));
    validate_level_sizes(cfg.level_sizes, data.n_points(), cfg.k);
    double load = seconds_since(t0);

    std::filesystem::path dir(cfg.output);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
    }
    DirectoryLock lock(dir);

    nlohmann::ordered_json stages = nlohmann::ordered_json::array();
    auto t1 = std::chrono::steady_clock::now();
    auto h = build_hierarchy(data, cfg.level_sizes, cfg.hierarchy_params(), cfg.execution(),
        [&](std::string_view stage, std::size_t level, double s) {
            stages.push_back({{"stage", stage}, {"level", level}, {"seconds", s}});
        });
    double build = seconds_since(t1);

    auto t2 = std::chrono::steady_clock::now();
    std::filesystem::remove_all(dir / "embeddings", ec);
    io::save_hierarchy(dir, h);
    io::write_text(dir / "run_config.json", cfg.to_json().dump(2) + "\n");
    double save = seconds_since(t2);

    nlohmann::ordered_json out;
    out["command"] = "fit";
    out["output"] = dir.string();
    out["level_sizes"] = h.level_sizes();
    out["seconds"] = {{"load", load}, {"build", build}, {"save", save}};
    out["stages"] = std::move(stages);
    return out;
}

inline nlohmann::ordered_json cmd_project(const Options& o) {
    Workspace ws(o.hierarchy, o.epochs, o.threads);
    ws.check_level(o.level);
    DirectoryLock lock(ws.dir);
    auto computed = ws.ensure(o.level);
    const auto& emb = ws.projector->embedding(o.level);
    std::filesystem::path csv = o.output.empty() ? ws.dir / ("embedding_level_" + std::to_string(o.level) + ".csv")
                                                 : std::filesystem::path(o.output);
    io::write_embedding_csv(csv, emb);
    if (!o.coords_bin.empty()) {
        io::write_embedding_binary(o.coords_bin, emb);
    }
    std::size_t fixed = std::count(emb.fixed_mask.begin(), emb.fixed_mask.end(), 1);
    return {{"command", "project"}, {"level", o.level}, {"points", emb.size()}, {"fixed", fixed},
        {"projected_levels", computed}, {"output", csv.string()}, {"spectral_fallback", emb.spectral_fallback}};
}

inline nlohmann::ordered_json cmd_drill(const Options& o) {
    Workspace ws(o.hierarchy, o.epochs, o.threads);
    ws.check_level(o.level);
    if (o.level == 0) {
        fail(ErrorKind::parameter, "level 0 has no level below it to drill into");
    }
    auto ids = read_selection(o.selection);
    DirectoryLock lock(ws.dir);
    ws.ensure(o.level);
    auto emb = ws.projector->project_subset(o.level - 1, ids);
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(selection_digest(ids)));
    std::filesystem::path csv = o.output.empty()
        ? ws.dir / ("drill_level_" + std::to_string(o.level - 1) + "_" + hex + ".csv")
        : std::filesystem::path(o.output);
    io::write_embedding_csv(csv, emb);
    if (!o.coords_bin.empty()) {
        io::write_embedding_binary(o.coords_bin, emb);
    }
    return {{"command", "drill"}, {"level", o.level - 1}, {"selected", ids.size()}, {"points", emb.size()},
        {"selection_digest", hex}, {"output", csv.string()}};
}

inline nlohmann::ordered_json cmd_eval(const Options& o) {
    auto dir = std::filesystem::path(o.hierarchy);
    auto h = io::load_hierarchy(dir);

    bool want_np = false, want_rank = false, want_demap = false, want_disparity = false;
    std::stringstream list(o.metrics);
    std::string name;
    while (std::getline(list, name, ',')) {
        if (name == "np") want_np = true;
        else if (name == "rank" || name == "trustworthiness" || name == "continuity") want_rank = true;
        else if (name == "demap") want_demap = true;
        else if (name == "disparity") want_disparity = true;
        else if (!name.empty()) fail(ErrorKind::parameter, "unknown metric '" + name + "'");
    }

    std::vector<std::size_t> levels = o.levels;
    std::map<std::size_t, Embedding> embeddings;
    if (levels.empty()) {
        for (std::size_t l = 0; l < h.n_levels(); ++l) {
            if (auto e = io::load_cached_embedding(dir, l)) {
                levels.push_back(l);
                embeddings.emplace(l, std::move(*e));
            }
        }
        if (levels.empty()) {
            fail(ErrorKind::parameter, "no projected levels in " + dir.string() + "; run project first");
        }
    }
    for (auto l : levels) {
        if (l >= h.n_levels()) {
            fail(ErrorKind::parameter, "unknown level " + std::to_string(l));
        }
        if (!embeddings.count(l)) {
            auto e = io::load_cached_embedding(dir, l);
            if (!e) {
                fail(ErrorKind::parameter, "level " + std::to_string(l) + " has no embedding; run project first");
            }
            embeddings.emplace(l, std::move(*e));
        }
    }
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

    nlohmann::ordered_json out;
    out["command"] = "eval";
    out["levels"] = nlohmann::ordered_json::array();
    std::string csv;
    if (want_np || want_rank || want_demap) {
        std::string input = o.input;
        if (input.empty()) {
            auto cfg_path = dir / "run_config.json";
            if (!std::filesystem::exists(cfg_path)) {
                fail(ErrorKind::parameter, "no run_config.json in " + dir.string() + "; pass --input");
            }
            input = RunConfig::from_json(io::read_json(cfg_path)).input;
        }
        auto data = io::read_matrix(input);
        if (data.n_points() != h.levels[0].size()) {
            fail(ErrorKind::input, "input has " + std::to_string(data.n_points()) + " points, hierarchy expects " +
                std::to_string(h.levels[0].size()));
        }
        for (auto l : levels) {
            const auto& emb = embeddings.at(l);
            std::vector<std::size_t> rows;
            for (auto p : emb.point_ids) {
                rows.push_back(h.levels[l].point_ids[p]);
            }
            DemapOptions dopt;
            dopt.knn_k = std::min(h.params.k, emb.size() - 1);
            dopt.seed = h.params.seed;
            auto report = evaluate_embedding(data.subset(rows), emb.coords, o.k_max,
                MetricSelection{want_np, want_rank, want_demap}, dopt);
            report.level = l;
            out["levels"].push_back(report.to_json());
            auto part = report.to_csv();
            csv += csv.empty() ? part : part.substr(part.find('\n') + 1);
        }
    }
    if (want_disparity) {
        if (levels.size() < 2) {
            fail(ErrorKind::parameter, "disparity needs ≥ 2 projected levels");
        }
        auto pairs = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
            if (levels[i + 1] != levels[i] + 1) {
                continue;
            }
            const auto& lower = embeddings.at(levels[i]);
            const auto& upper = embeddings.at(levels[i + 1]);
            auto [a, b] = shared_points(h, lower, upper);
            pairs.push_back({{"lower", levels[i]}, {"upper", levels[i + 1]}, {"shared_points", a.size()},
                {"disparity", procrustes_disparity(a, b)}});
        }
        if (pairs.empty()) {
            fail(ErrorKind::parameter, "disparity needs ≥ 2 projected levels that are consecutive");
        }
        out["disparity"] = std::move(pairs);
    }

    std::filesystem::path json_path = o.output.empty() ? dir / "metrics.json" : std::filesystem::path(o.output);
    io::write_text(json_path, out.dump(2) + "\n");
    if (!o.csv.empty()) {
        io::write_text(o.csv, csv);
    }
    nlohmann::ordered_json summary{{"command", "eval"}, {"levels", levels}, {"output", json_path.string()}};
    if (out.contains("disparity")) {
        summary["disparity"] = out["disparity"];
    }
    return summary;
}

/**
 * Runs the command line. `serve` blocks until the process is stopped.
 */
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Hierarchical manifold embedding and exploration"};
    app.require_subcommand(1);
    Options o;
    auto& c = o.fit;

    auto* fit = app.add_subcommand("fit", "Build a hierarchy and write it to a directory");
    fit->add_option("--input", c.input, "Data matrix (CSV or HMAPMAT1 binary)")->required();
    fit->add_option("--format", c.format, "auto, csv or binary")->capture_default_str();
    fit->add_option("--level-sizes", c.level_sizes, "Points per level, descending")->required()->delimiter(',');
    fit->add_option("--k", c.k, "Neighbors per point")->capture_default_str();
    fit->add_option("--n-walks", c.n_walks, "Landmark walks per point")->capture_default_str();
    fit->add_option("--walk-length", c.walk_length, "Steps per landmark walk")->capture_default_str();
    fit->add_option("--omega", c.omega, "Representation walks per point")->capture_default_str();
    fit->add_option("--upsilon", c.upsilon, "Maximum representation walk length")->capture_default_str();
    fit->add_option("--beta", c.beta, "Fraction of landmark neighbors added to its neighborhood")->capture_default_str();
    fit->add_option("--theta", c.theta, "Movement fraction of inherited points")->capture_default_str();
    fit->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    fit->add_option("--epochs", c.epochs, "Layout epochs, 0 for automatic")->capture_default_str();
    fit->add_option("--output", c.output, "Hierarchy directory")->required();
    fit->add_option("--threads", c.threads, "deterministic or parallel")->capture_default_str();

    auto add_workspace = [&](CLI::App* sub) {
        sub->add_option("--hierarchy", o.hierarchy, "Hierarchy directory")->required();
        sub->add_option("--epochs", o.epochs, "Override the layout epochs");
        sub->add_option("--threads", o.threads, "deterministic or parallel");
        sub->add_option("--output", o.output, "Embedding CSV path");
        sub->add_option("--coords-bin", o.coords_bin, "Also write coordinates as HMAPMAT1 binary");
    };
    auto* project = app.add_subcommand("project", "Embed one level, projecting the levels above it first");
    add_workspace(project);
    project->add_option("--level", o.level, "Level to embed")->required();

    auto* drill = app.add_subcommand("drill", "Embed the points represented by selected landmarks");
    add_workspace(drill);
    drill->add_option("--level", o.level, "Level the selected landmarks live on")->required();
    drill->add_option("--selection", o.selection, "File of landmark ids on that level")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate projected levels");
    eval->add_option("--hierarchy", o.hierarchy, "Hierarchy directory")->required();
    eval->add_option("--levels", o.levels, "Levels to evaluate (default: all projected)")->delimiter(',');
    eval->add_option("--metrics", o.metrics, "Comma list of np, rank, demap, disparity")->capture_default_str();
    eval->add_option("--k-max", o.k_max, "Largest neighborhood size")->capture_default_str();
    eval->add_option("--input", o.input, "Data matrix (default: the fitted input)");
    eval->add_option("--output", o.output, "Report JSON path");
    eval->add_option("--csv", o.csv, "Also write the curves as CSV");

    auto* serve = app.add_subcommand("serve", "Run the exploration service");
    serve->add_option("--host", o.host, "Bind address")->capture_default_str();
    serve->add_option("--port", o.port, "Port, 0 for any free port")->capture_default_str();
    serve->add_option("--ui-dir", o.ui_dir, "Static files served under /ui");
    serve->add_option("--epochs", o.epochs, "Override the layout epochs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        report_error(err, "usage", e.what());
        return exit_validation;
    }

    try {
        nlohmann::ordered_json result;
        if (fit->parsed()) {
            result = cmd_fit(c);
        } else if (project->parsed()) {
            result = cmd_project(o);
        } else if (drill->parsed()) {
            result = cmd_drill(o);
        } else if (eval->parsed()) {
            result = cmd_eval(o);
        } else if (serve->parsed()) {
            ExplorerOptions eo;
            eo.host = o.host;
            eo.port = o.port;
            eo.ui_dir = o.ui_dir;
            eo.epochs = o.epochs;
            ExplorerService service(eo);
            int port = service.bind();
            out << nlohmann::ordered_json{{"command", "serve"}, {"host", o.host}, {"port", port}}.dump() << std::endl;
            service.run();
            return exit_ok;
        }
        out << result.dump() << '\n';
        return exit_ok;
    } catch (const Error& e) {
        report_error(err, to_string(e.kind()), e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        report_error(err, "internal", e.what());
        return exit_internal;
    }
}

}

#endif
