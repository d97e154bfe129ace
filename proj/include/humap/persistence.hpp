#ifndef HUMAP_PERSISTENCE_HPP
#define HUMAP_PERSISTENCE_HPP

#include "common.hpp"
#include "data_matrix.hpp"
#include "hierarchy.hpp"
#include "layout.hpp"

#include <json.hpp>

#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <variant>

/**
 * @file persistence.hpp
 *
 * @brief On-disk layout of a hierarchy directory.
 *
 * A directory holds `hierarchy.json` (parameters, level sizes, stage seeds)
 * and one `level_<i>.bin` blob per level. Blobs start with the magic
 * `HMAPLVL1`, then u64 level, u64 point count and u64 section count,
 * followed by tagged sections: an 8-byte tag, a u8 element type (0 = u64,
 * 1 = f64), a u64 element count and the little-endian payload.
 *
 * Full-level embeddings are cached under `embeddings/` in the same framing
 * with the magic `HMAPEMB1`.
 */

namespace humap::io {

inline constexpr std::string_view level_magic = "HMAPLVL1";
inline constexpr std::string_view embedding_magic = "HMAPEMB1";
inline constexpr int hierarchy_format_version = 1;

struct Section {
    std::string tag;
    std::variant<std::vector<std::uint64_t>, std::vector<double>> data;
};

struct Blob {
    std::uint64_t level = 0;
    std::uint64_t n_points = 0;
    std::map<std::string, Section, std::less<>> sections;

    const std::vector<std::uint64_t>& u64(std::string_view tag) const {
        const auto& s = find(tag);
        if (!std::holds_alternative<std::vector<std::uint64_t>>(s.data)) {
            fail(ErrorKind::io, "section " + std::string(tag) + " has the wrong element type");
        }
        return std::get<std::vector<std::uint64_t>>(s.data);
    }

    const std::vector<double>& f64(std::string_view tag) const {
        const auto& s = find(tag);
        if (!std::holds_alternative<std::vector<double>>(s.data)) {
            fail(ErrorKind::io, "section " + std::string(tag) + " has the wrong element type");
        }
        return std::get<std::vector<double>>(s.data);
    }

    bool has(std::string_view tag) const { return sections.find(tag) != sections.end(); }

private:
    const Section& find(std::string_view tag) const {
        auto it = sections.find(tag);
        if (it == sections.end()) {
            fail(ErrorKind::io, "missing section " + std::string(tag));
        }
        return it->second;
    }
};

inline void write_blob(std::ostream& out, std::string_view magic, std::uint64_t level, std::uint64_t n_points,
    const std::vector<Section>& sections)
{
    out.write(magic.data(), 8);
    write_le<std::uint64_t>(out, level);
    write_le<std::uint64_t>(out, n_points);
    write_le<std::uint64_t>(out, sections.size());
    for (const auto& s : sections) {
        std::array<char, 8> tag;
        tag.fill(' ');
        std::copy_n(s.tag.begin(), std::min<std::size_t>(8, s.tag.size()), tag.begin());
        out.write(tag.data(), 8);
        std::visit([&](const auto& values) {
            using T = typename std::decay_t<decltype(values)>::value_type;
            write_le<std::uint8_t>(out, std::is_same_v<T, double> ? 1 : 0);
            write_le<std::uint64_t>(out, values.size());
            for (auto v : values) {
                write_le<T>(out, v);
            }
        }, s.data);
    }
    if (!out) {
        fail(ErrorKind::io, "failed writing binary blob");
    }
}

inline Blob read_blob(std::istream& in, std::string_view magic) {
    std::array<char, 8> head;
    if (!in.read(head.data(), 8) || std::string_view(head.data(), 8) != magic) {
        fail(ErrorKind::io, "missing " + std::string(magic) + " header");
    }
    Blob blob;
    blob.level = read_le<std::uint64_t>(in);
    blob.n_points = read_le<std::uint64_t>(in);
    auto count = read_le<std::uint64_t>(in);
    for (std::uint64_t s = 0; s < count; ++s) {
        std::array<char, 8> tag;
        if (!in.read(tag.data(), 8)) {
            fail(ErrorKind::io, "truncated section header");
        }
        std::string name(tag.data(), 8);
        name.erase(name.find_last_not_of(' ') + 1);
        auto dtype = read_le<std::uint8_t>(in);
        auto n = read_le<std::uint64_t>(in);
        if (n > (std::uint64_t{1} << 36)) {
            fail(ErrorKind::io, "implausible section length in " + name);
        }
        Section sec{name, {}};
        if (dtype == 0) {
            std::vector<std::uint64_t> v(n);
            for (auto& x : v) {
                x = read_le<std::uint64_t>(in);
            }
            sec.data = std::move(v);
        } else if (dtype == 1) {
            std::vector<double> v(n);
            for (auto& x : v) {
                x = read_le<double>(in);
            }
            sec.data = std::move(v);
        } else {
            fail(ErrorKind::io, "unknown element type in section " + name);
        }
        blob.sections.emplace(name, std::move(sec));
    }
    return blob;
}

namespace detail {

template<typename T>
std::vector<std::uint64_t> widen(const std::vector<T>& v) {
    return {v.begin(), v.end()};
}

template<typename T>
std::vector<T> narrow(const std::vector<std::uint64_t>& v) {
    return {v.begin(), v.end()};
}

inline std::vector<std::uint64_t> indices_or_none(const std::vector<std::size_t>& v) {
    std::vector<std::uint64_t> out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [](std::size_t x) {
        return x == no_index ? std::numeric_limits<std::uint64_t>::max() : std::uint64_t{x};
    });
    return out;
}

inline std::vector<std::size_t> indices_from(const std::vector<std::uint64_t>& v) {
    std::vector<std::size_t> out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [](std::uint64_t x) {
        return x == std::numeric_limits<std::uint64_t>::max() ? no_index : static_cast<std::size_t>(x);
    });
    return out;
}

inline void expect(bool ok, const std::string& what) {
    if (!ok) {
        fail(ErrorKind::io, "corrupt hierarchy data: " + what);
    }
}

}

inline std::vector<Section> level_sections(const HierarchyLevel& l) {
    std::vector<double> rho, sigma;
    std::vector<std::uint64_t> converged;
    for (const auto& k : l.kernels) {
        rho.push_back(k.rho);
        sigma.push_back(k.sigma);
        converged.push_back(k.converged);
    }
    std::vector<Section> s{
        {"POINTIDS", detail::widen(l.point_ids)},
        {"KNN_K", std::vector<std::uint64_t>{l.graph.k}},
        {"KNN_OFFS", detail::widen(l.graph.offsets)},
        {"KNN_IDX", detail::widen(l.graph.indices)},
        {"KNN_DIST", l.graph.distances},
        {"KER_RHO", std::move(rho)},
        {"KER_SIG", std::move(sigma)},
        {"KER_CONV", std::move(converged)},
        {"STR_SHAP", std::vector<std::uint64_t>{l.strengths.n_rows, l.strengths.n_cols}},
        {"STR_OFFS", detail::widen(l.strengths.offsets)},
        {"STR_COLS", detail::widen(l.strengths.columns)},
        {"STR_WTS", l.strengths.weights},
    };
    if (!l.landmarks.landmark_ids.empty()) {
        s.push_back({"LM_LEVEL", std::vector<std::uint64_t>{l.landmarks.level}});
        s.push_back({"LM_IDS", detail::widen(l.landmarks.landmark_ids)});
        s.push_back({"LM_VISIT", l.landmarks.visit_counts});
        s.push_back({"RNH_SHAP", std::vector<std::uint64_t>{l.rnh.n_landmarks, l.rnh.n_points}});
        s.push_back({"RNH_OFFS", detail::widen(l.rnh.offsets)});
        s.push_back({"RNH_COLS", detail::widen(l.rnh.columns)});
        s.push_back({"ASSOC", detail::indices_or_none(l.association.parent)});
    }
    return s;
}

inline HierarchyLevel level_from_blob(const Blob& b) {
    using detail::expect;
    HierarchyLevel l;
    l.point_ids = detail::narrow<std::size_t>(b.u64("POINTIDS"));
    const std::size_t n = l.point_ids.size();
    expect(n == b.n_points, "point count");

    l.graph.k = static_cast<std::size_t>(b.u64("KNN_K").at(0));
    l.graph.offsets = detail::narrow<std::size_t>(b.u64("KNN_OFFS"));
    l.graph.indices = detail::narrow<std::size_t>(b.u64("KNN_IDX"));
    l.graph.distances = b.f64("KNN_DIST");
    expect(l.graph.offsets.size() == n + 1 && l.graph.offsets.back() == l.graph.indices.size() &&
        l.graph.indices.size() == l.graph.distances.size(), "neighbor graph shape");

    const auto& rho = b.f64("KER_RHO");
    const auto& sigma = b.f64("KER_SIG");
    const auto& conv = b.u64("KER_CONV");
    expect(rho.size() == n && sigma.size() == n && conv.size() == n, "kernel rows");
    for (std::size_t i = 0; i < n; ++i) {
        l.kernels.push_back({rho[i], sigma[i], conv[i] != 0});
    }

    const auto& shape = b.u64("STR_SHAP");
    expect(shape.size() == 2, "strength shape");
    l.strengths.n_rows = shape[0];
    l.strengths.n_cols = shape[1];
    l.strengths.offsets = detail::narrow<std::size_t>(b.u64("STR_OFFS"));
    l.strengths.columns = detail::narrow<std::size_t>(b.u64("STR_COLS"));
    l.strengths.weights = b.f64("STR_WTS");
    expect(l.strengths.n_rows == n && l.strengths.offsets.size() == n + 1 &&
        l.strengths.offsets.back() == l.strengths.columns.size() &&
        l.strengths.columns.size() == l.strengths.weights.size(), "strength graph shape");

    if (b.has("LM_IDS")) {
        l.landmarks.level = static_cast<std::size_t>(b.u64("LM_LEVEL").at(0));
        l.landmarks.landmark_ids = detail::narrow<std::size_t>(b.u64("LM_IDS"));
        l.landmarks.visit_counts = b.u64("LM_VISIT");
        const auto& rs = b.u64("RNH_SHAP");
        expect(rs.size() == 2, "representation shape");
        l.rnh.n_landmarks = rs[0];
        l.rnh.n_points = rs[1];
        l.rnh.offsets = detail::narrow<std::size_t>(b.u64("RNH_OFFS"));
        l.rnh.columns = detail::narrow<std::size_t>(b.u64("RNH_COLS"));
        l.association.parent = detail::indices_from(b.u64("ASSOC"));
        expect(l.landmarks.size() == n && l.rnh.n_landmarks == n && l.rnh.offsets.size() == n + 1 &&
            l.rnh.offsets.back() == l.rnh.columns.size(), "landmark data shape");
    }
    return l;
}

inline std::string level_file_name(std::size_t level) {
    return "level_" + std::to_string(level) + ".bin";
}

inline nlohmann::ordered_json params_to_json(const HierarchyParams& p) {
    return {{"k", p.k}, {"n_walks", p.n_walks}, {"walk_length", p.walk_length}, {"omega", p.omega},
        {"upsilon", p.upsilon}, {"beta", p.beta}, {"theta", p.theta}, {"seed", p.seed}};
}

inline HierarchyParams params_from_json(const nlohmann::json& j) {
    HierarchyParams p;
    p.k = j.at("k").get<std::size_t>();
    p.n_walks = j.at("n_walks").get<std::size_t>();
    p.walk_length = j.at("walk_length").get<std::size_t>();
    p.omega = j.at("omega").get<std::size_t>();
    p.upsilon = j.at("upsilon").get<std::size_t>();
    p.beta = j.at("beta").get<double>();
    p.theta = j.at("theta").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    return p;
}

inline nlohmann::ordered_json hierarchy_manifest(const Hierarchy& h) {
    nlohmann::ordered_json j;
    j["format"] = "humap-hierarchy";
    j["version"] = hierarchy_format_version;
    j["params"] = params_to_json(h.params);
    j["level_sizes"] = h.level_sizes();
    auto seeds = nlohmann::ordered_json::array();
    for (std::size_t i = 1; i < h.n_levels(); ++i) {
        seeds.push_back({{"level", i}, {"landmarks", stage_seed(h.params.seed, "landmarks", i)},
            {"rnh", stage_seed(h.params.seed, "rnh", i)}});
    }
    j["stage_seeds"] = std::move(seeds);
    auto files = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < h.n_levels(); ++i) {
        files.push_back(level_file_name(i));
    }
    j["level_files"] = std::move(files);
    return j;
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    auto out = open_output(path, std::ios::binary);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        fail(ErrorKind::io, "failed writing " + path.string());
    }
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    auto in = open_input(path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::io, path.string() + " is not valid JSON: " + e.what());
    }
}

inline void save_hierarchy(const std::filesystem::path& dir, const Hierarchy& h) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
    }
    for (std::size_t i = 0; i < h.n_levels(); ++i) {
        auto out = open_output(dir / level_file_name(i), std::ios::binary);
        write_blob(out, level_magic, i, h.levels[i].size(), level_sections(h.levels[i]));
    }
    write_text(dir / "hierarchy.json", hierarchy_manifest(h).dump(2) + "\n");
}

inline Hierarchy load_hierarchy(const std::filesystem::path& dir) {
    auto manifest = read_json(dir / "hierarchy.json");
    Hierarchy h;
    std::vector<std::size_t> sizes;
    try {
        if (manifest.at("version").get<int>() != hierarchy_format_version) {
            fail(ErrorKind::io, "unsupported hierarchy format version");
        }
        h.params = params_from_json(manifest.at("params"));
        sizes = manifest.at("level_sizes").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::io, "malformed hierarchy.json: " + std::string(e.what()));
    }
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        auto in = open_input(dir / level_file_name(i), std::ios::binary);
        auto blob = read_blob(in, level_magic);
        detail::expect(blob.level == i, "level index in " + level_file_name(i));
        h.levels.push_back(level_from_blob(blob));
        detail::expect(h.levels.back().size() == sizes[i], "size of level " + std::to_string(i));
        detail::expect(i == 0 || h.levels[i].association.parent.size() == sizes[i - 1],
            "association length on level " + std::to_string(i));
    }
    detail::expect(!h.levels.empty(), "no levels");
    return h;
}

/// Level each embedded point takes its starting coordinates from.
inline std::size_t source_level(const Embedding& emb, std::size_t row) {
    return emb.fixed_mask.size() > row && emb.fixed_mask[row] ? emb.level + 1 : emb.level;
}

/**
 * Embedding CSV with header `point_id,x,y,fixed_flag,source_level`.
 * Coordinates use the shortest text that parses back to the same double.
 */
inline std::string embedding_csv(const Embedding& emb) {
    std::string out = "point_id,x,y,fixed_flag,source_level\n";
    char buf[32];
    for (std::size_t i = 0; i < emb.size(); ++i) {
        out += std::to_string(emb.point_ids[i]);
        for (double v : emb.coords[i]) {
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
            out += ',';
            out.append(buf, ptr);
        }
        bool fixed = emb.fixed_mask.size() > i && emb.fixed_mask[i];
        out += fixed ? ",1," : ",0,";
        out += std::to_string(source_level(emb, i));
        out += '\n';
    }
    return out;
}

inline void write_embedding_csv(const std::filesystem::path& path, const Embedding& emb) {
    write_text(path, embedding_csv(emb));
}

/// Reads an embedding CSV back; `level` is not stored in the file.
inline Embedding read_embedding_csv(const std::filesystem::path& path, std::size_t level) {
    auto in = open_input(path);
    std::string line;
    if (!std::getline(in, line) || line != "point_id,x,y,fixed_flag,source_level") {
        fail(ErrorKind::input, path.string() + " is not an embedding CSV");
    }
    Embedding emb;
    emb.level = level;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto fields = split_fields(line);
        double id = 0, x = 0, y = 0, fixed = 0;
        if (fields.size() != 5 || !parse_double(fields[0], id) || !parse_double(fields[1], x) ||
            !parse_double(fields[2], y) || !parse_double(fields[3], fixed)) {
            fail(ErrorKind::input, "malformed embedding row: " + line);
        }
        emb.point_ids.push_back(static_cast<std::size_t>(id));
        emb.coords.push_back({x, y});
        emb.fixed_mask.push_back(fixed != 0);
    }
    return emb;
}

/// Coordinates alone in the data-matrix binary format (float32).
inline void write_embedding_binary(const std::filesystem::path& path, const Embedding& emb) {
    auto out = open_output(path, std::ios::binary);
    std::vector<double> flat;
    flat.reserve(2 * emb.size());
    for (const auto& p : emb.coords) {
        flat.push_back(p[0]);
        flat.push_back(p[1]);
    }
    write_binary(out, emb.size(), 2, flat);
}

inline std::filesystem::path embedding_cache_path(const std::filesystem::path& dir, std::size_t level) {
    return dir / "embeddings" / ("level_" + std::to_string(level) + ".emb");
}

/**
 * Saves a full-level embedding with exact coordinates. `key` identifies the
 * projection settings that produced it.
 */
inline void save_cached_embedding(const std::filesystem::path& dir, const Embedding& emb, std::uint64_t key) {
    auto path = embedding_cache_path(dir, emb.level);
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) {
        fail(ErrorKind::io, "cannot create " + path.parent_path().string() + ": " + ec.message());
    }
    std::vector<double> flat;
    for (const auto& p : emb.coords) {
        flat.push_back(p[0]);
        flat.push_back(p[1]);
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        auto out = open_output(tmp, std::ios::binary);
        write_blob(out, embedding_magic, emb.level, emb.size(), {
            {"KEY", std::vector<std::uint64_t>{key}},
            {"POINTIDS", detail::widen(emb.point_ids)},
            {"COORDS", std::move(flat)},
            {"FIXED", detail::widen(emb.fixed_mask)},
            {"THETA", std::vector<double>{emb.theta}},
            {"FALLBACK", std::vector<std::uint64_t>{emb.spectral_fallback}},
        });
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        fail(ErrorKind::io, "cannot move " + tmp.string() + " into place: " + ec.message());
    }
}

/// The cached embedding of `level` if present and, when `key` is given, produced with it.
inline std::optional<Embedding> load_cached_embedding(const std::filesystem::path& dir, std::size_t level,
    std::optional<std::uint64_t> key = std::nullopt)
{
    auto path = embedding_cache_path(dir, level);
    if (!std::filesystem::exists(path)) {
        return std::nullopt;
    }
    auto in = open_input(path, std::ios::binary);
    auto blob = read_blob(in, embedding_magic);
    if ((key && blob.u64("KEY").at(0) != *key) || blob.level != level) {
        return std::nullopt;
    }
    Embedding emb;
    emb.level = level;
    emb.point_ids = detail::narrow<std::size_t>(blob.u64("POINTIDS"));
    const auto& flat = blob.f64("COORDS");
    detail::expect(flat.size() == 2 * emb.point_ids.size(), "cached coordinates");
    for (std::size_t i = 0; i < emb.point_ids.size(); ++i) {
        emb.coords.push_back({flat[2 * i], flat[2 * i + 1]});
    }
    emb.fixed_mask = detail::narrow<std::uint8_t>(blob.u64("FIXED"));
    emb.theta = blob.f64("THETA").at(0);
    emb.spectral_fallback = blob.u64("FALLBACK").at(0) != 0;
    return emb;
}

}

#endif
