#ifndef HUMAP_DATA_MATRIX_HPP
#define HUMAP_DATA_MATRIX_HPP

#include "common.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

/**
 * @file data_matrix.hpp
 *
 * @brief Dense row-major point matrix and its CSV / binary loaders.
 */

namespace humap {

/**
 * @brief Dense row-major matrix of `n_points` x `n_dims` finite values.
 */
class DataMatrix {
public:
    DataMatrix() = default;

    DataMatrix(std::size_t n_points, std::size_t n_dims, std::vector<double> values)
        : n_points_(n_points), n_dims_(n_dims), values_(std::move(values)) {
        if (n_points_ == 0 || n_dims_ == 0) {
            fail(ErrorKind::input, "data matrix must have at least one point and one dimension");
        }
        if (values_.size() != n_points_ * n_dims_) {
            fail(ErrorKind::input, "data matrix value count does not match its shape");
        }
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (!std::isfinite(values_[i])) {
                fail(ErrorKind::input, "non-finite value at point " + std::to_string(i / n_dims_) +
                    ", dimension " + std::to_string(i % n_dims_));
            }
        }
    }

    std::size_t n_points() const { return n_points_; }
    std::size_t n_dims() const { return n_dims_; }

    std::span<const double> row(std::size_t i) const {
        return {values_.data() + i * n_dims_, n_dims_};
    }

    double operator()(std::size_t i, std::size_t j) const { return values_[i * n_dims_ + j]; }

    const std::vector<double>& values() const { return values_; }

    /// Copy of the listed rows, in the listed order.
    DataMatrix subset(std::span<const std::size_t> rows) const {
        std::vector<double> out;
        out.reserve(rows.size() * n_dims_);
        for (auto r : rows) {
            auto src = row(r);
            out.insert(out.end(), src.begin(), src.end());
        }
        return DataMatrix(rows.size(), n_dims_, std::move(out));
    }

private:
    std::size_t n_points_ = 0;
    std::size_t n_dims_ = 0;
    std::vector<double> values_;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double total = 0;
    for (std::size_t d = 0; d < a.size(); ++d) {
        double diff = a[d] - b[d];
        total += diff * diff;
    }
    return total;
}

inline DataMatrix from_coords(std::span<const std::array<double, 2>> coords) {
    std::vector<double> values;
    values.reserve(coords.size() * 2);
    for (const auto& c : coords) {
        values.push_back(c[0]);
        values.push_back(c[1]);
    }
    return DataMatrix(coords.size(), 2, std::move(values));
}

namespace io {

inline constexpr std::string_view matrix_magic = "HMAPMAT1";

template<typename T>
void write_le(std::ostream& out, T value) {
    static_assert(std::is_arithmetic_v<T>);
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    out.write(bytes.data(), sizeof(T));
}

template<typename T>
T read_le(std::istream& in) {
    std::array<char, sizeof(T)> bytes;
    if (!in.read(bytes.data(), sizeof(T))) {
        fail(ErrorKind::io, "unexpected end of binary stream");
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

inline std::ifstream open_input(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) {
        fail(ErrorKind::io, "cannot open " + path.string() + " for reading");
    }
    return in;
}

inline std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) {
        fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
    }
    return out;
}

inline bool parse_double(std::string_view text, double& value) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) {
        text.remove_prefix(1);
    }
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
        text.remove_suffix(1);
    }
    if (!text.empty() && text.front() == '+') {
        text.remove_prefix(1);
    }
    if (text.empty()) {
        return false;
    }
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    return ec == std::errc() && ptr == text.data() + text.size();
}

inline std::vector<std::string_view> split_fields(std::string_view line, char delim = ',') {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(delim, start);
        fields.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return fields;
}

/**
 * Reads a comma-separated matrix, one point per line. A first line whose
 * fields do not all parse as numbers is treated as a header. NaN and
 * infinity are rejected.
 */
inline DataMatrix read_csv(std::istream& in) {
    std::string line;
    std::vector<double> values;
    std::size_t n_dims = 0, n_points = 0, line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        auto fields = split_fields(line);
        std::vector<double> parsed(fields.size());
        bool numeric = true;
        for (std::size_t f = 0; f < fields.size(); ++f) {
            numeric = numeric && parse_double(fields[f], parsed[f]);
        }
        if (!numeric) {
            if (n_points == 0 && n_dims == 0) {
                n_dims = fields.size(); // header
                continue;
            }
            fail(ErrorKind::input, "non-numeric field on CSV line " + std::to_string(line_no));
        }
        if (n_dims == 0) {
            n_dims = parsed.size();
        } else if (parsed.size() != n_dims) {
            fail(ErrorKind::input, "CSV line " + std::to_string(line_no) + " has " +
                std::to_string(parsed.size()) + " fields, expected " + std::to_string(n_dims));
        }
        for (double v : parsed) {
            if (!std::isfinite(v)) {
                fail(ErrorKind::input, "non-finite value on CSV line " + std::to_string(line_no));
            }
        }
        values.insert(values.end(), parsed.begin(), parsed.end());
        ++n_points;
    }
    if (n_points == 0) {
        fail(ErrorKind::input, "CSV input contains no data rows");
    }
    return DataMatrix(n_points, n_dims, std::move(values));
}

inline DataMatrix read_csv(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_csv(in);
}

/**
 * Binary layout: the 8 bytes `HMAPMAT1`, u64 point count, u64 dimension
 * count, then row-major float32 values, all little-endian.
 */
inline DataMatrix read_binary(std::istream& in) {
    std::array<char, 8> magic;
    if (!in.read(magic.data(), magic.size()) || std::string_view(magic.data(), magic.size()) != matrix_magic) {
        fail(ErrorKind::input, "missing HMAPMAT1 header");
    }
    auto n = read_le<std::uint64_t>(in);
    auto m = read_le<std::uint64_t>(in);
    if (n == 0 || m == 0 || n > (std::uint64_t{1} << 40) / m) {
        fail(ErrorKind::input, "implausible matrix shape in binary header");
    }
    std::vector<double> values(n * m);
    for (auto& v : values) {
        v = read_le<float>(in);
    }
    return DataMatrix(n, m, std::move(values));
}

inline DataMatrix read_binary(const std::filesystem::path& path) {
    auto in = open_input(path, std::ios::binary);
    return read_binary(in);
}

inline void write_binary(std::ostream& out, std::size_t n_rows, std::size_t n_cols, std::span<const double> values) {
    out.write(matrix_magic.data(), matrix_magic.size());
    write_le<std::uint64_t>(out, n_rows);
    write_le<std::uint64_t>(out, n_cols);
    for (double v : values) {
        write_le<float>(out, static_cast<float>(v));
    }
}

inline void write_binary(const std::filesystem::path& path, const DataMatrix& data) {
    auto out = open_output(path, std::ios::binary);
    write_binary(out, data.n_points(), data.n_dims(), data.values());
}

inline void write_csv(const std::filesystem::path& path, const DataMatrix& data) {
    auto out = open_output(path);
    char buf[32];
    for (std::size_t i = 0; i < data.n_points(); ++i) {
        auto row = data.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), row[j]);
            if (j) {
                out << ',';
            }
            out.write(buf, ptr - buf);
        }
        out << '\n';
    }
}

enum class MatrixFormat { automatic, csv, binary };

inline MatrixFormat parse_format(std::string_view name) {
    if (name == "auto") return MatrixFormat::automatic;
    if (name == "csv") return MatrixFormat::csv;
    if (name == "bin" || name == "binary") return MatrixFormat::binary;
    fail(ErrorKind::parameter, "unknown input format '" + std::string(name) + "'");
}

/// Loads `path`, sniffing the binary magic when the format is automatic.
inline DataMatrix read_matrix(const std::filesystem::path& path, MatrixFormat format = MatrixFormat::automatic) {
    if (format == MatrixFormat::automatic) {
        auto in = open_input(path, std::ios::binary);
        std::array<char, 8> magic{};
        in.read(magic.data(), magic.size());
        format = (in.gcount() == 8 && std::string_view(magic.data(), 8) == matrix_magic)
            ? MatrixFormat::binary : MatrixFormat::csv;
    }
    return format == MatrixFormat::binary ? read_binary(path) : read_csv(path);
}

}

}

#endif
