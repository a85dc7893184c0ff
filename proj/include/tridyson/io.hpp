#pragma once

#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jacobi.hpp"

namespace tridyson {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Shortest text that parses back to the same double.
inline std::string format_double(double x) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return {buf, r.ptr};
}

inline void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed on " + path.string());
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ParameterError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json vec_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vec vec_from_json(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json to_json(const JacobiMatrix& A) { return {{"n", A.n()}, {"b", vec_to_json(A.b())}, {"a", vec_to_json(A.a())}}; }

inline JacobiMatrix jacobi_from_json(const json& j) {
    try {
        return {vec_from_json(j.at("b")), vec_from_json(j.at("a"))};
    } catch (const json::exception& e) {
        throw ParameterError(std::string("JacobiMatrix JSON: ") + e.what());
    }
}

inline json to_json(const SpectralData& S) { return {{"lambda", vec_to_json(S.lambda)}, {"qsq", vec_to_json(S.qsq)}}; }

// CSV with a header row; numbers in shortest round-trip form.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : cols_(header.size()) { line(header); }

    void row(std::span<const double> values) {
        if (values.size() != cols_) throw ShapeError("CsvWriter: row width differs from header");
        for (std::size_t k = 0; k < values.size(); ++k) os_ << (k ? "," : "") << format_double(values[k]);
        os_ << '\n';
    }
    void row(const std::vector<double>& values) { row(std::span<const double>(values)); }

    std::string str() const { return os_.str(); }
    void save(const fs::path& path) const { write_text(path, str()); }

private:
    void line(const std::vector<std::string>& cells) {
        for (std::size_t k = 0; k < cells.size(); ++k) os_ << (k ? "," : "") << cells[k];
        os_ << '\n';
    }
    std::size_t cols_;
    std::ostringstream os_;
};

inline std::vector<std::vector<double>> read_csv_numbers(const fs::path& path, std::vector<std::string>* header = nullptr) {
    std::istringstream in(read_text(path));
    std::string line;
    std::vector<std::vector<double>> rows;
    if (!std::getline(in, line)) throw ParameterError("empty CSV " + path.string());
    if (header) {
        header->clear();
        std::istringstream h(line);
        for (std::string cell; std::getline(h, cell, ',');) header->push_back(cell);
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> r;
        std::istringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) {
            double v = 0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc()) throw ParameterError("bad number '" + cell + "' in " + path.string());
            r.push_back(v);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Every run leaves manifest.json with the resolved configuration; the timestamp lives only here.
inline void write_manifest(const fs::path& dir, const std::string& command, const json& config, std::uint64_t seed,
                           const json& extra = json::object()) {
    json m{{"command", command}, {"config", config}, {"seed", seed}, {"created", utc_timestamp()}};
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    write_json(dir / "manifest.json", m);
}

}  // namespace tridyson
