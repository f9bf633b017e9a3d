#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dml/errors.hpp"
#include "dml/linalg.hpp"
#include "dml/serialize.hpp"

namespace dml {

/// Augmented training set: states X at the horizon date, sampled payoffs Y
/// discounted to the horizon, and pathwise differentials Z = dY/dX.
struct TrainingSet {
    Matrix X;
    Vector Y;
    Matrix Z;

    long rows() const { return X.rows(); }
    long cols() const { return X.cols(); }

    void validate() const {
        if (Y.size() != X.rows() || Z.rows() != X.rows() || Z.cols() != X.cols())
            throw NumericError("TrainingSet: inconsistent shapes");
        if (!X.allFinite() || !Y.allFinite() || !Z.allFinite())
            throw NumericError("TrainingSet: nonfinite entries");
    }
};

inline constexpr int kDatasetSchemaVersion = 1;

/// CSV layout: header `m,n,schema_version`, then one row per example,
/// `x_1..x_n,y,z_1..z_n`, 17 significant digits throughout.
inline void save_dataset_csv(std::ostream& out, const TrainingSet& ts) {
    ts.validate();
    const long m = ts.rows(), n = ts.cols();
    out << m << ',' << n << ',' << kDatasetSchemaVersion << '\n';
    for (long i = 0; i < m; ++i) {
        for (long j = 0; j < n; ++j) out << fmt17(ts.X(i, j)) << ',';
        out << fmt17(ts.Y(i));
        for (long j = 0; j < n; ++j) out << ',' << fmt17(ts.Z(i, j));
        out << '\n';
    }
}

inline void save_dataset_csv(const std::string& path, const TrainingSet& ts) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open dataset file for writing: " + path);
    save_dataset_csv(out, ts);
    if (!out) throw IoError("failed writing dataset file: " + path);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline TrainingSet load_dataset_csv(std::istream& in, const std::string& name = "<stream>") {
    std::string line;
    if (!std::getline(in, line)) throw IoError(name + ": empty dataset file");
    auto header = split_csv_line(line);
    if (header.size() != 3) throw IoError(name + ": malformed header");
    const long m = std::strtol(header[0].c_str(), nullptr, 10);
    const long n = std::strtol(header[1].c_str(), nullptr, 10);
    const long version = std::strtol(header[2].c_str(), nullptr, 10);
    if (version != kDatasetSchemaVersion)
        throw IoError(name + ": unsupported dataset schema version " + header[2]);
    if (m <= 0 || n <= 0) throw IoError(name + ": bad dataset dimensions");

    TrainingSet ts;
    ts.X.resize(m, n);
    ts.Y.resize(m);
    ts.Z.resize(m, n);
    for (long i = 0; i < m; ++i) {
        if (!std::getline(in, line)) throw IoError(name + ": truncated dataset");
        auto fields = split_csv_line(line);
        if (static_cast<long>(fields.size()) != 2 * n + 1)
            throw IoError(name + ": row " + std::to_string(i + 2) + " has wrong field count");
        const std::string ctx = name + ":" + std::to_string(i + 2);
        for (long j = 0; j < n; ++j) ts.X(i, j) = parse_double(fields[static_cast<std::size_t>(j)], ctx);
        ts.Y(i) = parse_double(fields[static_cast<std::size_t>(n)], ctx);
        for (long j = 0; j < n; ++j)
            ts.Z(i, j) = parse_double(fields[static_cast<std::size_t>(n + 1 + j)], ctx);
    }
    ts.validate();
    return ts;
}

inline TrainingSet load_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path);
    return load_dataset_csv(in, path);
}

} // namespace dml
