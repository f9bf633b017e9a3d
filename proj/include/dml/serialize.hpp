#pragma once

// Line-oriented text serialization. All reals are written with 17 significant
// digits so 64-bit floats round-trip exactly.

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <string>

#include "dml/errors.hpp"
#include "dml/linalg.hpp"

namespace dml {

inline std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.16e", v);
    return buf;
}

inline double parse_double(const std::string& token, const std::string& context) {
    const char* begin = token.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0')
        throw IoError(context + ": bad numeric token '" + token + "'");
    return v;
}

namespace ser {

inline void expect(std::istream& in, const std::string& token, const std::string& context) {
    std::string got;
    if (!(in >> got) || got != token)
        throw IoError(context + ": expected '" + token + "', got '" + got + "'");
}

inline double read_double(std::istream& in, const std::string& context) {
    std::string token;
    if (!(in >> token)) throw IoError(context + ": unexpected end of stream");
    return parse_double(token, context);
}

inline long read_long(std::istream& in, const std::string& context) {
    long v;
    if (!(in >> v)) throw IoError(context + ": expected integer");
    return v;
}

inline std::string read_word(std::istream& in, const std::string& context) {
    std::string w;
    if (!(in >> w)) throw IoError(context + ": unexpected end of stream");
    return w;
}

inline void write_scalar(std::ostream& out, const std::string& name, double v) {
    out << name << ' ' << fmt17(v) << '\n';
}

inline double read_scalar(std::istream& in, const std::string& name, const std::string& context) {
    expect(in, name, context);
    return read_double(in, context);
}

inline void write_vector(std::ostream& out, const std::string& name, const Vector& v) {
    out << "vector " << name << ' ' << v.size();
    for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << fmt17(v(i));
    out << '\n';
}

inline Vector read_vector(std::istream& in, const std::string& name, const std::string& context) {
    expect(in, "vector", context);
    expect(in, name, context);
    const long n = read_long(in, context);
    if (n < 0) throw IoError(context + ": negative vector size");
    Vector v(n);
    for (long i = 0; i < n; ++i) v(i) = read_double(in, context);
    return v;
}

inline void write_matrix(std::ostream& out, const std::string& name, const Matrix& m) {
    out << "matrix " << name << ' ' << m.rows() << ' ' << m.cols();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << ' ' << fmt17(m(i, j));
    out << '\n';
}

inline Matrix read_matrix(std::istream& in, const std::string& name, const std::string& context) {
    expect(in, "matrix", context);
    expect(in, name, context);
    const long rows = read_long(in, context);
    const long cols = read_long(in, context);
    if (rows < 0 || cols < 0) throw IoError(context + ": negative matrix shape");
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = read_double(in, context);
    return m;
}

} // namespace ser
} // namespace dml
