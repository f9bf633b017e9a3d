#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dml/errors.hpp"

namespace dml {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Eigen-decomposition of a symmetric matrix with a reproducible convention:
/// eigenvalues sorted descending, each eigenvector's largest-magnitude
/// component made positive (lowest index wins ties).
struct SymEigen {
    Vector values;  // descending
    Matrix vectors; // orthonormal columns, vectors.col(k) pairs with values(k)
};

/// Cyclic Jacobi rotations. Intended for the small symmetric matrices that
/// arise here (n up to a few hundred).
inline SymEigen eigen_sym(const Matrix& input) {
    const Eigen::Index n = input.rows();
    if (input.cols() != n) throw NumericError("eigen_sym: matrix not square");

    Matrix a = 0.5 * (input + input.transpose()); // enforce exact symmetry
    Matrix v = Matrix::Identity(n, n);

    const double scale = std::max(a.norm(), 1e-300);
    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(off) <= 1e-15 * scale) break;

        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });

    SymEigen out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        out.values(k) = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
        out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
        Eigen::Index imax = 0;
        double best = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double m = std::abs(out.vectors(i, k));
            if (m > best) {
                best = m;
                imax = i;
            }
        }
        if (out.vectors(imax, k) < 0.0) out.vectors.col(k) = -out.vectors.col(k);
    }
    return out;
}

/// Lower Cholesky factor; fails loudly on non-positive-definite input.
inline Matrix cholesky(const Matrix& a, const char* what) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) throw NumericError(std::string(what) + ": Cholesky factorization failed");
    return llt.matrixL();
}

} // namespace dml
