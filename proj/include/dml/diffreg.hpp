#pragma once

// Closed-form regression suite: polynomial basis with analytic derivatives,
// eigenvalue-variant SVD regression, Tikhonov ridge with the expanded
// cross-validation objective, and differential regression through the
// adjusted normal equation
//     beta = P D^{-1} P^T (phi^T Y + sum_j lambda_j phi_j^T Z_j),
// with the eigen-decomposition taken of phi^T phi + sum_j lambda_j phi_j^T phi_j.

#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "dml/errors.hpp"
#include "dml/linalg.hpp"
#include "dml/serialize.hpp"

namespace dml {

/// Monomials of total degree 1..K in n variables, graded lexicographic order,
/// constant excluded (the intercept is handled by centring).
struct PolyBasis {
    int input_dim = 0;
    int max_degree = 0;
    std::vector<std::vector<int>> exponents;

    static PolyBasis make(int n, int degree) {
        if (n < 1 || degree < 1) throw ConfigError("PolyBasis: need n >= 1 and degree >= 1");
        PolyBasis b;
        b.input_dim = n;
        b.max_degree = degree;
        std::vector<int> tuple(static_cast<std::size_t>(n), 0);
        for (int d = 1; d <= degree; ++d) emit(b, tuple, 0, d);
        if (b.exponents.size() > 20000)
            throw ConfigError("PolyBasis: basis size " + std::to_string(b.exponents.size()) +
                              " exceeds the 20000-column guard");
        return b;
    }

    long size() const { return static_cast<long>(exponents.size()); }

    RowVector eval(const RowVector& x) const {
        RowVector phi(size());
        for (long t = 0; t < size(); ++t) {
            double v = 1.0;
            const auto& k = exponents[static_cast<std::size_t>(t)];
            for (int j = 0; j < input_dim; ++j)
                for (int p = 0; p < k[static_cast<std::size_t>(j)]; ++p) v *= x(j);
            phi(t) = v;
        }
        return phi;
    }

    RowVector eval_deriv(const RowVector& x, int wrt) const {
        RowVector dphi(size());
        for (long t = 0; t < size(); ++t) {
            const auto& k = exponents[static_cast<std::size_t>(t)];
            const int kw = k[static_cast<std::size_t>(wrt)];
            if (kw == 0) {
                dphi(t) = 0.0;
                continue;
            }
            double v = static_cast<double>(kw);
            for (int j = 0; j < input_dim; ++j) {
                const int pow = j == wrt ? k[static_cast<std::size_t>(j)] - 1 : k[static_cast<std::size_t>(j)];
                for (int p = 0; p < pow; ++p) v *= x(j);
            }
            dphi(t) = v;
        }
        return dphi;
    }

    Matrix eval_matrix(const Matrix& X) const {
        Matrix phi(X.rows(), size());
        for (long i = 0; i < X.rows(); ++i) phi.row(i) = eval(X.row(i));
        return phi;
    }

    Matrix eval_deriv_matrix(const Matrix& X, int wrt) const {
        Matrix dphi(X.rows(), size());
        for (long i = 0; i < X.rows(); ++i) dphi.row(i) = eval_deriv(X.row(i), wrt);
        return dphi;
    }

  private:
    static void emit(PolyBasis& b, std::vector<int>& tuple, int pos, int remaining) {
        if (pos == b.input_dim - 1) {
            tuple[static_cast<std::size_t>(pos)] = remaining;
            b.exponents.push_back(tuple);
            tuple[static_cast<std::size_t>(pos)] = 0;
            return;
        }
        for (int k = remaining; k >= 0; --k) {
            tuple[static_cast<std::size_t>(pos)] = k;
            emit(b, tuple, pos + 1, remaining - k);
        }
        tuple[static_cast<std::size_t>(pos)] = 0;
    }
};

enum class RegressionKind { Plain, Ridge, Differential };

struct RegressionModel {
    PolyBasis basis;
    Vector beta;
    double mu_y = 0.0;
    RowVector mu_phi;
    Vector eig_values;          // of the fitted normal matrix, descending
    Matrix eig_vectors;
    std::vector<bool> retained; // eigenvalues above the significance threshold
    RegressionKind kind = RegressionKind::Plain;
    double lambda = 0.0;
    Vector lambda_j; // differential fits only
    std::vector<std::string> warnings;

    double predict(const RowVector& x) const { return mu_y + (basis.eval(x) - mu_phi).dot(beta); }

    RowVector predict_gradient(const RowVector& x) const {
        RowVector g(basis.input_dim);
        for (int j = 0; j < basis.input_dim; ++j) g(j) = basis.eval_deriv(x, j).dot(beta);
        return g;
    }

    Vector predict_batch(const Matrix& X) const {
        Vector out(X.rows());
        for (long i = 0; i < X.rows(); ++i) out(i) = predict(X.row(i));
        return out;
    }
};

namespace detail {

struct EigLs {
    SymEigen eig;
    std::vector<bool> retained;
    double threshold = 0.0;
};

/// Decompose a normal matrix and flag significant eigenvalues (threshold is
/// `scale` times the mean trace).
inline EigLs decompose(const Matrix& normal, double threshold_scale) {
    EigLs d;
    d.eig = eigen_sym(normal);
    d.threshold = threshold_scale * d.eig.values.sum() / static_cast<double>(d.eig.values.size());
    d.retained.resize(static_cast<std::size_t>(d.eig.values.size()));
    for (Eigen::Index k = 0; k < d.eig.values.size(); ++k)
        d.retained[static_cast<std::size_t>(k)] = d.eig.values(k) > d.threshold;
    return d;
}

/// Apply P f(D) P^T to a vector, where f maps eigenvalues to inverse weights
/// (zero on insignificant ones).
template <typename F>
Vector apply_spectral(const EigLs& d, F&& f, const Vector& rhs) {
    const Vector proj = d.eig.vectors.transpose() * rhs;
    Vector scaled(proj.size());
    for (Eigen::Index k = 0; k < proj.size(); ++k)
        scaled(k) = d.retained[static_cast<std::size_t>(k)] ? f(d.eig.values(k)) * proj(k) : 0.0;
    return d.eig.vectors * scaled;
}

} // namespace detail

inline constexpr double kEigenThresholdScale = 1e-8; // of the mean trace

/// SVD-style regression in the eigenvalue form: insignificant directions of
/// phi^T phi are excluded from the pseudo-inverse.
inline RegressionModel fit_svd(const Matrix& X, const Vector& Y, const PolyBasis& basis,
                               double threshold_scale = kEigenThresholdScale) {
    RegressionModel m;
    m.basis = basis;
    m.kind = RegressionKind::Plain;
    Matrix phi = basis.eval_matrix(X);
    m.mu_phi = phi.colwise().mean();
    phi.rowwise() -= m.mu_phi;
    m.mu_y = Y.mean();
    const Vector yc = Y.array() - m.mu_y;

    const detail::EigLs d = detail::decompose(phi.transpose() * phi, threshold_scale);
    m.beta = detail::apply_spectral(d, [](double e) { return 1.0 / e; }, phi.transpose() * yc);
    m.eig_values = d.eig.values;
    m.eig_vectors = d.eig.vectors;
    m.retained = d.retained;
    return m;
}

/// Tikhonov ridge: inverse eigenvalue weights 1/(D_ii + lambda^2) on the
/// significant directions, zero elsewhere. lambda = 0 recovers fit_svd.
inline RegressionModel fit_ridge(const Matrix& X, const Vector& Y, const PolyBasis& basis,
                                 double lambda, double threshold_scale = kEigenThresholdScale) {
    if (lambda < 0.0) throw ConfigError("fit_ridge: lambda must be nonnegative");
    RegressionModel m;
    m.basis = basis;
    m.kind = RegressionKind::Ridge;
    m.lambda = lambda;
    Matrix phi = basis.eval_matrix(X);
    m.mu_phi = phi.colwise().mean();
    phi.rowwise() -= m.mu_phi;
    m.mu_y = Y.mean();
    const Vector yc = Y.array() - m.mu_y;

    const detail::EigLs d = detail::decompose(phi.transpose() * phi, threshold_scale);
    const double l2 = lambda * lambda;
    m.beta = detail::apply_spectral(d, [l2](double e) { return 1.0 / (e + l2); }, phi.transpose() * yc);
    m.eig_values = d.eig.values;
    m.eig_vectors = d.eig.vectors;
    m.retained = d.retained;
    return m;
}

/// Expanded cross-validation objective for the ridge parameter,
/// g(lambda) = K^T L^{-1}(lambda) M L^{-1}(lambda) K - 2 K^T L^{-1}(lambda) L,
/// equal to the validation SSE up to the constant Y_V^T Y_V.
class RidgeCvObjective {
  public:
    RidgeCvObjective(const Matrix& X, const Vector& Y, const Matrix& Xv, const Vector& Yv,
                     const PolyBasis& basis, double threshold_scale = kEigenThresholdScale) {
        if (Xv.rows() == 0) throw std::invalid_argument("ridge CV: empty validation set");
        Matrix phi = basis.eval_matrix(X);
        const RowVector mu_phi = phi.colwise().mean();
        phi.rowwise() -= mu_phi;
        const double mu_y = Y.mean();
        const Vector yc = Y.array() - mu_y;
        Matrix phiv = basis.eval_matrix(Xv);
        phiv.rowwise() -= mu_phi; // training means throughout
        const Vector yvc = Yv.array() - mu_y;

        d_ = detail::decompose(phi.transpose() * phi, threshold_scale);
        k_ = d_.eig.vectors.transpose() * (phi.transpose() * yc);
        l_ = d_.eig.vectors.transpose() * (phiv.transpose() * yvc);
        mm_ = d_.eig.vectors.transpose() * (phiv.transpose() * phiv) * d_.eig.vectors;
    }

    double operator()(double lambda) const {
        const double l2 = lambda * lambda;
        Vector lk(k_.size());
        for (Eigen::Index i = 0; i < k_.size(); ++i)
            lk(i) = d_.retained[static_cast<std::size_t>(i)] ? k_(i) / (d_.eig.values(i) + l2) : 0.0;
        return lk.dot(mm_ * lk) - 2.0 * lk.dot(l_);
    }

  private:
    detail::EigLs d_;
    Vector k_, l_;
    Matrix mm_;
};

/// Golden-section minimization of the CV objective over log lambda.
inline double cv_select_lambda(const Matrix& X, const Vector& Y, const Matrix& Xv,
                               const Vector& Yv, const PolyBasis& basis,
                               double lo = 1e-6, double hi = 1e3, int iterations = 60) {
    const RidgeCvObjective g(X, Y, Xv, Yv, basis);
    const double phi_ratio = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::log(lo), b = std::log(hi);
    double c = b - phi_ratio * (b - a);
    double d = a + phi_ratio * (b - a);
    double fc = g(std::exp(c)), fd = g(std::exp(d));
    for (int it = 0; it < iterations; ++it) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi_ratio * (b - a);
            fc = g(std::exp(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi_ratio * (b - a);
            fd = g(std::exp(d));
        }
    }
    return std::exp(0.5 * (a + b));
}

/// Differential regression: values and derivative labels fitted jointly, per-
/// input weights lambda_j = lambda^2 |Y|^2 / |Z_j|^2 balancing the cost terms.
/// phi is centred, its derivative columns are used raw.
inline RegressionModel fit_differential(const Matrix& X, const Vector& Y, const Matrix& Z,
                                        const PolyBasis& basis, double lambda = 1.0,
                                        double threshold_scale = kEigenThresholdScale) {
    if (lambda < 0.0) throw ConfigError("fit_differential: lambda must be nonnegative");
    if (Z.rows() != X.rows() || Z.cols() != basis.input_dim)
        throw std::invalid_argument("fit_differential: differential label shape mismatch");
    RegressionModel m;
    m.basis = basis;
    m.kind = RegressionKind::Differential;
    m.lambda = lambda;
    Matrix phi = basis.eval_matrix(X);
    m.mu_phi = phi.colwise().mean();
    phi.rowwise() -= m.mu_phi;
    m.mu_y = Y.mean();
    const Vector yc = Y.array() - m.mu_y;
    const double y_norm2 = yc.squaredNorm();

    Matrix normal = phi.transpose() * phi;
    Vector rhs = phi.transpose() * yc;
    m.lambda_j.resize(basis.input_dim);
    for (int j = 0; j < basis.input_dim; ++j) {
        const double z_norm2 = Z.col(j).squaredNorm();
        if (!(z_norm2 > 0.0)) {
            m.lambda_j(j) = 0.0;
            m.warnings.push_back("differential column " + std::to_string(j) +
                                 " has zero norm; its weight was set to 0");
            continue;
        }
        m.lambda_j(j) = lambda * lambda * y_norm2 / z_norm2;
        const Matrix phij = basis.eval_deriv_matrix(X, j);
        normal.noalias() += m.lambda_j(j) * (phij.transpose() * phij);
        rhs.noalias() += m.lambda_j(j) * (phij.transpose() * Z.col(j));
    }

    const detail::EigLs d = detail::decompose(normal, threshold_scale);
    m.beta = detail::apply_spectral(d, [](double e) { return 1.0 / e; }, rhs);
    m.eig_values = d.eig.values;
    m.eig_vectors = d.eig.vectors;
    m.retained = d.retained;
    return m;
}

inline const char* regression_kind_name(RegressionKind k) {
    switch (k) {
        case RegressionKind::Plain: return "plain";
        case RegressionKind::Ridge: return "ridge";
        default: return "differential";
    }
}

inline RegressionKind regression_kind_from(const std::string& name) {
    if (name == "plain") return RegressionKind::Plain;
    if (name == "ridge") return RegressionKind::Ridge;
    if (name == "differential") return RegressionKind::Differential;
    throw IoError("unknown regression kind: " + name);
}

inline void save_regression(std::ostream& out, const RegressionModel& m) {
    out << "dml-regression 1\n";
    out << "kind " << regression_kind_name(m.kind) << '\n';
    out << "basis " << m.basis.input_dim << ' ' << m.basis.max_degree << '\n';
    ser::write_scalar(out, "lambda", m.lambda);
    ser::write_scalar(out, "mu_y", m.mu_y);
    ser::write_vector(out, "mu_phi", m.mu_phi.transpose());
    ser::write_vector(out, "beta", m.beta);
    ser::write_vector(out, "eig_values", m.eig_values);
    ser::write_matrix(out, "eig_vectors", m.eig_vectors);
    out << "retained " << m.retained.size();
    for (bool r : m.retained) out << ' ' << (r ? 1 : 0);
    out << '\n';
    ser::write_vector(out, "lambda_j", m.lambda_j.size() > 0 ? m.lambda_j : Vector::Zero(0));
}

inline RegressionModel load_regression(std::istream& in) {
    const std::string ctx = "regression";
    ser::expect(in, "dml-regression", ctx);
    if (ser::read_long(in, ctx) != 1) throw IoError("regression: unsupported schema version");
    RegressionModel m;
    ser::expect(in, "kind", ctx);
    m.kind = regression_kind_from(ser::read_word(in, ctx));
    ser::expect(in, "basis", ctx);
    const int n = static_cast<int>(ser::read_long(in, ctx));
    const int deg = static_cast<int>(ser::read_long(in, ctx));
    m.basis = PolyBasis::make(n, deg);
    m.lambda = ser::read_scalar(in, "lambda", ctx);
    m.mu_y = ser::read_scalar(in, "mu_y", ctx);
    m.mu_phi = ser::read_vector(in, "mu_phi", ctx).transpose();
    m.beta = ser::read_vector(in, "beta", ctx);
    m.eig_values = ser::read_vector(in, "eig_values", ctx);
    m.eig_vectors = ser::read_matrix(in, "eig_vectors", ctx);
    ser::expect(in, "retained", ctx);
    const long nr = ser::read_long(in, ctx);
    m.retained.resize(static_cast<std::size_t>(nr));
    for (long i = 0; i < nr; ++i) m.retained[static_cast<std::size_t>(i)] = ser::read_long(in, ctx) != 0;
    m.lambda_j = ser::read_vector(in, "lambda_j", ctx);
    return m;
}

} // namespace dml
