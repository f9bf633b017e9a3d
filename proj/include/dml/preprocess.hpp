#pragma once

// Data preparation for differential training: label/input normalization,
// PCA with constant/redundant-input filtering, differential PCA with
// irrelevance filtering, and the exact inverse maps that take predicted
// values and gradients back to original units.

#include <optional>
#include <ostream>
#include <string>

#include "dml/dataset.hpp"
#include "dml/errors.hpp"
#include "dml/linalg.hpp"
#include "dml/serialize.hpp"

namespace dml {

struct NormalizationParams {
    Vector mu_x;
    Vector sigma_x; // used on the basic path (no PCA); empty when PCA follows
    double mu_y = 0.0;
    double sigma_y = 1.0;
    bool scale_inputs = true;
};

/// Means and population standard deviations across examples. Differential
/// labels rescale by sigma_j / sigma_Y so all label streams are unit-free.
inline NormalizationParams fit_normalization(const TrainingSet& ts, bool scale_inputs = true) {
    if (ts.rows() < 2) throw NumericError("fit_normalization: needs at least 2 examples");
    NormalizationParams p;
    p.scale_inputs = scale_inputs;
    const double m = static_cast<double>(ts.rows());
    p.mu_y = ts.Y.mean();
    p.sigma_y = std::sqrt((ts.Y.array() - p.mu_y).square().sum() / m);
    if (!(p.sigma_y > 0.0))
        throw NumericError("fit_normalization: degenerate labels (zero variance)");
    p.mu_x = ts.X.colwise().mean();
    if (scale_inputs) {
        p.sigma_x.resize(ts.cols());
        for (long j = 0; j < ts.cols(); ++j) {
            const double s2 = (ts.X.col(j).array() - p.mu_x(j)).square().sum() / m;
            p.sigma_x(j) = std::sqrt(s2);
            if (!(p.sigma_x(j) > 0.0))
                throw NumericError("fit_normalization: constant input column " + std::to_string(j) +
                                   " (filter it, or use the PCA path)");
        }
    }
    return p;
}

inline TrainingSet apply_normalization(const NormalizationParams& p, const TrainingSet& ts) {
    TrainingSet out;
    out.X = ts.X.rowwise() - p.mu_x.transpose();
    if (p.scale_inputs) out.X = out.X.array().rowwise() / p.sigma_x.transpose().array();
    out.Y = (ts.Y.array() - p.mu_y) / p.sigma_y;
    out.Z = ts.Z / p.sigma_y;
    if (p.scale_inputs) out.Z = out.Z.array().rowwise() * p.sigma_x.transpose().array();
    return out;
}

struct PCATransform {
    Vector eigenvalues; // retained, descending
    Matrix vectors;     // n x n_tilde, orthonormal columns
    double epsilon = 0.0;

    Eigen::Index input_dim() const { return vectors.rows(); }
    Eigen::Index output_dim() const { return vectors.cols(); }
};

/// Eigen-decomposition of (1/m) X^T X on centred inputs; eigenvalues at or
/// below epsilon (constant or linearly redundant directions) are dropped.
/// Transformed inputs X P D^{-1/2} are orthonormal.
inline PCATransform fit_pca(const Matrix& x_centred, double epsilon) {
    const double m = static_cast<double>(x_centred.rows());
    const Matrix cov = x_centred.transpose() * x_centred / m;
    const SymEigen eig = eigen_sym(cov);
    Eigen::Index keep = 0;
    while (keep < eig.values.size() && eig.values(keep) > epsilon) ++keep;
    if (keep == 0) throw NumericError("fit_pca: all input directions filtered out");
    PCATransform t;
    t.epsilon = epsilon;
    t.eigenvalues = eig.values.head(keep);
    t.vectors = eig.vectors.leftCols(keep);
    return t;
}

inline Matrix pca_transform_x(const PCATransform& t, const Matrix& x_centred) {
    if (x_centred.cols() != t.input_dim()) throw std::invalid_argument("pca_transform_x: dimension mismatch");
    return x_centred * t.vectors * t.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal();
}

/// Gradients transform with the inverse-transpose of the input map:
/// Z -> Z P D^{1/2}.
inline Matrix pca_transform_z(const PCATransform& t, const Matrix& z) {
    if (z.cols() != t.input_dim()) throw std::invalid_argument("pca_transform_z: dimension mismatch");
    return z * t.vectors * t.eigenvalues.cwiseSqrt().asDiagonal();
}

/// Inverse map for predicted gradients: g -> g D^{-1/2} P^T.
inline Matrix pca_invert_gradient(const PCATransform& t, const Matrix& g_tilde) {
    if (g_tilde.cols() != t.output_dim())
        throw std::invalid_argument("pca_invert_gradient: dimension mismatch");
    return g_tilde * t.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal() * t.vectors.transpose();
}

struct DiffPCATransform {
    Vector relevances; // retained eigenvalues of (1/m) Z^T Z, descending
    Matrix vectors;    // n_tilde x n3, orthonormal columns
    double epsilon_prime = 0.0;
    bool centred = false;

    Eigen::Index input_dim() const { return vectors.rows(); }
    Eigen::Index output_dim() const { return vectors.cols(); }
};

/// PCA on the differential labels. Non-central by default (constant
/// differentials are linear risk factors and must be kept); the centred
/// variant isolates nonlinear factors. Directions whose relevance is at or
/// below epsilon_prime are dropped.
inline DiffPCATransform fit_diff_pca(const Matrix& z_tilde, double epsilon_prime,
                                     bool centred = false) {
    const double m = static_cast<double>(z_tilde.rows());
    Matrix z = z_tilde;
    if (centred) z.rowwise() -= RowVector(z_tilde.colwise().mean());
    const Matrix cov = z.transpose() * z / m;
    const SymEigen eig = eigen_sym(cov);
    Eigen::Index keep = 0;
    while (keep < eig.values.size() && eig.values(keep) > epsilon_prime) ++keep;
    if (keep == 0)
        throw NumericError("fit_diff_pca: no relevant directions (degenerate differential labels)");
    DiffPCATransform t;
    t.epsilon_prime = epsilon_prime;
    t.centred = centred;
    t.relevances = eig.values.head(keep);
    t.vectors = eig.vectors.leftCols(keep);
    return t;
}

inline Matrix diff_pca_transform(const DiffPCATransform& t, const Matrix& a) {
    if (a.cols() != t.input_dim()) throw std::invalid_argument("diff_pca_transform: dimension mismatch");
    return a * t.vectors; // rotation: applies to inputs and differentials alike
}

inline Matrix diff_pca_invert_gradient(const DiffPCATransform& t, const Matrix& g3) {
    if (g3.cols() != t.output_dim())
        throw std::invalid_argument("diff_pca_invert_gradient: dimension mismatch");
    return g3 * t.vectors.transpose();
}

struct PipelineConfig {
    bool use_pca = false;
    bool use_diffpca = false;            // requires use_pca
    double pca_epsilon_scale = 1e-8;     // times the mean eigenvalue
    double diffpca_epsilon = 1e-4;
    bool diffpca_centred = false;
};

/// The staged preparation pipeline: normalization, then optionally PCA, then
/// optionally differential PCA, with the exact inverse chain for predictions.
class PreprocessPipeline {
  public:
    static PreprocessPipeline fit(const TrainingSet& ts, const PipelineConfig& cfg = {}) {
        if (cfg.use_diffpca && !cfg.use_pca)
            throw ConfigError("preprocess: differential PCA requires the PCA stage");
        PreprocessPipeline p;
        p.cfg_ = cfg;
        p.norm_ = fit_normalization(ts, /*scale_inputs=*/!cfg.use_pca);
        TrainingSet t1 = apply_normalization(p.norm_, ts);
        if (cfg.use_pca) {
            const double mean_eig = t1.X.squaredNorm() / static_cast<double>(t1.rows() * t1.cols());
            p.pca_ = fit_pca(t1.X, cfg.pca_epsilon_scale * mean_eig);
            if (cfg.use_diffpca) {
                const Matrix z2 = pca_transform_z(*p.pca_, t1.Z);
                p.diffpca_ = fit_diff_pca(z2, cfg.diffpca_epsilon, cfg.diffpca_centred);
            }
        }
        p.fitted_ = true;
        return p;
    }

    TrainingSet transform(const TrainingSet& ts) const {
        require_fitted();
        TrainingSet out = apply_normalization(norm_, ts);
        if (pca_) {
            out.X = pca_transform_x(*pca_, out.X);
            out.Z = pca_transform_z(*pca_, out.Z);
        }
        if (diffpca_) {
            out.X = diff_pca_transform(*diffpca_, out.X);
            out.Z = diff_pca_transform(*diffpca_, out.Z);
        }
        return out;
    }

    /// States only (prediction-time input path, steps x0 -> x3).
    Matrix transform_states(const Matrix& x) const {
        require_fitted();
        Matrix out = x.rowwise() - norm_.mu_x.transpose();
        if (norm_.scale_inputs) out = out.array().rowwise() / norm_.sigma_x.transpose().array();
        if (pca_) out = pca_transform_x(*pca_, out);
        if (diffpca_) out = diff_pca_transform(*diffpca_, out);
        return out;
    }

    double invert_value(double y_hat) const {
        require_fitted();
        return norm_.mu_y + norm_.sigma_y * y_hat;
    }

    Vector invert_values(const Vector& y_hat) const {
        require_fitted();
        return (norm_.sigma_y * y_hat.array() + norm_.mu_y).matrix();
    }

    /// Predicted-gradient chain back to original units:
    /// sigma_Y * g P3^T D2^{-1/2} P2^T on the PCA path, sigma_Y * g / sigma_x
    /// on the basic path.
    Matrix invert_gradients(const Matrix& g_hat) const {
        require_fitted();
        Matrix g = g_hat;
        if (diffpca_) g = diff_pca_invert_gradient(*diffpca_, g);
        if (pca_) g = pca_invert_gradient(*pca_, g);
        if (norm_.scale_inputs) g = g.array().rowwise() / norm_.sigma_x.transpose().array();
        return norm_.sigma_y * g;
    }

    /// Width of the model-facing feature space (n3 in the staged notation).
    Eigen::Index output_dim() const {
        require_fitted();
        if (diffpca_) return diffpca_->output_dim();
        if (pca_) return pca_->output_dim();
        return norm_.mu_x.size();
    }

    const NormalizationParams& normalization() const { return norm_; }
    const std::optional<PCATransform>& pca() const { return pca_; }
    const std::optional<DiffPCATransform>& diff_pca() const { return diffpca_; }

    void save(std::ostream& out) const {
        require_fitted();
        out << "dml-pipeline 1\n";
        out << "scale_inputs " << (norm_.scale_inputs ? 1 : 0) << '\n';
        ser::write_scalar(out, "mu_y", norm_.mu_y);
        ser::write_scalar(out, "sigma_y", norm_.sigma_y);
        ser::write_vector(out, "mu_x", norm_.mu_x);
        if (norm_.scale_inputs) ser::write_vector(out, "sigma_x", norm_.sigma_x);
        out << "pca " << (pca_ ? 1 : 0) << '\n';
        if (pca_) {
            ser::write_scalar(out, "pca_epsilon", pca_->epsilon);
            ser::write_vector(out, "pca_eigenvalues", pca_->eigenvalues);
            ser::write_matrix(out, "pca_vectors", pca_->vectors);
        }
        out << "diffpca " << (diffpca_ ? 1 : 0) << '\n';
        if (diffpca_) {
            ser::write_scalar(out, "diffpca_epsilon", diffpca_->epsilon_prime);
            out << "diffpca_centred " << (diffpca_->centred ? 1 : 0) << '\n';
            ser::write_vector(out, "relevances", diffpca_->relevances);
            ser::write_matrix(out, "diffpca_vectors", diffpca_->vectors);
        }
    }

    static PreprocessPipeline load(std::istream& in) {
        const std::string ctx = "pipeline";
        ser::expect(in, "dml-pipeline", ctx);
        if (ser::read_long(in, ctx) != 1) throw IoError("pipeline: unsupported schema version");
        PreprocessPipeline p;
        ser::expect(in, "scale_inputs", ctx);
        p.norm_.scale_inputs = ser::read_long(in, ctx) != 0;
        p.norm_.mu_y = ser::read_scalar(in, "mu_y", ctx);
        p.norm_.sigma_y = ser::read_scalar(in, "sigma_y", ctx);
        p.norm_.mu_x = ser::read_vector(in, "mu_x", ctx);
        if (p.norm_.scale_inputs) p.norm_.sigma_x = ser::read_vector(in, "sigma_x", ctx);
        ser::expect(in, "pca", ctx);
        if (ser::read_long(in, ctx) != 0) {
            PCATransform t;
            t.epsilon = ser::read_scalar(in, "pca_epsilon", ctx);
            t.eigenvalues = ser::read_vector(in, "pca_eigenvalues", ctx);
            t.vectors = ser::read_matrix(in, "pca_vectors", ctx);
            p.pca_ = std::move(t);
        }
        ser::expect(in, "diffpca", ctx);
        if (ser::read_long(in, ctx) != 0) {
            DiffPCATransform t;
            t.epsilon_prime = ser::read_scalar(in, "diffpca_epsilon", ctx);
            ser::expect(in, "diffpca_centred", ctx);
            t.centred = ser::read_long(in, ctx) != 0;
            t.relevances = ser::read_vector(in, "relevances", ctx);
            t.vectors = ser::read_matrix(in, "diffpca_vectors", ctx);
            p.diffpca_ = std::move(t);
        }
        p.fitted_ = true;
        return p;
    }

  private:
    void require_fitted() const {
        if (!fitted_) throw std::logic_error("preprocess pipeline used before fit");
    }

    PipelineConfig cfg_;
    NormalizationParams norm_;
    std::optional<PCATransform> pca_;
    std::optional<DiffPCATransform> diffpca_;
    bool fitted_ = false;
};

} // namespace dml
