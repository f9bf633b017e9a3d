#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "dml/market.hpp"
#include "dml/preprocess.hpp"
#include "dml/rng.hpp"

using namespace dml;

namespace {

Matrix random_matrix(long rows, long cols, Rng& rng) {
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

TrainingSet random_training_set(long m, long n, Rng& rng) {
    TrainingSet ts;
    ts.X = random_matrix(m, n, rng);
    ts.X.array().rowwise() *= RowVector::LinSpaced(n, 1.0, 3.0).array(); // distinct scales
    ts.Y = random_matrix(m, 1, rng).col(0);
    ts.Z = random_matrix(m, n, rng);
    return ts;
}

} // namespace

TEST_CASE("normalization basics") {
    Rng rng(11);

    SECTION("standard-normal labels are left nearly untouched") {
        TrainingSet ts = random_training_set(20000, 2, rng);
        const NormalizationParams p = fit_normalization(ts);
        CHECK(std::abs(p.mu_y) < 0.03);
        CHECK(p.sigma_y == Catch::Approx(1.0).margin(0.03));
    }

    SECTION("normalized labels have mean 0 and unit variance") {
        TrainingSet ts = random_training_set(512, 3, rng);
        ts.Y = 5.0 + 3.0 * ts.Y.array();
        const NormalizationParams p = fit_normalization(ts);
        const TrainingSet t1 = apply_normalization(p, ts);
        CHECK(t1.Y.mean() == Catch::Approx(0.0).margin(1e-12));
        CHECK(t1.Y.squaredNorm() / ts.rows() == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("perfectly linear data gives unit normalized differentials") {
        TrainingSet ts = random_training_set(256, 2, rng);
        ts.Y = 2.0 * ts.X.col(0);
        ts.Z.col(0).setConstant(2.0);
        ts.Z.col(1).setZero();
        const NormalizationParams p = fit_normalization(ts);
        const TrainingSet t1 = apply_normalization(p, ts);
        for (long i = 0; i < ts.rows(); ++i) CHECK(t1.Z(i, 0) == Catch::Approx(1.0).epsilon(1e-12));
    }

    SECTION("constant labels are rejected") {
        TrainingSet ts = random_training_set(64, 2, rng);
        ts.Y.setConstant(3.0);
        CHECK_THROWS_AS(fit_normalization(ts), NumericError);
    }

    SECTION("round trip restores original units") {
        TrainingSet ts = random_training_set(128, 3, rng);
        const NormalizationParams p = fit_normalization(ts);
        const TrainingSet t1 = apply_normalization(p, ts);
        PipelineConfig cfg; // basic path
        const PreprocessPipeline pipe = PreprocessPipeline::fit(ts, cfg);
        const Vector y0 = pipe.invert_values(t1.Y);
        const Matrix z0 = pipe.invert_gradients(t1.Z);
        CHECK((y0 - ts.Y).lpNorm<Eigen::Infinity>() < 1e-11);
        CHECK((z0 - ts.Z).lpNorm<Eigen::Infinity>() < 1e-11);
    }
}

TEST_CASE("fit_pca filters constants and redundancies") {
    Rng rng(23);
    const long m = 2048;

    Matrix base = random_matrix(m, 3, rng);
    base.rowwise() -= RowVector(base.colwise().mean());

    SECTION("duplicated column is filtered") {
        Matrix x(m, 4);
        x << base, base.col(1);
        x.rowwise() -= RowVector(x.colwise().mean());
        const PCATransform t = fit_pca(x, 1e-8);
        CHECK(t.output_dim() == 3);
    }

    SECTION("orthonormality of the transformed data") {
        const PCATransform t = fit_pca(base, 1e-10);
        const Matrix xt = pca_transform_x(t, base);
        const Matrix gram = xt.transpose() * xt / static_cast<double>(m);
        CHECK((gram - Matrix::Identity(3, 3)).lpNorm<Eigen::Infinity>() < 1e-8);
    }

    SECTION("iid unit-variance columns give near-identity eigenvalues") {
        Matrix x = random_matrix(60000, 3, rng);
        x.rowwise() -= RowVector(x.colwise().mean());
        const PCATransform t = fit_pca(x, 1e-8);
        for (int k = 0; k < 3; ++k) CHECK(t.eigenvalues(k) == Catch::Approx(1.0).margin(0.03));
    }

    SECTION("constant column appended is filtered out") {
        Matrix x(m, 4);
        x << base, Matrix::Zero(m, 1);
        const PCATransform t = fit_pca(x, 1e-8);
        CHECK(t.output_dim() == 3);
    }
}

TEST_CASE("gradient transforms follow the inverse-transpose rule") {
    Rng rng(31);

    SECTION("identity transform is a pass-through") {
        PCATransform t;
        t.eigenvalues = Vector::Ones(3);
        t.vectors = Matrix::Identity(3, 3);
        const Matrix x = random_matrix(10, 3, rng);
        CHECK((pca_transform_x(t, x) - x).norm() == 0.0);
        CHECK((pca_transform_z(t, x) - x).norm() == 0.0);
    }

    SECTION("correlated pair from the two-dimensional worked example") {
        // X1, X2 standard normal with correlation 1/2 and Y = X2 - X1:
        // the differential along the first principal axis (X1+X2)/sqrt(2)
        // vanishes identically.
        const long m = 100000;
        Matrix x(m, 2);
        Rng r2(57);
        for (long i = 0; i < m; ++i) {
            const double a = r2.normal(), b = r2.normal();
            x(i, 0) = a;
            x(i, 1) = 0.5 * a + std::sqrt(1.0 - 0.25) * b;
        }
        x.rowwise() -= RowVector(x.colwise().mean());
        Matrix z(m, 2);
        z.col(0).setConstant(-1.0);
        z.col(1).setConstant(1.0);

        const PCATransform t = fit_pca(x, 1e-8);
        CHECK(t.eigenvalues(0) == Catch::Approx(1.5).margin(0.02));
        CHECK(t.eigenvalues(1) == Catch::Approx(0.5).margin(0.02));
        const Matrix zt = pca_transform_z(t, z);
        // first transformed differential column ~ 0
        CHECK(zt.col(0).lpNorm<Eigen::Infinity>() < 0.05);
    }

    SECTION("gradient round-trip through a random rotation") {
        const long m = 512, n = 4;
        Matrix x = random_matrix(m, n, rng);
        x.rowwise() -= RowVector(x.colwise().mean());
        const PCATransform t = fit_pca(x, 1e-12);
        const Matrix g = random_matrix(m, n, rng);
        const Matrix back = pca_invert_gradient(t, pca_transform_z(t, g));
        CHECK((back - g).lpNorm<Eigen::Infinity>() < 1e-10);
    }

    SECTION("chain rule against finite differences through the full map") {
        // smooth test function f(x) = sin(x . c); the gradient computed in
        // tilde coordinates and mapped back must match the direct gradient
        const long m = 400, n = 3;
        Matrix x = random_matrix(m, n, rng);
        x.rowwise() -= RowVector(x.colwise().mean());
        const PCATransform t = fit_pca(x, 1e-12);
        const Vector c = Vector::LinSpaced(n, 0.5, 1.5);

        const RowVector x0 = x.row(7);
        RowVector direct(n);
        for (int j = 0; j < n; ++j) direct(j) = std::cos(x0.dot(c)) * c(j);

        const Matrix map = t.vectors * t.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal();
        const Matrix unmap = t.eigenvalues.cwiseSqrt().asDiagonal() * t.vectors.transpose();
        const RowVector xt0 = x0 * map;
        RowVector gt(t.output_dim());
        for (Eigen::Index j = 0; j < t.output_dim(); ++j) {
            const double h = 1e-7;
            RowVector up = xt0, dn = xt0;
            up(j) += h;
            dn(j) -= h;
            gt(j) = (std::sin((up * unmap).dot(c)) - std::sin((dn * unmap).dot(c))) / (2.0 * h);
        }
        const Matrix mapped = pca_invert_gradient(t, Matrix(gt));
        CHECK((mapped.row(0) - direct).lpNorm<Eigen::Infinity>() <
              1e-6 * std::max(1.0, direct.lpNorm<Eigen::Infinity>()));
    }
}

TEST_CASE("differential PCA") {
    SECTION("basket call dataset retains exactly the basket direction") {
        BachelierModel m;
        const int n = 7;
        m.spot = Vector::Constant(n, 100.0);
        m.vol = Vector::Constant(n, 20.0);
        m.correlation = random_correlation(n, 42);
        m.t1 = 1.0;
        m.t2 = 2.0;
        BasketCall call;
        call.weights = random_weights(n, 43);
        call.strike = 110.0;

        SamplingConfig scfg;
        scfg.m = 8192;
        scfg.seed = 11;
        const TrainingSet ts = simulate_dataset(m, call, scfg);

        // raw-coordinate differential PCA: the single relevant direction is
        // a/|a| with eigenvalue q |a|^2, q the in-the-money path fraction
        const DiffPCATransform t = fit_diff_pca(ts.Z, 1e-4);
        REQUIRE(t.output_dim() == 1);
        const Vector dir = t.vectors.col(0);
        const Vector a_unit = call.weights / call.weights.norm();
        CHECK(std::abs(dir.dot(a_unit)) >= 1.0 - 1e-6);

        double q = 0.0; // in-the-money fraction: ramp above its midpoint
        for (long i = 0; i < ts.rows(); ++i)
            if (ts.Z.row(i).norm() > 0.5 * call.weights.norm()) q += 1.0;
        q /= static_cast<double>(ts.rows());
        CHECK(t.relevances(0) == Catch::Approx(q * call.weights.squaredNorm()).epsilon(0.02));
    }

    SECTION("all-zero differentials are rejected") {
        CHECK_THROWS_AS(fit_diff_pca(Matrix::Zero(32, 3), 1e-4), NumericError);
    }

    SECTION("two orthogonal constant patterns give two retained directions") {
        const long m = 64;
        Matrix z(m, 4);
        Vector u(4), v(4);
        u << 1, 1, 0, 0;
        v << 0, 0, 1, -1;
        for (long i = 0; i < m; ++i) z.row(i) = (i % 2 == 0 ? u : v).transpose();
        const DiffPCATransform t = fit_diff_pca(z, 1e-4);
        REQUIRE(t.output_dim() == 2);
        const Vector d0 = t.vectors.col(0), d1 = t.vectors.col(1);
        const double m00 = std::abs(d0.dot(u.normalized()));
        const double m01 = std::abs(d0.dot(v.normalized()));
        CHECK(std::max(m00, m01) >= 1.0 - 1e-10);
        const double m10 = std::abs(d1.dot(u.normalized()));
        const double m11 = std::abs(d1.dot(v.normalized()));
        CHECK(std::max(m10, m11) >= 1.0 - 1e-10);
    }
}

TEST_CASE("full pipeline") {
    Rng rng(71);

    SECTION("rotation-only pipeline round-trips values exactly") {
        TrainingSet ts = random_training_set(1024, 3, rng);
        PipelineConfig cfg;
        cfg.use_pca = true;
        const PreprocessPipeline pipe = PreprocessPipeline::fit(ts, cfg);
        const TrainingSet t3 = pipe.transform(ts);
        const Vector y0 = pipe.invert_values(t3.Y);
        CHECK((y0 - ts.Y).lpNorm<Eigen::Infinity>() < 1e-10);
    }

    SECTION("orthonormality plus rotation preservation through differential PCA") {
        const long m = 4096, n = 5;
        Matrix raw = random_matrix(m, n, rng);
        Matrix mixer = random_matrix(n, n, rng);
        TrainingSet ts;
        ts.X = raw * mixer;
        ts.Z.resize(m, n);
        Vector u = Vector::LinSpaced(n, 1.0, 2.0);
        Vector w = Vector::Zero(n);
        w(0) = 1.0;
        w(n - 1) = -1.0;
        for (long i = 0; i < m; ++i) {
            const double s = std::sin(0.02 * static_cast<double>(i));
            ts.Z.row(i) = (u + s * w).transpose();
        }
        ts.Y = ts.X * u;

        PipelineConfig cfg;
        cfg.use_pca = true;
        cfg.use_diffpca = true;
        const PreprocessPipeline pipe = PreprocessPipeline::fit(ts, cfg);
        const TrainingSet t3 = pipe.transform(ts);

        const Matrix gram = t3.X.transpose() * t3.X / static_cast<double>(m);
        CHECK((gram - Matrix::Identity(t3.cols(), t3.cols())).lpNorm<Eigen::Infinity>() < 1e-8);

        const Matrix zgram = t3.Z.transpose() * t3.Z / static_cast<double>(m);
        for (long i = 0; i < zgram.rows(); ++i)
            for (long j = 0; j < zgram.cols(); ++j)
                if (i != j) CHECK(std::abs(zgram(i, j)) < 1e-8);
    }

    SECTION("gradient of a known quadratic through the full pipeline") {
        const long m = 2048, n = 4;
        Matrix raw = random_matrix(m, n, rng);
        Matrix mixer = random_matrix(n, n, rng);
        const Matrix q = mixer.transpose() * mixer; // SPD quadratic form
        TrainingSet ts;
        ts.X = raw;
        ts.Y.resize(m);
        ts.Z.resize(m, n);
        for (long i = 0; i < m; ++i) {
            const Vector x = ts.X.row(i).transpose();
            ts.Y(i) = 0.5 * x.dot(q * x);
            ts.Z.row(i) = (q * x).transpose();
        }

        PipelineConfig cfg;
        cfg.use_pca = true;
        cfg.use_diffpca = true;
        cfg.diffpca_epsilon = 1e-10; // quadratic spans all directions; keep them
        const PreprocessPipeline pipe = PreprocessPipeline::fit(ts, cfg);
        const TrainingSet t3 = pipe.transform(ts);

        const Matrix back = pipe.invert_gradients(t3.Z);
        CHECK((back - ts.Z).lpNorm<Eigen::Infinity>() <
              1e-9 * std::max(1.0, ts.Z.lpNorm<Eigen::Infinity>()));
    }

    SECTION("basket dataset collapses to one pipeline dimension") {
        BachelierModel m;
        m.spot = Vector::Constant(7, 100.0);
        m.vol = Vector::Constant(7, 20.0);
        m.correlation = random_correlation(7, 42);
        m.t1 = 1.0;
        m.t2 = 2.0;
        BasketCall call;
        call.weights = random_weights(7, 43);
        call.strike = 110.0;
        SamplingConfig scfg;
        scfg.m = 4096;
        scfg.seed = 9;
        const TrainingSet ts = simulate_dataset(m, call, scfg);

        PipelineConfig cfg;
        cfg.use_pca = true;
        cfg.use_diffpca = true;
        const PreprocessPipeline pipe = PreprocessPipeline::fit(ts, cfg);
        CHECK(pipe.output_dim() == 1);
    }

    SECTION("stage-order violation") {
        PreprocessPipeline pipe;
        CHECK_THROWS_AS(pipe.transform_states(Matrix::Zero(1, 1)), std::logic_error);
    }

    SECTION("serialization reproduces transforms bit-exactly") {
        TrainingSet ts = random_training_set(512, 4, rng);
        PipelineConfig cfg;
        cfg.use_pca = true;
        cfg.use_diffpca = true;
        cfg.diffpca_epsilon = 1e-12;
        const PreprocessPipeline pipe = PreprocessPipeline::fit(ts, cfg);

        std::stringstream ss;
        pipe.save(ss);
        const PreprocessPipeline back = PreprocessPipeline::load(ss);

        const Matrix states = random_matrix(32, 4, rng);
        CHECK(pipe.transform_states(states) == back.transform_states(states));
        const Matrix g = random_matrix(32, static_cast<long>(pipe.output_dim()), rng);
        CHECK(pipe.invert_gradients(g) == back.invert_gradients(g));
    }
}
