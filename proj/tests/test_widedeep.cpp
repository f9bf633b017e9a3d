#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dml/widedeep.hpp"

using namespace dml;

namespace {

Matrix random_matrix(long rows, long cols, Rng& rng) {
    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

WideDeepNet random_wd(const std::vector<int>& sizes, std::uint64_t seed,
                      WideBasis basis = WideBasis::identity_squares()) {
    WideDeepNet net(init_weights(sizes, seed), basis);
    Rng rng(seed ^ 0xF00D);
    for (Eigen::Index i = 0; i < net.w_wide.size(); ++i) net.w_wide(i) = 0.3 * rng.normal();
    net.deep.b.back()(0) = 0.1;
    return net;
}

} // namespace

TEST_CASE("wide basis feature maps") {
    Rng rng(2);
    const RowVector x = random_matrix(1, 3, rng).row(0);

    const WideBasis id = WideBasis::identity();
    CHECK(id.dim(3) == 3);
    CHECK((id.eval(x) - x).norm() == 0.0);

    const WideBasis sq = WideBasis::identity_squares();
    CHECK(sq.dim(3) == 6);
    CHECK(sq.eval(x)(4) == Catch::Approx(x(1) * x(1)));

    const WideBasis pw = WideBasis::powers({3, 1, 2});
    CHECK(pw.dim(3) == 6);
    CHECK(pw.eval(x)(2) == Catch::Approx(x(0) * x(0) * x(0)));
    CHECK(pw.eval(x)(3) == Catch::Approx(x(1)));

    // jacobians against finite differences
    for (const WideBasis& b : {id, sq, pw}) {
        const Matrix jac = b.jacobian(x);
        for (int j = 0; j < 3; ++j) {
            const double h = 1e-7;
            RowVector up = x, dn = x;
            up(j) += h;
            dn(j) -= h;
            const RowVector fd = (b.eval(up) - b.eval(dn)) / (2.0 * h);
            for (long t = 0; t < b.dim(3); ++t)
                CHECK(jac(t, j) == Catch::Approx(fd(t)).margin(1e-6));
        }
    }
}

TEST_CASE("wide-deep twin evaluation") {
    Rng rng(5);

    SECTION("zeroed deep head reduces to the wide regression") {
        WideDeepNet net = random_wd({3, 8, 1}, 11);
        net.deep.W.back().setZero();
        net.deep.b.back().setZero();
        const Matrix X = random_matrix(6, 3, rng);
        const TwinOutput out = wd_twin_eval(net, X);
        const Matrix phi = net.wide.eval_matrix(X);
        for (long i = 0; i < 6; ++i) {
            CHECK(out.y(i) == Catch::Approx(phi.row(i).dot(net.w_wide)).margin(1e-14));
            const RowVector grad = net.w_wide.transpose() * net.wide.jacobian(X.row(i));
            CHECK((out.x_bar.row(i) - grad).lpNorm<Eigen::Infinity>() < 1e-14);
        }
    }

    SECTION("zeroed wide weights reduce to the plain twin network") {
        WideDeepNet net = random_wd({3, 8, 1}, 13);
        net.w_wide.setZero();
        const Matrix X = random_matrix(6, 3, rng);
        const TwinOutput wd = wd_twin_eval(net, X);
        const TwinOutput plain = twin_eval(net.deep, X);
        CHECK((wd.y - plain.y).lpNorm<Eigen::Infinity>() == 0.0);
        CHECK((wd.x_bar - plain.x_bar).lpNorm<Eigen::Infinity>() == 0.0);
    }

    SECTION("random net gradient matches finite differences") {
        const WideDeepNet net = random_wd({4, 10, 10, 1}, 17);
        const Matrix X = random_matrix(5, 4, rng);
        const TwinOutput out = wd_twin_eval(net, X);
        for (long i = 0; i < 5; ++i) {
            for (int j = 0; j < 4; ++j) {
                const double h = 1e-6 * std::max(1.0, std::abs(X(i, j)));
                Matrix up = X.row(i), dn = X.row(i);
                up(0, j) += h;
                dn(0, j) -= h;
                const double fd = (wd_twin_eval(net, up).y(0) - wd_twin_eval(net, dn).y(0)) / (2.0 * h);
                CHECK(out.x_bar(i, j) == Catch::Approx(fd).epsilon(1e-5).margin(1e-8));
            }
        }
    }
}

TEST_CASE("output-layer re-solve and the worst-case guarantee") {
    Rng rng(23);
    const long m = 700;
    const Matrix X = random_matrix(m, 3, rng);
    Vector Y(m);
    for (long i = 0; i < m; ++i)
        Y(i) = std::sin(X(i, 0)) + X(i, 1) * X(i, 1) - 0.5 * X(i, 2) + 0.3 * rng.normal();
    TrainingSet data;
    data.X = X;
    data.Y = Y;
    data.Z = Matrix::Zero(m, 3);

    SECTION("untrained deep layers never fit worse than the wide regression") {
        for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull}) {
            WideDeepNet net = random_wd({3, 12, 1}, seed);
            const ResolveReport rep = resolve_output_layer(net, data);
            CHECK(rep.mse_after <= rep.mse_wide_only);
            CHECK(rep.mse_after <= rep.mse_before);
        }
    }

    SECTION("re-solve after training never degrades the fit") {
        WideDeepNet net = random_wd({3, 12, 1}, 5);
        TrainConfig cfg;
        cfg.epochs = 10;
        cfg.lambda = 0.0;
        cfg.batch_size = 128;
        cfg.seed = 5;
        train_widedeep(net, data, cfg);
        const ResolveReport rep = resolve_output_layer(net, data);
        CHECK(rep.mse_after <= rep.mse_before);
        CHECK(rep.mse_after <= rep.mse_wide_only);
    }

    SECTION("weighted re-solve respects the same guarantee") {
        WideDeepNet net = random_wd({3, 12, 1}, 6);
        Vector w = Vector::Ones(m);
        for (long i = 0; i < m; i += 7) w(i) = 10.0;
        const ResolveReport rep = resolve_output_layer(net, data, &w);
        CHECK(rep.mse_after <= rep.mse_wide_only);
    }
}

TEST_CASE("edge detection by Gaussian likelihood") {
    SECTION("1024 bivariate normals, 16 edges") {
        Rng rng(31);
        const long m = 1024;
        const Matrix X = random_matrix(m, 2, rng);
        const EdgeSet edges = detect_edges(X, 16);
        REQUIRE(edges.indices.size() == 16);

        // independent route: explicit inverse-covariance Mahalanobis ranking
        const RowVector mu = X.colwise().mean();
        const Matrix c = (X.rowwise() - mu).transpose() * (X.rowwise() - mu) / static_cast<double>(m);
        const Matrix cinv = c.inverse();
        Vector d2(m);
        for (long i = 0; i < m; ++i) {
            const RowVector v = X.row(i) - mu;
            d2(i) = v * cinv * v.transpose();
        }
        std::vector<long> order(static_cast<std::size_t>(m));
        std::iota(order.begin(), order.end(), 0L);
        std::stable_sort(order.begin(), order.end(), [&](long a, long b) { return d2(a) > d2(b); });
        for (int i = 0; i < 16; ++i) CHECK(edges.indices[static_cast<std::size_t>(i)] == order[static_cast<std::size_t>(i)]);

        // log-likelihoods decrease along the flagged list
        for (int i = 1; i < 16; ++i)
            CHECK(edges.log_likelihoods(i) >= edges.log_likelihoods(i - 1) - 1e-12);
    }

    SECTION("k = 0 gives an empty edge set") {
        Rng rng(32);
        const EdgeSet edges = detect_edges(random_matrix(64, 2, rng), 0);
        CHECK(edges.indices.empty());
    }

    SECTION("a lone outlier is flagged first") {
        Matrix X = Matrix::Zero(64, 1);
        Rng rng(33);
        for (long i = 0; i < 64; ++i) X(i, 0) = 0.01 * rng.normal();
        X(41, 0) = 10.0;
        const EdgeSet edges = detect_edges(X, 1);
        REQUIRE(edges.indices.size() == 1);
        CHECK(edges.indices[0] == 41);
    }

    SECTION("k above m/16 is rejected") {
        Rng rng(34);
        CHECK_THROWS_AS(detect_edges(random_matrix(64, 2, rng), 5), std::invalid_argument);
    }

    SECTION("singular covariance is reported") {
        Matrix X(32, 2);
        Rng rng(35);
        for (long i = 0; i < 32; ++i) {
            X(i, 0) = rng.normal();
            X(i, 1) = 2.0 * X(i, 0); // exactly collinear
        }
        CHECK_THROWS_AS(detect_edges(X, 2), NumericError);
    }
}

TEST_CASE("volatility oversampling of extreme states") {
    BachelierModel model;
    model.spot = Vector::Constant(1, 100.0);
    model.vol = Vector::Constant(1, 20.0);
    model.correlation = Matrix::Identity(1, 1);
    model.t1 = 1.0;
    model.t2 = 2.0;
    BasketCall call;
    call.weights = Vector::Constant(1, 1.0);
    call.strike = 110.0;

    SamplingConfig cfg;
    cfg.m = 16384;
    cfg.seed = 7;

    SECTION("multiplier 1 leaves the config unchanged") {
        const SamplingConfig same = oversample_edges_via_vol(cfg, 1.0);
        CHECK(same.vol_multiplier_to_horizon == 1.0);
        CHECK(same.m == cfg.m);
        CHECK(same.seed == cfg.seed);
    }

    SECTION("multiplier 2 doubles the spread of the states") {
        const TrainingSet base = simulate_dataset(model, call, cfg);
        const TrainingSet wide = simulate_dataset(model, call, oversample_edges_via_vol(cfg, 2.0));
        const double sd_base = std::sqrt((base.X.col(0).array() - base.X.col(0).mean()).square().mean());
        const double sd_wide = std::sqrt((wide.X.col(0).array() - wide.X.col(0).mean()).square().mean());
        CHECK(sd_wide == Catch::Approx(2.0 * sd_base).epsilon(0.05));
    }

    SECTION("multiplier below 1 is rejected") {
        CHECK_THROWS_AS(oversample_edges_via_vol(cfg, 0.5), std::invalid_argument);
    }
}

TEST_CASE("asymptotic-control training plumbing") {
    BachelierModel model;
    model.spot = Vector::Constant(1, 100.0);
    model.vol = Vector::Constant(1, 20.0);
    model.correlation = Matrix::Identity(1, 1);
    model.t1 = 1.0;
    model.t2 = 2.0;
    BasketCall call;
    call.weights = Vector::Constant(1, 1.0);
    call.strike = 110.0;

    SamplingConfig scfg;
    scfg.m = 1024;
    scfg.seed = 51;
    scfg.vol_multiplier_to_horizon = 1.5;
    const TrainingSet raw = simulate_dataset(model, call, scfg);
    const PreprocessPipeline pipe = PreprocessPipeline::fit(raw, PipelineConfig{});

    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 256;
    cfg.seed = 4;

    SECTION("no edges and unit weight reproduce plain training bitwise") {
        WideDeepNet controlled(init_weights({1, 8, 1}, 4), WideBasis::identity());
        AsymptoticControlConfig ecfg;
        ecfg.edge_count = 0;
        ecfg.weight_multiplier = 1.0;
        const WideDeepTrainResult res =
            train_with_asymptotic_control(controlled, raw, model, call, pipe, cfg, ecfg);

        WideDeepNet plain(init_weights({1, 8, 1}, 4), WideBasis::identity());
        const TrainingSet prepared = pipe.transform(raw);
        train_widedeep(plain, prepared, cfg);
        resolve_output_layer(plain, prepared);

        CHECK(res.resolved);
        for (int l = 1; l <= plain.deep.depth(); ++l)
            CHECK(controlled.deep.W[static_cast<std::size_t>(l)] ==
                  plain.deep.W[static_cast<std::size_t>(l)]);
        CHECK(controlled.w_wide == plain.w_wide);
    }

    SECTION("edges receive forward-path labels and larger weights") {
        WideDeepNet net(init_weights({1, 8, 1}, 9), WideBasis::identity());
        AsymptoticControlConfig ecfg;
        ecfg.edge_count = 16;
        ecfg.weight_multiplier = 10.0;
        const WideDeepTrainResult res =
            train_with_asymptotic_control(net, raw, model, call, pipe, cfg, ecfg);
        CHECK(res.edges.indices.size() == 16);
        CHECK(res.resolve.mse_after <= res.resolve.mse_wide_only);
    }
}

TEST_CASE("softplus wide-deep nets extrapolate linearly along rays") {
    // second difference along rays collapses far from the data
    WideDeepNet net(init_weights({2, 16, 1}, 77), WideBasis::identity());
    for (auto& w : net.deep.W) w *= 1.7;           // sharpen curvature near the origin
    net.deep.W.back() = net.deep.W.back().cwiseAbs(); // no accidental curvature cancellation

    auto second_difference = [&](const Vector& ray, double radius) {
        const double h = 0.1;
        Matrix pts(3, 2);
        pts.row(0) = (radius - h) * ray.transpose();
        pts.row(1) = radius * ray.transpose();
        pts.row(2) = (radius + h) * ray.transpose();
        const TwinOutput out = wd_twin_eval(net, pts);
        return std::abs(out.y(0) - 2.0 * out.y(1) + out.y(2));
    };

    Rng rng(78);
    for (int trial = 0; trial < 4; ++trial) {
        Vector ray(2);
        ray << rng.normal(), rng.normal();
        ray.normalize();
        const double near = second_difference(ray, 0.0);
        const double far = second_difference(ray, 20.0);
        REQUIRE(near > 1e-5); // the net does curve near the data
        CHECK(far <= 1e-3 * near);
    }
}
