#pragma once

// Hybrid architecture: the output regresses jointly on learnable deep units
// (the last hidden layer of an MLP) and fixed wide basis functions. The exact
// least-squares re-solve of that output layer gives the worst-case guarantee:
// after it, the fit is never worse than a regression on the wide units alone.
// Asymptotic control replaces the lowest-likelihood training examples with
// forward-path ground-truth labels and overweights them in the cost.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "dml/diffreg.hpp"
#include "dml/errors.hpp"
#include "dml/linalg.hpp"
#include "dml/market.hpp"
#include "dml/preprocess.hpp"
#include "dml/twinnet.hpp"

namespace dml {

/// Fixed feature map for the wide layer. Per-coordinate powers only; cross
/// monomials would reintroduce the dimensionality explosion.
struct WideBasis {
    enum class Kind { Identity, IdentitySquares, Powers };

    Kind kind = Kind::IdentitySquares;
    std::vector<int> max_powers; // Kind::Powers: per-input maximum degree

    static WideBasis identity() { return WideBasis{Kind::Identity, {}}; }
    static WideBasis identity_squares() { return WideBasis{Kind::IdentitySquares, {}}; }
    static WideBasis powers(std::vector<int> degrees) { return WideBasis{Kind::Powers, std::move(degrees)}; }

    long dim(long n) const {
        switch (kind) {
            case Kind::Identity: return n;
            case Kind::IdentitySquares: return 2 * n;
            default: {
                if (static_cast<long>(max_powers.size()) != n)
                    throw ConfigError("WideBasis: per-input degree list does not match input width");
                long d = 0;
                for (int p : max_powers) {
                    if (p < 1) throw ConfigError("WideBasis: degrees must be >= 1");
                    d += p;
                }
                return d;
            }
        }
    }

    RowVector eval(const RowVector& x) const {
        RowVector phi(dim(x.size()));
        long c = 0;
        switch (kind) {
            case Kind::Identity:
                phi = x;
                break;
            case Kind::IdentitySquares:
                phi.head(x.size()) = x;
                phi.tail(x.size()) = x.array().square();
                break;
            default:
                for (long j = 0; j < x.size(); ++j) {
                    double v = 1.0;
                    for (int p = 1; p <= max_powers[static_cast<std::size_t>(j)]; ++p) {
                        v *= x(j);
                        phi(c++) = v;
                    }
                }
                break;
        }
        return phi;
    }

    Matrix eval_matrix(const Matrix& X) const {
        Matrix phi(X.rows(), dim(X.cols()));
        for (long i = 0; i < X.rows(); ++i) phi.row(i) = eval(X.row(i));
        return phi;
    }

    /// d phi / d x_j at x, one row per wide feature would be wasteful; this
    /// returns the full Jacobian (dim x n), sparse by construction.
    Matrix jacobian(const RowVector& x) const {
        const long n = x.size();
        Matrix jac = Matrix::Zero(dim(n), n);
        long c = 0;
        switch (kind) {
            case Kind::Identity:
                jac = Matrix::Identity(n, n);
                break;
            case Kind::IdentitySquares:
                jac.topRows(n) = Matrix::Identity(n, n);
                for (long j = 0; j < n; ++j) jac(n + j, j) = 2.0 * x(j);
                break;
            default:
                for (long j = 0; j < n; ++j) {
                    double v = 1.0; // x^(p-1)
                    for (int p = 1; p <= max_powers[static_cast<std::size_t>(j)]; ++p) {
                        jac(c++, j) = p * v;
                        v *= x(j);
                    }
                }
                break;
        }
        return jac;
    }
};

/// Deep MLP whose output layer is a joint regression on the last hidden layer
/// and the wide features: y = g(z_{L-1}) w_deep + phi(x) w_wide + b.
/// The deep output weights and bias live in the embedded MLP's last layer.
struct WideDeepNet {
    MLP deep; // scalar-output MLP; W[L] is w_deep, b[L] is the output bias
    WideBasis wide;
    Vector w_wide;

    WideDeepNet() = default;

    WideDeepNet(MLP mlp, WideBasis basis) : deep(std::move(mlp)), wide(basis) {
        if (deep.output_dim() != 1) throw ConfigError("WideDeepNet: scalar output expected");
        w_wide = Vector::Zero(wide.dim(deep.input_dim()));
    }

    int input_dim() const { return deep.input_dim(); }
};

inline Vector wd_values(const WideDeepNet& net, const Matrix& X, const ForwardCache& fc) {
    return predictions(fc) + net.wide.eval_matrix(X) * net.w_wide;
}

inline TwinOutput wd_twin_eval(const WideDeepNet& net, const Matrix& X) {
    const ForwardCache fc = forward(net.deep, X);
    const TwinCache tc = twin_from_cache(net.deep, fc, Matrix::Ones(X.rows(), 1));
    TwinOutput out;
    out.y = wd_values(net, X, fc);
    out.x_bar = tc.S[0];
    for (long i = 0; i < X.rows(); ++i)
        out.x_bar.row(i) += net.w_wide.transpose() * net.wide.jacobian(X.row(i));
    return out;
}

struct ResolveReport {
    double mse_before = 0.0;
    double mse_after = 0.0;
    double mse_wide_only = 0.0;
};

namespace detail {

/// Weighted least squares through the eigenvalue pseudo-inverse; returns
/// coefficients for centred features plus the matched intercept.
struct LsFit {
    Vector coeffs;
    double intercept = 0.0;
    double mse = 0.0;
};

inline LsFit weighted_ls(const Matrix& features, const Vector& y, const Vector& sqrt_w) {
    const double wsum = sqrt_w.squaredNorm();
    LsFit fit;
    const RowVector mu =
        (sqrt_w.array().square().matrix().asDiagonal() * features).colwise().sum() / wsum;
    const double mu_y = y.cwiseProduct(sqrt_w.cwiseProduct(sqrt_w)).sum() / wsum;
    Matrix fc = features.rowwise() - mu;
    fc.array().colwise() *= sqrt_w.array();
    Vector yc = (y.array() - mu_y).matrix().cwiseProduct(sqrt_w);

    const EigLs d = decompose(fc.transpose() * fc, kEigenThresholdScale);
    fit.coeffs = apply_spectral(d, [](double e) { return 1.0 / e; }, fc.transpose() * yc);
    fit.intercept = mu_y - mu.dot(fit.coeffs);
    const Vector resid = yc - fc * fit.coeffs;
    fit.mse = resid.squaredNorm() / wsum;
    return fit;
}

} // namespace detail

/// Replace the output layer (deep head, wide weights, bias) by the exact
/// least-squares solution over the concatenated regression layer. If the
/// numerical solve ever came out worse than the incumbent weights, the
/// incumbent is kept, so the training MSE never increases, and by the same
/// token never exceeds the wide-only regression MSE.
inline ResolveReport resolve_output_layer(WideDeepNet& net, const TrainingSet& data,
                                          const Vector* example_weights = nullptr) {
    const long m = data.rows();
    const ForwardCache fc = forward(net.deep, data.X);
    const Matrix deep_features = fc.A[static_cast<std::size_t>(net.deep.depth() - 1)];
    const Matrix wide_features = net.wide.eval_matrix(data.X);
    Matrix features(m, deep_features.cols() + wide_features.cols());
    features << deep_features, wide_features;

    Vector sqrt_w = Vector::Ones(m);
    if (example_weights) sqrt_w = example_weights->cwiseSqrt();

    auto weighted_mse = [&](const Vector& resid) {
        return resid.cwiseProduct(sqrt_w).squaredNorm() / sqrt_w.squaredNorm();
    };

    ResolveReport report;
    const Vector before = wd_values(net, data.X, fc);
    report.mse_before = weighted_mse(before - data.Y);

    const detail::LsFit joint = detail::weighted_ls(features, data.Y, sqrt_w);
    const detail::LsFit wide_only = detail::weighted_ls(wide_features, data.Y, sqrt_w);
    report.mse_wide_only = wide_only.mse;

    const long nd = deep_features.cols();
    Vector candidate_deep = joint.coeffs.head(nd);
    Vector candidate_wide = joint.coeffs.tail(features.cols() - nd);

    // evaluate the candidate explicitly; keep whichever of {candidate,
    // incumbent, wide-only} fits best so the guarantee is unconditional
    const Vector cand_values = deep_features * candidate_deep + wide_features * candidate_wide +
                               Vector::Constant(m, joint.intercept);
    const double cand_mse = weighted_mse(cand_values - data.Y);

    const Vector wide_values = wide_features * wide_only.coeffs +
                               Vector::Constant(m, wide_only.intercept);
    const double wide_mse = weighted_mse(wide_values - data.Y);

    // keep the best of {joint solve, wide-only solve, incumbent}: the joint
    // solve wins in exact arithmetic, and the explicit comparison makes the
    // guarantee hold under floating point too
    if (cand_mse <= wide_mse && cand_mse <= report.mse_before) {
        net.deep.W.back() = candidate_deep;
        net.deep.b.back() = Vector::Constant(1, joint.intercept);
        net.w_wide = candidate_wide;
        report.mse_after = cand_mse;
    } else if (wide_mse <= report.mse_before) {
        net.deep.W.back().setZero();
        net.deep.b.back() = Vector::Constant(1, wide_only.intercept);
        net.w_wide = wide_only.coeffs;
        report.mse_after = wide_mse;
    } else {
        report.mse_after = report.mse_before;
    }
    return report;
}

struct EdgeSet {
    std::vector<long> indices;  // the k lowest-likelihood examples
    Vector log_likelihoods;     // Gaussian log-likelihood per flagged example
    double weight_multiplier = 1.0;
};

/// Rank examples by Gaussian likelihood of the inputs (fitted mean and
/// covariance) and return the k edgemost ones.
inline EdgeSet detect_edges(const Matrix& X, long k, double weight_multiplier = 1.0) {
    const long m = X.rows();
    if (k == 0) return EdgeSet{{}, Vector(), weight_multiplier};
    if (k < 0 || k > m / 16)
        throw std::invalid_argument("detect_edges: k must lie in [0, m/16]");

    const RowVector mu = X.colwise().mean();
    const Matrix centred = X.rowwise() - mu;
    const Matrix cov = centred.transpose() * centred / static_cast<double>(m);
    const SymEigen eig = eigen_sym(cov);
    if (!(eig.values.minCoeff() > 1e-12 * std::max(eig.values.maxCoeff(), 1e-300)))
        throw NumericError("detect_edges: singular input covariance; whiten with PCA first");

    const double logdet = eig.values.array().log().sum();
    const double norm_const =
        -0.5 * (logdet + static_cast<double>(X.cols()) * std::log(2.0 * kPi));

    const Matrix whitened = centred * eig.vectors * eig.values.cwiseSqrt().cwiseInverse().asDiagonal();
    const Vector d2 = whitened.rowwise().squaredNorm();

    std::vector<long> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0L);
    std::stable_sort(order.begin(), order.end(), [&](long a, long b) { return d2(a) > d2(b); });

    EdgeSet edges;
    edges.weight_multiplier = weight_multiplier;
    edges.indices.assign(order.begin(), order.begin() + k);
    edges.log_likelihoods.resize(k);
    for (long i = 0; i < k; ++i)
        edges.log_likelihoods(i) = norm_const - 0.5 * d2(edges.indices[static_cast<std::size_t>(i)]);
    return edges;
}

/// Returns a sampling config whose horizon leg oversamples extreme states by
/// scaling the volatility up to the horizon date. Labels stay unbiased (the
/// conditional leg is untouched); interior accuracy degrades in exchange.
inline SamplingConfig oversample_edges_via_vol(SamplingConfig cfg, double multiplier) {
    if (!(multiplier >= 1.0))
        throw std::invalid_argument("oversample_edges_via_vol: multiplier must be >= 1");
    cfg.vol_multiplier_to_horizon = multiplier;
    return cfg;
}

struct AsymptoticControlConfig {
    long edge_count = -1;           // -1 picks m/64
    double weight_multiplier = 10.0;
    bool final_resolve = true;
};

struct WideDeepTrainResult {
    TrainLog log;
    EdgeSet edges;
    ResolveReport resolve;
    bool resolved = false;
};

namespace detail {

/// Joint ADAM training of the deep parameters and the wide weights on the
/// combined value/derivative cost (all in preprocessed units).
inline TrainLog train_widedeep_core(WideDeepNet& net, const TrainingSet& data,
                                    const TrainConfig& cfg, const Vector* example_weights) {
    cfg.validate();
    data.validate();

    Vector column_weights;
    if (cfg.derivative_column_weights)
        column_weights = *cfg.derivative_column_weights;
    else if (cfg.lambda > 0.0)
        column_weights = default_derivative_weights(data.Z);
    else
        column_weights = Vector::Zero(data.cols());

    Rng shuffle_rng(substream_seed(cfg.seed, fnv1a64("train-shuffle")));
    std::vector<long> idx(static_cast<std::size_t>(data.rows()));
    std::iota(idx.begin(), idx.end(), 0L);
    auto shuffle = [&]() {
        for (std::size_t i = idx.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(shuffle_rng.raw() % i);
            std::swap(idx[i - 1], idx[j]);
        }
    };

    const long m = data.rows();
    const long batches = (m + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = static_cast<long>(cfg.epochs) * batches;

    Adam adam(net.deep);
    Vector mw = Vector::Zero(net.w_wide.size());
    Vector vw = Vector::Zero(net.w_wide.size());
    double t = 0.0;

    TrainLog log;
    log.classic = cfg.lambda == 0.0;
    log.derivative_column_weights = column_weights;

    Matrix bX, bZ;
    Vector bY, bW;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle();
        double epoch_cost = 0.0;
        for (long bi = 0; bi < batches; ++bi) {
            const long begin = bi * cfg.batch_size;
            const long end = std::min(m, begin + cfg.batch_size);
            const long mb = end - begin;
            bX.resize(mb, data.cols());
            bY.resize(mb);
            bZ.resize(mb, data.cols());
            bW.resize(mb);
            for (long r = 0; r < mb; ++r) {
                const long src = idx[static_cast<std::size_t>(begin + r)];
                bX.row(r) = data.X.row(src);
                bY(r) = data.Y(src);
                bZ.row(r) = data.Z.row(src);
                bW(r) = example_weights ? (*example_weights)(src) : 1.0;
            }
            const double inv_mb = 1.0 / static_cast<double>(mb);

            const ForwardCache fc = forward(net.deep, bX);
            const TwinCache tc = twin_from_cache(net.deep, fc, Matrix::Ones(mb, 1));
            const Matrix wide_phi = net.wide.eval_matrix(bX);

            const Vector resid_y = predictions(fc) + wide_phi * net.w_wide - bY;
            Matrix pred_grad = tc.S[0];
            std::vector<Matrix> jacs;
            jacs.reserve(static_cast<std::size_t>(mb));
            for (long r = 0; r < mb; ++r) {
                jacs.push_back(net.wide.jacobian(bX.row(r)));
                pred_grad.row(r) += net.w_wide.transpose() * jacs.back();
            }
            const Matrix resid_z = pred_grad - bZ;

            double cost = cfg.value_weight * inv_mb * resid_y.cwiseProduct(bW).dot(resid_y);
            Matrix weighted = resid_z.array().rowwise() * column_weights.transpose().array();
            weighted.array().colwise() *= bW.array();
            if (cfg.lambda > 0.0) cost += cfg.lambda * inv_mb * weighted.cwiseProduct(resid_z).sum();
            if (!std::isfinite(cost))
                throw DivergenceError("widedeep train: nonfinite cost at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(bi));

            const Matrix Gy = (2.0 * cfg.value_weight * inv_mb) * resid_y.cwiseProduct(bW);
            Matrix Gx;
            if (cfg.lambda > 0.0) Gx = (2.0 * cfg.lambda * inv_mb) * weighted;
            const ParamGrads grads = backprop_params(net.deep, fc, tc, Gy, Gx);

            // wide-weight gradient: value residuals against phi plus
            // derivative residuals against the analytic wide Jacobians
            Vector gw = wide_phi.transpose() * Gy.col(0);
            if (cfg.lambda > 0.0)
                for (long r = 0; r < mb; ++r) gw += jacs[static_cast<std::size_t>(r)] * Gx.row(r).transpose();

            const double lr = cfg.schedule.lr(step, total_steps);
            adam.step(net.deep, grads, lr);
            t += 1.0;
            const double c1 = 1.0 - std::pow(Adam::beta1, t);
            const double c2 = 1.0 - std::pow(Adam::beta2, t);
            mw = Adam::beta1 * mw + (1.0 - Adam::beta1) * gw;
            vw = Adam::beta2 * vw + (1.0 - Adam::beta2) * gw.cwiseProduct(gw);
            net.w_wide -= lr * (mw / c1).cwiseQuotient(((vw / c2).cwiseSqrt().array() + Adam::eps).matrix());

            ++step;
            epoch_cost += cost * static_cast<double>(mb);
        }
        EpochStats stats;
        stats.train_cost = epoch_cost / static_cast<double>(m);
        stats.validation_cost = std::numeric_limits<double>::quiet_NaN();
        log.epochs.push_back(stats);
    }
    log.steps = step;
    return log;
}

} // namespace detail

inline TrainLog train_widedeep(WideDeepNet& net, const TrainingSet& data, const TrainConfig& cfg,
                               const Vector* example_weights = nullptr) {
    return detail::train_widedeep_core(net, data, cfg, example_weights);
}

/// Edge-relabeled training in original units: flags the k lowest-likelihood
/// states, replaces their labels and differentials with forward-path ground
/// truth, overweights them in the cost, trains through the given pipeline and
/// finally re-solves the output layer.
inline WideDeepTrainResult train_with_asymptotic_control(
    WideDeepNet& net, const TrainingSet& raw, const BachelierModel& model, const Payoff& payoff,
    const PreprocessPipeline& pipe, const TrainConfig& cfg, const AsymptoticControlConfig& edge_cfg) {
    WideDeepTrainResult result;

    TrainingSet relabeled = raw;
    Vector weights = Vector::Ones(raw.rows());
    const long k = edge_cfg.edge_count >= 0 ? edge_cfg.edge_count : raw.rows() / 64;
    if (k > 0) {
        result.edges = detect_edges(raw.X, k, edge_cfg.weight_multiplier);
        Matrix edge_states(k, raw.cols());
        for (long i = 0; i < k; ++i)
            edge_states.row(i) = raw.X.row(result.edges.indices[static_cast<std::size_t>(i)]);
        const ForwardPathLabels truth = forward_path_labels(model, payoff, edge_states);
        for (long i = 0; i < k; ++i) {
            const long row = result.edges.indices[static_cast<std::size_t>(i)];
            relabeled.Y(row) = truth.Y(i);
            relabeled.Z.row(row) = truth.Z.row(i);
            weights(row) = edge_cfg.weight_multiplier;
        }
    } else {
        result.edges.weight_multiplier = edge_cfg.weight_multiplier;
    }

    const TrainingSet prepared = pipe.transform(relabeled);
    result.log = detail::train_widedeep_core(net, prepared, cfg, &weights);

    if (edge_cfg.final_resolve) {
        result.resolve = resolve_output_layer(net, prepared, &weights);
        result.resolved = true;
    }
    return result;
}

} // namespace dml
