#pragma once

// Correlated Bachelier market: dS_t = sigma dW_t with exact Gaussian
// transitions (no time stepping, no discretization error) and zero rates.
// Datasets pair states at the horizon date t1 with payoffs sampled at t2 and
// their pathwise differentials, computed by tape backpropagation per path.

#include <cmath>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "dml/adjoint.hpp"
#include "dml/dataset.hpp"
#include "dml/errors.hpp"
#include "dml/linalg.hpp"
#include "dml/math.hpp"
#include "dml/rng.hpp"

namespace dml {

struct BachelierModel {
    Vector spot;        // price units
    Vector vol;         // price units per sqrt(year)
    Matrix correlation; // unit diagonal, positive definite
    double t1 = 0.0;    // horizon / exposure date, years
    double t2 = 0.0;    // payoff date, years

    int n_assets() const { return static_cast<int>(spot.size()); }

    void validate() const {
        const Eigen::Index n = spot.size();
        if (n < 1) throw NumericError("BachelierModel: needs at least one asset");
        if (vol.size() != n || correlation.rows() != n || correlation.cols() != n)
            throw NumericError("BachelierModel: inconsistent dimensions");
        if ((vol.array() < 0.0).any()) throw NumericError("BachelierModel: negative vol");
        if (!(t1 >= 0.0 && t1 < t2)) throw NumericError("BachelierModel: requires 0 <= t1 < t2");
        for (Eigen::Index i = 0; i < n; ++i) {
            if (std::abs(correlation(i, i) - 1.0) > 1e-12)
                throw NumericError("BachelierModel: correlation diagonal must be 1");
            for (Eigen::Index j = 0; j < n; ++j)
                if (std::abs(correlation(i, j) - correlation(j, i)) > 1e-12)
                    throw NumericError("BachelierModel: correlation not symmetric");
        }
    }

    /// Lower Cholesky factor of the correlation (throws if not PD).
    Matrix chol() const { return cholesky(correlation, "BachelierModel correlation"); }

    /// Covariance per year of asset increments: diag(vol) * rho * diag(vol).
    Matrix covariance() const {
        return vol.asDiagonal() * correlation * vol.asDiagonal();
    }
};

/// Vanilla call on a weighted basket. The hinge is recorded in smoothed form
/// (call spread of half-width `smoothing`), keeping tape differentials
/// well-defined everywhere; the default width is small enough that pathwise
/// deltas match the indicator form for practical purposes.
struct BasketCall {
    Vector weights; // sums to 1
    double strike = 0.0;
    double smoothing = 0.0; // absolute half-width; <=0 picks default 1e-3 * strike

    double half_width() const { return smoothing > 0.0 ? smoothing : 1e-3 * std::abs(strike); }
    static constexpr bool linear_asymptotics = true;

    void validate(Eigen::Index n) const {
        if (weights.size() != n) throw NumericError("BasketCall: weight count mismatch");
        if (std::abs(weights.sum() - 1.0) > 1e-12)
            throw NumericError("BasketCall: weights must sum to 1");
        if (!(half_width() > 0.0)) throw NumericError("BasketCall: smoothing half-width must be positive");
    }

    Var record(Tape&, const std::vector<Var>& s) const {
        Var basket = s[0] * weights(0);
        for (std::size_t j = 1; j < s.size(); ++j) basket = basket + s[j] * weights(static_cast<Eigen::Index>(j));
        return smooth_max0(basket - strike, half_width());
    }
};

/// Digital on the basket, represented as a tight call spread: a ramp from 0
/// to 1 over [level - half_width, level + half_width].
struct SmoothedDigital {
    Vector weights;
    double level = 0.0;
    double half_width = 0.0; // <=0 picks default 5% of level
    static constexpr bool linear_asymptotics = false; // flat on both sides

    double width() const { return half_width > 0.0 ? half_width : 0.05 * std::abs(level); }

    void validate(Eigen::Index n) const {
        if (weights.size() != n) throw NumericError("SmoothedDigital: weight count mismatch");
        if (std::abs(weights.sum() - 1.0) > 1e-12)
            throw NumericError("SmoothedDigital: weights must sum to 1");
        if (!(width() > 0.0)) throw NumericError("SmoothedDigital: half-width must be positive");
    }

    Var record(Tape&, const std::vector<Var>& s) const {
        Var basket = s[0] * weights(0);
        for (std::size_t j = 1; j < s.size(); ++j) basket = basket + s[j] * weights(static_cast<Eigen::Index>(j));
        return smooth_indicator(basket, level, width());
    }
};

using Payoff = std::variant<BasketCall, SmoothedDigital>;

inline void validate_payoff(const Payoff& p, Eigen::Index n) {
    std::visit([n](const auto& pay) { pay.validate(n); }, p);
}

inline Var record_payoff(const Payoff& p, Tape& tape, const std::vector<Var>& s) {
    return std::visit([&](const auto& pay) { return pay.record(tape, s); }, p);
}

inline const Vector& payoff_weights(const Payoff& p) {
    return std::visit([](const auto& pay) -> const Vector& { return pay.weights; }, p);
}

inline bool payoff_linear_asymptotics(const Payoff& p) {
    return std::visit([](const auto& pay) { return pay.linear_asymptotics; }, p);
}

enum class StateMode {
    MonteCarloFromSpot, // diffuse from spot over [0, t1], vol scaled by the multiplier
    ExplicitGrid,       // caller supplies the states
};

struct SamplingConfig {
    long m = 0;             // example count (pairs when antithetic)
    std::uint64_t seed = 0;
    bool antithetic = false;
    double vol_multiplier_to_horizon = 1.0; // >= 1; oversamples extreme states
    StateMode state_mode = StateMode::MonteCarloFromSpot;
    Matrix explicit_states; // used when state_mode == ExplicitGrid
    int threads = 1;

    void validate() const {
        if (m <= 0) throw NumericError("SamplingConfig: m must be positive");
        if (!(vol_multiplier_to_horizon >= 1.0))
            throw NumericError("SamplingConfig: vol multiplier must be >= 1");
        if (state_mode == StateMode::ExplicitGrid && explicit_states.rows() != m)
            throw NumericError("SamplingConfig: explicit grid must have m rows");
    }
};

namespace detail {

/// One conditional path t1 -> t2 recorded on the tape; returns payoff and
/// fills `grad` with the pathwise differential dY/dX.
inline double conditional_path(Tape& tape, const Payoff& payoff, const Vector& state,
                               const Vector& shock, Vector& grad) {
    tape.reset();
    const Eigen::Index n = state.size();
    std::vector<Var> leaves;
    leaves.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) leaves.push_back(tape.leaf(state(j)));
    std::vector<Var> terminal;
    terminal.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) terminal.push_back(leaves[static_cast<std::size_t>(j)] + shock(j));
    const Var y = record_payoff(payoff, tape, terminal);
    const AdjointVector adj = backpropagate(tape, y);
    for (Eigen::Index j = 0; j < n; ++j) grad(j) = adj.of(leaves[static_cast<std::size_t>(j)]);
    return y.value();
}

} // namespace detail

/// Simulate the augmented training set. Each path owns its RNG substream and
/// its tape, so the result is reproducible for a fixed seed regardless of the
/// worker count.
inline TrainingSet simulate_dataset(const BachelierModel& model, const Payoff& payoff,
                                    const SamplingConfig& cfg) {
    model.validate();
    cfg.validate();
    validate_payoff(payoff, model.spot.size());

    const Eigen::Index n = model.spot.size();
    const Matrix L = model.chol();
    const double sd1 = cfg.vol_multiplier_to_horizon * std::sqrt(model.t1);
    const double sd2 = std::sqrt(model.t2 - model.t1);

    TrainingSet ts;
    ts.X.resize(cfg.m, n);
    ts.Y.resize(cfg.m);
    ts.Z.resize(cfg.m, n);

    std::string failure;

    auto run_range = [&](long begin, long end) {
        Tape tape;
        Vector xi(n), shock(n), state(n), grad(n), grad2(n);
        for (long i = begin; i < end; ++i) {
            try {
                Rng rng(substream_seed(cfg.seed, static_cast<std::uint64_t>(i)));
                if (cfg.state_mode == StateMode::ExplicitGrid) {
                    state = cfg.explicit_states.row(i).transpose();
                } else {
                    for (Eigen::Index j = 0; j < n; ++j) xi(j) = rng.normal();
                    state = model.spot + sd1 * (model.vol.asDiagonal() * (L * xi));
                }
                for (Eigen::Index j = 0; j < n; ++j) xi(j) = rng.normal();
                shock = sd2 * (model.vol.asDiagonal() * (L * xi));

                double y = detail::conditional_path(tape, payoff, state, shock, grad);
                if (cfg.antithetic) {
                    const double y2 = detail::conditional_path(tape, payoff, state, -shock, grad2);
                    y = 0.5 * (y + y2);
                    grad = 0.5 * (grad + grad2);
                }
                if (!std::isfinite(y) || !grad.allFinite())
                    throw NumericError("nonfinite payoff");
                ts.X.row(i) = state.transpose();
                ts.Y(i) = y;
                ts.Z.row(i) = grad.transpose();
            } catch (const std::exception& e) {
                if (failure.empty())
                    failure = "simulation failed at path " + std::to_string(i) + ": " + e.what();
                return;
            }
        }
    };

    const int workers = std::max(1, cfg.threads);
    if (workers == 1) {
        run_range(0, cfg.m);
    } else {
        std::vector<std::thread> pool;
        const long chunk = (cfg.m + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const long begin = w * chunk;
            const long end = std::min(cfg.m, begin + chunk);
            if (begin >= end) break;
            pool.emplace_back(run_range, begin, end);
        }
        for (auto& t : pool) t.join();
    }
    if (!failure.empty()) throw NumericError(failure);

    ts.validate();
    return ts;
}

struct PriceAndDeltas {
    double price = 0.0;
    Vector deltas;
};

/// Basket volatility per year implied by weights, vols and correlation.
inline double basket_vol(const BachelierModel& model, const Vector& weights) {
    const double var = weights.transpose() * model.covariance() * weights;
    return std::sqrt(std::max(var, 0.0));
}

/// Closed-form Bachelier price of the basket call at the horizon date, as a
/// function of the state, with analytic deltas a * Phi(d). When the basket
/// vol degenerates to zero the ATM delta is 0.5 * weights by convention (the
/// midpoint of the smoothed indicator).
inline PriceAndDeltas bachelier_basket_price(const BachelierModel& model, const BasketCall& payoff,
                                             const Vector& state) {
    model.validate();
    payoff.validate(state.size());
    const double tau = model.t2 - model.t1;
    const double sb = basket_vol(model, payoff.weights) * std::sqrt(tau);
    const double basket = payoff.weights.dot(state);
    PriceAndDeltas out;
    if (sb == 0.0) {
        const double moneyness = basket - payoff.strike;
        out.price = std::max(moneyness, 0.0);
        const double slope = moneyness > 0.0 ? 1.0 : (moneyness < 0.0 ? 0.0 : 0.5);
        out.deltas = slope * payoff.weights;
        return out;
    }
    const double d = (basket - payoff.strike) / sb;
    out.price = (basket - payoff.strike) * norm_cdf(d) + sb * norm_pdf(d);
    out.deltas = norm_cdf(d) * payoff.weights;
    return out;
}

/// The smoothed digital is exactly a call spread, so its closed form is the
/// difference of two Bachelier calls divided by the spread width.
inline PriceAndDeltas smoothed_digital_price(const BachelierModel& model,
                                             const SmoothedDigital& payoff, const Vector& state) {
    const double h = payoff.width();
    BasketCall lo{payoff.weights, payoff.level - h, h};
    BasketCall hi{payoff.weights, payoff.level + h, h};
    const PriceAndDeltas plo = bachelier_basket_price(model, lo, state);
    const PriceAndDeltas phi = bachelier_basket_price(model, hi, state);
    PriceAndDeltas out;
    out.price = (plo.price - phi.price) / (2.0 * h);
    out.deltas = (plo.deltas - phi.deltas) / (2.0 * h);
    return out;
}

inline PriceAndDeltas closed_form_price(const BachelierModel& model, const Payoff& payoff,
                                        const Vector& state) {
    if (const auto* call = std::get_if<BasketCall>(&payoff))
        return bachelier_basket_price(model, *call, state);
    return smoothed_digital_price(model, std::get<SmoothedDigital>(payoff), state);
}

/// Conditional standard deviation of the sampled payoff at a given state;
/// closed form for the call (scaled second moment of a truncated normal),
/// Monte-Carlo estimate for other payoffs.
inline double conditional_payoff_sd(const BachelierModel& model, const Payoff& payoff,
                                    const Vector& state, std::uint64_t seed = 7771) {
    if (const auto* call = std::get_if<BasketCall>(&payoff)) {
        const double tau = model.t2 - model.t1;
        const double v = basket_vol(model, call->weights) * std::sqrt(tau);
        const double s = call->weights.dot(state) - call->strike;
        if (v == 0.0) return 0.0;
        const double d = s / v;
        const double m1 = s * norm_cdf(d) + v * norm_pdf(d);
        const double m2 = (s * s + v * v) * norm_cdf(d) + s * v * norm_pdf(d);
        return std::sqrt(std::max(m2 - m1 * m1, 0.0));
    }
    // generic payoff: estimate with a fixed inner sample
    const long n_est = 16384;
    Tape tape;
    const Matrix L = model.chol();
    const double sd2 = std::sqrt(model.t2 - model.t1);
    Rng rng(seed);
    Vector xi(state.size()), shock(state.size()), grad(state.size());
    double sum = 0.0, sumsq = 0.0;
    for (long i = 0; i < n_est; ++i) {
        for (Eigen::Index j = 0; j < xi.size(); ++j) xi(j) = rng.normal();
        shock = sd2 * (model.vol.asDiagonal() * (L * xi));
        const double y = detail::conditional_path(tape, payoff, state, shock, grad);
        sum += y;
        sumsq += y * y;
    }
    const double mean = sum / n_est;
    return std::sqrt(std::max(sumsq / n_est - mean * mean, 0.0));
}

struct NestedMcResult {
    double price = 0.0;
    double std_error = 0.0;
    Vector deltas;
    Vector delta_std_errors;
};

/// Nested Monte-Carlo oracle: inner simulations from a fixed state at t1 to
/// t2, returning the conditional mean payoff, its standard error, and the
/// mean pathwise differentials (MC deltas) with theirs.
inline NestedMcResult nested_mc_price(const BachelierModel& model, const Payoff& payoff,
                                      const Vector& state, long inner_paths, std::uint64_t seed) {
    model.validate();
    validate_payoff(payoff, state.size());
    if (inner_paths < 2) throw NumericError("nested_mc_price: needs at least 2 inner paths");

    const Eigen::Index n = state.size();
    const Matrix L = model.chol();
    const double sd2 = std::sqrt(model.t2 - model.t1);

    Tape tape;
    Rng rng(seed);
    Vector xi(n), shock(n), grad(n);
    double sum = 0.0, sumsq = 0.0;
    Vector dsum = Vector::Zero(n), dsumsq = Vector::Zero(n);
    for (long i = 0; i < inner_paths; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) xi(j) = rng.normal();
        shock = sd2 * (model.vol.asDiagonal() * (L * xi));
        const double y = detail::conditional_path(tape, payoff, state, shock, grad);
        sum += y;
        sumsq += y * y;
        dsum += grad;
        dsumsq += grad.cwiseProduct(grad);
    }
    const double inv = 1.0 / static_cast<double>(inner_paths);
    NestedMcResult out;
    out.price = sum * inv;
    out.std_error = std::sqrt(std::max(sumsq * inv - out.price * out.price, 0.0) /
                              static_cast<double>(inner_paths - 1));
    out.deltas = dsum * inv;
    out.delta_std_errors.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double var = std::max(dsumsq(j) * inv - out.deltas(j) * out.deltas(j), 0.0);
        out.delta_std_errors(j) = std::sqrt(var / static_cast<double>(inner_paths - 1));
    }
    return out;
}

struct ForwardPathLabels {
    Vector Y;
    Matrix Z;
};

/// Ground-truth labels for extreme states under the linear-asymptotics
/// assumption: the payoff evaluated on the deterministic forward path (all
/// assets pinned at their conditional forwards, which under zero drift is the
/// state itself) together with its tape gradient.
inline ForwardPathLabels forward_path_labels(const BachelierModel& model, const Payoff& payoff,
                                             const Matrix& edge_states) {
    model.validate();
    validate_payoff(payoff, edge_states.cols());
    const long m = edge_states.rows();
    const Eigen::Index n = edge_states.cols();
    ForwardPathLabels out;
    out.Y.resize(m);
    out.Z.resize(m, n);
    Tape tape;
    Vector grad(n);
    const Vector zero_shock = Vector::Zero(n);
    for (long i = 0; i < m; ++i) {
        const Vector state = edge_states.row(i).transpose();
        out.Y(i) = detail::conditional_path(tape, payoff, state, zero_shock, grad);
        out.Z.row(i) = grad.transpose();
    }
    return out;
}

/// Documented generator for a random correlation matrix: normalized Gram
/// matrix of an i.i.d. standard normal square matrix.
inline Matrix random_correlation(int n, std::uint64_t seed) {
    Rng rng(seed);
    Matrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    Matrix c = a * a.transpose();
    Vector d = c.diagonal().cwiseSqrt();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) c(i, j) /= d(i) * d(j);
    for (int i = 0; i < n; ++i) c(i, i) = 1.0;
    return 0.5 * (c + c.transpose());
}

/// Documented generator for random basket weights: U(0,1) normalized to sum 1.
inline Vector random_weights(int n, std::uint64_t seed) {
    Rng rng(seed);
    Vector w(n);
    for (int i = 0; i < n; ++i) w(i) = rng.uniform();
    return w / w.sum();
}

} // namespace dml
