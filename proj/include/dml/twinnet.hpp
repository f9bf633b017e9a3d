#pragma once

// Feedforward network with twin evaluation: one pass predicts the value, its
// mirror-image backpropagation pass predicts the input gradient. Training
// minimizes C = alpha * MSE + lambda * weighted MSE-bar; the cost gradient is
// obtained by hand-coded backpropagation through the twin evaluation itself
// (second-order backprop through the value pass). No framework autodiff.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dml/dataset.hpp"
#include "dml/errors.hpp"
#include "dml/linalg.hpp"
#include "dml/rng.hpp"
#include "dml/serialize.hpp"

namespace dml {

struct Activation {
    std::string name;
    bool c1 = true;             // continuously differentiable
    double (*f)(double) = nullptr;
    double (*df)(double) = nullptr;
    double (*d2f)(double) = nullptr;
};

namespace act {

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}
inline double sigmoid_deriv(double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
}
inline double elu(double x) { return x >= 0.0 ? x : std::expm1(x); }
inline double elu_d(double x) { return x >= 0.0 ? 1.0 : std::exp(x); }
inline double elu_d2(double x) { return x >= 0.0 ? 0.0 : std::exp(x); }
inline double tanh_f(double x) { return std::tanh(x); }
inline double tanh_d(double x) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
}
inline double tanh_d2(double x) {
    const double t = std::tanh(x);
    return -2.0 * t * (1.0 - t * t);
}
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double relu_d(double x) { return x > 0.0 ? 1.0 : 0.0; }
inline double zero(double) { return 0.0; }

} // namespace act

inline Activation activation_by_name(const std::string& name) {
    if (name == "softplus") return {"softplus", true, act::softplus, act::sigmoid, act::sigmoid_deriv};
    if (name == "elu") return {"elu", true, act::elu, act::elu_d, act::elu_d2};
    if (name == "tanh") return {"tanh", true, act::tanh_f, act::tanh_d, act::tanh_d2};
    if (name == "relu") return {"relu", false, act::relu, act::relu_d, act::zero};
    throw ConfigError("unknown activation: " + name);
}

/// Plain fully connected network, z_l = g_{l-1}(z_{l-1}) w_l + b_l with
/// g_0 = identity. Twin evaluation needs C^1 activations, so non-C^1 choices
/// are rejected at construction.
struct MLP {
    std::vector<int> sizes; // [n_0, ..., n_L]
    std::vector<Matrix> W;  // W[l] is n_{l-1} x n_l, 1-based (W[0] unused)
    std::vector<Vector> b;
    Activation activation;

    MLP() = default;

    MLP(std::vector<int> layer_sizes, Activation act) : sizes(std::move(layer_sizes)), activation(act) {
        if (sizes.size() < 2) throw ConfigError("MLP: needs at least input and output layers");
        for (int s : sizes)
            if (s < 1) throw ConfigError("MLP: layer sizes must be positive");
        if (!activation.c1)
            throw ConfigError("MLP: activation '" + activation.name + "' is not C1; twin evaluation needs a smooth activation");
        W.resize(sizes.size());
        b.resize(sizes.size());
        for (std::size_t l = 1; l < sizes.size(); ++l) {
            W[l] = Matrix::Zero(sizes[l - 1], sizes[l]);
            b[l] = Vector::Zero(sizes[l]);
        }
    }

    int depth() const { return static_cast<int>(sizes.size()) - 1; }
    int input_dim() const { return sizes.front(); }
    int output_dim() const { return sizes.back(); }
};

/// Xavier-Glorot uniform initialization, biases zero, deterministic per seed.
inline MLP init_weights(const std::vector<int>& sizes, std::uint64_t seed,
                        const Activation& activation = activation_by_name("softplus")) {
    MLP net(sizes, activation);
    Rng rng(substream_seed(seed, fnv1a64("init-weights")));
    for (int l = 1; l <= net.depth(); ++l) {
        const double bound = std::sqrt(6.0 / (net.sizes[static_cast<std::size_t>(l - 1)] +
                                              net.sizes[static_cast<std::size_t>(l)]));
        for (Eigen::Index i = 0; i < net.W[static_cast<std::size_t>(l)].rows(); ++i)
            for (Eigen::Index j = 0; j < net.W[static_cast<std::size_t>(l)].cols(); ++j)
                net.W[static_cast<std::size_t>(l)](i, j) = bound * (2.0 * rng.uniform() - 1.0);
    }
    return net;
}

/// Pre-activations Z[l] and activated layers A[l] = g_l(Z[l]) (A[0] = X).
struct ForwardCache {
    std::vector<Matrix> Z;
    std::vector<Matrix> A;
};

inline ForwardCache forward(const MLP& net, const Matrix& X) {
    if (X.cols() != net.input_dim()) throw std::invalid_argument("forward: input width mismatch");
    const int L = net.depth();
    ForwardCache fc;
    fc.Z.resize(static_cast<std::size_t>(L) + 1);
    fc.A.resize(static_cast<std::size_t>(L) + 1);
    fc.Z[0] = X;
    fc.A[0] = X;
    for (int l = 1; l <= L; ++l) {
        fc.Z[static_cast<std::size_t>(l)] =
            (fc.A[static_cast<std::size_t>(l - 1)] * net.W[static_cast<std::size_t>(l)]).rowwise() +
            net.b[static_cast<std::size_t>(l)].transpose();
        if (l < L)
            fc.A[static_cast<std::size_t>(l)] =
                fc.Z[static_cast<std::size_t>(l)].unaryExpr(net.activation.f);
    }
    return fc;
}

inline Vector predictions(const ForwardCache& fc) { return fc.Z.back().col(0); }

/// Backpropagation pass of the twin network: S[l] = dy/dz_l per example, with
/// the products U[l] = S[l] W_l^T cached for training.
struct TwinCache {
    std::vector<Matrix> S;
    std::vector<Matrix> U; // U[l] = S[l] * W_l^T, defined for l = 1..L
};

inline TwinCache twin_from_cache(const MLP& net, const ForwardCache& fc, const Matrix& boundary) {
    const int L = net.depth();
    TwinCache tc;
    tc.S.resize(static_cast<std::size_t>(L) + 1);
    tc.U.resize(static_cast<std::size_t>(L) + 1);
    tc.S[static_cast<std::size_t>(L)] = boundary;
    for (int l = L; l >= 1; --l) {
        tc.U[static_cast<std::size_t>(l)] =
            tc.S[static_cast<std::size_t>(l)] * net.W[static_cast<std::size_t>(l)].transpose();
        if (l > 1)
            tc.S[static_cast<std::size_t>(l - 1)] =
                tc.U[static_cast<std::size_t>(l)].cwiseProduct(
                    fc.Z[static_cast<std::size_t>(l - 1)].unaryExpr(net.activation.df));
        else
            tc.S[0] = tc.U[1]; // g_0 is the identity
    }
    return tc;
}

struct TwinOutput {
    Vector y;     // m
    Matrix x_bar; // m x n_0
};

/// Value and full input gradient in one combined evaluation (~2x a forward
/// pass, irrespective of the input dimension).
inline TwinOutput twin_eval(const MLP& net, const Matrix& X) {
    if (net.output_dim() != 1) throw std::invalid_argument("twin_eval: scalar-output network expected");
    const ForwardCache fc = forward(net, X);
    const TwinCache tc = twin_from_cache(net, fc, Matrix::Ones(X.rows(), 1));
    return {predictions(fc), tc.S[0]};
}

struct TwinMultiOutput {
    Matrix Y;                 // m x n_L
    std::vector<Matrix> jacobians; // per output k: m x n_0
};

/// Multi-output twin evaluation: the backpropagation boundary is the identity
/// over outputs, yielding the full Jacobian dy/dx per example.
inline TwinMultiOutput twin_eval_multi(const MLP& net, const Matrix& X) {
    const int nL = net.output_dim();
    if (nL < 2) throw std::invalid_argument("twin_eval_multi: needs more than one output");
    const ForwardCache fc = forward(net, X);
    TwinMultiOutput out;
    out.Y = fc.Z.back();
    out.jacobians.reserve(static_cast<std::size_t>(nL));
    for (int k = 0; k < nL; ++k) {
        Matrix boundary = Matrix::Zero(X.rows(), nL);
        boundary.col(k).setOnes();
        const TwinCache tc = twin_from_cache(net, fc, boundary);
        out.jacobians.push_back(tc.S[0]);
    }
    return out;
}

struct ParamGrads {
    std::vector<Matrix> dW;
    std::vector<Vector> db;

    void init_like(const MLP& net) {
        dW.resize(net.W.size());
        db.resize(net.b.size());
        for (std::size_t l = 1; l < net.W.size(); ++l) {
            dW[l] = Matrix::Zero(net.W[l].rows(), net.W[l].cols());
            db[l] = Vector::Zero(net.b[l].size());
        }
    }
};

/// Gradient of an arbitrary scalar cost wrt all weights and biases, given its
/// partials wrt the predicted values (Gy) and wrt the predicted input
/// gradients (Gx; empty when the cost ignores them). This reverses the whole
/// twin program: first the backpropagation chain (in recording order), then
/// the forward chain, picking up the second-order terms through g''.
inline ParamGrads backprop_params(const MLP& net, const ForwardCache& fc, const TwinCache& tc,
                                  const Matrix& Gy, const Matrix& Gx) {
    const int L = net.depth();
    ParamGrads g;
    g.init_like(net);

    std::vector<Matrix> zbuf(static_cast<std::size_t>(L) + 1); // dC/dZ[l] contributions from the twin chain

    if (Gx.size() > 0) {
        Matrix sdag = Gx; // dC/dS[l-1], starting at S[0]
        for (int l = 1; l <= L; ++l) {
            Matrix p;
            if (l == 1)
                p = sdag;
            else
                p = sdag.cwiseProduct(fc.Z[static_cast<std::size_t>(l - 1)].unaryExpr(net.activation.df));
            g.dW[static_cast<std::size_t>(l)] += p.transpose() * tc.S[static_cast<std::size_t>(l)];
            if (l > 1)
                zbuf[static_cast<std::size_t>(l - 1)] =
                    sdag.cwiseProduct(tc.U[static_cast<std::size_t>(l)])
                        .cwiseProduct(fc.Z[static_cast<std::size_t>(l - 1)].unaryExpr(net.activation.d2f));
            if (l < L) sdag = p * net.W[static_cast<std::size_t>(l)];
        }
    }

    Matrix zt = Gy;
    for (int l = L; l >= 1; --l) {
        g.dW[static_cast<std::size_t>(l)] += fc.A[static_cast<std::size_t>(l - 1)].transpose() * zt;
        g.db[static_cast<std::size_t>(l)] += zt.colwise().sum().transpose();
        if (l > 1) {
            Matrix next = (zt * net.W[static_cast<std::size_t>(l)].transpose())
                              .cwiseProduct(fc.Z[static_cast<std::size_t>(l - 1)].unaryExpr(net.activation.df));
            if (zbuf[static_cast<std::size_t>(l - 1)].size() > 0)
                next += zbuf[static_cast<std::size_t>(l - 1)];
            zt = std::move(next);
        }
    }
    return g;
}

/// Default per-column weights for the derivative cost: 1 / mean(Z_j^2).
inline Vector default_derivative_weights(const Matrix& Z_tilde) {
    Vector w(Z_tilde.cols());
    for (Eigen::Index j = 0; j < Z_tilde.cols(); ++j) {
        const double ms = Z_tilde.col(j).squaredNorm() / static_cast<double>(Z_tilde.rows());
        if (!(ms > 0.0))
            throw NumericError("derivative column " + std::to_string(j) +
                               " has zero norm; filter it out (differential PCA) before training");
        w(j) = 1.0 / ms;
    }
    return w;
}

struct OneCycleSchedule {
    double lr_max = 0.01;
    double lr_min = 0.0;         // warmup start; 0 picks lr_max / 10
    double lr_final = 0.0;       // cosine floor; 0 picks lr_max / 100
    double warmup_fraction = 0.3;

    double start() const { return lr_min > 0.0 ? lr_min : lr_max / 10.0; }
    double floor() const { return lr_final > 0.0 ? lr_final : lr_max / 100.0; }

    double lr(long step, long total_steps) const {
        const double t = total_steps > 1 ? static_cast<double>(step) / static_cast<double>(total_steps - 1) : 1.0;
        if (t < warmup_fraction) return start() + (lr_max - start()) * (t / warmup_fraction);
        const double u = (t - warmup_fraction) / (1.0 - warmup_fraction);
        return floor() + 0.5 * (lr_max - floor()) * (1.0 + std::cos(kPi * u));
    }
};

struct EarlyStopping {
    double validation_fraction = 0.1;
    int patience = 20; // epochs without improvement
};

struct TrainConfig {
    double lambda = 1.0;       // derivative-cost weight
    double value_weight = 1.0; // 0 with lambda > 0 trains on differentials alone
    long batch_size = 256;
    int epochs = 100;
    OneCycleSchedule schedule;
    std::uint64_t seed = 0;
    std::optional<EarlyStopping> early_stopping;
    std::optional<Vector> derivative_column_weights; // defaults to 1/||Z_j||^2

    void validate() const {
        if (lambda < 0.0 || value_weight < 0.0) throw ConfigError("train: negative cost weights");
        if (!(schedule.lr_max >= schedule.start() && schedule.start() > 0.0))
            throw ConfigError("train: lr schedule requires lr_max >= lr_min > 0");
        if (batch_size < 1 || epochs < 1) throw ConfigError("train: bad batch size or epoch count");
    }
};

struct LossResult {
    double cost = 0.0;
    ParamGrads grads;
};

/// Combined cost over a (normalized) batch and its gradient wrt every weight
/// and bias. `example_weights`, when given, scales each example's
/// contribution to both cost terms.
inline LossResult loss(const MLP& net, const Matrix& X, const Vector& Y, const Matrix& Z,
                       const TrainConfig& cfg, const Vector& column_weights,
                       const Vector* example_weights = nullptr) {
    const long m = X.rows();
    if (Y.size() != m || Z.rows() != m) throw std::invalid_argument("loss: batch shape mismatch");
    const double inv_m = 1.0 / static_cast<double>(m);

    const ForwardCache fc = forward(net, X);
    const Vector resid_y = predictions(fc) - Y;

    Vector wy = Vector::Ones(m);
    if (example_weights) wy = *example_weights;

    double cost = cfg.value_weight * inv_m * resid_y.cwiseProduct(wy).dot(resid_y);
    Matrix Gy = (2.0 * cfg.value_weight * inv_m) * resid_y.cwiseProduct(wy);

    if (cfg.lambda > 0.0) {
        const TwinCache tc = twin_from_cache(net, fc, Matrix::Ones(m, 1));
        const Matrix resid_z = tc.S[0] - Z;
        Matrix weighted = resid_z.array().rowwise() * column_weights.transpose().array();
        weighted.array().colwise() *= wy.array();
        cost += cfg.lambda * inv_m * (weighted.cwiseProduct(resid_z)).sum();
        const Matrix Gx = (2.0 * cfg.lambda * inv_m) * weighted;
        return {cost, backprop_params(net, fc, tc, Gy, Gx)};
    }
    return {cost, backprop_params(net, fc, TwinCache{}, Gy, Matrix())};
}

/// Cost only (validation paths).
inline double loss_value(const MLP& net, const Matrix& X, const Vector& Y, const Matrix& Z,
                         const TrainConfig& cfg, const Vector& column_weights,
                         const Vector* example_weights = nullptr) {
    const long m = X.rows();
    const double inv_m = 1.0 / static_cast<double>(m);
    const ForwardCache fc = forward(net, X);
    const Vector resid_y = predictions(fc) - Y;
    Vector wy = Vector::Ones(m);
    if (example_weights) wy = *example_weights;
    double cost = cfg.value_weight * inv_m * resid_y.cwiseProduct(wy).dot(resid_y);
    if (cfg.lambda > 0.0) {
        const TwinCache tc = twin_from_cache(net, fc, Matrix::Ones(m, 1));
        const Matrix resid_z = tc.S[0] - Z;
        Matrix weighted = resid_z.array().rowwise() * column_weights.transpose().array();
        weighted.array().colwise() *= wy.array();
        cost += cfg.lambda * inv_m * weighted.cwiseProduct(resid_z).sum();
    }
    return cost;
}

/// ADAM with the paper's constants.
class Adam {
  public:
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    explicit Adam(const MLP& net) {
        mW_.resize(net.W.size());
        vW_.resize(net.W.size());
        mb_.resize(net.b.size());
        vb_.resize(net.b.size());
        for (std::size_t l = 1; l < net.W.size(); ++l) {
            mW_[l] = Matrix::Zero(net.W[l].rows(), net.W[l].cols());
            vW_[l] = mW_[l];
            mb_[l] = Vector::Zero(net.b[l].size());
            vb_[l] = mb_[l];
        }
    }

    void step(MLP& net, const ParamGrads& g, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, t_);
        const double c2 = 1.0 - std::pow(beta2, t_);
        for (std::size_t l = 1; l < net.W.size(); ++l) {
            mW_[l] = beta1 * mW_[l] + (1.0 - beta1) * g.dW[l];
            vW_[l] = beta2 * vW_[l] + (1.0 - beta2) * g.dW[l].cwiseProduct(g.dW[l]);
            net.W[l] -= lr * (mW_[l] / c1).cwiseQuotient(((vW_[l] / c2).cwiseSqrt().array() + eps).matrix());
            mb_[l] = beta1 * mb_[l] + (1.0 - beta1) * g.db[l];
            vb_[l] = beta2 * vb_[l] + (1.0 - beta2) * g.db[l].cwiseProduct(g.db[l]);
            net.b[l] -= lr * (mb_[l] / c1).cwiseQuotient(((vb_[l] / c2).cwiseSqrt().array() + eps).matrix());
        }
    }

  private:
    std::vector<Matrix> mW_, vW_;
    std::vector<Vector> mb_, vb_;
    double t_ = 0.0;
};

struct EpochStats {
    double train_cost = 0.0;
    double validation_cost = 0.0; // NaN when no validation split
};

struct TrainLog {
    std::vector<EpochStats> epochs;
    Vector derivative_column_weights;
    bool classic = false; // lambda == 0
    long steps = 0;
};

/// Mini-batch ADAM with a one-cycle learning rate schedule over preprocessed
/// (normalized) data. Deterministic for a fixed seed: initialization, the
/// shuffle stream and all reductions are fixed-order.
inline TrainLog train(MLP& net, const TrainingSet& data, const TrainConfig& cfg,
                      const Vector* example_weights = nullptr) {
    cfg.validate();
    if (net.output_dim() != 1) throw std::invalid_argument("train: scalar-output network expected");
    data.validate();
    if (example_weights && example_weights->size() != data.rows())
        throw std::invalid_argument("train: example weight count mismatch");

    TrainLog log;
    log.classic = cfg.lambda == 0.0;

    Vector column_weights;
    if (cfg.derivative_column_weights) {
        if (cfg.derivative_column_weights->size() != data.cols())
            throw ConfigError("train: derivative_column_weights size mismatch");
        column_weights = *cfg.derivative_column_weights;
        for (Eigen::Index j = 0; j < column_weights.size(); ++j)
            if (column_weights(j) != 0.0 && !(data.Z.col(j).squaredNorm() > 0.0))
                throw NumericError("train: nonzero weight requested for zero-norm differential column " +
                                   std::to_string(j) + "; filter it out (differential PCA) first");
    } else if (cfg.lambda > 0.0) {
        column_weights = default_derivative_weights(data.Z);
    } else {
        column_weights = Vector::Zero(data.cols());
    }
    log.derivative_column_weights = column_weights;

    // deterministic shuffle stream, separate from weight initialization
    Rng shuffle_rng(substream_seed(cfg.seed, fnv1a64("train-shuffle")));
    std::vector<long> order(static_cast<std::size_t>(data.rows()));
    std::iota(order.begin(), order.end(), 0L);
    auto shuffle = [&](std::vector<long>& idx) {
        for (std::size_t i = idx.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(shuffle_rng.raw() % i);
            std::swap(idx[i - 1], idx[j]);
        }
    };

    // validation split: tail of one initial shuffle
    std::vector<long> train_idx = order, val_idx;
    if (cfg.early_stopping) {
        shuffle(train_idx);
        const long n_val = std::max<long>(1, static_cast<long>(std::floor(
                               cfg.early_stopping->validation_fraction * static_cast<double>(data.rows()))));
        if (n_val >= data.rows()) throw ConfigError("train: validation fraction too large");
        val_idx.assign(train_idx.end() - n_val, train_idx.end());
        train_idx.resize(train_idx.size() - static_cast<std::size_t>(n_val));
    }

    auto gather = [&](const std::vector<long>& idx, long begin, long end, Matrix& X, Vector& Y,
                      Matrix& Z, Vector& ew) {
        const long n = end - begin;
        X.resize(n, data.cols());
        Y.resize(n);
        Z.resize(n, data.cols());
        if (example_weights) ew.resize(n);
        for (long r = 0; r < n; ++r) {
            const long src = idx[static_cast<std::size_t>(begin + r)];
            X.row(r) = data.X.row(src);
            Y(r) = data.Y(src);
            Z.row(r) = data.Z.row(src);
            if (example_weights) ew(r) = (*example_weights)(src);
        }
    };

    Matrix valX, valZ;
    Vector valY, valW;
    if (!val_idx.empty()) gather(val_idx, 0, static_cast<long>(val_idx.size()), valX, valY, valZ, valW);

    const long m_train = static_cast<long>(train_idx.size());
    const long batches = (m_train + cfg.batch_size - 1) / cfg.batch_size;
    const long total_steps = static_cast<long>(cfg.epochs) * batches;

    Adam adam(net);
    long step = 0;
    double best_val = std::numeric_limits<double>::infinity();
    MLP best_net = net;
    int stale_epochs = 0;

    Matrix bX, bZ;
    Vector bY, bW;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle(train_idx);
        double epoch_cost = 0.0;
        for (long bidx = 0; bidx < batches; ++bidx) {
            const long begin = bidx * cfg.batch_size;
            const long end = std::min(m_train, begin + cfg.batch_size);
            gather(train_idx, begin, end, bX, bY, bZ, bW);
            const LossResult lr = loss(net, bX, bY, bZ, cfg, column_weights,
                                       example_weights ? &bW : nullptr);
            if (!std::isfinite(lr.cost))
                throw DivergenceError("train: nonfinite cost at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(bidx));
            adam.step(net, lr.grads, cfg.schedule.lr(step, total_steps));
            ++step;
            epoch_cost += lr.cost * static_cast<double>(end - begin);
        }
        EpochStats stats;
        stats.train_cost = epoch_cost / static_cast<double>(m_train);
        stats.validation_cost = std::numeric_limits<double>::quiet_NaN();
        if (!val_idx.empty()) {
            stats.validation_cost = loss_value(net, valX, valY, valZ, cfg, column_weights,
                                               example_weights ? &valW : nullptr);
            if (stats.validation_cost < best_val) {
                best_val = stats.validation_cost;
                best_net = net;
                stale_epochs = 0;
            } else if (++stale_epochs > cfg.early_stopping->patience) {
                log.epochs.push_back(stats);
                break;
            }
        }
        log.epochs.push_back(stats);
    }
    if (!val_idx.empty()) net = best_net;

    // Training on differentials alone pins the shape but not the level; the
    // level is recovered by matching means.
    if (cfg.value_weight == 0.0 && cfg.lambda > 0.0) {
        const ForwardCache fc = forward(net, data.X);
        net.b.back()(0) += (data.Y - predictions(fc)).mean();
    }

    log.steps = step;
    return log;
}

/// Analytic operation counts for one example; the twin pass costs about twice
/// the value pass regardless of input dimension.
inline long forward_flops(const std::vector<int>& sizes) {
    long ops = 0;
    for (std::size_t l = 1; l < sizes.size(); ++l) {
        ops += 2L * sizes[l - 1] * sizes[l] + sizes[l]; // product + bias
        if (l + 1 < sizes.size()) ops += sizes[l];      // activation
    }
    return ops;
}

inline long twin_flops(const std::vector<int>& sizes) {
    long ops = forward_flops(sizes);
    for (std::size_t l = 1; l < sizes.size(); ++l) {
        ops += 2L * sizes[l - 1] * sizes[l]; // U[l] = S[l] W_l^T
        if (l > 1) ops += 2L * sizes[l - 1]; // derivative activation + Hadamard
    }
    return ops;
}

inline void save_mlp(std::ostream& out, const MLP& net) {
    out << "dml-mlp 1\n";
    out << "layers " << net.sizes.size();
    for (int s : net.sizes) out << ' ' << s;
    out << '\n';
    out << "activation " << net.activation.name << '\n';
    for (int l = 1; l <= net.depth(); ++l) {
        ser::write_matrix(out, "W" + std::to_string(l), net.W[static_cast<std::size_t>(l)]);
        ser::write_vector(out, "b" + std::to_string(l), net.b[static_cast<std::size_t>(l)]);
    }
}

inline MLP load_mlp(std::istream& in) {
    const std::string ctx = "mlp";
    ser::expect(in, "dml-mlp", ctx);
    if (ser::read_long(in, ctx) != 1) throw IoError("mlp: unsupported schema version");
    ser::expect(in, "layers", ctx);
    const long count = ser::read_long(in, ctx);
    std::vector<int> sizes;
    for (long i = 0; i < count; ++i) sizes.push_back(static_cast<int>(ser::read_long(in, ctx)));
    ser::expect(in, "activation", ctx);
    const std::string act_name = ser::read_word(in, ctx);
    MLP net(sizes, activation_by_name(act_name));
    for (int l = 1; l <= net.depth(); ++l) {
        net.W[static_cast<std::size_t>(l)] = ser::read_matrix(in, "W" + std::to_string(l), ctx);
        net.b[static_cast<std::size_t>(l)] = ser::read_vector(in, "b" + std::to_string(l), ctx);
    }
    return net;
}

} // namespace dml
