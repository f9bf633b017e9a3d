#pragma once

// Minimal tape-based reverse-mode differentiation over scalars. Each recorded
// operation stores its operand indices and local partials evaluated at record
// time, so the reverse sweep is a single operand-agnostic traversal.
//
// One tape per execution context; tapes must not be shared across threads.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dml/math.hpp"

namespace dml {

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    NormCdf,
    SmoothMax0,
    SmoothIndicator,
};

struct TapeNode {
    Op op;
    std::int32_t a = -1; // operand indices, strictly less than the node's own
    std::int32_t b = -1;
    double val = 0.0;
    double pa = 0.0; // local partials d(val)/d(operand)
    double pb = 0.0;
};

class Tape;

/// Value plus its position on a tape.
class Var {
  public:
    Var() = default;
    Var(Tape* tape, std::int32_t index, double value) : tape_(tape), index_(index), value_(value) {}

    double value() const { return value_; }
    std::int32_t index() const { return index_; }
    Tape* tape() const { return tape_; }

  private:
    Tape* tape_ = nullptr;
    std::int32_t index_ = -1;
    double value_ = 0.0;
};

class Tape {
  public:
    Var leaf(double value) {
        check_finite(value, "leaf");
        nodes_.push_back(TapeNode{Op::Leaf, -1, -1, value, 0.0, 0.0});
        return Var(this, static_cast<std::int32_t>(nodes_.size()) - 1, value);
    }

    /// Constants are leaves whose adjoints are simply never read.
    Var constant(double value) { return leaf(value); }

    Var record(Op op, double value, std::int32_t a, double pa, std::int32_t b = -1, double pb = 0.0) {
        check_finite(value, "record");
        nodes_.push_back(TapeNode{op, a, b, value, pa, pb});
        return Var(this, static_cast<std::int32_t>(nodes_.size()) - 1, value);
    }

    std::size_t size() const { return nodes_.size(); }
    const TapeNode& node(std::size_t i) const { return nodes_[i]; }

    void reset() { nodes_.clear(); }

  private:
    static void check_finite(double v, const char* where) {
        if (!std::isfinite(v)) throw std::domain_error(std::string("tape ") + where + ": nonfinite value");
    }

    std::vector<TapeNode> nodes_;
};

namespace detail {

inline void require_same_tape(const Var& x, const Var& y) {
    if (x.tape() == nullptr || x.tape() != y.tape())
        throw std::invalid_argument("adjoint: operands live on different tapes");
}

inline void require_on_tape(const Var& x) {
    if (x.tape() == nullptr) throw std::invalid_argument("adjoint: variable not bound to a tape");
}

} // namespace detail

inline Var operator+(const Var& x, const Var& y) {
    detail::require_same_tape(x, y);
    return x.tape()->record(Op::Add, x.value() + y.value(), x.index(), 1.0, y.index(), 1.0);
}

inline Var operator-(const Var& x, const Var& y) {
    detail::require_same_tape(x, y);
    return x.tape()->record(Op::Sub, x.value() - y.value(), x.index(), 1.0, y.index(), -1.0);
}

inline Var operator*(const Var& x, const Var& y) {
    detail::require_same_tape(x, y);
    return x.tape()->record(Op::Mul, x.value() * y.value(), x.index(), y.value(), y.index(), x.value());
}

inline Var operator/(const Var& x, const Var& y) {
    detail::require_same_tape(x, y);
    if (y.value() == 0.0) throw std::domain_error("adjoint: division by zero");
    const double inv = 1.0 / y.value();
    return x.tape()->record(Op::Div, x.value() * inv, x.index(), inv, y.index(),
                            -x.value() * inv * inv);
}

inline Var operator-(const Var& x) {
    detail::require_on_tape(x);
    return x.tape()->record(Op::Neg, -x.value(), x.index(), -1.0);
}

inline Var operator+(const Var& x, double c) { return x + x.tape()->constant(c); }
inline Var operator+(double c, const Var& x) { return x.tape()->constant(c) + x; }
inline Var operator-(const Var& x, double c) { return x - x.tape()->constant(c); }
inline Var operator-(double c, const Var& x) { return x.tape()->constant(c) - x; }
inline Var operator*(const Var& x, double c) { return x * x.tape()->constant(c); }
inline Var operator*(double c, const Var& x) { return x.tape()->constant(c) * x; }
inline Var operator/(const Var& x, double c) { return x / x.tape()->constant(c); }
inline Var operator/(double c, const Var& x) { return x.tape()->constant(c) / x; }

inline Var exp(const Var& x) {
    detail::require_on_tape(x);
    const double v = std::exp(x.value());
    return x.tape()->record(Op::Exp, v, x.index(), v);
}

inline Var log(const Var& x) {
    detail::require_on_tape(x);
    if (!(x.value() > 0.0)) throw std::domain_error("adjoint: log of nonpositive value");
    return x.tape()->record(Op::Log, std::log(x.value()), x.index(), 1.0 / x.value());
}

inline Var sqrt(const Var& x) {
    detail::require_on_tape(x);
    if (!(x.value() > 0.0)) throw std::domain_error("adjoint: sqrt of nonpositive value");
    const double v = std::sqrt(x.value());
    return x.tape()->record(Op::Sqrt, v, x.index(), 0.5 / v);
}

inline Var norm_cdf(const Var& x) {
    detail::require_on_tape(x);
    return x.tape()->record(Op::NormCdf, norm_cdf(x.value()), x.index(), norm_pdf(x.value()));
}

/// Smoothed hinge max(s,0); the only max exposed, so every recorded payoff
/// keeps well-defined pathwise differentials.
inline Var smooth_max0(const Var& s, double half_width) {
    detail::require_on_tape(s);
    if (!(half_width > 0.0)) throw std::invalid_argument("smooth_max0: half_width must be positive");
    return s.tape()->record(Op::SmoothMax0, smooth_max0(s.value(), half_width), s.index(),
                            smooth_max0_deriv(s.value(), half_width));
}

inline Var smooth_indicator(const Var& x, double level, double half_width) {
    detail::require_on_tape(x);
    if (!(half_width > 0.0)) throw std::invalid_argument("smooth_indicator: half_width must be positive");
    return x.tape()->record(Op::SmoothIndicator, smooth_indicator(x.value(), level, half_width),
                            x.index(), smooth_indicator_deriv(x.value(), level, half_width));
}

/// Adjoints of every tape node wrt one output, plus the traversal count
/// (exactly one visit per node; nothing is recomputed).
struct AdjointVector {
    std::vector<double> adjoints;
    std::size_t nodes_visited = 0;

    double of(const Var& x) const { return adjoints[static_cast<std::size_t>(x.index())]; }
};

inline AdjointVector backpropagate(const Tape& tape, const Var& output) {
    if (output.tape() != &tape || output.index() < 0 ||
        static_cast<std::size_t>(output.index()) >= tape.size())
        throw std::invalid_argument("backpropagate: output not recorded on this tape");

    AdjointVector result;
    result.adjoints.assign(tape.size(), 0.0);
    result.adjoints[static_cast<std::size_t>(output.index())] = 1.0;

    for (std::size_t i = tape.size(); i-- > 0;) {
        ++result.nodes_visited;
        const TapeNode& n = tape.node(i);
        const double bar = result.adjoints[i];
        if (n.a >= 0) result.adjoints[static_cast<std::size_t>(n.a)] += bar * n.pa;
        if (n.b >= 0) result.adjoints[static_cast<std::size_t>(n.b)] += bar * n.pb;
    }
    return result;
}

} // namespace dml
