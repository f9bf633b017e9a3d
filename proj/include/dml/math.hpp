#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dml {

inline constexpr double kPi = 3.14159265358979323846;

inline double norm_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

/// Standard normal CDF through erfc; absolute error well below 1e-12.
inline double norm_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

/// Inverse standard normal CDF. Acklam's rational approximation refined by one
/// Halley step against norm_cdf, giving close to full double precision.
inline double norm_inv(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw std::domain_error("norm_inv: p must lie strictly in (0,1)");

    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    const double e = norm_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * kPi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

/// Call-spread smoothing of the hinge max(s, 0): quadratic blend on
/// [-half_width, half_width], exact outside. C^1 everywhere.
inline double smooth_max0(double s, double half_width) {
    if (s <= -half_width) return 0.0;
    if (s >= half_width) return s;
    const double t = s + half_width;
    return t * t / (4.0 * half_width);
}

inline double smooth_max0_deriv(double s, double half_width) {
    if (s <= -half_width) return 0.0;
    if (s >= half_width) return 1.0;
    return (s + half_width) / (2.0 * half_width);
}

/// Ramp from 0 to 1 over [level - half_width, level + half_width]; the
/// call-spread stand-in for a digital indicator. Piecewise linear.
inline double smooth_indicator(double x, double level, double half_width) {
    const double u = x - level;
    if (u <= -half_width) return 0.0;
    if (u >= half_width) return 1.0;
    return (u + half_width) / (2.0 * half_width);
}

inline double smooth_indicator_deriv(double x, double level, double half_width) {
    const double u = x - level;
    if (u <= -half_width || u >= half_width) return 0.0;
    return 1.0 / (2.0 * half_width);
}

} // namespace dml
