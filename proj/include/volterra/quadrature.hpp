#pragma once

// Composite Gauss-Legendre quadrature on graded meshes, geometric tails for
// algebraically decaying integrands, and dyadic refinement toward an endpoint.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "volterra/errors.hpp"

namespace volterra::quad {

struct Tolerance {
    double abs = 1e-10;
    double rel = 1e-8;

    double bound(double value) const { return std::max(abs, rel * std::abs(value)); }
    Tolerance scaled(double factor) const { return {abs * factor, rel * factor}; }
};

/// Gauss-Legendre rule mapped to [0, 1]. Supported orders: 7, 10, 15, 20, 25, 30.
struct Rule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

const Rule& gauss_legendre(int order);

struct Estimate {
    double value = 0.0;
    double error = 0.0;
};

/// Mesh grading exponents at the two ends of an interval; 1 means uniform.
/// Near an anchor the substitution x = anchor ± L·tau^q clusters nodes so that
/// an endpoint factor (distance)^beta becomes tau^{q(1+beta)-1}.
struct Grading {
    double left = 1.0;
    double right = 1.0;
};

inline constexpr int kDefaultOrder = 15;
inline constexpr int kMaxLevel = 12;

namespace detail {

template <class F>
double fixed(F& f, double a, double b, const Rule& rule) {
    const double h = b - a;
    double sum = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i)
        sum += rule.weights[i] * f(a + h * rule.nodes[i]);
    return sum * h;
}

template <class F>
double composite(F& f, double anchor, double length, double sign, double q, int panels,
                 const Rule& rule) {
    const double h = 1.0 / panels;
    double sum = 0.0;
    for (int p = 0; p < panels; ++p) {
        double part = 0.0;
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
            const double tau = (p + rule.nodes[i]) * h;
            double offset;
            double jac;
            if (q == 1.0) {
                offset = length * tau;
                jac = length;
            } else {
                const double tq1 = std::pow(tau, q - 1.0);
                offset = length * tq1 * tau;
                jac = length * q * tq1;
            }
            part += rule.weights[i] * jac * f(anchor + sign * offset);
        }
        sum += part * h;
    }
    return sum;
}

template <class F>
Estimate graded_side(F& f, double anchor, double length, double sign, double q, Tolerance tol,
                     int order, int max_level) {
    const Rule& rule = gauss_legendre(order);
    int panels = 1;
    double prev = composite(f, anchor, length, sign, q, panels, rule);
    for (int level = 1; level <= max_level; ++level) {
        panels *= 2;
        const double cur = composite(f, anchor, length, sign, q, panels, rule);
        if (!std::isfinite(cur))
            throw QuadratureNonConvergence("graded quadrature produced a non-finite value");
        const double err = std::abs(cur - prev);
        if (err <= tol.bound(cur)) return {cur, err};
        prev = cur;
    }
    throw QuadratureNonConvergence("graded quadrature did not converge after " +
                                   std::to_string(panels) + " panels");
}

} // namespace detail

/// Adaptive composite Gauss on [a, b] with optional endpoint grading. Panel
/// counts double until two successive estimates agree within tol.
template <class F>
Estimate integrate(F&& f, double a, double b, Grading grading = {}, Tolerance tol = {},
                   int order = kDefaultOrder, int max_level = kMaxLevel) {
    if (a == b) return {};
    if (b < a) {
        const Estimate e = integrate(f, b, a, Grading{grading.right, grading.left}, tol, order,
                                     max_level);
        return {-e.value, e.error};
    }
    const double length = b - a;
    if (grading.left > 1.0 && grading.right > 1.0) {
        const Estimate lo = detail::graded_side(f, a, 0.5 * length, 1.0, grading.left,
                                                tol.scaled(0.5), order, max_level);
        const Estimate hi = detail::graded_side(f, b, 0.5 * length, -1.0, grading.right,
                                                tol.scaled(0.5), order, max_level);
        return {lo.value + hi.value, lo.error + hi.error};
    }
    if (grading.right > 1.0)
        return detail::graded_side(f, b, length, -1.0, grading.right, tol, order, max_level);
    return detail::graded_side(f, a, length, 1.0, grading.left, tol, order, max_level);
}

struct TailEstimate {
    double value = 0.0;
    double remainder = 0.0; ///< geometric extrapolation of the untruncated part
    int panels = 0;
};

/// Integral of f over s in [start, limit) (limit may be +inf) on geometric
/// panels [start 2^k, start 2^{k+1}]. Each panel uses a fixed Gauss rule, which
/// is accurate when the integrand's singularities lie at s <= 0. For an
/// infinite range, panel contributions of an algebraically decaying integrand
/// form an asymptotically geometric series; the sum stops once the series
/// total extrapolated from the last ratio is stable to tolerance (relative to
/// reference + total).
template <class F>
TailEstimate integrate_geometric_tail(F&& f, double start, double limit, Tolerance tol,
                                      double reference = 0.0, int order = 10,
                                      int max_panels = 2200) {
    const Rule& rule = gauss_legendre(order);
    double lo = start;
    double sum = 0.0;
    double prev_c = 0.0;
    double prev_est = std::numeric_limits<double>::quiet_NaN();
    int stable = 0;
    for (int k = 0; k < max_panels; ++k) {
        double hi = 2.0 * lo;
        const bool last = hi >= limit;
        if (last) hi = limit;
        const double c = detail::fixed(f, lo, hi, rule);
        if (!std::isfinite(c))
            throw QuadratureNonConvergence("geometric tail panel is non-finite");
        sum += c;
        if (last) return {sum, 0.0, k + 1};
        // A finite range is summed completely; extrapolation assumes an infinite one.
        if (std::isfinite(limit)) {
            lo = hi;
            continue;
        }

        double est = sum;
        double rem = 0.0;
        bool geometric = false;
        if (k > 0 && prev_c != 0.0) {
            const double ratio = c / prev_c;
            if (ratio > 0.0 && ratio < 0.99) {
                rem = c * ratio / (1.0 - ratio);
                est = sum + rem;
                geometric = true;
            }
        }
        const double threshold = tol.bound(reference + est);
        const bool settled = geometric ? std::abs(est - prev_est) <= threshold
                                       : std::abs(c) <= 0.01 * threshold;
        if (k >= 3 && settled) {
            if (++stable >= 2) return {est, rem, k + 1};
        } else {
            stable = 0;
        }
        prev_est = est;
        prev_c = c;
        lo = hi;
    }
    throw QuadratureNonConvergence("geometric tail did not settle");
}

/// Integral over [a, b] of an integrand with fine structure near a (for
/// example sums of e^{-lambda (x-a)} with widely spread rates): dyadic panels
/// [a + L 2^{-k-1}, a + L 2^{-k}] integrated adaptively until the panel
/// contributions are negligible, then the remaining sliver by a single rule.
template <class F>
Estimate integrate_dyadic(F&& f, double a, double b, Tolerance tol, int max_panels = 200) {
    if (a == b) return {};
    const double length = b - a;
    double sum = 0.0;
    double error = 0.0;
    double hi_offset = length;
    int quiet = 0;
    for (int k = 0; k < max_panels; ++k) {
        const double lo_offset = 0.5 * hi_offset;
        const Estimate e = integrate(f, a + lo_offset, a + hi_offset, Grading{}, tol.scaled(0.1));
        sum += e.value;
        error += e.error;
        hi_offset = lo_offset;
        if (std::abs(e.value) <= 0.01 * tol.bound(sum)) {
            // Quiet panels far from a prove nothing while the mass still sits in the sliver.
            const double sliver = detail::fixed(f, a, a + hi_offset, gauss_legendre(kDefaultOrder));
            if (std::abs(sliver) > 0.01 * tol.bound(sum + sliver)) {
                quiet = 0;
            } else if (++quiet >= 3) {
                return {sum + sliver, error + std::abs(sliver)};
            }
        } else {
            quiet = 0;
        }
    }
    throw QuadratureNonConvergence("dyadic refinement did not settle");
}

} // namespace volterra::quad
