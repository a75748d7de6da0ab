#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "volterra/errors.hpp"
#include "volterra/kernels.hpp"

namespace volterra::kernels {

namespace {

constexpr double kOuterGrading = 3.0;
constexpr int kMaxBisections = 48;
constexpr int kTensorOrders[] = {7, 10, 15, 20, 25, 30};

struct Piece {
    Interval span;
    ExpWeight weight;
};

class PieceIntegrator {
public:
    PieceIntegrator(const VolterraKernel& kernel, quad::Tolerance tol)
        : kernel_(kernel), tol_(tol), inner_tol_(tol.scaled(0.1)),
          phi_tol_{tol.abs * 1e-3, std::min(tol.rel * 1e-2, 1e-10)},
          gap_grading_(1.0 / kernel.alpha()), lower_(kernel.support_lower()) {}

    double phi(double u, double v) const {
        return phi_at_gap(kernel_, std::min(u, v), std::abs(v - u), phi_tol_);
    }

    /// int_{glo}^{ghi} w(x + g) phi(x, x + g) dg.
    double over_gaps(double x, double glo, double ghi, ExpWeight w) const {
        auto f = [&](double g) { return w(x + g) * phi_at_gap(kernel_, x, g, phi_tol_); };
        return quad::integrate(f, glo, ghi, quad::Grading{gap_grading_, 1.0}, inner_tol_).value;
    }

    /// Square [a, b]^2: the regions u < v and v < u in gap coordinates.
    double diagonal(Interval s, ExpWeight wu, ExpWeight wv) const {
        auto triangle = [&](ExpWeight outer, ExpWeight inner) {
            auto f = [&](double x) { return outer(x) * over_gaps(x, 0.0, s.hi - x, inner); };
            return quad::integrate(f, s.lo, s.hi, quad::Grading{kOuterGrading, kOuterGrading}, tol_)
                .value;
        };
        const double upper = triangle(wu, wv);
        if (wu == wv) return 2.0 * upper;
        return upper + triangle(wv, wu);
    }

    /// Left interval sharing its right end with the left end of `right`.
    double adjacent(Piece left, Piece right) const {
        const double b = left.span.hi;
        const double c = right.span.hi;
        auto f = [&](double x) { return left.weight(x) * over_gaps(x, b - x, c - x, right.weight); };
        return quad::integrate(f, left.span.lo, b, quad::Grading{kOuterGrading, kOuterGrading}, tol_)
            .value;
    }

    double separated(Piece p, Piece q, quad::Tolerance tol, int depth) const {
        const double wp = p.span.hi - p.span.lo;
        const double wq = q.span.hi - q.span.lo;
        const double gap = p.span.hi < q.span.lo ? q.span.lo - p.span.hi : p.span.lo - q.span.hi;
        // phi is only Hoelder continuous where the smaller time meets the support edge.
        if (p.span.lo == lower_ || q.span.lo == lower_) return nested(p, q, tol);
        if (gap < 0.5 * std::max(wp, wq) && depth < kMaxBisections) return bisect(p, q, tol, depth);

        double prev = tensor(p, q, kTensorOrders[0]);
        for (std::size_t i = 1; i < std::size(kTensorOrders); ++i) {
            const double cur = tensor(p, q, kTensorOrders[i]);
            if (std::abs(cur - prev) <= tol.bound(cur)) return cur;
            prev = cur;
        }
        if (depth < kMaxBisections) return bisect(p, q, tol, depth);
        throw QuadratureNonConvergence("tensor quadrature on a separated rectangle did not converge");
    }

private:
    double nested(Piece p, Piece q, quad::Tolerance tol) const {
        const quad::Grading gp{p.span.lo == lower_ ? kOuterGrading : 1.0, 1.0};
        const quad::Grading gq{q.span.lo == lower_ ? kOuterGrading : 1.0, 1.0};
        auto outer = [&](double u) {
            auto f = [&](double v) { return q.weight(v) * phi(u, v); };
            return p.weight(u) * quad::integrate(f, q.span.lo, q.span.hi, gq, tol.scaled(0.1)).value;
        };
        return quad::integrate(outer, p.span.lo, p.span.hi, gp, tol).value;
    }

    double bisect(Piece p, Piece q, quad::Tolerance tol, int depth) const {
        const bool split_p = p.span.hi - p.span.lo >= q.span.hi - q.span.lo;
        Piece whole = split_p ? p : q;
        const double mid = 0.5 * (whole.span.lo + whole.span.hi);
        Piece lo = whole;
        Piece hi = whole;
        lo.span.hi = mid;
        hi.span.lo = mid;
        const quad::Tolerance half = tol.scaled(0.5);
        if (split_p) return separated(lo, q, half, depth + 1) + separated(hi, q, half, depth + 1);
        return separated(p, lo, half, depth + 1) + separated(p, hi, half, depth + 1);
    }

    double tensor(Piece p, Piece q, int order) const {
        const quad::Rule& rule = quad::gauss_legendre(order);
        const double hp = p.span.hi - p.span.lo;
        const double hq = q.span.hi - q.span.lo;
        double sum = 0.0;
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
            const double u = p.span.lo + hp * rule.nodes[i];
            double row = 0.0;
            for (std::size_t j = 0; j < rule.nodes.size(); ++j) {
                const double v = q.span.lo + hq * rule.nodes[j];
                row += rule.weights[j] * q.weight(v) * phi(u, v);
            }
            sum += rule.weights[i] * p.weight(u) * row;
        }
        return sum * hp * hq;
    }

    const VolterraKernel& kernel_;
    quad::Tolerance tol_;
    quad::Tolerance inner_tol_;
    quad::Tolerance phi_tol_;
    double gap_grading_;
    double lower_;
};

/// int over {x in I, x + g in J} of w1(x) w2(x + g) dx.
double overlap_weight(Interval first, ExpWeight w1, Interval second, ExpWeight w2, double g) {
    const double lo = std::max(first.lo, second.lo - g);
    const double hi = std::min(first.hi, second.hi - g);
    if (!(hi > lo)) return 0.0;
    const double rate = w1.rate + w2.rate;
    const double log_front = w1.rate * (lo - w1.anchor) + w2.rate * (lo + g - w2.anchor);
    const double length = hi - lo;
    if (rate == 0.0) return std::exp(log_front) * length;
    return std::exp(log_front) * std::expm1(rate * length) / rate;
}

double gap_scheme(const VolterraKernel& kernel, Interval first, ExpWeight w1, Interval second,
                  ExpWeight w2, quad::Tolerance tol) {
    const double g_lo = second.lo - first.hi;
    const double g_hi = second.hi - first.lo;
    std::vector<double> cuts{g_lo, second.lo - first.lo, second.hi - first.hi, g_hi};
    if (g_lo < 0.0 && g_hi > 0.0) cuts.push_back(0.0);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    const quad::Tolerance phi_tol{tol.abs * 1e-3, std::min(tol.rel * 1e-2, 1e-10)};
    const double grading = 1.0 / kernel.alpha();
    auto integrand = [&](double g) {
        const double weight = overlap_weight(first, w1, second, w2, g);
        if (weight == 0.0) return 0.0;
        return weight * phi_at_gap(kernel, 0.0, std::abs(g), phi_tol);
    };
    const quad::Tolerance piece_tol = tol.scaled(1.0 / static_cast<double>(cuts.size() - 1));
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double a = cuts[i];
        const double b = cuts[i + 1];
        const double length = b - a;
        // Grade toward g = 0 when the diagonal is at or near this end.
        quad::Grading g{};
        if (a >= 0.0 && a < length) g.left = grading;
        if (b <= 0.0 && -b < length) g.right = grading;
        total += quad::integrate(integrand, a, b, g, piece_tol).value;
    }
    return total;
}

} // namespace

void CovarianceQuery::validate() const {
    for (double x : {s1, t1, s2, t2})
        if (!std::isfinite(x)) throw std::invalid_argument("covariance query endpoints must be finite");
    if (s1 > t1 || s2 > t2) throw std::invalid_argument("covariance query requires s1 <= t1 and s2 <= t2");
}

double weighted_covariance(const VolterraKernel& kernel, Interval first, ExpWeight w1,
                           Interval second, ExpWeight w2, quad::Tolerance tol,
                           CovarianceScheme scheme) {
    if (first.lo == first.hi || second.lo == second.hi) return 0.0;
    if (scheme == CovarianceScheme::Automatic)
        scheme = kernel.stationary_increments() ? CovarianceScheme::Gap : CovarianceScheme::Planar;
    if (scheme == CovarianceScheme::Gap) return gap_scheme(kernel, first, w1, second, w2, tol);

    std::vector<double> points{first.lo, first.hi, second.lo, second.hi};
    const double lower = kernel.support_lower();
    if (std::isfinite(lower)) points.push_back(lower);
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());

    // Elementary cells inside each interval, by index into `points`.
    std::vector<std::size_t> cells_first;
    std::vector<std::size_t> cells_second;
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
        if (points[i] >= first.lo && points[i + 1] <= first.hi) cells_first.push_back(i);
        if (points[i] >= second.lo && points[i + 1] <= second.hi) cells_second.push_back(i);
    }
    const double share = 1.0 / static_cast<double>(cells_first.size() * cells_second.size());
    const PieceIntegrator integrator(kernel, tol.scaled(share));

    double total = 0.0;
    for (std::size_t i : cells_first) {
        const Piece p{{points[i], points[i + 1]}, w1};
        // Entire cell below the support: every phi value vanishes.
        if (p.span.hi <= lower) continue;
        for (std::size_t j : cells_second) {
            const Piece q{{points[j], points[j + 1]}, w2};
            if (q.span.hi <= lower) continue;
            if (i == j) {
                total += integrator.diagonal(p.span, w1, w2);
            } else if (j == i + 1) {
                total += integrator.adjacent(p, q);
            } else if (i == j + 1) {
                total += integrator.adjacent(q, p);
            } else {
                total += integrator.separated(p, q, tol.scaled(share), 0);
            }
        }
    }
    return total;
}

double covariance_R(const VolterraKernel& kernel, const CovarianceQuery& q, quad::Tolerance tol,
                    CovarianceScheme scheme) {
    q.validate();
    return weighted_covariance(kernel, {q.s1, q.t1}, {}, {q.s2, q.t2}, {}, tol, scheme);
}

} // namespace volterra::kernels
