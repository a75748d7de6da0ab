#include "volterra/kernels.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "volterra/errors.hpp"
#include "volterra/rng.hpp"

namespace volterra::kernels {

namespace {

void require_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 0.5))
        throw std::invalid_argument("kernel alpha must lie in (0, 1/2), got " + std::to_string(alpha));
}

std::string format_number(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

} // namespace

std::string to_string(KernelKind kind) {
    switch (kind) {
    case KernelKind::FbmMandelbrotVanNess: return "fbm_mvn";
    case KernelKind::Liouville: return "liouville";
    case KernelKind::UserDefined: return "user_defined";
    }
    return "unknown";
}

double mvn_normalization(double alpha) {
    require_alpha(alpha);
    return std::sqrt((2.0 * alpha + 1.0) / (alpha * std::beta(alpha, 1.0 - 2.0 * alpha)));
}

VolterraKernel VolterraKernel::fbm(double hurst) {
    const double alpha = hurst - 0.5;
    require_alpha(alpha);
    VolterraKernel k;
    k.kind_ = KernelKind::FbmMandelbrotVanNess;
    k.alpha_ = alpha;
    const double c = mvn_normalization(alpha);
    k.coef_ = c * alpha;
    k.exponent_ = alpha - 1.0;
    k.regularity_constant_ = c * alpha;
    k.stationary_ = true;
    k.closed_form_ = true;
    k.label_ = "fbm_mvn(H=" + format_number(hurst) + ")";
    return k;
}

VolterraKernel VolterraKernel::liouville(double alpha, double scale) {
    require_alpha(alpha);
    if (!(scale > 0.0)) throw std::invalid_argument("Liouville scale must be positive");
    VolterraKernel k;
    k.kind_ = KernelKind::Liouville;
    k.alpha_ = alpha;
    k.coef_ = scale;
    k.exponent_ = alpha - 1.0;
    k.regularity_constant_ = scale;
    k.support_lower_ = 0.0;
    k.stationary_ = false;
    k.closed_form_ = true;
    k.label_ = "liouville(alpha=" + format_number(alpha) + ",scale=" + format_number(scale) + ")";
    return k;
}

VolterraKernel VolterraKernel::power_law(double alpha, double scale, double exponent,
                                         double regularity_constant, double support_lower) {
    require_alpha(alpha);
    if (!(regularity_constant > 0.0))
        throw std::invalid_argument("regularity constant must be positive");
    VolterraKernel k;
    k.kind_ = KernelKind::UserDefined;
    k.alpha_ = alpha;
    k.coef_ = scale;
    k.exponent_ = exponent;
    k.regularity_constant_ = regularity_constant;
    k.support_lower_ = support_lower;
    k.stationary_ = std::isinf(support_lower);
    k.closed_form_ = exponent > -1.0;
    k.label_ = "power_law(alpha=" + format_number(alpha) + ",scale=" + format_number(scale) +
               ",exponent=" + format_number(exponent) + ")";
    return k;
}

VolterraKernel VolterraKernel::user_defined(UserKernel spec) {
    require_alpha(spec.alpha);
    if (!spec.eval || !spec.deriv_u)
        throw std::invalid_argument("user kernel needs both eval and deriv_u");
    if (!(spec.regularity_constant > 0.0))
        throw std::invalid_argument("regularity constant must be positive");
    VolterraKernel k;
    k.kind_ = KernelKind::UserDefined;
    k.alpha_ = spec.alpha;
    k.regularity_constant_ = spec.regularity_constant;
    k.support_lower_ = spec.support_lower;
    k.stationary_ = spec.stationary_increments;
    k.closed_form_ = false;
    k.custom_ = true;
    k.custom_eval_ = std::move(spec.eval);
    k.custom_deriv_ = std::move(spec.deriv_u);
    k.custom_deriv_lag_ = std::move(spec.deriv_lag);
    k.label_ = spec.label;
    return k;
}

double VolterraKernel::eval(double t, double r) const {
    if (custom_) return t < r ? 0.0 : custom_eval_(t, r);
    if (t <= r || r < support_lower_) return 0.0;
    const double p1 = exponent_ + 1.0;
    if (p1 <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return coef_ / p1 * std::pow(t - r, p1);
}

double VolterraKernel::deriv_u(double u, double r) const {
    if (custom_) return u <= r ? 0.0 : custom_deriv_(u, r);
    if (u <= r) return 0.0;
    return deriv_lag(u, u - r);
}

double VolterraKernel::custom_deriv_lag(double u, double lag) const {
    if (custom_deriv_lag_) return custom_deriv_lag_(u, lag);
    // User derivatives take (u, r); a lag below the spacing of doubles near u
    // would collapse r onto u, so it is clamped to one ulp.
    double r = u - lag;
    if (!(r < u)) r = std::nextafter(u, -std::numeric_limits<double>::infinity());
    return custom_deriv_(u, r);
}

std::string VolterraKernel::id() const { return label_; }

double phi_at_gap(const VolterraKernel& kernel, double m, double d, quad::Tolerance tol) {
    const double lower = kernel.support_lower();
    const double limit = std::isinf(lower) ? std::numeric_limits<double>::infinity() : m - lower;
    if (limit <= 0.0) return 0.0;
    // s = m - r: distance of the integration variable below the smaller time.
    auto integrand = [&](double s) { return kernel.deriv_lag(m, s) * kernel.deriv_lag(m + d, s + d); };
    const double near_end = std::min(d, limit);
    const double near = quad::integrate(integrand, 0.0, near_end,
                                        quad::Grading{2.0 / kernel.alpha(), 1.0}, tol)
                            .value;
    if (near_end >= limit) return near;
    return near + quad::integrate_geometric_tail(integrand, d, limit, tol, near).value;
}

double eval_phi(const VolterraKernel& kernel, double u, double v, quad::Tolerance tol) {
    if (u == v)
        throw DiagonalSingularity("phi is singular on the diagonal u = v = " + std::to_string(u));
    return phi_at_gap(kernel, std::min(u, v), std::abs(u - v), tol);
}

RegularityReport verify_regularity(const VolterraKernel& kernel, std::size_t sample_count,
                                   std::uint64_t seed) {
    if (sample_count < 1) throw std::invalid_argument("sample_count must be at least 1");
    auto gen = rng::stream(seed, rng::Purpose::Regularity);
    std::uniform_real_distribution<double> log_lag(-6.0, 2.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double lower = kernel.support_lower();
    const double origin = std::isinf(lower) ? -5.0 : lower;
    const double one_minus_alpha = 1.0 - kernel.alpha();

    RegularityReport report;
    report.samples = sample_count;
    report.regularity_constant = kernel.regularity_constant();
    for (std::size_t i = 0; i < sample_count; ++i) {
        const double lag = std::pow(10.0, log_lag(gen));
        const double r = origin + 10.0 * unit(gen);
        const double ratio = std::abs(kernel.deriv_lag(r + lag, lag)) * std::pow(lag, one_minus_alpha);
        if (!(ratio <= report.max_ratio)) {
            report.max_ratio = ratio;
            report.worst_lag = lag;
        }
    }
    // Rounding in the two powers can push an exact bound a few ulps over.
    report.pass = std::isfinite(report.max_ratio) &&
                  report.max_ratio <= report.regularity_constant * (1.0 + 1e-12);
    return report;
}

PhiBoundReport phi_bound(const VolterraKernel& kernel, std::size_t sample_count, std::uint64_t seed) {
    if (sample_count < 1) throw std::invalid_argument("sample_count must be at least 1");
    auto gen = rng::stream(seed, rng::Purpose::PhiBound);
    std::uniform_real_distribution<double> log_gap(-3.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double lower = kernel.support_lower();
    const double origin = std::isinf(lower) ? -5.0 : lower;
    const double exponent = 1.0 - 2.0 * kernel.alpha();

    PhiBoundReport report;
    report.samples = sample_count;
    for (std::size_t i = 0; i < sample_count; ++i) {
        const double d = std::pow(10.0, log_gap(gen));
        const double m = origin + 10.0 * unit(gen);
        const double value = phi_at_gap(kernel, m, d, kPhiTolerance);
        report.constant = std::max(report.constant, std::abs(value) * std::pow(d, exponent));
    }
    return report;
}

} // namespace volterra::kernels
