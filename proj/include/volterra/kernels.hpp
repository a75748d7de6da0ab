#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>

#include "volterra/quadrature.hpp"

namespace volterra::kernels {

enum class KernelKind { FbmMandelbrotVanNess, Liouville, UserDefined };

std::string to_string(KernelKind kind);

/// Description of a user-supplied kernel.
struct UserKernel {
    double alpha = 0.25;
    std::function<double(double, double)> eval;    ///< K(t, r)
    std::function<double(double, double)> deriv_u; ///< dK/du at (u, r), u > r
    /// Optional dK/du at (u, u - lag). Without it tiny lags are resolved only to
    /// the spacing of doubles near u, which limits phi accuracy to about
    /// (eps |u|)^alpha.
    std::function<double(double, double)> deriv_lag;
    double regularity_constant = 1.0;
    double support_lower = -std::numeric_limits<double>::infinity();
    bool stationary_increments = false;
    std::string label = "user";
};

/// Alpha-regular Volterra kernel. Immutable; cheap to copy.
///
/// The built-in kinds share the derivative shape coef * (u - r)^p for
/// r >= support_lower:
///   FbmMandelbrotVanNess  K = c (t - r)_+^alpha, p = alpha - 1, coef = c alpha,
///                         c normalized so that Var(b_1) = 1.
///   Liouville             K = s (t - r)^alpha / alpha on r >= 0, coef = s.
/// The Mandelbrot-van Ness term -(-r)_+^alpha does not depend on t and drops
/// out of every increment, so it is omitted and K vanishes for t < r.
class VolterraKernel {
public:
    static VolterraKernel fbm(double hurst);
    static VolterraKernel liouville(double alpha, double scale = 1.0);
    /// dK/du = scale (u - r)^exponent on r >= support_lower, K its antiderivative
    /// in t (NaN when exponent <= -1, which is not an alpha-regular kernel).
    static VolterraKernel power_law(double alpha, double scale, double exponent,
                                    double regularity_constant,
                                    double support_lower = -std::numeric_limits<double>::infinity());
    static VolterraKernel user_defined(UserKernel spec);

    KernelKind kind() const { return kind_; }
    double alpha() const { return alpha_; }
    double hurst() const { return alpha_ + 0.5; }
    double regularity_constant() const { return regularity_constant_; }
    double support_lower() const { return support_lower_; }
    /// Increments of the generated process are stationary (kernel depends on t - r only).
    bool stationary_increments() const { return stationary_; }
    /// eval() differences give exact integrals of deriv_u (no quadrature needed).
    bool closed_form_antiderivative() const { return closed_form_; }

    double eval(double t, double r) const;
    double deriv_u(double u, double r) const;
    /// dK/du at (u, u - lag) for lag > 0; avoids cancellation for tiny lags.
    double deriv_lag(double u, double lag) const {
        if (custom_) return custom_deriv_lag(u, lag);
        if (u - lag < support_lower_) return 0.0;
        return coef_ * std::pow(lag, exponent_);
    }

    /// Human-readable identity used in provenance records.
    std::string id() const;

private:
    VolterraKernel() = default;
    double custom_deriv_lag(double u, double lag) const;

    KernelKind kind_ = KernelKind::UserDefined;
    double alpha_ = 0.25;
    double regularity_constant_ = 1.0;
    double support_lower_ = -std::numeric_limits<double>::infinity();
    bool stationary_ = false;
    bool closed_form_ = false;
    double coef_ = 1.0;
    double exponent_ = -0.75;
    bool custom_ = false;
    std::function<double(double, double)> custom_eval_;
    std::function<double(double, double)> custom_deriv_;
    std::function<double(double, double)> custom_deriv_lag_;
    std::string label_;
};

/// Normalizing constant c of the Mandelbrot-van Ness kernel with Var(b_1) = 1.
double mvn_normalization(double alpha);

/// Default tolerance of phi evaluations (absolute, relative).
inline constexpr quad::Tolerance kPhiTolerance{1e-10, 1e-8};

/// phi(u, v) = int_{-inf}^{u ^ v} dK/du(u, r) dK/du(v, r) dr.
double eval_phi(const VolterraKernel& kernel, double u, double v, quad::Tolerance tol = kPhiTolerance);

/// phi(m, m + d) for d > 0, parametrized by the gap to keep tiny gaps exact.
double phi_at_gap(const VolterraKernel& kernel, double m, double d, quad::Tolerance tol);

struct CovarianceQuery {
    double s1 = 0.0;
    double t1 = 0.0;
    double s2 = 0.0;
    double t2 = 0.0;

    /// Throws std::invalid_argument unless endpoints are finite and ordered.
    void validate() const;
    CovarianceQuery swapped() const { return {s2, t2, s1, t1}; }
};

/// w(u) = exp(rate (u - anchor)); rate 0 is the unit weight.
struct ExpWeight {
    double rate = 0.0;
    double anchor = 0.0;

    double operator()(double u) const { return rate == 0.0 ? 1.0 : std::exp(rate * (u - anchor)); }
    bool operator==(const ExpWeight&) const = default;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Default tolerance of covariance integrals.
inline constexpr quad::Tolerance kCovarianceTolerance{1e-10, 1e-8};

enum class CovarianceScheme {
    Automatic, ///< Gap for stationary kernels, Planar otherwise.
    Gap,       ///< 1-D integral over g = v - u; needs phi to depend on the gap only.
    Planar,    ///< 2-D integral over the rectangle.
};

/// int_I int_J w1(u) w2(v) phi(u, v) dv du.
///
/// Gap scheme: with u = x, v = x + g the weight integrates in x in closed form,
/// leaving int omega(g) phi(|g|) dg split at the kinks of omega and graded by
/// 1/alpha at g = 0. Planar scheme: squares touching the diagonal are
/// integrated in (x, gap) coordinates graded by 1/alpha; separated rectangles
/// use tensor Gauss rules of increasing order.
double weighted_covariance(const VolterraKernel& kernel, Interval first, ExpWeight w1,
                           Interval second, ExpWeight w2,
                           quad::Tolerance tol = kCovarianceTolerance,
                           CovarianceScheme scheme = CovarianceScheme::Automatic);

/// R(s1, t1, s2, t2) = int_{s1}^{t1} int_{s2}^{t2} phi(u, v) dv du.
double covariance_R(const VolterraKernel& kernel, const CovarianceQuery& q,
                    quad::Tolerance tol = kCovarianceTolerance,
                    CovarianceScheme scheme = CovarianceScheme::Automatic);

struct RegularityReport {
    std::size_t samples = 0;
    double max_ratio = 0.0; ///< max |dK/du| (u - r)^{1 - alpha}
    double worst_lag = 0.0;
    double regularity_constant = 0.0;
    bool pass = false;
};

/// Samples (u, r) with u - r log-uniform in [1e-6, 1e2].
RegularityReport verify_regularity(const VolterraKernel& kernel, std::size_t sample_count,
                                   std::uint64_t seed);

struct PhiBoundReport {
    std::size_t samples = 0;
    double constant = 0.0; ///< empirical C' in |phi| <= C' |u - v|^{2 alpha - 1}
};

/// Samples off-diagonal points with |u - v| log-uniform in [1e-3, 10].
PhiBoundReport phi_bound(const VolterraKernel& kernel, std::size_t sample_count, std::uint64_t seed);

} // namespace volterra::kernels
