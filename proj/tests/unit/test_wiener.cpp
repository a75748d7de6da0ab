#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "../support/oracles.hpp"
#include "volterra/errors.hpp"
#include "volterra/stats.hpp"
#include "volterra/wiener.hpp"

using namespace volterra;
using namespace volterra::wiener;
using kernels::VolterraKernel;

namespace {

// Scalar step function with pieces on a lattice of spacing h inside [lo, hi).
StepFunction random_step(std::mt19937_64& gen, double lo, double hi, double h, std::size_t dim = 1) {
    const int slots = static_cast<int>(std::round((hi - lo) / h));
    std::uniform_int_distribution<int> count(1, 3);
    std::uniform_int_distribution<int> slot(0, slots);
    std::normal_distribution<double> value(0.0, 1.0);
    const int pieces = count(gen);
    std::vector<int> marks;
    while (static_cast<int>(marks.size()) < pieces + 1) {
        const int m = slot(gen);
        if (std::find(marks.begin(), marks.end(), m) == marks.end()) marks.push_back(m);
    }
    std::sort(marks.begin(), marks.end());
    std::vector<double> t;
    std::vector<Eigen::VectorXd> v;
    for (int m : marks) t.push_back(lo + m * h);
    for (int j = 0; j < pieces; ++j) {
        Eigen::VectorXd x(static_cast<Eigen::Index>(dim));
        for (auto& c : x) c = value(gen);
        v.push_back(x);
    }
    return StepFunction(t, v);
}

// sum_jk <f_j, g_k> R(cell_j, cell_k): the same inner product through phi.
double inner_via_covariance(const VolterraKernel& k, const StepFunction& f, const StepFunction& g) {
    double total = 0.0;
    for (std::size_t j = 0; j < f.pieces(); ++j)
        for (std::size_t i = 0; i < g.pieces(); ++i)
            total += f.value(j).dot(g.value(i)) *
                     kernels::covariance_R(k, {f.left(j), f.right(j), g.left(i), g.right(i)});
    return total;
}

VolterraKernel liouville_as_user_kernel(double alpha) {
    kernels::UserKernel spec;
    spec.alpha = alpha;
    spec.eval = [alpha](double t, double r) { return r < 0.0 ? 0.0 : std::pow(t - r, alpha) / alpha; };
    spec.deriv_u = [alpha](double u, double r) { return r < 0.0 ? 0.0 : std::pow(u - r, alpha - 1.0); };
    spec.deriv_lag = [alpha](double u, double lag) { return u - lag < 0.0 ? 0.0 : std::pow(lag, alpha - 1.0); };
    spec.support_lower = 0.0;
    spec.label = "liouville_user";
    return VolterraKernel::user_defined(spec);
}

} // namespace

// =============================================================================
// Step functions
// =============================================================================

TEST(StepFunction, RejectsBadBreakpoints) {
    EXPECT_THROW(StepFunction({0.0, 0.0}, std::vector<double>{1.0}), std::invalid_argument);
    EXPECT_THROW(StepFunction({1.0, 0.0}, std::vector<double>{1.0}), std::invalid_argument);
    EXPECT_THROW(StepFunction({0.0}, std::vector<double>{}), std::invalid_argument);
    EXPECT_THROW(StepFunction({0.0, 1.0, 2.0}, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(StepFunction, EvaluatesLeftClosedPieces) {
    const StepFunction f({0.0, 1.0, 3.0}, std::vector<double>{2.0, -1.0});
    EXPECT_EQ(f(0.0)[0], 2.0);
    EXPECT_EQ(f(1.0)[0], -1.0);
    EXPECT_EQ(f(3.0)[0], 0.0);
    EXPECT_EQ(f(-0.1)[0], 0.0);
}

TEST(StepFunction, LinearCombinationOnMergedBreakpoints) {
    const StepFunction f({0.0, 2.0}, std::vector<double>{1.0});
    const StepFunction g({1.0, 3.0}, std::vector<double>{4.0});
    const StepFunction h = linear_combination(2.0, f, -1.0, g);
    ASSERT_EQ(h.pieces(), 3u);
    EXPECT_EQ(h(0.5)[0], 2.0);
    EXPECT_EQ(h(1.5)[0], -2.0);
    EXPECT_EQ(h(2.5)[0], -4.0);
}

TEST(StepFunction, LeftPointApproximation) {
    const auto f = step_approximation([](double t) { return Eigen::VectorXd::Constant(1, t * t); }, 0.0, 1.0, 4);
    ASSERT_EQ(f.pieces(), 4u);
    EXPECT_EQ(f.value(2)[0], 0.25);
    EXPECT_EQ(f.upper(), 1.0);
}

// =============================================================================
// K* transform
// =============================================================================

TEST(Kstar, LiouvilleIndicatorAtZero) {
    const auto k = VolterraKernel::liouville(0.25);
    EXPECT_NEAR(kstar_transform(k, StepFunction::indicator(0.0, 1.0), 0.0)[0], 4.0, 1e-14);
    EXPECT_NEAR(kstar_transform(k, StepFunction::indicator(0.0, 1.0), 0.5)[0], std::pow(0.5, 0.25) / 0.25, 1e-14);
}

TEST(Kstar, ZeroFunctionAndEmptySupport) {
    for (const auto& k : {VolterraKernel::fbm(0.7), VolterraKernel::liouville(0.2)}) {
        EXPECT_EQ(kstar_transform(k, StepFunction::indicator(0.0, 1.0, 0.0), 0.3)[0], 0.0);
        EXPECT_EQ(kstar_transform(k, StepFunction::indicator(0.0, 1.0), 1.5)[0], 0.0);
    }
}

TEST(Kstar, FbmClosedForm) {
    const auto k = VolterraKernel::fbm(0.8);
    const double a = 0.3;
    const double c = kernels::mvn_normalization(a);
    const StepFunction f({-1.0, 0.5, 2.0}, std::vector<double>{1.5, -0.5});
    auto pos = [a](double x) { return x > 0.0 ? std::pow(x, a) : 0.0; };
    for (double r : {-7.0, -1.0, -0.3, 0.5, 1.2, 1.999}) {
        const double expect = c * (1.5 * (pos(0.5 - r) - pos(-1.0 - r)) - 0.5 * (pos(2.0 - r) - pos(0.5 - r)));
        EXPECT_NEAR(kstar_transform(k, f, r)[0], expect, 1e-13) << r;
    }
}

TEST(Kstar, QuadratureRouteMatchesClosedForm) {
    const auto builtin = VolterraKernel::liouville(0.25);
    const auto user = liouville_as_user_kernel(0.25);
    ASSERT_FALSE(user.closed_form_antiderivative());
    const StepFunction f({0.0, 0.5, 1.5}, std::vector<double>{1.0, 2.0});
    for (double r : {-0.5, 0.0, 0.2, 0.5, 0.9, 1.4999})
        EXPECT_NEAR(kstar_transform(user, f, r)[0], kstar_transform(builtin, f, r)[0], 1e-10) << r;
}

TEST(Kstar, LinearInTheIntegrand) {
    const auto k = VolterraKernel::fbm(0.65);
    std::mt19937_64 gen(21);
    for (int i = 0; i < 10; ++i) {
        const StepFunction f = random_step(gen, -2.0, 2.0, 0.25);
        const StepFunction g = random_step(gen, -2.0, 2.0, 0.25);
        const StepFunction h = linear_combination(2.0, f, -3.0, g);
        for (double r : {-3.0, -0.4, 0.1, 1.9}) {
            const double lhs = kstar_transform(k, h, r)[0];
            const double rhs = 2.0 * kstar_transform(k, f, r)[0] - 3.0 * kstar_transform(k, g, r)[0];
            EXPECT_NEAR(lhs, rhs, 1e-12 * (1.0 + std::abs(rhs)));
        }
    }
}

// =============================================================================
// K* inner product
// =============================================================================

TEST(KstarInner, LiouvilleUnitIndicator) {
    const double a = 0.25;
    const double value = kstar_inner(VolterraKernel::liouville(a), StepFunction::indicator(0.0, 1.0),
                                     StepFunction::indicator(0.0, 1.0));
    EXPECT_NEAR(value, 1.0 / (a * a * (2 * a + 1)), 1e-8);
    EXPECT_NEAR(value, 32.0 / 3.0, 1e-8);
}

TEST(KstarInner, FbmIndicatorIsIncrementVariance) {
    for (double hurst : {0.55, 0.75, 0.95}) {
        const auto k = VolterraKernel::fbm(hurst);
        for (auto [s, t] : {std::pair{0.0, 1.0}, std::pair{-2.0, -0.5}, std::pair{3.0, 7.0}}) {
            const auto f = StepFunction::indicator(s, t);
            EXPECT_NEAR(kstar_inner(k, f, f), std::pow(t - s, 2 * hurst), 1e-8 * std::pow(t - s, 2 * hurst))
                << hurst << " [" << s << "," << t << ")";
        }
    }
}

TEST(KstarInner, LiouvilleShiftedIndicator) {
    const double a = 0.3;
    const auto k = VolterraKernel::liouville(a);
    const auto f = StepFunction::indicator(1.0, 2.5);
    EXPECT_NEAR(kstar_inner(k, f, f), oracle::r_form_covariance(k, 1.0, 2.5, 1.0, 2.5), 1e-8);
}

TEST(KstarInner, MatchesCovarianceRoute) {
    std::mt19937_64 gen(31);
    for (const auto& k : {VolterraKernel::fbm(0.7), VolterraKernel::liouville(0.35)}) {
        for (int i = 0; i < 3; ++i) {
            const StepFunction f = random_step(gen, 0.0, 2.0, 0.5);
            const StepFunction g = random_step(gen, 0.0, 2.0, 0.5);
            const double expect = inner_via_covariance(k, f, g);
            EXPECT_NEAR(kstar_inner(k, f, g), expect, 1e-7 * (1.0 + std::abs(expect))) << k.id();
        }
    }
}

TEST(KstarInner, VectorValuesPairCoordinatewise) {
    const auto k = VolterraKernel::fbm(0.75);
    const StepFunction f({0.0, 1.0}, std::vector<Eigen::VectorXd>{Eigen::Vector2d(1.0, 2.0)});
    const StepFunction g({0.0, 1.0}, std::vector<Eigen::VectorXd>{Eigen::Vector2d(3.0, -1.0)});
    EXPECT_NEAR(kstar_inner(k, f, g), 1.0, 1e-8);
    EXPECT_NEAR(kstar_inner(k, f, f), 5.0, 1e-8);
    EXPECT_EQ(kstar_inner(k, f, StepFunction::indicator(0.0, 1.0, 0.0, 2)), 0.0);
}

TEST(KstarInner, SymmetricAndPositive) {
    std::mt19937_64 gen(41);
    const auto k = VolterraKernel::fbm(0.6);
    for (int i = 0; i < 4; ++i) {
        const StepFunction f = random_step(gen, -1.0, 1.0, 0.25);
        const StepFunction g = random_step(gen, -1.0, 1.0, 0.25);
        EXPECT_NEAR(kstar_inner(k, f, g), kstar_inner(k, g, f), 1e-9);
        EXPECT_GT(kstar_inner(k, f, f), 0.0);
    }
}

// =============================================================================
// Wiener integral
// =============================================================================

TEST(WienerIntegral, IndicatorOfFirstCellIsFirstIncrement) {
    const sampling::PathGrid grid{0.0, 0.25, 8};
    const auto paths = sampling::sample_paths(VolterraKernel::fbm(0.75), grid, 1, 20, 3);
    const auto i = wiener_integral(StepFunction::indicator(0.0, 0.25), paths);
    for (std::size_t p = 0; p < 20; ++p) EXPECT_EQ(i[p], paths.increment(p, 0, 0));
}

TEST(WienerIntegral, IndicatorReproducesRawIncrement) {
    const sampling::PathGrid grid{-1.0, 0.25, 8};
    const auto paths = sampling::sample_paths(VolterraKernel::fbm(0.75), grid, 1, 20, 4);
    const auto i = wiener_integral(StepFunction::indicator(-0.5, 0.5), paths);
    for (std::size_t p = 0; p < 20; ++p) {
        double s = 0.0;
        for (std::size_t k = 2; k < 6; ++k) s += paths.increment(p, 0, k);
        EXPECT_EQ(i[p], s);
        EXPECT_NEAR(i[p], paths.value(p, 0, 6) - paths.value(p, 0, 2), 1e-14);
    }
}

TEST(WienerIntegral, Linearity) {
    const sampling::PathGrid grid{0.0, 0.5, 6};
    const auto paths = sampling::sample_paths(VolterraKernel::fbm(0.7), grid, 2, 10, 5);
    const StepFunction g({0.0, 1.0, 3.0},
                         std::vector<Eigen::VectorXd>{Eigen::Vector2d(1.0, -2.0), Eigen::Vector2d(0.5, 0.25)});
    const auto base = wiener_integral(g, paths);
    const auto scaled = wiener_integral(g.scaled(4.0), paths);
    for (std::size_t p = 0; p < 10; ++p) EXPECT_NEAR(scaled[p], 4.0 * base[p], 1e-14 * (1 + std::abs(base[p])));
}

TEST(WienerIntegral, OffGridBreakpointThrows) {
    const sampling::PathGrid grid{0.0, 0.5, 4};
    const auto paths = sampling::sample_paths(VolterraKernel::fbm(0.7), grid, 1, 2, 6);
    EXPECT_THROW(wiener_integral(StepFunction::indicator(0.25, 1.0), paths), GridMismatch);
    EXPECT_THROW(wiener_integral(StepFunction::indicator(0.0, 2.5), paths), GridMismatch);
    EXPECT_THROW(wiener_integral(StepFunction::indicator(0.0, 1.0, 1.0, 2), paths), GridMismatch);
}

TEST(WienerIntegral, CommonGrid) {
    const auto g = grid_for(StepFunction({-1.0, 0.5, 0.75}, std::vector<double>{1.0, 2.0}));
    EXPECT_DOUBLE_EQ(g.dt, 0.25);
    EXPECT_EQ(g.n_steps, 7u);
    EXPECT_THROW(grid_for(StepFunction({0.0, 1.0, 1.0 + std::sqrt(2.0)}, std::vector<double>{1.0, 1.0}), 64),
                 GridMismatch);
}

// =============================================================================
// Isometry
// =============================================================================

TEST(Isometry, FbmUnitIndicator) {
    const IsometryReport r = verify_isometry(VolterraKernel::fbm(0.75), StepFunction::indicator(0.0, 1.0), 10000, 1);
    EXPECT_NEAR(r.rhs_quad, 1.0, 1e-8);
    EXPECT_TRUE(r.pass) << r.to_text();
    EXPECT_NEAR(r.std_error, std::sqrt(2.0 / 10000), 0.2 * std::sqrt(2.0 / 10000));
}

TEST(Isometry, ZeroIntegrand) {
    const IsometryReport r =
        verify_isometry(VolterraKernel::fbm(0.75), StepFunction::indicator(0.0, 1.0, 0.0), 1000, 2);
    EXPECT_EQ(r.lhs_mc, 0.0);
    EXPECT_EQ(r.rhs_quad, 0.0);
    EXPECT_TRUE(r.pass);
}

TEST(Isometry, LiouvilleUnitIndicator) {
    const IsometryReport r =
        verify_isometry(VolterraKernel::liouville(0.25), StepFunction::indicator(0.0, 1.0), 10000, 3);
    EXPECT_NEAR(r.rhs_quad, 32.0 / 3.0, 1e-8);
    EXPECT_TRUE(r.pass) << r.to_text();
}

TEST(Isometry, TooFewPaths) {
    EXPECT_THROW(verify_isometry(VolterraKernel::fbm(0.75), StepFunction::indicator(0.0, 1.0), 999, 1),
                 InsufficientSamples);
}

TEST(Isometry, ReportKeys) {
    IsometryReport r;
    const std::string text = r.to_text();
    for (const char* key : {"lhs_mc=", "rhs_quad=", "stderr=", "z=", "pass="})
        EXPECT_NE(text.find(key), std::string::npos) << key;
}

TEST(Isometry, BilinearityForRandomPairs) {
    std::mt19937_64 gen(51);
    const auto k = VolterraKernel::fbm(0.7);
    const sampling::PathGrid grid{-1.0, 0.25, 12};
    const std::size_t n = 10000;
    const auto paths = sampling::sample_paths(k, grid, 2, n, 52);
    for (int i = 0; i < 5; ++i) {
        const StepFunction f = random_step(gen, -1.0, 2.0, 0.25, 2);
        const StepFunction g = random_step(gen, -1.0, 2.0, 0.25, 2);
        const auto a = wiener_integral(f, paths);
        const auto b = wiener_integral(g, paths);
        std::vector<double> prod(n);
        for (std::size_t p = 0; p < n; ++p) prod[p] = a[p] * b[p];
        const auto e = stats::mean_with_stderr(prod);
        const double expect = kstar_inner(k, f, g);
        EXPECT_LE(std::abs(e.mean - expect), 3.0 * e.std_error) << i << ": " << e.mean << " vs " << expect;
    }
}

// =============================================================================
// Grid approximation of general integrands
// =============================================================================

TEST(StepRefinement, DifferencesShrink) {
    const auto k = VolterraKernel::fbm(0.75);
    const RefinementReport r =
        step_refinement(k, [](double t) { return Eigen::VectorXd::Constant(1, std::sin(3.0 * t)); }, 0.0, 1.0, 4, 4);
    ASSERT_EQ(r.differences.size(), 4u);
    EXPECT_TRUE(r.converging);
    for (double order : r.orders) EXPECT_GT(order, 0.5);
    // Norms settle toward the limit.
    EXPECT_LT(std::abs(r.norms[4] - r.norms[3]), std::abs(r.norms[1] - r.norms[0]));
}
