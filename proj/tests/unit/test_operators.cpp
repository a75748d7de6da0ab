#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "volterra/errors.hpp"
#include "volterra/operators.hpp"

using namespace volterra;
using namespace volterra::operators;

namespace {

SpectralSystem delay_benchmark() { return SpectralSystem::scalar(1.0, 1.0, 0.3, 0.5, 1.0); }

LiftedState random_state(std::mt19937_64& gen, std::size_t dim, double r, double dt) {
    std::normal_distribution<double> normal;
    const std::size_t m = lag_steps(r, dt);
    LiftedState s{Eigen::VectorXd(static_cast<Eigen::Index>(dim)),
                  Segment{dt, Eigen::MatrixXd(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(m + 1))}};
    for (auto& v : s.head) v = normal(gen);
    for (auto& v : s.segment.values.reshaped()) v = normal(gen);
    return s;
}

double distance(const LiftedState& a, const LiftedState& b) {
    return lifted_norm({a.head - b.head, Segment{a.segment.dt, a.segment.values - b.segment.values}});
}

// Smooth history with head chosen so that x(0) equals the history's end value.
LiftedState consistent_state(const SpectralSystem& sys, double dt) {
    Segment seg = Segment::sample([](double t) { return Eigen::VectorXd::Constant(1, std::cos(t)); }, sys.delay(), dt);
    return {seg.values.col(seg.values.cols() - 1) - apply_D(sys, seg), seg};
}

} // namespace

// =============================================================================
// Semigroup and delay operators
// =============================================================================

TEST(Semigroup, IdentityAtZero) {
    const SpectralSystem sys(Eigen::Vector3d(1.0, 4.0, 9.0), 1.0, Eigen::Matrix3d::Zero(), Eigen::Matrix3d::Zero(),
                             DelayDensity::zero(), DelayDensity::zero(), Eigen::Matrix3d::Identity());
    const Eigen::Vector3d x(1.0, -2.0, 0.5);
    EXPECT_EQ(apply_semigroup(sys, 0.0, x), x);
}

TEST(Semigroup, ScalarDecay) {
    const auto sys = SpectralSystem::scalar(1.0, 1.0, 0.0, 0.0, 1.0);
    EXPECT_NEAR(apply_semigroup(sys, 1.0, Eigen::VectorXd::Constant(1, 1.0))[0], 0.36787944, 1e-8);
}

TEST(Semigroup, ContractionBound) {
    const SpectralSystem sys(heat_spectrum(6), 0.5, Eigen::MatrixXd::Zero(6, 6), Eigen::MatrixXd::Zero(6, 6),
                             DelayDensity::zero(), DelayDensity::zero(), Eigen::MatrixXd::Identity(6, 6));
    EXPECT_DOUBLE_EQ(sys.coercivity_rate(), M_PI * M_PI);
    std::mt19937_64 gen(3);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> time(0.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        Eigen::VectorXd x(6);
        for (auto& v : x) v = normal(gen);
        const double t = time(gen);
        EXPECT_LE(apply_semigroup(sys, t, x).norm(), std::exp(-sys.coercivity_rate() * t) * x.norm());
    }
}

TEST(Semigroup, NegativeTimeThrows) {
    const auto sys = SpectralSystem::scalar(1.0, 1.0, 0.0, 0.0, 1.0);
    EXPECT_THROW(apply_semigroup(sys, -0.1, Eigen::VectorXd::Ones(1)), NegativeTime);
}

TEST(SystemSpec, RejectsNonCoerciveSpectrum) {
    EXPECT_THROW(SpectralSystem::scalar(0.0, 1.0, 0.0, 0.0, 1.0), std::invalid_argument);
    EXPECT_THROW(SpectralSystem::scalar(1.0, 0.0, 0.0, 0.0, 1.0), std::invalid_argument);
}

TEST(DelayOperators, ZeroOperators) {
    const auto sys = SpectralSystem::scalar(1.0, 1.0, 0.0, 0.0, 1.0);
    const Segment seg = Segment::constant(Eigen::VectorXd::Constant(1, 3.0), 1.0, 0.125);
    EXPECT_EQ(apply_D(sys, seg)[0], 0.0);
    EXPECT_EQ(apply_F(sys, seg)[0], 0.0);
}

TEST(DelayOperators, PointDelayPicksOldestValue) {
    const auto sys = SpectralSystem::scalar(1.0, 1.0, 1.0, 2.0, 1.0);
    const Segment seg = Segment::constant(Eigen::VectorXd::Constant(1, 3.0), 1.0, 0.125);
    EXPECT_EQ(apply_D(sys, seg)[0], 3.0);
    Segment ramp = Segment::sample([](double t) { return Eigen::VectorXd::Constant(1, t); }, 1.0, 0.125);
    EXPECT_EQ(apply_D(sys, ramp)[0], -1.0);
    EXPECT_EQ(apply_F(sys, ramp)[0], -2.0);
}

TEST(DelayOperators, DistributedConstantDensity) {
    const double w = 0.7, r = 1.5, c = 2.0;
    const auto sys = SpectralSystem::scalar(1.0, r, 0.0, 0.0, 1.0, w, 0.0);
    const Segment seg = Segment::constant(Eigen::VectorXd::Constant(1, c), r, 0.1);
    EXPECT_NEAR(apply_D(sys, seg)[0], w * r * c, 1e-14);
}

TEST(DelayOperators, DistributedDensityFunctionIsTrapezoid) {
    // theta -> theta integrates a constant segment exactly: -r^2/2.
    const double r = 2.0;
    const SpectralSystem sys(Eigen::VectorXd::Ones(1), r, Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1),
                             DelayDensity::zero(),
                             DelayDensity::function([](double th) { return Eigen::MatrixXd::Constant(1, 1, th); }),
                             Eigen::MatrixXd::Ones(1, 1));
    const Segment seg = Segment::constant(Eigen::VectorXd::Ones(1), r, 0.25);
    EXPECT_NEAR(apply_F(sys, seg)[0], -r * r / 2.0, 1e-14);
}

TEST(DelayOperators, ShortSegmentUnderflows) {
    const auto sys = SpectralSystem::scalar(1.0, 1.0, 0.5, 0.0, 1.0);
    Segment seg{0.125, Eigen::MatrixXd::Ones(1, 5)};
    EXPECT_THROW(apply_D(sys, seg), SegmentUnderflow);
}

TEST(DelayOperators, Linearity) {
    const auto sys = SpectralSystem::scalar(1.0, 1.0, 0.3, 0.5, 1.0, 0.2, -0.4);
    std::mt19937_64 gen(5);
    const auto a = random_state(gen, 1, 1.0, 0.125);
    const auto b = random_state(gen, 1, 1.0, 0.125);
    const Segment sum{0.125, 2.0 * a.segment.values - 3.0 * b.segment.values};
    EXPECT_NEAR(apply_D(sys, sum)[0], 2.0 * apply_D(sys, a.segment)[0] - 3.0 * apply_D(sys, b.segment)[0], 1e-13);
    EXPECT_NEAR(apply_F(sys, sum)[0], 2.0 * apply_F(sys, a.segment)[0] - 3.0 * apply_F(sys, b.segment)[0], 1e-13);
}

// =============================================================================
// Deterministic neutral equation
// =============================================================================

TEST(Deterministic, PureSemigroupIsExact) {
    const double lambda = 1.7;
    const auto sys = SpectralSystem::scalar(lambda, 0.5, 0.0, 0.0, 1.0);
    const auto traj = solve_deterministic_neutral(sys, Eigen::VectorXd::Ones(1),
                                                  Segment::zero(1, 0.5, 0.01), 5.0, 0.01);
    ASSERT_EQ(traj.steps(), 500u);
    for (std::size_t n = 0; n <= 500; n += 25)
        EXPECT_NEAR(traj.x_at_step(n)[0], std::exp(-lambda * 0.01 * n), 1e-13) << n;
}

TEST(Deterministic, MethodOfStepsFirstInterval) {
    const double c = 0.8;
    const auto sys = SpectralSystem::scalar(1.0, 1.0, 0.0, c, 1.0);
    const double dt = 1.0 / 32;
    const auto traj = solve_deterministic_neutral(sys, Eigen::VectorXd::Ones(1),
                                                  Segment::constant(Eigen::VectorXd::Ones(1), 1.0, dt), 3.0, dt);
    // F x_t = c on [0, r]: exponential Euler integrates a constant forcing exactly.
    for (std::size_t n = 0; n <= 32; ++n) {
        const double t = n * dt;
        EXPECT_NEAR(traj.x_at_step(n)[0], c + (1 - c) * std::exp(-t), 1e-13) << t;
    }
}

TEST(Deterministic, HistoryIsStored) {
    const auto sys = delay_benchmark();
    const Segment hist = Segment::sample([](double t) { return Eigen::VectorXd::Constant(1, 1.0 + t); }, 1.0, 0.25);
    const auto traj = solve_deterministic_neutral(sys, Eigen::VectorXd::Ones(1), hist, 1.0, 0.25);
    EXPECT_EQ(traj.time(0), -1.0);
    EXPECT_EQ(traj.time(4), 0.0);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(traj.x(k)[0], hist.values(0, static_cast<Eigen::Index>(k)));
    // x(0) = phi0 + D phi1 = 1 + 0.3 * 0.
    EXPECT_DOUBLE_EQ(traj.x(4)[0], 1.0);
}

TEST(Deterministic, NeutralIdentityHoldsAlongSolution) {
    const auto sys = SpectralSystem::scalar(1.5, 0.5, 0.4, -0.6, 1.0, 0.3, 0.2);
    const double dt = 0.05;
    const auto traj = solve_deterministic_neutral(
        sys, Eigen::VectorXd::Constant(1, 0.3),
        Segment::sample([](double t) { return Eigen::VectorXd::Constant(1, std::sin(3 * t)); }, 0.5, dt), 4.0, dt);
    const DelayDiscretization disc(sys, dt);
    // Recompute v_n = x(t_n) - D x_{t_n} and march the recursion independently.
    const StepCoefficients coef(sys.eigenvalues(), dt);
    double v = traj.x_at_step(0)[0] - disc.apply_D(traj.segment(0))[0];
    EXPECT_NEAR(v, 0.3, 1e-14);
    for (std::size_t n = 0; n < traj.steps(); ++n) {
        v = coef.decay[0] * v + coef.phi1[0] * disc.apply_F(traj.segment(n))[0];
        const double v_next = traj.x_at_step(n + 1)[0] - disc.apply_D(traj.segment(n + 1))[0];
        ASSERT_NEAR(v_next, v, 1e-13) << n;
    }
}

TEST(Deterministic, StepLargerThanDelay) {
    const auto sys = SpectralSystem::scalar(1.0, 0.5, 0.3, 0.0, 1.0);
    EXPECT_THROW(solve_deterministic_neutral(sys, Eigen::VectorXd::Ones(1), Segment::zero(1, 0.5, 0.5), 2.0, 1.0),
                 StepLargerThanDelay);
    EXPECT_THROW(solve_deterministic_neutral(sys, Eigen::VectorXd::Ones(1), Segment::zero(1, 0.5, 0.5), 2.0, 0.3),
                 GridMismatch);
}

TEST(Deterministic, FirstOrderSelfConvergence) {
    const auto sys = delay_benchmark();
    const double T = 4.0;
    auto solve = [&](double dt) {
        const Segment hist = Segment::constant(Eigen::VectorXd::Ones(1), 1.0, dt);
        return solve_deterministic_neutral(sys, Eigen::VectorXd::Ones(1), hist, T, dt);
    };
    const double base = 1.0 / 16;
    const auto ref = solve(base / 8);
    std::vector<double> errors;
    for (double dt : {base, base / 2}) {
        const auto traj = solve(dt);
        const std::size_t stride = static_cast<std::size_t>(std::lround(dt / (base / 8)));
        double err = 0.0;
        for (std::size_t n = 0; n <= traj.steps(); ++n)
            err = std::max(err, std::abs(traj.x_at_step(n)[0] - ref.x_at_step(n * stride)[0]));
        errors.push_back(err);
    }
    // Richardson: e(h) - e(h/8) vs e(h/2) - e(h/8) = (1 - 1/8)/(1/2 - 1/8) = 7/3 for a first-order scheme.
    const double ratio = errors[0] / errors[1];
    EXPECT_NEAR(ratio, 7.0 / 3.0, 0.35) << errors[0] << " " << errors[1];
}

// =============================================================================
// Fundamental solution
// =============================================================================

TEST(Fundamental, ZeroBeforeTimeZero) {
    const auto sys = delay_benchmark();
    EXPECT_EQ(fundamental_solution(sys, -0.5, Eigen::VectorXd::Constant(1, 2.0), 0.125)[0], 0.0);
}

TEST(Fundamental, ReducesToSemigroupWithoutDelay) {
    const SpectralSystem sys(Eigen::Vector2d(1.0, 3.0), 1.0, Eigen::Matrix2d::Zero(), Eigen::Matrix2d::Zero(),
                             DelayDensity::zero(), DelayDensity::zero(), Eigen::Matrix2d::Identity());
    const Eigen::Vector2d h(1.0, -2.0);
    EXPECT_LT((fundamental_solution(sys, 1.0, h, 0.01) - apply_semigroup(sys, 1.0, h)).norm(), 1e-14);
    EXPECT_EQ(fundamental_solution(sys, 0.0, h, 0.01), Eigen::VectorXd(h));
}

TEST(Fundamental, MatchesDirectSolveAndIsLinear) {
    const auto sys = delay_benchmark();
    const double dt = 0.125;
    const auto traj = solve_deterministic_neutral(sys, Eigen::VectorXd::Constant(1, 2.0), Segment::zero(1, 1.0, dt),
                                                  3.0, dt);
    EXPECT_EQ(fundamental_solution(sys, 3.0, Eigen::VectorXd::Constant(1, 2.0), dt)[0], traj.x_at_step(24)[0]);
    EXPECT_NEAR(fundamental_solution(sys, 2.5, Eigen::VectorXd::Constant(1, 3.0), dt)[0],
                3.0 * fundamental_solution(sys, 2.5, Eigen::VectorXd::Constant(1, 1.0), dt)[0], 1e-14);
}

// =============================================================================
// Lifted semigroup
// =============================================================================

TEST(Lifted, IdentityAtZero) {
    std::mt19937_64 gen(7);
    const auto phi = random_state(gen, 1, 1.0, 1.0 / 64);
    const auto out = lifted_semigroup(delay_benchmark(), 0.0, phi, 1.0 / 64);
    EXPECT_EQ(out.head, phi.head);
    EXPECT_EQ(out.segment.values, phi.segment.values);
}

TEST(Lifted, DecoupledHeadIsSemigroup) {
    const auto sys = SpectralSystem::scalar(2.0, 1.0, 0.0, 0.0, 1.0);
    std::mt19937_64 gen(8);
    const auto phi = random_state(gen, 1, 1.0, 1.0 / 64);
    const auto out = lifted_semigroup(sys, 1.5, phi, 1.0 / 64);
    EXPECT_NEAR(out.head[0], apply_semigroup(sys, 1.5, phi.head)[0], 1e-14);
}

TEST(Lifted, SemigroupProperty) {
    const auto sys = delay_benchmark();
    const double dt = 1.0 / 64;
    std::mt19937_64 gen(9);
    std::uniform_int_distribution<int> steps(0, 192);
    for (int i = 0; i < 20; ++i) {
        const auto phi = random_state(gen, 1, 1.0, dt);
        const double t = steps(gen) * dt, s = steps(gen) * dt;
        const auto joint = lifted_semigroup(sys, t + s, phi, dt);
        const auto composed = lifted_semigroup(sys, t, lifted_semigroup(sys, s, phi, dt), dt);
        EXPECT_LE(distance(joint, composed), 10.0 * dt * lifted_norm(phi)) << t << " " << s;
    }
}

TEST(Lifted, StrongContinuityAtSolverResolution) {
    const auto sys = delay_benchmark();
    double previous = std::numeric_limits<double>::infinity();
    for (double dt : {1.0 / 16, 1.0 / 64, 1.0 / 256}) {
        const auto phi = consistent_state(sys, dt);
        const double gap = distance(lifted_semigroup(sys, dt, phi, dt), phi);
        EXPECT_LT(gap, previous);
        previous = gap;
    }
    EXPECT_LT(previous, 0.02);
}

TEST(Lifted, Linearity) {
    const auto sys = SpectralSystem::scalar(1.0, 1.0, 0.3, 0.5, 1.0, 0.1, 0.2);
    const double dt = 1.0 / 32;
    std::mt19937_64 gen(10);
    const auto a = random_state(gen, 1, 1.0, dt);
    const auto b = random_state(gen, 1, 1.0, dt);
    const LiftedState combo{2.0 * a.head - b.head, Segment{dt, 2.0 * a.segment.values - b.segment.values}};
    const auto sa = lifted_semigroup(sys, 2.0, a, dt);
    const auto sb = lifted_semigroup(sys, 2.0, b, dt);
    const auto sc = lifted_semigroup(sys, 2.0, combo, dt);
    const LiftedState expect{2.0 * sa.head - sb.head, Segment{dt, 2.0 * sa.segment.values - sb.segment.values}};
    EXPECT_LT(distance(sc, expect), 1e-13);
}

TEST(Lifted, SegmentEndsAtReconstructedState) {
    const auto sys = SpectralSystem::scalar(1.0, 1.0, 0.3, 0.5, 1.0, 0.2, 0.1);
    const double dt = 1.0 / 32;
    std::mt19937_64 gen(11);
    const auto out = lifted_semigroup(sys, 2.5, random_state(gen, 1, 1.0, dt), dt);
    EXPECT_NEAR(out.segment.values(0, out.segment.values.cols() - 1), out.head[0] + apply_D(sys, out.segment)[0],
                1e-14);
}

// =============================================================================
// Stability estimate
// =============================================================================

TEST(Stability, PureDecayRate) {
    const SpectralSystem sys(Eigen::VectorXd::Constant(1, 2.0), 1.0, Eigen::MatrixXd::Zero(1, 1),
                             Eigen::MatrixXd::Zero(1, 1), DelayDensity::zero(), DelayDensity::zero(),
                             Eigen::MatrixXd::Ones(1, 1));
    const auto est = estimate_stability(sys, 10.0, 1.0 / 64, 8, 1);
    EXPECT_TRUE(est.decays);
    EXPECT_NEAR(est.rho, 2.0, 0.1);
    EXPECT_GE(est.M, 1.0);
}

TEST(Stability, SmallFeedbackDecays) {
    const auto est = estimate_stability(SpectralSystem::scalar(1.0, 1.0, 0.0, 0.5, 1.0), 20.0, 1.0 / 32, 8, 2);
    EXPECT_TRUE(est.decays) << est.to_text();
    EXPECT_GT(est.rho, 0.0);
}

TEST(Stability, LargeFeedbackDoesNotDecay) {
    const auto est = estimate_stability(SpectralSystem::scalar(1.0, 1.0, 0.0, 10.0, 1.0), 20.0, 1.0 / 32, 8, 3);
    EXPECT_FALSE(est.decays) << est.to_text();
}
