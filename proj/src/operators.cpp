#include "volterra/operators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>

#include "volterra/errors.hpp"
#include "volterra/report.hpp"
#include "volterra/rng.hpp"

namespace volterra::operators {

namespace {

void require_square(const Eigen::MatrixXd& m, Eigen::Index n, const char* name) {
    if (m.rows() != n || m.cols() != n)
        throw std::invalid_argument(std::string(name) + " must be " + std::to_string(n) + " x " + std::to_string(n));
    if (!m.allFinite()) throw std::invalid_argument(std::string(name) + " has non-finite entries");
}

std::size_t steps_for(double T, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("time step must be positive");
    const double n = std::round(T / dt);
    if (n < 0.0 || std::abs(n * dt - T) > 1e-9 * std::max(T, dt))
        throw GridMismatch("time " + report::number(T, 17) + " is not a multiple of dt = " + report::number(dt, 17));
    return static_cast<std::size_t>(n);
}

void require_segment(const Segment& seg, std::size_t dim, double dt, std::size_t slots) {
    if (static_cast<std::size_t>(seg.values.rows()) != dim)
        throw std::invalid_argument("segment dimension differs from the system dimension");
    if (std::abs(seg.dt - dt) > 1e-12 * dt)
        throw GridMismatch("segment step " + report::number(seg.dt, 17) + " differs from dt = " +
                           report::number(dt, 17));
    if (seg.slots() < slots)
        throw SegmentUnderflow("segment has " + std::to_string(seg.slots()) + " slots, the delay needs " +
                               std::to_string(slots));
}

} // namespace

DelayDensity DelayDensity::constant(Eigen::MatrixXd density) {
    DelayDensity d;
    if (density.isZero(0.0)) return d;
    d.kind_ = Kind::Constant;
    d.constant_ = std::move(density);
    d.label_ = "constant";
    return d;
}

DelayDensity DelayDensity::function(std::function<Eigen::MatrixXd(double)> density, std::string label) {
    DelayDensity d;
    d.kind_ = Kind::Function;
    d.function_ = std::move(density);
    d.label_ = std::move(label);
    return d;
}

Eigen::MatrixXd DelayDensity::at(double theta, Eigen::Index n) const {
    switch (kind_) {
    case Kind::Zero: return Eigen::MatrixXd::Zero(n, n);
    case Kind::Constant: return constant_;
    case Kind::Function: return function_(theta);
    }
    return Eigen::MatrixXd::Zero(n, n);
}

SpectralSystem::SpectralSystem(Eigen::VectorXd eigenvalues, double delay_r, Eigen::MatrixXd D1, Eigen::MatrixXd F1,
                               DelayDensity D2, DelayDensity F2, Eigen::MatrixXd noise_B)
    : eigenvalues_(std::move(eigenvalues)), delay_r_(delay_r), D1_(std::move(D1)), F1_(std::move(F1)),
      D2_(std::move(D2)), F2_(std::move(F2)), noise_B_(std::move(noise_B)) {
    const Eigen::Index n = eigenvalues_.size();
    if (n < 1) throw std::invalid_argument("system needs at least one eigenvalue");
    for (double l : eigenvalues_)
        if (!(l > 0.0) || !std::isfinite(l))
            throw std::invalid_argument("eigenvalues must be positive and finite (coercivity)");
    if (!(delay_r_ > 0.0) || !std::isfinite(delay_r_)) throw std::invalid_argument("delay r must be positive");
    require_square(D1_, n, "D1");
    require_square(F1_, n, "F1");
    if (noise_B_.rows() != n || noise_B_.cols() < 1)
        throw std::invalid_argument("noise_B must have " + std::to_string(n) + " rows and at least one column");
    if (!noise_B_.allFinite()) throw std::invalid_argument("noise_B has non-finite entries");
    if (D2_.is_constant()) require_square(D2_.at(0.0, n), n, "D2");
    if (F2_.is_constant()) require_square(F2_.at(0.0, n), n, "F2");
}

SpectralSystem SpectralSystem::scalar(double lambda, double delay_r, double d1, double f1, double b,
                                      double d2_density, double f2_density) {
    auto one = [](double v) { return Eigen::MatrixXd::Constant(1, 1, v); };
    return SpectralSystem(Eigen::VectorXd::Constant(1, lambda), delay_r, one(d1), one(f1),
                          DelayDensity::constant(one(d2_density)), DelayDensity::constant(one(f2_density)), one(b));
}

Eigen::VectorXd heat_spectrum(std::size_t n) {
    if (n < 1) throw std::invalid_argument("heat spectrum needs at least one mode");
    Eigen::VectorXd l(static_cast<Eigen::Index>(n));
    for (std::size_t k = 1; k <= n; ++k) {
        const double kk = static_cast<double>(k);
        l[static_cast<Eigen::Index>(k - 1)] = kk * kk * std::numbers::pi * std::numbers::pi;
    }
    return l;
}

std::size_t lag_steps(double delay_r, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("time step must be positive");
    const double m = std::round(delay_r / dt);
    if (m < 1.0 || std::abs(m * dt - delay_r) > 1e-9 * delay_r)
        throw GridMismatch("delay r = " + report::number(delay_r, 17) + " is not a multiple of dt = " +
                           report::number(dt, 17));
    return static_cast<std::size_t>(m);
}

Segment Segment::sample(const std::function<Eigen::VectorXd(double)>& f, double delay_r, double dt) {
    const std::size_t m = lag_steps(delay_r, dt);
    Segment s{dt, {}};
    for (std::size_t i = 0; i <= m; ++i) {
        const Eigen::VectorXd v = f(-static_cast<double>(m - i) * dt);
        if (i == 0) s.values.resize(v.size(), static_cast<Eigen::Index>(m + 1));
        s.values.col(static_cast<Eigen::Index>(i)) = v;
    }
    return s;
}

Segment Segment::constant(const Eigen::VectorXd& c, double delay_r, double dt) {
    const std::size_t m = lag_steps(delay_r, dt);
    return {dt, c.replicate(1, static_cast<Eigen::Index>(m + 1))};
}

Segment Segment::zero(std::size_t dim, double delay_r, double dt) {
    return constant(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)), delay_r, dt);
}

DelayDiscretization::Weights DelayDiscretization::make_weights(const DelayDensity& density, Eigen::Index n,
                                                               std::size_t slots, double delay_r, double dt) {
    Weights w;
    if (density.is_zero()) return w;
    w.zero = false;
    if (density.is_constant()) {
        w.constant = true;
        w.constant_density = density.at(0.0, n);
        return w;
    }
    const std::size_t m = slots - 1;
    w.per_slot.reserve(slots);
    for (std::size_t i = 0; i < slots; ++i) {
        const double theta = i == m ? 0.0 : -delay_r + static_cast<double>(i) * dt;
        const double c = (i == 0 || i == m) ? 0.5 * dt : dt;
        Eigen::MatrixXd d = density.at(theta, n);
        require_square(d, n, "distributed delay density");
        w.per_slot.push_back(c * d);
    }
    return w;
}

DelayDiscretization::DelayDiscretization(const SpectralSystem& sys, double dt)
    : dt_(dt), D1_(sys.D1()), F1_(sys.F1()) {
    if (dt > sys.delay() && sys.has_neutral_term())
        throw StepLargerThanDelay("dt = " + report::number(dt, 17) + " exceeds the delay r = " +
                                  report::number(sys.delay(), 17));
    lag_steps_ = operators::lag_steps(sys.delay(), dt);
    const auto n = static_cast<Eigen::Index>(sys.dim());
    D2_ = make_weights(sys.D2(), n, slots(), sys.delay(), dt);
    F2_ = make_weights(sys.F2(), n, slots(), sys.delay(), dt);
    auto newest = [&](const Weights& w) -> Eigen::MatrixXd {
        if (w.zero) return Eigen::MatrixXd::Zero(n, n);
        if (w.constant) return 0.5 * dt * w.constant_density;
        return w.per_slot.back();
    };
    D_newest_ = newest(D2_);
    F_newest_ = newest(F2_);
}

Eigen::VectorXd DelayDiscretization::apply(const Eigen::MatrixXd& point, const Weights& w,
                                           const Eigen::Ref<const Eigen::MatrixXd>& window,
                                           bool include_newest) const {
    if (static_cast<std::size_t>(window.cols()) != slots())
        throw SegmentUnderflow("delay window needs " + std::to_string(slots()) + " slots");
    Eigen::VectorXd out = point * window.col(0);
    if (w.zero) return out;
    const auto m = static_cast<Eigen::Index>(lag_steps_);
    if (w.constant) {
        Eigen::VectorXd sum = 0.5 * window.col(0);
        for (Eigen::Index i = 1; i < m; ++i) sum += window.col(i);
        if (include_newest) sum += 0.5 * window.col(m);
        out += dt_ * (w.constant_density * sum);
        return out;
    }
    const Eigen::Index last = include_newest ? m : m - 1;
    for (Eigen::Index i = 0; i <= last; ++i) out += w.per_slot[static_cast<std::size_t>(i)] * window.col(i);
    return out;
}

Eigen::VectorXd DelayDiscretization::apply_D(const Eigen::Ref<const Eigen::MatrixXd>& window,
                                             bool include_newest) const {
    return apply(D1_, D2_, window, include_newest);
}

Eigen::VectorXd DelayDiscretization::apply_F(const Eigen::Ref<const Eigen::MatrixXd>& window,
                                             bool include_newest) const {
    return apply(F1_, F2_, window, include_newest);
}

Eigen::VectorXd apply_semigroup(const SpectralSystem& sys, double t, const Eigen::VectorXd& x) {
    if (t < 0.0) throw NegativeTime("semigroup time must be non-negative, got " + report::number(t, 17));
    if (x.size() != static_cast<Eigen::Index>(sys.dim()))
        throw std::invalid_argument("state dimension differs from the system dimension");
    if (t == 0.0) return x;
    return (-sys.eigenvalues().array() * t).exp().matrix().cwiseProduct(x);
}

namespace {

Eigen::VectorXd apply_delay(const SpectralSystem& sys, const Segment& segment, bool feedback) {
    if (!(segment.dt > 0.0)) throw std::invalid_argument("segment step must be positive");
    if (segment.values.rows() != static_cast<Eigen::Index>(sys.dim()))
        throw std::invalid_argument("segment dimension differs from the system dimension");
    const double covered = static_cast<double>(segment.slots() > 0 ? segment.slots() - 1 : 0) * segment.dt;
    if (covered < sys.delay() * (1.0 - 1e-9))
        throw SegmentUnderflow("segment covers " + report::number(covered) + " < r = " +
                               report::number(sys.delay()));
    const DelayDiscretization disc(sys, segment.dt);
    const auto window = segment.values.rightCols(static_cast<Eigen::Index>(disc.slots()));
    return feedback ? disc.apply_F(window) : disc.apply_D(window);
}

} // namespace

Eigen::VectorXd apply_D(const SpectralSystem& sys, const Segment& segment) {
    return apply_delay(sys, segment, false);
}

Eigen::VectorXd apply_F(const SpectralSystem& sys, const Segment& segment) {
    return apply_delay(sys, segment, true);
}

NeutralReconstruction::NeutralReconstruction(const DelayDiscretization& disc) : disc_(&disc) {
    identity_ = disc.D_newest().isZero(0.0);
    if (!identity_) {
        const auto n = disc.D_newest().rows();
        lu_.compute(Eigen::MatrixXd::Identity(n, n) - disc.D_newest());
    }
}

Eigen::VectorXd NeutralReconstruction::operator()(const Eigen::VectorXd& head,
                                                  const Eigen::Ref<const Eigen::MatrixXd>& window) const {
    const Eigen::VectorXd rhs = head + disc_->apply_D(window, false);
    return identity_ ? rhs : Eigen::VectorXd(lu_.solve(rhs));
}

StepCoefficients::StepCoefficients(const Eigen::VectorXd& eigenvalues, double dt)
    : decay(eigenvalues.size()), phi1(eigenvalues.size()), phi2(eigenvalues.size()) {
    for (Eigen::Index k = 0; k < eigenvalues.size(); ++k) {
        const double l = eigenvalues[k];
        const double x = l * dt;
        decay[k] = std::exp(-x);
        phi1[k] = -std::expm1(-x) / l;
        // (x - 1 + e^{-x}) / x^2, by its series where the difference cancels.
        const double ratio = x < 1e-3 ? 0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0
                                      : (x + std::expm1(-x)) / (x * x);
        phi2[k] = ratio * dt;
    }
}

std::string to_string(Scheme scheme) { return scheme == Scheme::Direct ? "direct" : "lifted"; }

Stepper::Stepper(const SpectralSystem& sys, double dt, Scheme scheme)
    : sys_(&sys), scheme_(scheme), disc_(sys, dt), reconstruct_(disc_), coef_(sys.eigenvalues(), dt) {
    decay_B_ = coef_.decay.asDiagonal() * sys.noise_B();
    if (scheme_ == Scheme::Lifted) {
        joint_needed_ = !disc_.D_newest().isZero(0.0) || !disc_.F_newest().isZero(0.0);
        if (joint_needed_) {
            const auto n = static_cast<Eigen::Index>(sys.dim());
            joint_.compute(Eigen::MatrixXd::Identity(n, n) - disc_.D_newest() -
                           coef_.phi2.asDiagonal() * disc_.F_newest());
        }
    }
}

Eigen::VectorXd Stepper::initial_x(const LiftedState& phi) const {
    require_segment(phi.segment, sys_->dim(), disc_.dt(), disc_.slots());
    if (phi.head.size() != static_cast<Eigen::Index>(sys_->dim()))
        throw std::invalid_argument("head dimension differs from the system dimension");
    return reconstruct_(phi.head, phi.segment.values.rightCols(static_cast<Eigen::Index>(disc_.slots())));
}

Eigen::VectorXd Stepper::advance(const Eigen::VectorXd& head, Eigen::MatrixXd& store, Eigen::Index col,
                                 const Eigen::VectorXd* noise) const {
    const auto m = static_cast<Eigen::Index>(disc_.lag_steps());
    const auto slots = m + 1;
    const Eigen::VectorXd g_now = disc_.apply_F(store.middleCols(col - m, slots));
    auto next_window = [&] { return store.middleCols(col - m + 1, slots); };

    Eigen::VectorXd next;
    if (scheme_ == Scheme::Direct) {
        next = coef_.decay.cwiseProduct(head) + coef_.phi1.cwiseProduct(g_now);
        if (noise) next += decay_B_ * *noise;
    } else {
        const Eigen::VectorXd kicked = noise ? Eigen::VectorXd(head + sys_->noise_B() * *noise) : head;
        Eigen::VectorXd partial = coef_.decay.cwiseProduct(kicked) + (coef_.phi1 - coef_.phi2).cwiseProduct(g_now);
        if (joint_needed_) {
            const Eigen::VectorXd rhs = partial + coef_.phi2.cwiseProduct(disc_.apply_F(next_window(), false)) +
                                        disc_.apply_D(next_window(), false);
            store.col(col + 1) = joint_.solve(rhs);
        }
        next = partial + coef_.phi2.cwiseProduct(disc_.apply_F(next_window()));
    }
    // Both schemes store x through the same reconstruction, so the segment
    // identity pi_1 X = (pi_0 X)_t holds bitwise.
    store.col(col + 1) = reconstruct_(next, next_window());
    return next;
}

Trajectory march(const SpectralSystem& sys, const LiftedState& phi, std::size_t n_steps, double dt, Scheme scheme,
                 const std::function<Eigen::VectorXd(std::size_t)>& noise) {
    const Stepper stepper(sys, dt, scheme);
    const auto m = static_cast<Eigen::Index>(stepper.discretization().lag_steps());
    const auto n = static_cast<Eigen::Index>(sys.dim());
    Eigen::MatrixXd store(n, m + 1 + static_cast<Eigen::Index>(n_steps));
    store.leftCols(m + 1) = phi.segment.values.rightCols(m + 1);
    store.col(m) = stepper.initial_x(phi);
    Eigen::MatrixXd heads(n, static_cast<Eigen::Index>(n_steps) + 1);
    Eigen::VectorXd head = phi.head;
    heads.col(0) = head;
    for (std::size_t step = 0; step < n_steps; ++step) {
        const auto s = static_cast<Eigen::Index>(step);
        if (noise) {
            const Eigen::VectorXd db = noise(step);
            head = stepper.advance(head, store, m + s, &db);
        } else {
            head = stepper.advance(head, store, m + s, nullptr);
        }
        if (!head.allFinite()) throw NumericalError("solution became non-finite at step " + std::to_string(step));
        heads.col(s + 1) = head;
    }
    const double t0 = -(static_cast<double>(m) * dt);
    Trajectory traj(sampling::PathGrid{t0, dt, static_cast<std::size_t>(m) + n_steps}, static_cast<std::size_t>(m),
                    std::move(store));
    if (scheme == Scheme::Lifted) traj.set_heads(std::move(heads));
    traj.set_provenance({to_string(scheme), "", 0, 0, false});
    return traj;
}

Trajectory solve_deterministic_neutral(const SpectralSystem& sys, const Eigen::VectorXd& phi0, const Segment& phi1,
                                       double T, double dt) {
    if (!(T > 0.0)) throw std::invalid_argument("horizon T must be positive");
    const DelayDiscretization disc(sys, dt);
    return march(sys, LiftedState{phi0, phi1}, steps_for(T, dt), dt, Scheme::Direct);
}

Eigen::VectorXd fundamental_solution(const SpectralSystem& sys, double t, const Eigen::VectorXd& h, double dt) {
    if (h.size() != static_cast<Eigen::Index>(sys.dim()))
        throw std::invalid_argument("h dimension differs from the system dimension");
    if (t < 0.0) return Eigen::VectorXd::Zero(h.size());
    const LiftedState phi{h, Segment::zero(sys.dim(), sys.delay(), dt)};
    const std::size_t n = steps_for(t, dt);
    if (n == 0) return Stepper(sys, dt, Scheme::Direct).initial_x(phi);
    return march(sys, phi, n, dt, Scheme::Direct).x_at_step(n);
}

LiftedState lifted_semigroup(const SpectralSystem& sys, double t, const LiftedState& phi, double dt) {
    if (t < 0.0) throw NegativeTime("semigroup time must be non-negative, got " + report::number(t, 17));
    const std::size_t n = steps_for(t, dt);
    if (n == 0) return phi;
    const Trajectory traj = march(sys, phi, n, dt, Scheme::Lifted);
    return {traj.head_at_step(n), Segment{dt, traj.segment(n)}};
}

double lifted_norm(const LiftedState& state) {
    double sq = state.head.squaredNorm();
    const auto slots = static_cast<Eigen::Index>(state.segment.slots());
    for (Eigen::Index i = 0; i < slots; ++i) {
        const double c = (i == 0 || i == slots - 1) ? 0.5 : 1.0;
        sq += c * state.segment.dt * state.segment.values.col(i).squaredNorm();
    }
    return std::sqrt(sq);
}

std::string StabilityEstimate::to_text() const {
    return report::KeyValueBlock{}
        .add("M", M)
        .add("rho", rho)
        .add("decays", decays)
        .add("probes", probes)
        .add("horizon", horizon)
        .str();
}

StabilityEstimate estimate_stability(const SpectralSystem& sys, double horizon, double dt, std::size_t n_probes,
                                     std::uint64_t seed) {
    if (n_probes < 1) throw std::invalid_argument("stability estimate needs at least one probe");
    if (!(horizon > 0.0)) throw std::invalid_argument("stability horizon must be positive");
    const std::size_t n_steps = steps_for(horizon, dt);
    const std::size_t m = lag_steps(sys.delay(), dt);
    const auto n = static_cast<Eigen::Index>(sys.dim());

    std::vector<double> worst(n_steps + 1, 0.0);
    for (std::size_t probe = 0; probe < n_probes; ++probe) {
        auto gen = rng::stream(seed, rng::Purpose::Probe, probe);
        std::normal_distribution<double> normal;
        LiftedState phi{Eigen::VectorXd(n), Segment{dt, Eigen::MatrixXd(n, static_cast<Eigen::Index>(m + 1))}};
        for (auto& v : phi.head) v = normal(gen);
        for (auto& v : phi.segment.values.reshaped()) v = normal(gen);
        const double scale = lifted_norm(phi);
        phi.head /= scale;
        phi.segment.values /= scale;

        std::optional<Trajectory> traj;
        try {
            traj.emplace(march(sys, phi, n_steps, dt, Scheme::Lifted));
        } catch (const NumericalError&) {
            // Overflow: the probe blew up, which is the non-decay verdict.
            std::fill(worst.begin(), worst.end(), std::numeric_limits<double>::infinity());
            continue;
        }
        for (std::size_t k = 0; k <= n_steps; ++k) {
            const double norm = lifted_norm({traj->head_at_step(k), Segment{dt, traj->segment(k)}});
            worst[k] = std::max(worst[k], std::isfinite(norm) ? norm : std::numeric_limits<double>::infinity());
        }
    }

    StabilityEstimate est;
    est.probes = n_probes;
    est.horizon = horizon;
    // Least squares of log(norm) against t over the second half of the horizon.
    double st = 0, sy = 0, stt = 0, sty = 0;
    std::size_t count = 0;
    for (std::size_t k = n_steps / 2; k <= n_steps; ++k) {
        if (!(worst[k] > 1e-280) || !std::isfinite(worst[k])) continue;
        const double t = static_cast<double>(k) * dt;
        const double y = std::log(worst[k]);
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
        ++count;
    }
    if (count >= 2) {
        const double c = static_cast<double>(count);
        est.rho = -(c * sty - st * sy) / (c * stt - st * st);
    } else if (std::isinf(worst.back())) {
        est.rho = -std::numeric_limits<double>::infinity();
    } else {
        est.rho = std::numeric_limits<double>::infinity();
    }
    est.M = 1.0;
    if (std::isfinite(est.rho))
        for (std::size_t k = 0; k <= n_steps; ++k)
            if (worst[k] > 0.0) est.M = std::max(est.M, worst[k] * std::exp(est.rho * static_cast<double>(k) * dt));
    est.decays = est.rho > 0.0 && std::isfinite(est.M);
    return est;
}

} // namespace volterra::operators
