#include "volterra/ergodicity.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <ostream>
#include <random>
#include <stdexcept>

#include "volterra/errors.hpp"
#include "volterra/parallel.hpp"
#include "volterra/quadrature.hpp"
#include "volterra/report.hpp"
#include "volterra/rng.hpp"
#include "volterra/sampling.hpp"
#include "volterra/stats.hpp"

namespace volterra::ergodicity {

using kernels::VolterraKernel;
using operators::Scheme;
using operators::Segment;

// =============================================================================
// Functional
// =============================================================================

Functional::Functional(Kind kind, Eigen::VectorXd weights, std::optional<double> clip, double offset)
    : kind_(kind), weights_(std::move(weights)), clip_(clip), offset_(offset) {
    if (weights_.size() == 0) throw std::invalid_argument("functional needs at least one weight");
    if (!weights_.allFinite() || !std::isfinite(offset_)) throw std::invalid_argument("functional weights must be finite");
    if (clip_ && !(*clip_ > 0.0)) throw std::invalid_argument("clip radius must be positive");
}

Functional Functional::linear(Eigen::VectorXd weights, double offset) {
    return Functional(Kind::Linear, std::move(weights), std::nullopt, offset);
}

Functional Functional::quadratic(Eigen::VectorXd weights, std::optional<double> clip_radius) {
    return Functional(Kind::Quadratic, std::move(weights), clip_radius, 0.0);
}

Functional Functional::clipped_lipschitz(Eigen::VectorXd weights, double clip) {
    return Functional(Kind::ClippedLipschitz, std::move(weights), clip, 0.0);
}

std::optional<double> Functional::lipschitz_constant() const {
    switch (kind_) {
    case Kind::Linear:
    case Kind::ClippedLipschitz:
        return weights_.norm();
    case Kind::Quadratic:
        if (!clip_) return std::nullopt;
        // |d/dx_k| = 2 |w_k| |clamp(x_k)| <= 2 R |w_k|
        return 2.0 * *clip_ * weights_.norm();
    }
    return std::nullopt;
}

double Functional::operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    if (x.size() != weights_.size()) throw std::invalid_argument("functional dimension differs from the state");
    switch (kind_) {
    case Kind::Linear:
        return weights_.dot(x) + offset_;
    case Kind::Quadratic: {
        double s = 0.0;
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            const double v = clip_ ? std::clamp(x[k], -*clip_, *clip_) : x[k];
            s += weights_[k] * v * v;
        }
        return s + offset_;
    }
    case Kind::ClippedLipschitz:
        return std::clamp(weights_.dot(x), -*clip_, *clip_) + offset_;
    }
    return 0.0;
}

namespace {

// E clamp(X, -R, R)^2 for X ~ N(0, var).
double clipped_second_moment(double var, std::optional<double> radius) {
    if (!radius || var <= 0.0) return std::max(var, 0.0);
    const double sigma = std::sqrt(var);
    const double a = *radius / sigma;
    const double inside = std::erf(a / std::sqrt(2.0)) - 2.0 * a * std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
    return var * inside + *radius * *radius * std::erfc(a / std::sqrt(2.0));
}

} // namespace

double Functional::space_average(const Eigen::MatrixXd& covariance) const {
    if (covariance.rows() != weights_.size() || covariance.cols() != weights_.size())
        throw std::invalid_argument("covariance dimension differs from the functional");
    switch (kind_) {
    case Kind::Linear:
    case Kind::ClippedLipschitz:
        return offset_; // odd part vanishes under a centered law
    case Kind::Quadratic: {
        double s = 0.0;
        for (Eigen::Index k = 0; k < weights_.size(); ++k)
            s += weights_[k] * clipped_second_moment(covariance(k, k), clip_);
        return s + offset_;
    }
    }
    return 0.0;
}

std::string Functional::describe() const {
    std::string w;
    for (Eigen::Index k = 0; k < weights_.size(); ++k) w += (k ? "," : "") + report::number(weights_[k], 6);
    switch (kind_) {
    case Kind::Linear:
        return "linear(w=[" + w + "],offset=" + report::number(offset_, 6) + ")";
    case Kind::Quadratic:
        return "quadratic(w=[" + w + "],clip=" + (clip_ ? report::number(*clip_, 6) : std::string("none")) + ")";
    case Kind::ClippedLipschitz:
        return "clipped_lipschitz(w=[" + w + "],clip=" + report::number(*clip_, 6) + ")";
    }
    return "";
}

// =============================================================================
// Condition (H)
// =============================================================================

double check_condition_H(const SpectralSystem& sys, double alpha, double T0) {
    if (!(T0 > 0.0)) throw std::invalid_argument("T0 must be positive");
    if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("alpha must lie in (0, 1/2)");
    const Eigen::VectorXd weight = sys.noise_B().rowwise().squaredNorm();
    if (weight.isZero(0.0)) return 0.0;
    const Eigen::VectorXd& lambda = sys.eigenvalues();
    const double p = 1.0 / (1.0 + 2.0 * alpha);
    auto f = [&](double r) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < lambda.size(); ++k)
            if (weight[k] != 0.0) s += weight[k] * std::exp(-2.0 * lambda[k] * r);
        return std::pow(s, p);
    };
    const double value = quad::integrate_dyadic(f, 0.0, T0, {1e-14, 1e-13}).value;
    if (!std::isfinite(value)) throw ConditionHViolated("condition (H) integral is not finite");
    return value;
}

double condition_H_single_mode(double lambda, double b, double alpha, double T0) {
    const double q = 1.0 + 2.0 * alpha;
    return std::pow(std::abs(b), 2.0 / q) * q / (2.0 * lambda) * -std::expm1(-2.0 * lambda * T0 / q);
}

ConditionHReport condition_H_truncation(const std::function<SpectralSystem(std::size_t)>& generator, double alpha,
                                        double T0, const std::vector<std::size_t>& truncations) {
    if (truncations.size() < 2) throw std::invalid_argument("truncation study needs at least two sizes");
    if (!std::is_sorted(truncations.begin(), truncations.end()))
        throw std::invalid_argument("truncation sizes must increase");
    ConditionHReport r;
    r.alpha = alpha;
    r.T0 = T0;
    r.truncations = truncations;
    for (std::size_t n : truncations) r.values.push_back(check_condition_H(generator(n), alpha, T0));
    r.monotone = true;
    for (std::size_t i = 1; i < r.values.size(); ++i) {
        r.gaps.push_back(r.values[i] - r.values[i - 1]);
        if (r.values[i] < r.values[i - 1]) r.monotone = false;
    }
    r.converging = true;
    for (std::size_t i = 1; i < r.gaps.size(); ++i) {
        const double ratio = std::abs(r.gaps[i - 1]) / std::abs(r.gaps[i]);
        r.gap_ratios.push_back(ratio);
        if (!(ratio > 1.0)) r.converging = false;
    }
    r.diverging = !r.converging;
    r.extrapolated = r.values.back();
    if (!r.gap_ratios.empty() && r.gap_ratios.back() > 1.0) {
        // Geometric tail of the remaining gaps.
        const double q = 1.0 / r.gap_ratios.back();
        r.extrapolated += r.gaps.back() * q / (1.0 - q);
    }
    return r;
}

std::string ConditionHReport::to_text() const {
    report::KeyValueBlock b;
    b.add("alpha", alpha).add("T0", T0);
    for (std::size_t i = 0; i < values.size(); ++i)
        b.add("value_N" + std::to_string(truncations[i]), values[i], 15);
    for (std::size_t i = 0; i < gaps.size(); ++i) b.add("gap_" + std::to_string(i), gaps[i], 10);
    for (std::size_t i = 0; i < gap_ratios.size(); ++i) b.add("gap_ratio_" + std::to_string(i), gap_ratios[i], 6);
    return b.add("monotone", monotone)
        .add("converging", converging)
        .add("diverging", diverging)
        .add("extrapolated", extrapolated, 12)
        .str();
}

void ConditionHReport::write_csv(std::ostream& out) const {
    out << "N,value,gap,gap_ratio\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        out << truncations[i] << ',' << report::number(values[i], 15) << ',';
        if (i > 0) out << report::number(gaps[i - 1], 10);
        out << ',';
        if (i > 1) out << report::number(gap_ratios[i - 2], 10);
        out << '\n';
    }
}

SpectralSystem heat_truncation(std::size_t n) {
    const auto N = static_cast<Eigen::Index>(n);
    return SpectralSystem(operators::heat_spectrum(n), 1.0, Eigen::MatrixXd::Zero(N, N), Eigen::MatrixXd::Zero(N, N),
                          operators::DelayDensity::zero(), operators::DelayDensity::zero(),
                          Eigen::MatrixXd::Identity(N, N));
}

// =============================================================================
// Invariant covariance
// =============================================================================

namespace {

// int_0^inf int_0^inf e^{-a u} e^{-b v} phi(u, v) du dv, truncated at L with
// e^{-min(a,b) L} = e^{-30}, confirmed by one doubling of L.
double laplace_pair(const VolterraKernel& kernel, double a, double b, quad::Tolerance tol) {
    double L = 30.0 / std::min(a, b);
    auto at = [&](double len) {
        return kernels::weighted_covariance(kernel, {0.0, len}, {-a, 0.0}, {0.0, len}, {-b, 0.0}, tol);
    };
    double prev = at(L);
    for (int i = 0; i < 8; ++i) {
        L *= 2.0;
        const double cur = at(L);
        if (std::abs(cur - prev) <= tol.bound(cur)) return cur;
        prev = cur;
    }
    throw QuadratureNonConvergence("invariant covariance: truncated integrals did not settle");
}

} // namespace

Eigen::MatrixXd invariant_covariance(const SpectralSystem& sys, const VolterraKernel& kernel, quad::Tolerance tol) {
    const auto N = static_cast<Eigen::Index>(sys.dim());
    const Eigen::MatrixXd BBt = sys.noise_B() * sys.noise_B().transpose();
    const Eigen::VectorXd& lambda = sys.eigenvalues();
    for (Eigen::Index k = 0; k < N; ++k)
        if (lambda[k] <= 0.0 && BBt(k, k) != 0.0)
            throw ConditionHViolated("mode " + std::to_string(k) + " has lambda <= 0 and nonzero noise");
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(N, N);
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
    for (Eigen::Index k = 0; k < N; ++k)
        for (Eigen::Index l = k; l < N; ++l)
            if (BBt(k, l) != 0.0) pairs.emplace_back(k, l);
    parallel_for(pairs.size(), [&](std::size_t i) {
        const auto [k, l] = pairs[i];
        Q(k, l) = BBt(k, l) * laplace_pair(kernel, lambda[k], lambda[l], tol);
    });
    Q.triangularView<Eigen::StrictlyLower>() = Q.transpose().triangularView<Eigen::StrictlyLower>();
    if (!Q.isZero(0.0)) {
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(Q);
        const double scale = Q.diagonal().cwiseAbs().maxCoeff();
        if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() < -1e-10 * scale)
            throw CovarianceNotPSD("invariant covariance is not positive semidefinite");
    }
    return Q;
}

Eigen::MatrixXd discretization_bias(const SpectralSystem& sys, const VolterraKernel& kernel, double dt,
                                    solver::SolverOptions options) {
    if (sys.has_delay()) throw PreconditionError("discretization bias oracle needs a system without delay terms");
    const double lmin = sys.eigenvalues().minCoeff();
    if (!(lmin > 0.0)) throw UnstableSystem("discretization bias needs positive eigenvalues");
    const auto n = static_cast<std::size_t>(std::ceil(20.0 / lmin / dt));
    const solver::ExactNoDelaySampler exact(sys, kernel, static_cast<double>(n) * dt, dt, options);
    return solver::left_point_covariance(sys, kernel, dt, n, options.sampler.threads) - exact.terminal_covariance();
}

// =============================================================================
// Time averages
// =============================================================================

namespace {

// Trapezoid average of values[k0..k1].
double trapezoid_average(std::span<const double> values, std::size_t k0, std::size_t k1) {
    if (k1 <= k0) throw EmptyWindow("averaging window has fewer than two grid points");
    const double inner = stats::pairwise_sum(values.subspan(k0, k1 - k0 + 1));
    return (inner - 0.5 * (values[k0] + values[k1])) / static_cast<double>(k1 - k0);
}

// First step index with t_k >= t (steps counted from t = 0).
std::size_t first_step_at(double t, double dt) {
    if (t <= 0.0) return 0;
    return static_cast<std::size_t>(std::ceil(t / dt - 1e-9));
}

std::vector<double> evaluate(const Trajectory& traj, const std::function<double(const Eigen::VectorXd&)>& rho) {
    std::vector<double> v(traj.steps() + 1);
    for (std::size_t k = 0; k <= traj.steps(); ++k) v[k] = rho(traj.x_at_step(k));
    return v;
}

} // namespace

double time_average(const Trajectory& traj, const std::function<double(const Eigen::VectorXd&)>& rho,
                    double burn_in) {
    if (!(traj.horizon() > burn_in)) throw EmptyWindow("trajectory horizon does not exceed the burn-in");
    const std::vector<double> values = evaluate(traj, rho);
    return trapezoid_average(values, first_step_at(burn_in, traj.dt()), traj.steps());
}

double time_average(const Trajectory& traj, const Functional& rho, double burn_in) {
    return time_average(traj, [&](const Eigen::VectorXd& x) { return rho(x); }, burn_in);
}

double i1_bound(double lipschitz, double delta_norm, double rho, double T) {
    return lipschitz * delta_norm * (-std::expm1(-rho * T)) / (rho * T);
}

// =============================================================================
// Stationary runs
// =============================================================================

namespace {

constexpr std::uint64_t kEnsemblePathOffset = 1'000'000'000ULL;

// Shared state of a batch of runs on [-T_pre, T]: stability, starting law,
// noise sampler.
class StationaryRuns {
public:
    StationaryRuns(const SpectralSystem& sys, const VolterraKernel& kernel, double T, double dt, std::uint64_t seed,
                   const ErgodicOptions& options, bool pre_roll)
        : sys_(&sys), dt_(dt), seed_(seed), options_(&options) {
        if (!kernel.stationary_increments())
            throw PreconditionError("stationary solutions need a kernel with stationary increments");
        const operators::DelayDiscretization disc(sys, dt);
        m_ = disc.lag_steps();
        n_ = solver::step_count(T, dt);
        const double horizon = std::ceil(options.stability_horizon / dt - 1e-9) * dt;
        stability_ = operators::estimate_stability(sys, horizon, dt, options.stability_probes, seed);
        if (!stability_.decays || !(stability_.rho > 0.0))
            throw UnstableSystem("lifted semigroup does not decay (rho = " + report::number(stability_.rho) + ")");
        check_condition_H(sys, kernel.alpha(), 1.0);
        Q_ = invariant_covariance(sys, kernel);
        Q_factor_ = Q_;
        if (!Q_.isZero(0.0)) sampling::factorize_with_jitter(Q_factor_, "invariant covariance");
        if (pre_roll) {
            n_pre_ = static_cast<std::size_t>(std::ceil(options.pre_roll_factor / stability_.rho / dt - 1e-9));
            n_pre_ = std::max(n_pre_, m_);
        }
        sampler_ = std::make_unique<sampling::IncrementSampler>(
            kernel, sampling::PathGrid{0.0, dt, n_pre_ + n_}, options.solver.sampler);
    }

    std::size_t steps() const { return n_; }
    std::size_t pre_steps() const { return n_pre_; }
    const operators::StabilityEstimate& stability() const { return stability_; }
    const Eigen::MatrixXd& Q() const { return Q_; }

    sampling::ProcessPaths noise(std::size_t path) const { return sampler_->sample(sys_->noise_dim(), 1, seed_, path); }

    // Start of the pre-roll: x drawn from Q, constant history at the draw.
    LiftedState draw(std::uint64_t path_id) const {
        auto gen = rng::stream(seed_, rng::Purpose::InitialState, path_id);
        std::normal_distribution<double> normal;
        Eigen::VectorXd z(Q_.rows());
        for (auto& v : z) v = normal(gen);
        const Eigen::VectorXd x = Q_.isZero(0.0) ? Eigen::VectorXd::Zero(z.size())
                                                  : Eigen::VectorXd(Q_factor_.triangularView<Eigen::Lower>() * z);
        Segment seg = Segment::constant(x, sys_->delay(), dt_);
        return {x - operators::apply_D(*sys_, seg), std::move(seg)};
    }

    // Stationary path on [-r, T] after the pre-roll.
    Trajectory stationary(const sampling::ProcessPaths& noise, std::size_t path) const {
        const Trajectory full =
            solver::solve_with_noise(*sys_, draw(path), n_pre_ + n_, dt_, Scheme::Direct, noise, 0);
        Trajectory out({-(static_cast<double>(m_) * dt_), dt_, m_ + n_}, m_,
                       full.states().rightCols(static_cast<Eigen::Index>(m_ + n_ + 1)));
        out.set_provenance(full.provenance());
        return out;
    }

    // Path from x0 at t = 0 on the noise after the pre-roll.
    Trajectory from(const LiftedState& x0, const sampling::ProcessPaths& noise) const {
        return solver::solve_with_noise(*sys_, x0, n_, dt_, Scheme::Direct, noise, 0, n_pre_);
    }

    // Long-run ensemble of rho over fresh paths: pre-roll twice as long, no
    // path shared with the time-average runs.
    stats::MeanEstimate ensemble(const VolterraKernel& kernel, const Functional& rho) const {
        const std::size_t steps = 2 * std::max<std::size_t>(n_pre_, m_);
        const sampling::IncrementSampler sampler(kernel, {0.0, dt_, steps}, options_->solver.sampler);
        std::vector<double> values(options_->ensemble_paths);
        parallel_for(
            values.size(),
            [&](std::size_t q) {
                const std::uint64_t id = kEnsemblePathOffset + q;
                const auto noise = sampler.sample(sys_->noise_dim(), 1, seed_, id);
                const Trajectory t = solver::solve_with_noise(*sys_, draw(id), steps, dt_, Scheme::Direct, noise, 0);
                values[q] = rho(t.x_at_step(steps));
            },
            options_->solver.sampler.threads);
        return stats::mean_with_stderr(values);
    }

private:
    const SpectralSystem* sys_;
    double dt_;
    std::uint64_t seed_;
    const ErgodicOptions* options_;
    std::size_t m_ = 0;
    std::size_t n_ = 0;
    std::size_t n_pre_ = 0;
    operators::StabilityEstimate stability_;
    Eigen::MatrixXd Q_;
    Eigen::MatrixXd Q_factor_;
    std::unique_ptr<sampling::IncrementSampler> sampler_;
};

std::vector<std::size_t> horizon_steps(const ErgodicOptions& o, std::size_t n, std::size_t k0) {
    std::vector<std::size_t> out;
    for (double f : o.horizon_fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("horizon fractions must lie in (0, 1]");
        const auto k = static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));
        if (k > k0 + 1 && (out.empty() || k > out.back())) out.push_back(k);
    }
    if (out.empty() || out.back() != n) out.push_back(n);
    return out;
}

// Per-path statistics of rho along one trajectory.
struct PathSummary {
    std::vector<double> running; // trapezoid averages over [burn_in, h] per horizon
    std::vector<double> running_se;
    double average = 0.0;
    double batch_se = 0.0;
    // arbitrary start only
    std::vector<double> coupled;
    std::vector<double> bound;
    double delta_norm = 0.0;
};

void summarize(PathSummary& s, std::span<const double> values, std::size_t k0, const std::vector<std::size_t>& hs,
               std::size_t n_batches) {
    for (std::size_t h : hs) {
        s.running.push_back(trapezoid_average(values, k0, h));
        const std::size_t count = h - k0 + 1;
        s.running_se.push_back(count >= 2 * n_batches ? stats::batch_means(values.subspan(k0, count), n_batches).std_error
                                                      : 0.0);
    }
    s.average = s.running.back();
    s.batch_se = s.running_se.back();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Batch means miss the slowly decaying autocovariance of long-memory paths;
// independent paths give a second estimate and the larger one is used.
double effective_se(double batch_se, const std::vector<double>& path_averages) {
    if (path_averages.size() < 2) return batch_se;
    return std::max(batch_se, stats::mean_with_stderr(path_averages).std_error);
}

void aggregate(ErgodicReport& r, const std::vector<PathSummary>& paths, const std::vector<std::size_t>& hs,
               double dt, double reference, double reference_se, const ErgodicOptions& o) {
    const std::size_t P = paths.size();
    r.n_paths = P;
    r.n_batches = o.n_batches;
    r.space_average = reference;
    r.reference_stderr = reference_se;
    for (std::size_t j = 0; j < hs.size(); ++j) {
        HorizonRow row;
        row.T = static_cast<double>(hs[j]) * dt;
        row.reference = reference;
        std::vector<double> avg(P), dev(P), se2(P);
        for (std::size_t p = 0; p < P; ++p) {
            avg[p] = paths[p].running[j];
            dev[p] = std::abs(avg[p] - reference);
            se2[p] = paths[p].running_se[j] * paths[p].running_se[j];
        }
        row.running_avg = stats::mean(avg);
        const double se = effective_se(std::sqrt(stats::pairwise_sum(se2)) / static_cast<double>(P), avg);
        row.z = stats::z_score(row.running_avg, reference, std::hypot(se, reference_se));
        row.median_abs_deviation = median(dev);
        if (!paths.front().coupled.empty()) {
            std::vector<double> c(P), b(P);
            for (std::size_t p = 0; p < P; ++p) {
                c[p] = paths[p].coupled[j];
                b[p] = paths[p].bound[j];
            }
            row.coupled_difference = stats::mean(c);
            row.i1_bound = stats::mean(b);
        }
        r.horizons.push_back(row);
    }
    std::vector<double> avg(P), se2(P);
    for (std::size_t p = 0; p < P; ++p) {
        avg[p] = paths[p].average;
        se2[p] = paths[p].batch_se * paths[p].batch_se;
    }
    r.time_average = stats::mean(avg);
    r.stderr = std::sqrt(stats::pairwise_sum(se2)) / static_cast<double>(P);
    r.stderr_paths = stats::mean_with_stderr(avg).std_error;
    r.z_stderr = effective_se(r.stderr, avg);
    r.z = stats::z_score(r.time_average, reference, std::hypot(r.z_stderr, reference_se));
    r.deviation_pass = std::abs(r.z) <= o.z_threshold;

    // Median deviation over the horizons from T/4 on.
    r.median_trend_decreasing = true;
    const double last = r.horizons.back().T;
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& row : r.horizons) {
        if (row.T < 0.25 * last - 1e-9) continue;
        if (row.median_abs_deviation > prev) r.median_trend_decreasing = false;
        prev = row.median_abs_deviation;
    }
}

// Reference value of rho: mu_infinity (plus scheme bias) without delay, the
// ensemble average otherwise.
void set_reference(ErgodicReport& r, const StationaryRuns& runs, const SpectralSystem& sys,
                   const VolterraKernel& kernel, const Functional& rho, double dt, const ErgodicOptions& o,
                   double& reference, double& reference_se) {
    r.invariant_value = rho.space_average(runs.Q());
    if (!sys.has_delay()) {
        r.reference_kind = "invariant";
        const Eigen::MatrixXd law = o.bias_correction ? Eigen::MatrixXd(runs.Q() + discretization_bias(sys, kernel, dt, o.solver))
                                                      : runs.Q();
        reference = rho.space_average(law);
        reference_se = 0.0;
    } else {
        r.reference_kind = "ensemble";
        const auto e = runs.ensemble(kernel, rho);
        reference = e.mean;
        reference_se = e.std_error;
    }
    r.bias = reference - r.invariant_value;
}

void check_run_inputs(const Functional& rho, const SpectralSystem& sys, std::size_t n_paths, double T,
                      const ErgodicOptions& o) {
    if (rho.dim() != sys.dim()) throw std::invalid_argument("functional dimension differs from the system");
    if (n_paths < 1) throw InsufficientSamples("ergodic test needs at least one path");
    if (o.n_batches < 2) throw std::invalid_argument("batch means needs at least two batches");
    if (!(T > o.burn_in)) throw EmptyWindow("horizon does not exceed the burn-in");
}

} // namespace

ErgodicReport ergodic_test_stationary(const SpectralSystem& sys, const VolterraKernel& kernel, const Functional& rho,
                                      double T, double dt, std::size_t n_paths, std::uint64_t seed,
                                      ErgodicOptions options) {
    check_run_inputs(rho, sys, n_paths, T, options);
    const StationaryRuns runs(sys, kernel, T, dt, seed, options, true);
    const std::size_t n = runs.steps();
    const std::size_t k0 = first_step_at(options.burn_in, dt);
    const auto hs = horizon_steps(options, n, k0);

    std::vector<PathSummary> paths(n_paths);
    parallel_for(
        n_paths,
        [&](std::size_t p) {
            const Trajectory x = runs.stationary(runs.noise(p), p);
            summarize(paths[p], evaluate(x, [&](const Eigen::VectorXd& v) { return rho(v); }), k0, hs,
                      options.n_batches);
        },
        options.solver.sampler.threads);

    ErgodicReport r;
    r.rho = runs.stability().rho;
    r.M = runs.stability().M;
    r.pre_roll = static_cast<double>(runs.pre_steps()) * dt;
    double reference = 0.0, reference_se = 0.0;
    set_reference(r, runs, sys, kernel, rho, dt, options, reference, reference_se);
    aggregate(r, paths, hs, dt, reference, reference_se, options);
    r.pass = r.deviation_pass;
    return r;
}

ErgodicReport ergodic_test_arbitrary(const SpectralSystem& sys, const VolterraKernel& kernel, const LiftedState& x0,
                                     const Functional& rho, double T, double dt, std::size_t n_paths,
                                     std::uint64_t seed, ErgodicOptions options) {
    const auto lipschitz = rho.lipschitz_constant();
    if (!lipschitz) throw MissingLipschitzConstant("functional " + rho.describe() + " has no global Lipschitz constant");
    check_run_inputs(rho, sys, n_paths, T, options);
    const StationaryRuns runs(sys, kernel, T, dt, seed, options, true);
    const std::size_t n = runs.steps();
    const std::size_t k0 = first_step_at(options.burn_in, dt);
    const auto hs = horizon_steps(options, n, 0);
    const double decay = runs.stability().rho;
    const operators::Stepper stepper(sys, dt, Scheme::Direct);
    const Eigen::VectorXd x_start = stepper.initial_x(x0);

    std::vector<PathSummary> paths(n_paths);
    std::vector<double> max_ratio(n_paths, 0.0);
    parallel_for(
        n_paths,
        [&](std::size_t p) {
            const auto noise = runs.noise(p);
            const Trajectory stat = runs.stationary(noise, p);
            const Trajectory arb = runs.from(x0, noise);
            auto f = [&](const Eigen::VectorXd& v) { return rho(v); };
            const std::vector<double> fa = evaluate(arb, f);
            const std::vector<double> fs = evaluate(stat, f);
            PathSummary& s = paths[p];
            summarize(s, fa, k0, horizon_steps(options, n, k0), options.n_batches);
            s.delta_norm = (x_start - stat.x_at_step(0)).norm();
            for (std::size_t h : hs) {
                const double diff = std::abs(trapezoid_average(fa, 0, h) - trapezoid_average(fs, 0, h));
                const double bound = i1_bound(*lipschitz, s.delta_norm, decay, static_cast<double>(h) * dt);
                s.coupled.push_back(diff);
                s.bound.push_back(bound);
                const double ratio = bound > 0.0 ? diff / bound : (diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
                max_ratio[p] = std::max(max_ratio[p], ratio);
            }
        },
        options.solver.sampler.threads);

    ErgodicReport r;
    r.rho = decay;
    r.M = runs.stability().M;
    r.pre_roll = static_cast<double>(runs.pre_steps()) * dt;
    double reference = 0.0, reference_se = 0.0;
    set_reference(r, runs, sys, kernel, rho, dt, options, reference, reference_se);

    // Running averages for the deviation use [burn_in, h]; coupled columns use [0, h].
    const auto hd = horizon_steps(options, n, k0);
    if (hd.size() != hs.size())
        throw std::invalid_argument("burn-in leaves fewer reporting horizons than the coupled comparison");
    aggregate(r, paths, hd, dt, reference, reference_se, options);
    for (std::size_t j = 0; j < hs.size(); ++j) r.horizons[j].T = static_cast<double>(hs[j]) * dt;

    std::vector<double> deltas(n_paths), finals(n_paths), bounds(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) {
        deltas[p] = paths[p].delta_norm;
        finals[p] = paths[p].coupled.back();
        bounds[p] = paths[p].bound.back();
    }
    r.max_coupled_ratio = *std::max_element(max_ratio.begin(), max_ratio.end());
    r.coupled_pass = r.max_coupled_ratio <= 1.0;
    r.coupled_difference = stats::mean(finals);
    r.i1_bound = stats::mean(bounds);
    r.threshold_T = r.z_stderr > 0.0 ? *lipschitz * stats::mean(deltas) / (decay * r.z_stderr) : 0.0;
    r.pass = r.coupled_pass && r.deviation_pass;
    return r;
}

std::string ErgodicReport::to_text() const {
    report::KeyValueBlock b;
    b.add("reference_kind", reference_kind)
        .add("time_average", time_average, 12)
        .add("space_average", space_average, 12)
        .add("invariant_value", invariant_value, 12)
        .add("bias", bias, 6)
        .add("reference_stderr", reference_stderr, 6)
        .add("stderr", stderr, 6)
        .add("stderr_paths", stderr_paths, 6)
        .add("z_stderr", z_stderr, 6)
        .add("z", z, 6)
        .add("rho", rho, 8)
        .add("M", M, 8)
        .add("pre_roll", pre_roll, 8)
        .add("i1_bound", i1_bound, 8)
        .add("coupled_difference", coupled_difference, 8)
        .add("max_coupled_ratio", max_coupled_ratio, 6)
        .add("threshold_T", threshold_T, 6)
        .add("n_paths", n_paths)
        .add("n_batches", n_batches)
        .add("median_trend_decreasing", median_trend_decreasing)
        .add("coupled_pass", coupled_pass)
        .add("deviation_pass", deviation_pass);
    return b.add("pass", pass).str();
}

void ErgodicReport::write_csv(std::ostream& out) const {
    const bool coupled = reference_kind.size() && i1_bound > 0.0;
    out << "T,running_avg,reference,z" << (coupled ? ",coupled_difference,i1_bound" : "") << '\n';
    for (const auto& row : horizons) {
        out << report::number(row.T, 12) << ',' << report::number(row.running_avg, 12) << ','
            << report::number(row.reference, 12) << ',' << report::number(row.z, 8);
        if (coupled) out << ',' << report::number(row.coupled_difference, 10) << ',' << report::number(row.i1_bound, 10);
        out << '\n';
    }
}

// =============================================================================
// Stationarity
// =============================================================================

StationarityReport stationarity_test(const SpectralSystem& sys, const VolterraKernel& kernel, double T, double dt,
                                     std::size_t n_paths, std::size_t n_lags, std::uint64_t seed,
                                     StationarityOptions options) {
    if (n_paths < 2) throw InsufficientSamples("stationarity test needs at least two paths");
    if (n_lags < 1) throw std::invalid_argument("stationarity test needs at least one lag");
    if (options.n_base_times < 2) throw std::invalid_argument("stationarity test needs at least two base times");
    const StationaryRuns runs(sys, kernel, T, dt, seed, options.ergodic, !options.start.has_value());
    const std::size_t n = runs.steps();

    std::size_t lag_stride = 0;
    if (options.lag_step > 0.0) {
        lag_stride = static_cast<std::size_t>(std::llround(options.lag_step / dt));
        if (lag_stride == 0 || std::abs(static_cast<double>(lag_stride) * dt - options.lag_step) > 1e-9 * options.lag_step)
            throw GridMismatch("lag step is not a multiple of dt");
    } else {
        lag_stride = std::max<std::size_t>(1, n / (4 * n_lags));
    }
    const std::size_t max_lag = (n_lags - 1) * lag_stride;
    if (max_lag >= n) throw EmptyWindow("largest lag exceeds the horizon");
    const std::size_t nb = options.n_base_times;
    const std::size_t base_stride = (n - max_lag) / (nb - 1);
    if (base_stride == 0) throw EmptyWindow("horizon too short for the requested base times");

    StationarityReport r;
    r.n_paths = n_paths;
    for (std::size_t j = 0; j < nb; ++j) r.base_times.push_back(static_cast<double>(j * base_stride) * dt);
    for (std::size_t i = 0; i < n_lags; ++i) r.lags.push_back(static_cast<double>(i * lag_stride) * dt);

    // products[p](i, j) = x(t_j) . x(t_j + h_i)
    std::vector<Eigen::MatrixXd> products(n_paths);
    parallel_for(
        n_paths,
        [&](std::size_t p) {
            const auto noise = runs.noise(p);
            const Trajectory x = options.start ? runs.from(*options.start, noise) : runs.stationary(noise, p);
            Eigen::MatrixXd& prod = products[p];
            prod.resize(static_cast<Eigen::Index>(n_lags), static_cast<Eigen::Index>(nb));
            for (std::size_t j = 0; j < nb; ++j)
                for (std::size_t i = 0; i < n_lags; ++i) {
                    const std::size_t t = j * base_stride;
                    prod(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                        x.x_at_step(t).dot(x.x_at_step(t + i * lag_stride));
                }
        },
        options.ergodic.solver.sampler.threads);

    r.covariance.resize(static_cast<Eigen::Index>(n_lags), static_cast<Eigen::Index>(nb));
    r.z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_lags), static_cast<Eigen::Index>(nb));
    const auto last = static_cast<Eigen::Index>(nb - 1);
    std::vector<double> col(n_paths), diff(n_paths);
    for (Eigen::Index i = 0; i < r.covariance.rows(); ++i)
        for (Eigen::Index j = 0; j < r.covariance.cols(); ++j) {
            for (std::size_t p = 0; p < n_paths; ++p) {
                col[p] = products[p](i, j);
                diff[p] = products[p](i, j) - products[p](i, last);
            }
            r.covariance(i, j) = stats::mean(col);
            if (j != last) {
                const auto d = stats::mean_with_stderr(diff);
                r.z(i, j) = stats::z_score(d.mean, 0.0, d.std_error);
            }
        }
    r.max_abs_z = r.z.cwiseAbs().maxCoeff();
    r.pass = r.max_abs_z <= options.z_threshold;
    return r;
}

std::string StationarityReport::to_text() const {
    report::KeyValueBlock b;
    b.add("n_paths", n_paths).add("n_base_times", base_times.size()).add("n_lags", lags.size());
    b.add("max_abs_z", max_abs_z, 6);
    return b.add("pass", pass).str();
}

void StationarityReport::write_csv(std::ostream& out) const {
    out << "base_time,lag,covariance,z\n";
    for (Eigen::Index j = 0; j < covariance.cols(); ++j)
        for (Eigen::Index i = 0; i < covariance.rows(); ++i)
            out << report::number(base_times[static_cast<std::size_t>(j)], 12) << ','
                << report::number(lags[static_cast<std::size_t>(i)], 12) << ',' << report::number(covariance(i, j), 12)
                << ',' << report::number(z(i, j), 8) << '\n';
}

} // namespace volterra::ergodicity
