#include "volterra/solver.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>

#include "volterra/errors.hpp"
#include "volterra/parallel.hpp"
#include "volterra/report.hpp"
#include "volterra/rng.hpp"

namespace volterra::solver {

using kernels::VolterraKernel;
using operators::Stepper;

std::size_t step_count(double T, double dt) {
    if (!(T > 0.0)) throw std::invalid_argument("horizon T must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("time step must be positive");
    const double n = std::round(T / dt);
    if (n < 1.0 || std::abs(n * dt - T) > 1e-9 * T)
        throw GridMismatch("horizon " + report::number(T, 17) + " is not a multiple of dt = " +
                           report::number(dt, 17));
    return static_cast<std::size_t>(n);
}

Trajectory solve_with_noise(const SpectralSystem& sys, const LiftedState& phi, std::size_t n_steps, double dt,
                            Scheme scheme, const sampling::ProcessPaths& noise, std::size_t path,
                            std::size_t first_cell) {
    if (std::abs(noise.grid().dt - dt) > 1e-12 * dt)
        throw GridMismatch("noise grid step " + report::number(noise.grid().dt, 17) + " differs from dt = " +
                           report::number(dt, 17));
    if (noise.dim() != sys.noise_dim())
        throw GridMismatch("noise has " + std::to_string(noise.dim()) + " coordinates, the system needs " +
                           std::to_string(sys.noise_dim()));
    if (first_cell + n_steps > noise.grid().n_steps)
        throw GridMismatch("noise path covers " + std::to_string(noise.grid().n_steps) + " cells, the run needs " +
                           std::to_string(first_cell + n_steps));
    if (path >= noise.n_paths()) throw std::invalid_argument("noise path index out of range");
    const auto m = static_cast<Eigen::Index>(sys.noise_dim());
    Eigen::VectorXd db(m);
    Trajectory traj = operators::march(sys, phi, n_steps, dt, scheme, [&](std::size_t step) {
        for (Eigen::Index c = 0; c < m; ++c)
            db[c] = noise.increment(path, static_cast<std::size_t>(c), first_cell + step);
        return db;
    });
    traj.set_provenance({operators::to_string(scheme), noise.kernel_id(), noise.seed(), noise.path_id(path), true});
    return traj;
}

sampling::ProcessPaths sample_noise(const SpectralSystem& sys, const VolterraKernel& kernel, double T, double dt,
                                    std::uint64_t seed, std::size_t path, SolverOptions options) {
    const sampling::IncrementSampler sampler(kernel, {0.0, dt, step_count(T, dt)}, options.sampler);
    return sampler.sample(sys.noise_dim(), 1, seed, path);
}

namespace {

Trajectory solve_scheme(const SpectralSystem& sys, const VolterraKernel& kernel, const LiftedState& phi, double T,
                        double dt, std::uint64_t seed, std::size_t path, SolverOptions options, Scheme scheme) {
    // Validate the delay grid before the (costly) noise factorization.
    const operators::DelayDiscretization disc(sys, dt);
    const std::size_t n = step_count(T, dt);
    const auto noise = sample_noise(sys, kernel, T, dt, seed, path, options);
    return solve_with_noise(sys, phi, n, dt, scheme, noise, 0);
}

} // namespace

Trajectory solve_neutral_sde(const SpectralSystem& sys, const VolterraKernel& kernel, const LiftedState& phi,
                             double T, double dt, std::uint64_t seed, std::size_t path, SolverOptions options) {
    return solve_scheme(sys, kernel, phi, T, dt, seed, path, options, Scheme::Direct);
}

Trajectory solve_lifted(const SpectralSystem& sys, const VolterraKernel& kernel, const LiftedState& phi, double T,
                        double dt, std::uint64_t seed, std::size_t path, SolverOptions options) {
    return solve_scheme(sys, kernel, phi, T, dt, seed, path, options, Scheme::Lifted);
}

std::vector<Trajectory> solve_paths(const SpectralSystem& sys, const VolterraKernel& kernel, const LiftedState& phi,
                                    double T, double dt, std::size_t n_paths, std::uint64_t seed, Scheme scheme,
                                    SolverOptions options) {
    if (n_paths < 1) throw std::invalid_argument("n_paths must be positive");
    const operators::DelayDiscretization disc(sys, dt);
    const std::size_t n = step_count(T, dt);
    const sampling::IncrementSampler sampler(kernel, {0.0, dt, n}, options.sampler);
    std::vector<std::optional<Trajectory>> out(n_paths);
    parallel_for(
        n_paths,
        [&](std::size_t p) {
            const auto noise = sampler.sample(sys.noise_dim(), 1, seed, p);
            out[p].emplace(solve_with_noise(sys, phi, n, dt, scheme, noise, 0));
        },
        options.sampler.threads);
    std::vector<Trajectory> result;
    result.reserve(n_paths);
    for (auto& t : out) result.push_back(std::move(*t));
    return result;
}

Trajectory reconstruct_x(const Trajectory& lifted, const SpectralSystem& sys) {
    if (!lifted.has_heads()) throw std::invalid_argument("reconstruction needs a lifted trajectory with heads");
    const operators::DelayDiscretization disc(sys, lifted.dt());
    if (disc.lag_steps() != lifted.lag_steps())
        throw SegmentUnderflow("trajectory history does not span the delay of the system");
    const operators::NeutralReconstruction reconstruct(disc);
    const auto m = static_cast<Eigen::Index>(disc.lag_steps());
    Eigen::MatrixXd store = lifted.states();
    for (std::size_t n = 0; n <= lifted.steps(); ++n) {
        const auto col = m + static_cast<Eigen::Index>(n);
        store.col(col) = reconstruct(lifted.head_at_step(n), store.middleCols(col - m, m + 1));
    }
    Trajectory out(lifted.grid(), lifted.lag_steps(), std::move(store));
    out.set_heads(lifted.heads());
    auto prov = lifted.provenance();
    prov.scheme = "reconstructed";
    out.set_provenance(prov);
    return out;
}

std::string EquivalenceReport::to_text() const {
    return report::KeyValueBlock{}
        .add("sup_err_x", sup_err_x, 12)
        .add("sup_err_segment", sup_err_segment, 12)
        .add("dt", dt, 12)
        .add("tolerance", tolerance, 12)
        .add("pass", pass)
        .str();
}

EquivalenceReport verify_equivalence(const SpectralSystem& sys, const LiftedState& phi, double T, double dt,
                                     const sampling::ProcessPaths& noise, std::size_t path) {
    const operators::DelayDiscretization disc(sys, dt);
    const std::size_t n = step_count(T, dt);
    const Trajectory direct = solve_with_noise(sys, phi, n, dt, Scheme::Direct, noise, path);
    const Trajectory lifted = solve_with_noise(sys, phi, n, dt, Scheme::Lifted, noise, path);
    const Trajectory rebuilt = reconstruct_x(lifted, sys);

    EquivalenceReport report;
    report.dt = dt;
    for (std::size_t k = 0; k <= n; ++k)
        report.sup_err_x = std::max(report.sup_err_x, (direct.x_at_step(k) - rebuilt.x_at_step(k)).norm());
    // Every segment pi_1 X(t_n) is a window of the stored x; compare each slot
    // with the x rebuilt from the head series alone.
    report.sup_err_segment = (lifted.states() - rebuilt.states()).cwiseAbs().maxCoeff();
    report.tolerance = kEquivalenceConstant * dt;
    report.pass = report.sup_err_x <= report.tolerance && report.sup_err_segment == 0.0;
    return report;
}

EquivalenceReport verify_equivalence(const SpectralSystem& sys, const VolterraKernel& kernel, const LiftedState& phi,
                                     double T, double dt, std::uint64_t seed, SolverOptions options) {
    const operators::DelayDiscretization disc(sys, dt);
    return verify_equivalence(sys, phi, T, dt, sample_noise(sys, kernel, T, dt, seed, 0, options), 0);
}

std::string ConvergenceReport::to_text() const {
    report::KeyValueBlock block;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const std::string suffix = "_" + std::to_string(i);
        block.add("dt" + suffix, runs[i].dt, 12)
            .add("sup_err_x" + suffix, runs[i].sup_err_x, 12)
            .add("sup_err_segment" + suffix, runs[i].sup_err_segment, 12)
            .add("pass" + suffix, runs[i].pass);
    }
    for (std::size_t i = 0; i < orders.size(); ++i) block.add("order_" + std::to_string(i), orders[i], 6);
    return block.add("min_order", min_order, 6).add("decreasing", decreasing).add("pass", pass).str();
}

ConvergenceReport equivalence_convergence(const SpectralSystem& sys, const VolterraKernel& kernel,
                                          const std::function<LiftedState(double)>& initial, double T,
                                          const std::vector<double>& dts, std::uint64_t seed, double min_order,
                                          SolverOptions options) {
    if (dts.size() < 2) throw std::invalid_argument("convergence study needs at least two step sizes");
    // One noise realization on the finest grid, summed onto the coarser ones.
    const double finest = *std::min_element(dts.begin(), dts.end());
    const operators::DelayDiscretization disc(sys, finest);
    const auto noise = sample_noise(sys, kernel, T, finest, seed, 0, options);
    ConvergenceReport report;
    for (double dt : dts) {
        const double factor = std::round(dt / finest);
        if (std::abs(factor * finest - dt) > 1e-9 * dt)
            throw GridMismatch("step " + report::number(dt, 17) + " is not a multiple of the finest step");
        const auto coarse = noise.coarsen(static_cast<std::size_t>(factor));
        report.runs.push_back(verify_equivalence(sys, initial(dt), T, dt, coarse, 0));
    }
    report.decreasing = true;
    report.min_order = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < report.runs.size(); ++i) {
        const auto& a = report.runs[i - 1];
        const auto& b = report.runs[i];
        const double order = std::log(a.sup_err_x / b.sup_err_x) / std::log(a.dt / b.dt);
        report.orders.push_back(order);
        report.min_order = std::min(report.min_order, order);
        if (!(b.sup_err_x < a.sup_err_x)) report.decreasing = false;
    }
    report.pass = report.decreasing && report.min_order >= min_order &&
                  std::all_of(report.runs.begin(), report.runs.end(), [](const auto& r) { return r.pass; });
    return report;
}

namespace {

void require_no_delay(const SpectralSystem& sys) {
    if (sys.has_delay()) throw PreconditionError("exact no-delay computations need D = 0 and F = 0");
}

// Cov(xi_n^{k,m}, xi_p^{l,m}) per unit noise coordinate.
double convolution_covariance(const VolterraKernel& kernel, double lk, double ll, double dt, std::size_t n,
                              std::size_t p, quad::Tolerance tol) {
    const double a = static_cast<double>(n) * dt;
    const double b = static_cast<double>(p) * dt;
    return kernels::weighted_covariance(kernel, {a, a + dt}, {lk, a + dt}, {b, b + dt}, {ll, b + dt}, tol);
}

} // namespace

ExactNoDelaySampler::ExactNoDelaySampler(const SpectralSystem& sys, const VolterraKernel& kernel, double T, double dt,
                                         SolverOptions options)
    : n_steps_(step_count(T, dt)), n_modes_(sys.dim()) {
    require_no_delay(sys);
    const auto& lambda = sys.eigenvalues();
    decay_ = (-lambda.array() * dt).exp();
    const Eigen::MatrixXd BBt = sys.noise_B() * sys.noise_B().transpose();
    const std::size_t N = n_modes_;
    const std::size_t size = N * n_steps_;
    covariance_.resize(static_cast<Eigen::Index>(size), static_cast<Eigen::Index>(size));
    auto idx = [N](std::size_t step, std::size_t mode) { return static_cast<Eigen::Index>(step * N + mode); };
    const auto tol = options.sampler.tol;

    if (kernel.stationary_increments()) {
        // W[d][k][l] = unit-noise covariance of (step 0, mode k) with (step d, mode l).
        std::vector<Eigen::MatrixXd> W(n_steps_, Eigen::MatrixXd(N, N));
        parallel_for(
            n_steps_ * N * N,
            [&](std::size_t i) {
                const std::size_t d = i / (N * N), k = (i / N) % N, l = i % N;
                W[d](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) =
                    convolution_covariance(kernel, lambda[static_cast<Eigen::Index>(k)],
                                           lambda[static_cast<Eigen::Index>(l)], dt, 0, d, tol);
            },
            options.sampler.threads);
        for (std::size_t n = 0; n < n_steps_; ++n)
            for (std::size_t p = n; p < n_steps_; ++p)
                for (std::size_t k = 0; k < N; ++k)
                    for (std::size_t l = 0; l < N; ++l) {
                        const double v = BBt(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) *
                                         W[p - n](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
                        covariance_(idx(n, k), idx(p, l)) = v;
                        covariance_(idx(p, l), idx(n, k)) = v;
                    }
    } else {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t i = 0; i < size; ++i)
            for (std::size_t j = i; j < size; ++j) pairs.emplace_back(i, j);
        parallel_for(
            pairs.size(),
            [&](std::size_t q) {
                const auto [i, j] = pairs[q];
                const std::size_t n = i / N, k = i % N, p = j / N, l = j % N;
                const double v = BBt(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) *
                                 convolution_covariance(kernel, lambda[static_cast<Eigen::Index>(k)],
                                                        lambda[static_cast<Eigen::Index>(l)], dt, n, p, tol);
                covariance_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
                covariance_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
            },
            options.sampler.threads);
    }
    factor_ = covariance_;
    if (covariance_.isZero(0.0)) return;
    sampling::factorize_with_jitter(factor_, "exact convolution increments of " + kernel.id());
}

Eigen::MatrixXd ExactNoDelaySampler::sample(const Eigen::VectorXd& x0, std::uint64_t seed, std::size_t path) const {
    if (x0.size() != static_cast<Eigen::Index>(n_modes_))
        throw std::invalid_argument("initial state dimension differs from the system dimension");
    auto gen = rng::stream(seed, rng::Purpose::ExactNoise, path);
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(factor_.rows());
    for (auto& v : z) v = normal(gen);
    const Eigen::VectorXd xi = factor_.triangularView<Eigen::Lower>() * z;
    const auto N = static_cast<Eigen::Index>(n_modes_);
    Eigen::MatrixXd x(N, static_cast<Eigen::Index>(n_steps_ + 1));
    x.col(0) = x0;
    for (std::size_t n = 0; n < n_steps_; ++n) {
        const auto c = static_cast<Eigen::Index>(n);
        x.col(c + 1) = decay_.cwiseProduct(x.col(c)) + xi.segment(c * N, N);
    }
    return x;
}

Eigen::MatrixXd ExactNoDelaySampler::terminal_covariance() const {
    const auto N = static_cast<Eigen::Index>(n_modes_);
    const auto n = static_cast<Eigen::Index>(n_steps_);
    // x_n = sum_j E^{n-1-j} xi_j
    Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(N, N * n);
    for (Eigen::Index j = 0; j < n; ++j)
        weights.block(0, j * N, N, N) = decay_.array().pow(static_cast<double>(n - 1 - j)).matrix().asDiagonal();
    return weights * covariance_ * weights.transpose();
}

Eigen::MatrixXd left_point_covariance(const SpectralSystem& sys, const VolterraKernel& kernel, double dt,
                                      std::size_t n_steps, unsigned threads) {
    require_no_delay(sys);
    if (n_steps == 0) return Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sys.dim()), static_cast<Eigen::Index>(sys.dim()));
    const Eigen::MatrixXd M =
        sampling::increment_covariance_matrix(kernel, {0.0, dt, n_steps}, kernels::kCovarianceTolerance, threads);
    const auto N = static_cast<Eigen::Index>(sys.dim());
    const auto n = static_cast<Eigen::Index>(n_steps);
    Eigen::MatrixXd w(N, n); // w(k, j) = a_k^{n - j}
    for (Eigen::Index k = 0; k < N; ++k) {
        const double a = std::exp(-sys.eigenvalues()[k] * dt);
        for (Eigen::Index j = 0; j < n; ++j) w(k, j) = std::pow(a, static_cast<double>(n - j));
    }
    const Eigen::MatrixXd S = w * M * w.transpose();
    const Eigen::MatrixXd BBt = sys.noise_B() * sys.noise_B().transpose();
    return BBt.cwiseProduct(S);
}

Eigen::MatrixXd left_point_stationary_covariance(const SpectralSystem& sys, const VolterraKernel& kernel, double dt,
                                                 unsigned threads) {
    require_no_delay(sys);
    if (!kernel.stationary_increments())
        throw PreconditionError("stationary covariance of the recursion needs stationary increments");
    const auto N = static_cast<Eigen::Index>(sys.dim());
    const Eigen::ArrayXd a = (-sys.eigenvalues().array() * dt).exp();
    const double slowest = a.maxCoeff();
    const std::size_t max_lag = static_cast<std::size_t>(std::ceil(std::log(1e-14) / std::log(slowest))) + 1;
    if (max_lag > 200000) throw PreconditionError("decay per step too slow for the stationary lag sum");
    std::vector<double> rho(max_lag + 1);
    parallel_for(
        max_lag + 1,
        [&](std::size_t h) {
            const double s = static_cast<double>(h) * dt;
            rho[h] = kernels::covariance_R(kernel, {0.0, dt, s, s + dt});
        },
        threads);
    Eigen::MatrixXd S(N, N);
    for (Eigen::Index k = 0; k < N; ++k)
        for (Eigen::Index l = 0; l < N; ++l) {
            const double ak = a[k], bl = a[l];
            double sum = rho[0] * ak * bl;
            double pa = ak, pb = bl;
            for (std::size_t h = 1; h <= max_lag; ++h) {
                pa *= ak;
                pb *= bl;
                sum += rho[h] * (pa * bl + ak * pb);
            }
            S(k, l) = sum / (1.0 - ak * bl);
        }
    const Eigen::MatrixXd BBt = sys.noise_B() * sys.noise_B().transpose();
    return BBt.cwiseProduct(S);
}

} // namespace volterra::solver
