#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "volterra/kernels.hpp"
#include "volterra/operators.hpp"
#include "volterra/sampling.hpp"
#include "volterra/trajectory.hpp"

namespace volterra::solver {

using operators::LiftedState;
using operators::Scheme;
using operators::SpectralSystem;

struct SolverOptions {
    sampling::SamplerOptions sampler{};
};

/// Number of steps of size dt in [0, T]; GridMismatch unless T is a multiple of dt.
std::size_t step_count(double T, double dt);

/// Runs `scheme` driven by the increments of `noise` path `path`, cells
/// first_cell .. first_cell + n_steps - 1 (the noise grid step must be dt).
Trajectory solve_with_noise(const SpectralSystem& sys, const LiftedState& phi, std::size_t n_steps, double dt,
                            Scheme scheme, const sampling::ProcessPaths& noise, std::size_t path,
                            std::size_t first_cell = 0);

/// Noise for a run over [0, T]: path `path` of the cylindrical process with
/// noise_dim() coordinates on the grid 0, dt, ..., T.
sampling::ProcessPaths sample_noise(const SpectralSystem& sys, const kernels::VolterraKernel& kernel, double T,
                                    double dt, std::uint64_t seed, std::size_t path = 0, SolverOptions options = {});

/// Direct exponential-Euler solution of the stochastic neutral equation.
Trajectory solve_neutral_sde(const SpectralSystem& sys, const kernels::VolterraKernel& kernel, const LiftedState& phi,
                             double T, double dt, std::uint64_t seed, std::size_t path = 0,
                             SolverOptions options = {});

/// Lifted mild-form solution; consumes the same increments as solve_neutral_sde.
Trajectory solve_lifted(const SpectralSystem& sys, const kernels::VolterraKernel& kernel, const LiftedState& phi,
                        double T, double dt, std::uint64_t seed, std::size_t path = 0, SolverOptions options = {});

/// Many paths of one scheme sharing a single factorized noise sampler.
std::vector<Trajectory> solve_paths(const SpectralSystem& sys, const kernels::VolterraKernel& kernel,
                                    const LiftedState& phi, double T, double dt, std::size_t n_paths,
                                    std::uint64_t seed, Scheme scheme, SolverOptions options = {});

/// x(t) = head(t) + D x_t rebuilt from the head series and the initial history.
Trajectory reconstruct_x(const Trajectory& lifted, const SpectralSystem& sys);

/// tol(dt) = C dt for the equivalence check, calibrated on the scalar benchmark.
inline constexpr double kEquivalenceConstant = 1.0;

struct EquivalenceReport {
    double dt = 0.0;
    double sup_err_x = 0.0;
    double sup_err_segment = 0.0;
    double tolerance = 0.0;
    bool pass = false;

    std::string to_text() const;
};

/// Both schemes on path `path` of the given noise; x from the lifted run is
/// rebuilt by reconstruct_x and compared with the direct solution.
EquivalenceReport verify_equivalence(const SpectralSystem& sys, const LiftedState& phi, double T, double dt,
                                     const sampling::ProcessPaths& noise, std::size_t path = 0);

/// As above with noise sampled from (kernel, seed), path 0.
EquivalenceReport verify_equivalence(const SpectralSystem& sys, const kernels::VolterraKernel& kernel,
                                     const LiftedState& phi, double T, double dt, std::uint64_t seed,
                                     SolverOptions options = {});

struct ConvergenceReport {
    std::vector<EquivalenceReport> runs;
    std::vector<double> orders; ///< log2-type orders between successive step sizes
    double min_order = 0.0;
    bool decreasing = false;
    bool pass = false;

    std::string to_text() const;
};

/// verify_equivalence at each dt (coarse to fine) on one noise realization
/// sampled at the finest step and coarsened; passes when every run passes,
/// the errors decrease and every empirical order is >= min_order.
ConvergenceReport equivalence_convergence(const SpectralSystem& sys, const kernels::VolterraKernel& kernel,
                                          const std::function<LiftedState(double dt)>& initial,
                                          double T, const std::vector<double>& dts, std::uint64_t seed,
                                          double min_order = 0.8, SolverOptions options = {});

/// No-delay systems only: exact sampling of x(t_{n+1}) = e^{A dt} x(t_n) + xi_n
/// with xi_n = int_{t_n}^{t_{n+1}} e^{A (t_{n+1} - s)} B db(s) drawn from the
/// exact joint covariance of all xi (weighted covariance quadrature).
class ExactNoDelaySampler {
public:
    ExactNoDelaySampler(const SpectralSystem& sys, const kernels::VolterraKernel& kernel, double T, double dt,
                        SolverOptions options = {});

    std::size_t steps() const { return n_steps_; }
    /// Covariance of the stacked (mode, step) convolution increments.
    const Eigen::MatrixXd& covariance() const { return covariance_; }
    /// States x(t_n), n = 0..steps, for one path, as an N x (steps + 1) matrix.
    Eigen::MatrixXd sample(const Eigen::VectorXd& x0, std::uint64_t seed, std::size_t path) const;
    /// Exact Cov x(T) for x0 = 0.
    Eigen::MatrixXd terminal_covariance() const;

private:
    Eigen::VectorXd decay_;
    std::size_t n_steps_;
    std::size_t n_modes_;
    Eigen::MatrixXd covariance_;
    Eigen::MatrixXd factor_;
};

/// Stationary covariance of the left-point recursion
/// x_{n+1} = e^{A dt}(x_n + B db_n) for a no-delay system driven by a kernel
/// with stationary increments:
///   sum_m B_km B_lm [rho_0 a b + sum_{h>=1} rho_h (a^{h+1} b + a b^{h+1})] / (1 - a b)
/// with a = e^{-lambda_k dt}, b = e^{-lambda_l dt}, rho_h = Cov(db_0, db_h).
Eigen::MatrixXd left_point_stationary_covariance(const SpectralSystem& sys, const kernels::VolterraKernel& kernel,
                                                 double dt, unsigned threads = 0);

/// Cov x(t_n) of the left-point recursion from x(0) = 0 after n steps.
Eigen::MatrixXd left_point_covariance(const SpectralSystem& sys, const kernels::VolterraKernel& kernel, double dt,
                                      std::size_t n_steps, unsigned threads = 0);

} // namespace volterra::solver
