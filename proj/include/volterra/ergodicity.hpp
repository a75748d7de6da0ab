#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "volterra/kernels.hpp"
#include "volterra/operators.hpp"
#include "volterra/solver.hpp"
#include "volterra/trajectory.hpp"

namespace volterra::ergodicity {

using operators::LiftedState;
using operators::SpectralSystem;

/// Observable rho: H -> R.
///   Linear:           w.x + offset
///   Quadratic:        sum_k w_k clamp(x_k, -R, R)^2 + offset (R = +inf when unclipped)
///   ClippedLipschitz: clamp(w.x, -c, c) + offset
class Functional {
public:
    enum class Kind { Linear, Quadratic, ClippedLipschitz };

    static Functional linear(Eigen::VectorXd weights, double offset = 0.0);
    static Functional constant(std::size_t dim, double value) { return linear(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)), value); }
    static Functional quadratic(Eigen::VectorXd weights, std::optional<double> clip_radius = std::nullopt);
    static Functional clipped_lipschitz(Eigen::VectorXd weights, double clip);

    Kind kind() const { return kind_; }
    const Eigen::VectorXd& weights() const { return weights_; }
    std::optional<double> clip() const { return clip_; }
    double offset() const { return offset_; }
    std::size_t dim() const { return static_cast<std::size_t>(weights_.size()); }

    /// Global Lipschitz constant in the Euclidean norm; none for unclipped quadratics.
    std::optional<double> lipschitz_constant() const;

    double operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const;

    /// E rho(X) for X ~ N(0, covariance).
    double space_average(const Eigen::MatrixXd& covariance) const;

    std::string describe() const;

private:
    Functional(Kind kind, Eigen::VectorXd weights, std::optional<double> clip, double offset);

    Kind kind_;
    Eigen::VectorXd weights_;
    std::optional<double> clip_;
    double offset_ = 0.0;
};

// -----------------------------------------------------------------------------
// Condition (H)
// -----------------------------------------------------------------------------

/// int_0^T0 (sum_{k,m} e^{-2 lambda_k r} B_km^2)^{1/(1+2 alpha)} dr.
double check_condition_H(const SpectralSystem& sys, double alpha, double T0);

/// Closed form of the single-mode integral.
double condition_H_single_mode(double lambda, double b, double alpha, double T0);

/// Values of the condition (H) integral along increasing truncations N.
struct ConditionHReport {
    double alpha = 0.0;
    double T0 = 0.0;
    std::vector<std::size_t> truncations;
    std::vector<double> values;
    std::vector<double> gaps;       ///< values[i+1] - values[i]
    std::vector<double> gap_ratios; ///< gaps[i] / gaps[i+1]
    bool monotone = false;
    bool converging = false; ///< gaps shrink at every refinement
    bool diverging = false;  ///< gaps fail to shrink
    double extrapolated = 0.0;

    std::string to_text() const;
    /// Columns N, value, gap, gap_ratio.
    void write_csv(std::ostream& out) const;
};

ConditionHReport condition_H_truncation(const std::function<SpectralSystem(std::size_t)>& generator, double alpha,
                                        double T0, const std::vector<std::size_t>& truncations);

/// lambda_k = k^2 pi^2, identity noise, no delay terms (delay r = 1).
SpectralSystem heat_truncation(std::size_t n);

// -----------------------------------------------------------------------------
// Invariant measure
// -----------------------------------------------------------------------------

/// Q[k][l] = sum_m B_km B_lm int_0^inf int_0^inf e^{-lambda_k u} e^{-lambda_l v} phi(u, v) du dv.
/// Only the undelayed part (A, B) enters; for delay systems this is the law
/// used to draw the start of the pre-roll.
Eigen::MatrixXd invariant_covariance(const SpectralSystem& sys, const kernels::VolterraKernel& kernel,
                                     quad::Tolerance tol = {1e-11, 1e-9});

/// Cov x(t_n) of the left-point scheme minus that of the exact-mode sampler
/// on the same grid, at a horizon of 20 / min lambda. No-delay systems only.
Eigen::MatrixXd discretization_bias(const SpectralSystem& sys, const kernels::VolterraKernel& kernel, double dt,
                                    solver::SolverOptions options = {});

/// Trapezoid-rule average of rho(x(t)) over [burn_in, T]; EmptyWindow when
/// fewer than two grid points remain.
double time_average(const Trajectory& traj, const std::function<double(const Eigen::VectorXd&)>& rho,
                    double burn_in = 0.0);
double time_average(const Trajectory& traj, const Functional& rho, double burn_in = 0.0);

/// L ||delta|| (1 - e^{-rho T}) / (rho T).
double i1_bound(double lipschitz, double delta_norm, double rho, double T);

// -----------------------------------------------------------------------------
// Ergodic tests
// -----------------------------------------------------------------------------

struct ErgodicOptions {
    double burn_in = 0.0;
    std::size_t n_batches = 20;
    double z_threshold = 3.0;
    double pre_roll_factor = 10.0; ///< pre-roll length >= factor / rho
    double stability_horizon = 20.0;
    std::size_t stability_probes = 8;
    std::vector<double> horizon_fractions{1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0 / 2, 1.0};
    std::size_t ensemble_paths = 400; ///< delay case: paths of the ensemble reference
    bool bias_correction = true;      ///< no-delay case: add discretization_bias to Q
    solver::SolverOptions solver{};
};

struct HorizonRow {
    double T = 0.0;
    double running_avg = 0.0; ///< mean over paths
    double reference = 0.0;
    double z = 0.0;
    double median_abs_deviation = 0.0;
    double coupled_difference = 0.0; ///< mean over paths (arbitrary start)
    double i1_bound = 0.0;           ///< mean over paths (arbitrary start)
};

struct ErgodicReport {
    std::string reference_kind; ///< "invariant" or "ensemble"
    double time_average = 0.0;
    double space_average = 0.0;   ///< reference used for z (bias included)
    double invariant_value = 0.0; ///< mu_infinity value without bias
    double bias = 0.0;
    double reference_stderr = 0.0; ///< nonzero for the ensemble reference
    double stderr = 0.0;          ///< batch means over all paths
    double stderr_paths = 0.0;    ///< spread of per-path averages
    double z_stderr = 0.0;        ///< max(stderr, stderr_paths); enters z
    double z = 0.0;
    double rho = 0.0;
    double M = 0.0;
    double pre_roll = 0.0;
    double i1_bound = 0.0;           ///< mean over paths at T
    double coupled_difference = 0.0; ///< mean over paths at T
    double max_coupled_ratio = 0.0;  ///< max over paths and horizons of difference / bound
    double threshold_T = 0.0;        ///< horizon past which the mean I1 bound is below z_stderr
    std::size_t n_paths = 0;
    std::size_t n_batches = 0;
    bool median_trend_decreasing = false;
    bool coupled_pass = true;
    bool deviation_pass = false;
    bool pass = false;
    std::vector<HorizonRow> horizons;

    std::string to_text() const;
    /// Columns T, running_avg, reference, z (plus coupled_difference, i1_bound
    /// for arbitrary-start runs).
    void write_csv(std::ostream& out) const;
};

/// Paths started from the stationary law (Q draw plus pre-roll).
ErgodicReport ergodic_test_stationary(const SpectralSystem& sys, const kernels::VolterraKernel& kernel,
                                      const Functional& rho, double T, double dt, std::size_t n_paths,
                                      std::uint64_t seed, ErgodicOptions options = {});

/// Paths started from x0, each coupled to a stationary path on the same noise.
ErgodicReport ergodic_test_arbitrary(const SpectralSystem& sys, const kernels::VolterraKernel& kernel,
                                     const LiftedState& x0, const Functional& rho, double T, double dt,
                                     std::size_t n_paths, std::uint64_t seed, ErgodicOptions options = {});

struct StationarityOptions {
    std::optional<LiftedState> start; ///< run from this state without pre-roll
    std::size_t n_base_times = 4;
    double lag_step = 0.0; ///< 0: spread n_lags over a quarter of T
    double z_threshold = 3.0;
    ErgodicOptions ergodic{};
};

struct StationarityReport {
    std::vector<double> base_times;
    std::vector<double> lags;
    Eigen::MatrixXd covariance; ///< (lag, base time) estimates of E x(t).x(t+h)
    Eigen::MatrixXd z;          ///< paired z against the last base time
    double max_abs_z = 0.0;
    std::size_t n_paths = 0;
    bool pass = false;

    std::string to_text() const;
    /// Columns base_time, lag, covariance, z.
    void write_csv(std::ostream& out) const;
};

StationarityReport stationarity_test(const SpectralSystem& sys, const kernels::VolterraKernel& kernel, double T,
                                     double dt, std::size_t n_paths, std::size_t n_lags, std::uint64_t seed,
                                     StationarityOptions options = {});

} // namespace volterra::ergodicity
