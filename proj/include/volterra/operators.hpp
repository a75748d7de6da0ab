#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "volterra/trajectory.hpp"

namespace volterra::operators {

/// Matrix-valued density theta -> M(theta) on [-r, 0] of a distributed delay
/// operator x_t -> int_{-r}^0 M(theta) x(t + theta) dtheta.
class DelayDensity {
public:
    static DelayDensity zero() { return DelayDensity{}; }
    static DelayDensity constant(Eigen::MatrixXd density);
    static DelayDensity function(std::function<Eigen::MatrixXd(double)> density, std::string label = "function");

    bool is_zero() const { return kind_ == Kind::Zero; }
    bool is_constant() const { return kind_ == Kind::Constant; }
    /// M(theta) as an n x n matrix (zero matrix for the zero density).
    Eigen::MatrixXd at(double theta, Eigen::Index n) const;
    const std::string& label() const { return label_; }

private:
    enum class Kind { Zero, Constant, Function };
    Kind kind_ = Kind::Zero;
    Eigen::MatrixXd constant_;
    std::function<Eigen::MatrixXd(double)> function_;
    std::string label_ = "zero";
};

/// Spectral realization: A = -diag(lambda), point delays D1, F1 at lag r,
/// distributed delays D2, F2, noise operator B (N x M).
class SpectralSystem {
public:
    SpectralSystem(Eigen::VectorXd eigenvalues, double delay_r, Eigen::MatrixXd D1, Eigen::MatrixXd F1,
                   DelayDensity D2, DelayDensity F2, Eigen::MatrixXd noise_B);

    /// One mode, one noise coordinate.
    static SpectralSystem scalar(double lambda, double delay_r, double d1, double f1, double b,
                                 double d2_density = 0.0, double f2_density = 0.0);

    std::size_t dim() const { return static_cast<std::size_t>(eigenvalues_.size()); }
    std::size_t noise_dim() const { return static_cast<std::size_t>(noise_B_.cols()); }
    const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
    double coercivity_rate() const { return eigenvalues_.minCoeff(); }
    double delay() const { return delay_r_; }
    const Eigen::MatrixXd& D1() const { return D1_; }
    const Eigen::MatrixXd& F1() const { return F1_; }
    const DelayDensity& D2() const { return D2_; }
    const DelayDensity& F2() const { return F2_; }
    const Eigen::MatrixXd& noise_B() const { return noise_B_; }

    bool has_neutral_term() const { return !D1_.isZero(0.0) || !D2_.is_zero(); }
    bool has_feedback() const { return !F1_.isZero(0.0) || !F2_.is_zero(); }
    bool has_delay() const { return has_neutral_term() || has_feedback(); }

private:
    Eigen::VectorXd eigenvalues_;
    double delay_r_;
    Eigen::MatrixXd D1_;
    Eigen::MatrixXd F1_;
    DelayDensity D2_;
    DelayDensity F2_;
    Eigen::MatrixXd noise_B_;
};

/// lambda_k = k^2 pi^2, k = 1..n.
Eigen::VectorXd heat_spectrum(std::size_t n);

/// History window on the delay grid: column i holds x(-r + i dt).
struct Segment {
    double dt = 0.0;
    Eigen::MatrixXd values;

    std::size_t slots() const { return static_cast<std::size_t>(values.cols()); }
    /// Samples f at -r + i dt, i = 0..r/dt.
    static Segment sample(const std::function<Eigen::VectorXd(double)>& f, double delay_r, double dt);
    static Segment constant(const Eigen::VectorXd& c, double delay_r, double dt);
    static Segment zero(std::size_t dim, double delay_r, double dt);
};

/// Lifted state (pi_0 X, pi_1 X) = (x(t) - D x_t, x_t).
struct LiftedState {
    Eigen::VectorXd head;
    Segment segment;
};

/// Number of dt steps spanning the delay; GridMismatch unless r/dt is an integer.
std::size_t lag_steps(double delay_r, double dt);

/// D and F on a fixed delay grid. Distributed parts use trapezoid weights, so
/// D x_t = D1 x(t - r) + sum_i w_i M(theta_i) x(t + theta_i) with the window
/// columns ordered oldest (theta = -r) to newest (theta = 0).
class DelayDiscretization {
public:
    DelayDiscretization(const SpectralSystem& sys, double dt);

    double dt() const { return dt_; }
    std::size_t lag_steps() const { return lag_steps_; }
    std::size_t slots() const { return lag_steps_ + 1; }

    /// D applied to a window of slots() columns; the newest column is skipped
    /// when include_newest is false.
    Eigen::VectorXd apply_D(const Eigen::Ref<const Eigen::MatrixXd>& window, bool include_newest = true) const;
    Eigen::VectorXd apply_F(const Eigen::Ref<const Eigen::MatrixXd>& window, bool include_newest = true) const;
    /// Weight matrices of the theta = 0 slot.
    const Eigen::MatrixXd& D_newest() const { return D_newest_; }
    const Eigen::MatrixXd& F_newest() const { return F_newest_; }

private:
    struct Weights {
        bool zero = true;
        bool constant = false;
        Eigen::MatrixXd constant_density;
        std::vector<Eigen::MatrixXd> per_slot; // trapezoid weight times density
    };
    static Weights make_weights(const DelayDensity& density, Eigen::Index n, std::size_t slots, double delay_r,
                                double dt);
    Eigen::VectorXd apply(const Eigen::MatrixXd& point, const Weights& w,
                          const Eigen::Ref<const Eigen::MatrixXd>& window, bool include_newest) const;

    double dt_;
    std::size_t lag_steps_;
    Eigen::MatrixXd D1_;
    Eigen::MatrixXd F1_;
    Weights D2_;
    Weights F2_;
    Eigen::MatrixXd D_newest_;
    Eigen::MatrixXd F_newest_;
};

/// e^{tA} x = (e^{-lambda_k t} x_k).
Eigen::VectorXd apply_semigroup(const SpectralSystem& sys, double t, const Eigen::VectorXd& x);

/// D x_t and F x_t for a segment covering at least [-r, 0] (later columns are
/// the most recent); SegmentUnderflow when shorter.
Eigen::VectorXd apply_D(const SpectralSystem& sys, const Segment& segment);
Eigen::VectorXd apply_F(const SpectralSystem& sys, const Segment& segment);

/// Recovers x(t) from the head v = x(t) - D x_t and the older window slots.
/// The theta = 0 slot enters D2 with weight W0, so x solves (I - W0) x = v + D_rest.
class NeutralReconstruction {
public:
    explicit NeutralReconstruction(const DelayDiscretization& disc);
    Eigen::VectorXd operator()(const Eigen::VectorXd& head, const Eigen::Ref<const Eigen::MatrixXd>& window) const;

private:
    const DelayDiscretization* disc_;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
    bool identity_ = true;
};

/// Exponential integrator coefficients per mode for a step dt.
struct StepCoefficients {
    Eigen::VectorXd decay;   ///< e^{-lambda dt}
    Eigen::VectorXd phi1;    ///< int_0^dt e^{-lambda s} ds
    Eigen::VectorXd phi2;    ///< int_0^dt e^{-lambda s} (dt - s)/dt ds
    StepCoefficients(const Eigen::VectorXd& eigenvalues, double dt);
};

/// Direct scheme on v = x - D x_t:
///   v_{n+1} = e^{A dt} v_n + phi1 F x_{t_n} + e^{A dt} B db_n.
/// Lifted scheme on (head, segment), trapezoidal in the feedback:
///   head_{n+1} = e^{A dt}(head_n + B db_n) + (phi1 - phi2) F x_{t_n} + phi2 F x_{t_{n+1}},
/// with x(t_{n+1}) solved jointly when F2 or D2 weights the newest slot.
enum class Scheme { Direct, Lifted };

std::string to_string(Scheme scheme);

/// Shared time stepper. Noise increments (one M-vector per step) are optional.
class Stepper {
public:
    Stepper(const SpectralSystem& sys, double dt, Scheme scheme);

    const DelayDiscretization& discretization() const { return disc_; }
    const NeutralReconstruction& reconstruction() const { return reconstruct_; }

    /// x(0) from the initial lifted state, per x(0) = phi0 + D phi1.
    Eigen::VectorXd initial_x(const LiftedState& phi) const;

    /// Advances the head from step n to n + 1. `store` holds x on the delay
    /// grid; columns col - m .. col hold x_{t_n}, column col + 1 receives
    /// x(t_{n+1}).
    Eigen::VectorXd advance(const Eigen::VectorXd& head, Eigen::MatrixXd& store, Eigen::Index col,
                            const Eigen::VectorXd* noise) const;

private:
    const SpectralSystem* sys_;
    Scheme scheme_;
    DelayDiscretization disc_;
    NeutralReconstruction reconstruct_;
    StepCoefficients coef_;
    Eigen::MatrixXd decay_B_;                     // e^{A dt} B
    Eigen::PartialPivLU<Eigen::MatrixXd> joint_; // I - W_D0 - phi2 W_F0
    bool joint_needed_ = false;
};

/// Runs a scheme from phi over n_steps steps. noise, when given, supplies
/// increments noise(k)[step] for coordinate k.
Trajectory march(const SpectralSystem& sys, const LiftedState& phi, std::size_t n_steps, double dt, Scheme scheme,
                 const std::function<Eigen::VectorXd(std::size_t)>& noise = {});

/// Deterministic neutral equation by the direct exponential-Euler scheme.
Trajectory solve_deterministic_neutral(const SpectralSystem& sys, const Eigen::VectorXd& phi0, const Segment& phi1,
                                       double T, double dt);

/// G(t) h: x(t) for initial data (h, 0); zero for t < 0.
Eigen::VectorXd fundamental_solution(const SpectralSystem& sys, double t, const Eigen::VectorXd& h, double dt);

/// S(t) phi = (x(t) - D x_t, x_t) by the lifted scheme; t a multiple of dt.
LiftedState lifted_semigroup(const SpectralSystem& sys, double t, const LiftedState& phi, double dt);

/// Norm on H x L^2_r (trapezoid rule over the segment).
double lifted_norm(const LiftedState& state);

struct StabilityEstimate {
    double M = 0.0;
    double rho = 0.0;
    bool decays = false;
    std::size_t probes = 0;
    double horizon = 0.0;

    std::string to_text() const;
};

/// Propagates n_probes random unit lifted states and fits the decay of
/// log ||S(t) phi|| (worst probe) over the second half of the horizon.
StabilityEstimate estimate_stability(const SpectralSystem& sys, double horizon, double dt, std::size_t n_probes,
                                     std::uint64_t seed);

} // namespace volterra::operators
