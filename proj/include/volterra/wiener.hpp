#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "volterra/kernels.hpp"
#include "volterra/sampling.hpp"

namespace volterra::wiener {

/// f = sum_j f_j 1_{[t_{j-1}, t_j)} with vector values f_j of a common dimension.
class StepFunction {
public:
    StepFunction(std::vector<double> breakpoints, std::vector<Eigen::VectorXd> values);
    /// Scalar step function.
    StepFunction(std::vector<double> breakpoints, const std::vector<double>& values);

    /// c 1_{[s, t)} in coordinate `coord` of a dim-dimensional space.
    static StepFunction indicator(double s, double t, double c = 1.0, std::size_t dim = 1,
                                  std::size_t coord = 0);

    std::size_t dim() const { return static_cast<std::size_t>(values_.front().size()); }
    std::size_t pieces() const { return values_.size(); }
    const std::vector<double>& breakpoints() const { return breakpoints_; }
    double lower() const { return breakpoints_.front(); }
    double upper() const { return breakpoints_.back(); }
    double left(std::size_t j) const { return breakpoints_[j]; }
    double right(std::size_t j) const { return breakpoints_[j + 1]; }
    const Eigen::VectorXd& value(std::size_t j) const { return values_[j]; }

    /// Value at t (zero outside [lower, upper)).
    Eigen::VectorXd operator()(double t) const;
    bool is_zero() const;
    StepFunction scaled(double c) const;

private:
    std::vector<double> breakpoints_;
    std::vector<Eigen::VectorXd> values_;
};

/// a f + b g on the merged breakpoints (zero where neither is supported).
StepFunction linear_combination(double a, const StepFunction& f, double b, const StepFunction& g);

/// Left-point approximation of f on n_cells equal cells of [a, b).
StepFunction step_approximation(const std::function<Eigen::VectorXd(double)>& f, double a, double b,
                                std::size_t n_cells);

/// Tolerance of K* pieces and of the r-integral defining the K* inner product.
inline constexpr quad::Tolerance kKstarTolerance{1e-12, 1e-10};

/// (K* f)(r) = sum_j f_j int_{max(r, t_{j-1})}^{t_j} dK/du(u, r) du.
/// Kernels with a closed-form antiderivative use eval() differences; others
/// integrate dK/du in the lag u - r, graded at a zero lag.
Eigen::VectorXd kstar_transform(const kernels::VolterraKernel& kernel, const StepFunction& f, double r,
                                quad::Tolerance tol = kKstarTolerance);

/// int_R <(K* f)(r), (K* g)(r)> dr. The r-axis is split at all breakpoints
/// (graded by 1/alpha from the left, where K* f has (t_j - r)^alpha terms)
/// and the unbounded part left of the support uses a geometric tail.
double kstar_inner(const kernels::VolterraKernel& kernel, const StepFunction& f, const StepFunction& g,
                   quad::Tolerance tol = kKstarTolerance);
double kstar_norm(const kernels::VolterraKernel& kernel, const StepFunction& f,
                  quad::Tolerance tol = kKstarTolerance);

/// i(f) per path: sum_j sum_coord f_j[coord] (b_{t_j} - b_{t_{j-1}})[coord],
/// each bracket being the left-to-right sum of the stored grid increments.
std::vector<double> wiener_integral(const StepFunction& f, const sampling::ProcessPaths& paths,
                                    unsigned threads = 0);

/// Coarsest uniform grid starting at f.lower() that contains every breakpoint.
sampling::PathGrid grid_for(const StepFunction& f, std::size_t max_cells = 4096);

struct IsometryOptions {
    quad::Tolerance tol = kKstarTolerance;
    sampling::SamplerOptions sampler{};
    double z_threshold = 3.0;
};

struct IsometryReport {
    std::size_t n_paths = 0;
    double lhs_mc = 0.0;   ///< Monte Carlo mean of i(f)^2
    double rhs_quad = 0.0; ///< ||K* f||^2 by quadrature
    double std_error = 0.0;
    double z = 0.0;
    double ratio = 0.0;
    bool pass = false;

    /// Flat key = value block: lhs_mc, rhs_quad, stderr, z, ratio, n_paths, pass.
    std::string to_text() const;
};

/// Compares E[i(f)^2] over freshly sampled paths with ||K* f||^2.
IsometryReport verify_isometry(const kernels::VolterraKernel& kernel, const StepFunction& f,
                               std::size_t n_paths, std::uint64_t seed, IsometryOptions options = {});

struct RefinementReport {
    std::vector<std::size_t> cells;
    std::vector<double> norms;        ///< ||K* f_n||
    std::vector<double> differences;  ///< ||K* (f_{2n} - f_n)||, one fewer entry
    std::vector<double> orders;       ///< log2 of successive difference ratios
    bool converging = false;          ///< differences strictly decreasing
};

/// Refinement study of step_approximation under the K* norm, doubling the
/// cell count `levels` times from base_cells.
RefinementReport step_refinement(const kernels::VolterraKernel& kernel,
                                 const std::function<Eigen::VectorXd(double)>& f, double a, double b,
                                 std::size_t base_cells, std::size_t levels,
                                 quad::Tolerance tol = kKstarTolerance);

} // namespace volterra::wiener
