#include "volterra/wiener.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "volterra/errors.hpp"
#include "volterra/parallel.hpp"
#include "volterra/report.hpp"
#include "volterra/stats.hpp"

namespace volterra::wiener {

using kernels::VolterraKernel;

namespace {

void require_increasing(const std::vector<double>& t) {
    for (double x : t)
        if (!std::isfinite(x)) throw std::invalid_argument("step function breakpoints must be finite");
    for (std::size_t j = 1; j < t.size(); ++j)
        if (!(t[j] > t[j - 1]))
            throw std::invalid_argument("step function breakpoints must be strictly increasing");
}

std::vector<Eigen::VectorXd> as_vectors(const std::vector<double>& values) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(Eigen::VectorXd::Constant(1, v));
    return out;
}

// int_{max(a, r)}^{b} dK/du(u, r) du
double piece(const VolterraKernel& kernel, double a, double b, double r, quad::Tolerance tol) {
    const double lo = std::max(a, r);
    if (b <= lo || r < kernel.support_lower()) return 0.0;
    const double lag_lo = lo - r;
    const double lag_hi = b - r;
    // Far from r the eval() difference cancels; the lag range spans less than
    // one octave there and a single Gauss panel is exact to rounding.
    if (kernel.closed_form_antiderivative() && (lag_lo == 0.0 || lag_hi > 2.0 * lag_lo))
        return kernel.eval(b, r) - kernel.eval(lo, r);
    auto integrand = [&](double lag) { return kernel.deriv_lag(r + lag, lag); };
    if (lag_lo == 0.0)
        return quad::integrate(integrand, 0.0, lag_hi, quad::Grading{1.0 / kernel.alpha(), 1.0}, tol).value;
    return quad::integrate_geometric_tail(integrand, lag_lo, lag_hi, tol).value;
}

std::vector<double> merged_breakpoints(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> all(a);
    all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    const double scale = std::max(std::abs(all.front()), std::abs(all.back()));
    std::vector<double> out;
    for (double t : all)
        if (out.empty() || t - out.back() > 1e-13 * std::max(scale, 1.0)) out.push_back(t);
    return out;
}

} // namespace

StepFunction::StepFunction(std::vector<double> breakpoints, std::vector<Eigen::VectorXd> values)
    : breakpoints_(std::move(breakpoints)), values_(std::move(values)) {
    if (values_.empty()) throw std::invalid_argument("step function needs at least one piece");
    if (breakpoints_.size() != values_.size() + 1)
        throw std::invalid_argument("step function needs one more breakpoint than values");
    require_increasing(breakpoints_);
    const auto d = values_.front().size();
    if (d < 1) throw std::invalid_argument("step function values must have positive dimension");
    for (const auto& v : values_)
        if (v.size() != d) throw std::invalid_argument("step function values differ in dimension");
}

StepFunction::StepFunction(std::vector<double> breakpoints, const std::vector<double>& values)
    : StepFunction(std::move(breakpoints), as_vectors(values)) {}

StepFunction StepFunction::indicator(double s, double t, double c, std::size_t dim, std::size_t coord) {
    if (coord >= dim) throw std::invalid_argument("indicator coordinate out of range");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    v[static_cast<Eigen::Index>(coord)] = c;
    return StepFunction({s, t}, std::vector<Eigen::VectorXd>{v});
}

Eigen::VectorXd StepFunction::operator()(double t) const {
    if (t < lower() || t >= upper()) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
    const auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
    return values_[static_cast<std::size_t>(it - breakpoints_.begin()) - 1];
}

bool StepFunction::is_zero() const {
    return std::all_of(values_.begin(), values_.end(), [](const auto& v) { return v.isZero(0.0); });
}

StepFunction StepFunction::scaled(double c) const {
    std::vector<Eigen::VectorXd> v;
    v.reserve(values_.size());
    for (const auto& x : values_) v.push_back(c * x);
    return StepFunction(breakpoints_, std::move(v));
}

StepFunction linear_combination(double a, const StepFunction& f, double b, const StepFunction& g) {
    if (f.dim() != g.dim()) throw std::invalid_argument("step functions differ in dimension");
    const std::vector<double> t = merged_breakpoints(f.breakpoints(), g.breakpoints());
    std::vector<Eigen::VectorXd> v;
    v.reserve(t.size() - 1);
    for (std::size_t j = 0; j + 1 < t.size(); ++j) {
        const double mid = 0.5 * (t[j] + t[j + 1]);
        v.push_back(a * f(mid) + b * g(mid));
    }
    return StepFunction(t, std::move(v));
}

StepFunction step_approximation(const std::function<Eigen::VectorXd(double)>& f, double a, double b,
                                std::size_t n_cells) {
    if (n_cells < 1) throw std::invalid_argument("step approximation needs at least one cell");
    if (!(b > a)) throw std::invalid_argument("step approximation needs a < b");
    const double h = (b - a) / static_cast<double>(n_cells);
    std::vector<double> t(n_cells + 1);
    std::vector<Eigen::VectorXd> v;
    v.reserve(n_cells);
    for (std::size_t k = 0; k <= n_cells; ++k) t[k] = k == n_cells ? b : a + static_cast<double>(k) * h;
    for (std::size_t k = 0; k < n_cells; ++k) v.push_back(f(t[k]));
    return StepFunction(std::move(t), std::move(v));
}

Eigen::VectorXd kstar_transform(const VolterraKernel& kernel, const StepFunction& f, double r,
                                quad::Tolerance tol) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(f.dim()));
    for (std::size_t j = 0; j < f.pieces(); ++j) {
        if (f.right(j) <= r || f.value(j).isZero(0.0)) continue;
        out += piece(kernel, f.left(j), f.right(j), r, tol) * f.value(j);
    }
    return out;
}

double kstar_inner(const VolterraKernel& kernel, const StepFunction& f, const StepFunction& g,
                   quad::Tolerance tol) {
    if (f.dim() != g.dim()) throw std::invalid_argument("step functions differ in dimension");
    if (f.is_zero() || g.is_zero()) return 0.0;
    const quad::Tolerance inner_tol = tol.scaled(1e-2);
    auto integrand = [&](double r) {
        return kstar_transform(kernel, f, r, inner_tol).dot(kstar_transform(kernel, g, r, inner_tol));
    };

    const double lower = kernel.support_lower();
    std::vector<double> nodes = merged_breakpoints(f.breakpoints(), g.breakpoints());
    if (lower > nodes.front() && lower < nodes.back()) {
        nodes.push_back(lower);
        std::sort(nodes.begin(), nodes.end());
    }
    const double q = 1.0 / kernel.alpha();
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
        const double a = std::max(nodes[k], lower);
        const double b = nodes[k + 1];
        if (b <= a) continue;
        total += quad::integrate(integrand, a, b, quad::Grading{1.0, q}, tol).value;
    }

    // Left of every breakpoint: near part graded toward t_min, then a geometric tail.
    const double t_min = nodes.front();
    if (lower >= t_min) return total;
    const double width = nodes.back() - t_min;
    const double near_start = std::max(lower, t_min - width);
    total += quad::integrate(integrand, near_start, t_min, quad::Grading{1.0, q}, tol).value;
    if (near_start <= lower) return total;
    auto tail = [&](double s) { return integrand(t_min - s); };
    total += quad::integrate_geometric_tail(tail, width, t_min - lower, tol, total).value;
    return total;
}

double kstar_norm(const VolterraKernel& kernel, const StepFunction& f, quad::Tolerance tol) {
    return std::sqrt(std::max(0.0, kstar_inner(kernel, f, f, tol)));
}

std::vector<double> wiener_integral(const StepFunction& f, const sampling::ProcessPaths& paths,
                                    unsigned threads) {
    if (f.dim() != paths.dim())
        throw GridMismatch("step function dimension " + std::to_string(f.dim()) +
                           " differs from path dimension " + std::to_string(paths.dim()));
    const sampling::PathGrid& grid = paths.grid();
    std::vector<std::size_t> index(f.breakpoints().size());
    for (std::size_t j = 0; j < index.size(); ++j) {
        const auto k = grid.index_of(f.breakpoints()[j]);
        if (!k)
            throw GridMismatch("breakpoint " + report::number(f.breakpoints()[j], 17) +
                               " is not a point of the path grid");
        index[j] = *k;
    }
    std::vector<double> out(paths.n_paths());
    parallel_for(
        paths.n_paths(),
        [&](std::size_t p) {
            double total = 0.0;
            for (std::size_t j = 0; j < f.pieces(); ++j) {
                for (std::size_t c = 0; c < f.dim(); ++c) {
                    const double fc = f.value(j)[static_cast<Eigen::Index>(c)];
                    if (fc == 0.0) continue;
                    const auto inc = paths.increments(p, c);
                    double bracket = 0.0;
                    for (std::size_t k = index[j]; k < index[j + 1]; ++k) bracket += inc[k];
                    total += fc * bracket;
                }
            }
            out[p] = total;
        },
        threads);
    return out;
}

sampling::PathGrid grid_for(const StepFunction& f, std::size_t max_cells) {
    const auto& t = f.breakpoints();
    double min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j < t.size(); ++j) min_gap = std::min(min_gap, t[j] - t[j - 1]);
    const double span = t.back() - t.front();
    for (std::size_t divisor = 1; divisor <= max_cells; ++divisor) {
        const double dt = min_gap / static_cast<double>(divisor);
        const double cells = std::round(span / dt);
        if (cells > static_cast<double>(max_cells)) break;
        const sampling::PathGrid grid{t.front(), dt, static_cast<std::size_t>(cells)};
        if (std::abs(grid.end() - t.back()) > 1e-9 * dt) continue;
        if (std::all_of(t.begin(), t.end(), [&](double x) { return grid.index_of(x).has_value(); }))
            return grid;
    }
    throw GridMismatch("breakpoints admit no common uniform grid with at most " +
                       std::to_string(max_cells) + " cells");
}

std::string IsometryReport::to_text() const {
    return report::KeyValueBlock{}
        .add("lhs_mc", lhs_mc, 12)
        .add("rhs_quad", rhs_quad, 12)
        .add("stderr", std_error, 6)
        .add("z", z, 6)
        .add("ratio", ratio, 8)
        .add("n_paths", n_paths)
        .add("pass", pass)
        .str();
}

IsometryReport verify_isometry(const VolterraKernel& kernel, const StepFunction& f, std::size_t n_paths,
                               std::uint64_t seed, IsometryOptions options) {
    if (n_paths < 1000)
        throw InsufficientSamples("isometry check needs at least 1000 paths, got " + std::to_string(n_paths));
    IsometryReport report;
    report.n_paths = n_paths;
    report.rhs_quad = kstar_inner(kernel, f, f, options.tol);

    const sampling::ProcessPaths paths =
        sampling::sample_paths(kernel, grid_for(f), f.dim(), n_paths, seed, options.sampler);
    std::vector<double> squares = wiener_integral(f, paths, options.sampler.threads);
    for (double& x : squares) x *= x;
    const stats::MeanEstimate e = stats::mean_with_stderr(squares);
    report.lhs_mc = e.mean;
    report.std_error = e.std_error;
    report.z = stats::z_score(e.mean, report.rhs_quad, e.std_error);
    report.ratio = report.rhs_quad != 0.0 ? e.mean / report.rhs_quad : (e.mean == 0.0 ? 1.0 : 0.0);
    report.pass = std::abs(report.z) <= options.z_threshold;
    return report;
}

RefinementReport step_refinement(const VolterraKernel& kernel,
                                 const std::function<Eigen::VectorXd(double)>& f, double a, double b,
                                 std::size_t base_cells, std::size_t levels, quad::Tolerance tol) {
    if (base_cells < 1 || levels < 1) throw std::invalid_argument("refinement needs cells and levels");
    RefinementReport report;
    std::size_t n = base_cells;
    StepFunction coarse = step_approximation(f, a, b, n);
    report.cells.push_back(n);
    report.norms.push_back(kstar_norm(kernel, coarse, tol));
    for (std::size_t level = 0; level < levels; ++level) {
        n *= 2;
        StepFunction fine = step_approximation(f, a, b, n);
        report.cells.push_back(n);
        report.norms.push_back(kstar_norm(kernel, fine, tol));
        report.differences.push_back(kstar_norm(kernel, linear_combination(1.0, fine, -1.0, coarse), tol));
        coarse = std::move(fine);
    }
    report.converging = true;
    for (std::size_t k = 1; k < report.differences.size(); ++k) {
        report.orders.push_back(std::log2(report.differences[k - 1] / report.differences[k]));
        if (!(report.differences[k] < report.differences[k - 1])) report.converging = false;
    }
    return report;
}

} // namespace volterra::wiener
