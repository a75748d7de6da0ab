#include "volterra/sampling.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "volterra/errors.hpp"
#include "volterra/parallel.hpp"
#include "volterra/report.hpp"
#include "volterra/rng.hpp"
#include "volterra/stats.hpp"

namespace volterra::sampling {

using kernels::CovarianceQuery;
using kernels::VolterraKernel;

void PathGrid::validate() const {
    if (!std::isfinite(t0)) throw std::invalid_argument("grid origin must be finite");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("grid step must be positive");
    if (n_steps < 1) throw std::invalid_argument("grid needs at least one step");
}

std::optional<std::size_t> PathGrid::index_of(double t) const {
    const double k = std::round((t - t0) / dt);
    if (k < 0.0 || k > static_cast<double>(n_steps)) return std::nullopt;
    if (std::abs(t - time(static_cast<std::size_t>(k))) > 1e-9 * dt) return std::nullopt;
    return static_cast<std::size_t>(k);
}

bool PathGrid::symmetric() const { return std::abs(t0 + end()) <= 1e-9 * dt; }

Eigen::MatrixXd increment_covariance_matrix(const VolterraKernel& kernel, const PathGrid& grid,
                                            quad::Tolerance tol, unsigned threads) {
    grid.validate();
    const std::size_t n = grid.n_steps;
    Eigen::MatrixXd m(n, n);
    auto cell = [&](std::size_t k) { return std::pair{grid.time(k), grid.time(k + 1)}; };
    if (kernel.stationary_increments()) {
        std::vector<double> row(n);
        const auto [a, b] = cell(0);
        parallel_for(
            n,
            [&](std::size_t k) {
                const auto [c, d] = cell(k);
                row[k] = kernels::covariance_R(kernel, CovarianceQuery{a, b, c, d}, tol);
            },
            threads);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) m(i, j) = row[i > j ? i - j : j - i];
        return m;
    }
    // Upper triangle, row-major pair index.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(n * (n + 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) pairs.emplace_back(i, j);
    parallel_for(
        pairs.size(),
        [&](std::size_t p) {
            const auto [i, j] = pairs[p];
            const auto [a, b] = cell(i);
            const auto [c, d] = cell(j);
            const double r = kernels::covariance_R(kernel, CovarianceQuery{a, b, c, d}, tol);
            m(i, j) = r;
            m(j, i) = r;
        },
        threads);
    return m;
}

ProcessPaths::ProcessPaths(PathGrid grid, std::size_t dim, std::size_t n_paths, std::uint64_t seed,
                           std::size_t first_path, std::string kernel_id,
                           std::vector<double> increments)
    : grid_(grid), dim_(dim), n_paths_(n_paths), seed_(seed), first_path_(first_path),
      kernel_id_(std::move(kernel_id)), increments_(std::move(increments)) {
    grid_.validate();
    if (dim_ < 1 || n_paths_ < 1) throw std::invalid_argument("paths need positive dim and n_paths");
    if (increments_.size() != dim_ * n_paths_ * grid_.n_steps)
        throw std::invalid_argument("increment storage does not match the path layout");
    const std::size_t n = grid_.n_steps;
    values_.resize(dim_ * n_paths_ * (n + 1));
    for (std::size_t col = 0; col < dim_ * n_paths_; ++col) {
        const double* inc = increments_.data() + col * n;
        double* val = values_.data() + col * (n + 1);
        val[0] = 0.0;
        for (std::size_t k = 0; k < n; ++k) val[k + 1] = val[k] + inc[k];
    }
}

ProcessPaths ProcessPaths::coarsen(std::size_t factor) const {
    if (factor < 1 || grid_.n_steps % factor != 0)
        throw GridMismatch("coarsening factor " + std::to_string(factor) + " does not divide " +
                           std::to_string(grid_.n_steps) + " steps");
    const std::size_t n = grid_.n_steps / factor;
    std::vector<double> coarse(dim_ * n_paths_ * n);
    for (std::size_t col = 0; col < dim_ * n_paths_; ++col) {
        const double* fine = increments_.data() + col * grid_.n_steps;
        for (std::size_t k = 0; k < n; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < factor; ++j) s += fine[k * factor + j];
            coarse[col * n + k] = s;
        }
    }
    PathGrid g{grid_.t0, grid_.dt * static_cast<double>(factor), n};
    return {g, dim_, n_paths_, seed_, first_path_, kernel_id_, std::move(coarse)};
}

void ProcessPaths::write_csv(std::ostream& out) const {
    out << "path_id,coord,t,value\n";
    char line[128];
    for (std::size_t p = 0; p < n_paths_; ++p)
        for (std::size_t c = 0; c < dim_; ++c)
            for (std::size_t k = 0; k <= grid_.n_steps; ++k) {
                std::snprintf(line, sizeof line, "%zu,%zu,%.12g,%.17g\n", path_id(p), c, grid_.time(k),
                              value(p, c, k));
                out << line;
            }
}

double factorize_with_jitter(Eigen::MatrixXd& matrix, const std::string& label) {
    const Eigen::MatrixXd cov = matrix;
    const double scale = cov.diagonal().mean();
    for (double rel : {0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8}) {
        matrix = cov;
        const double jitter = rel * scale;
        matrix.diagonal().array() += jitter;
        Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>> llt(matrix);
        if (llt.info() == Eigen::Success) return jitter;
    }
    matrix.resize(0, 0);
    throw CovarianceNotPSD("covariance of " + label + " is not positive definite even with relative jitter 1e-8");
}

IncrementSampler::IncrementSampler(const VolterraKernel& kernel, PathGrid grid, SamplerOptions options)
    : grid_(grid), kernel_id_(kernel.id()), threads_(options.threads) {
    grid_.validate();
    factor_ = increment_covariance_matrix(kernel, grid_, options.tol, options.threads);
    jitter_ = factorize_with_jitter(factor_, "increments of " + kernel_id_);
}

ProcessPaths IncrementSampler::sample(std::size_t dim, std::size_t n_paths, std::uint64_t seed,
                                      std::size_t first_path) const {
    if (dim < 1 || n_paths < 1) throw std::invalid_argument("dim and n_paths must be positive");
    const std::size_t n = grid_.n_steps;
    std::vector<double> increments(dim * n_paths * n);
    const auto lower = factor();
    parallel_for(
        dim * n_paths,
        [&](std::size_t col) {
            const std::size_t path = col / dim;
            const std::size_t coord = col % dim;
            auto gen = rng::stream(seed, rng::Purpose::Noise, first_path + path, coord);
            std::normal_distribution<double> normal;
            Eigen::VectorXd z(static_cast<Eigen::Index>(n));
            for (std::size_t k = 0; k < n; ++k) z[static_cast<Eigen::Index>(k)] = normal(gen);
            Eigen::Map<Eigen::VectorXd> out(increments.data() + col * n, static_cast<Eigen::Index>(n));
            out.noalias() = lower * z;
        },
        threads_);
    return {grid_, dim, n_paths, seed, first_path, kernel_id_, std::move(increments)};
}

ProcessPaths sample_paths(const VolterraKernel& kernel, const PathGrid& grid, std::size_t dim,
                          std::size_t n_paths, std::uint64_t seed, SamplerOptions options) {
    if (dim < 1 || n_paths < 1) throw std::invalid_argument("dim and n_paths must be positive");
    return IncrementSampler(kernel, grid, options).sample(dim, n_paths, seed);
}

namespace {

LawComparison compare(const ProcessPaths& paths, std::size_t coord, std::size_t lag, std::size_t a1,
                      std::size_t a2, std::size_t b1, std::size_t b2) {
    const std::size_t np = paths.n_paths();
    std::vector<double> pa(np), pb(np), diff(np);
    for (std::size_t p = 0; p < np; ++p) {
        pa[p] = paths.increment(p, coord, a1) * paths.increment(p, coord, a2);
        pb[p] = paths.increment(p, coord, b1) * paths.increment(p, coord, b2);
        diff[p] = pa[p] - pb[p];
    }
    const stats::MeanEstimate d = stats::mean_with_stderr(diff);
    return {coord, lag, a1, b1, stats::mean(pa), stats::mean(pb), stats::z_score(d.mean, 0.0, d.std_error)};
}

} // namespace

IncrementLawReport test_increment_laws(const ProcessPaths& paths, std::size_t n_lags, double z_threshold) {
    if (paths.n_paths() < 2)
        throw InsufficientSamples("increment law tests need at least 2 paths, got " +
                                  std::to_string(paths.n_paths()));
    const std::size_t n = paths.grid().n_steps;
    if (n < 2) throw std::invalid_argument("increment law tests need at least 2 cells");
    if (n_lags < 1 || n_lags > n - 1) throw std::invalid_argument("n_lags must lie in [1, n_steps - 1]");

    IncrementLawReport report;
    report.n_paths = paths.n_paths();
    report.z_threshold = z_threshold;
    for (std::size_t coord = 0; coord < paths.dim(); ++coord) {
        for (std::size_t lag = 0; lag < n_lags; ++lag) {
            const std::size_t last = n - 1 - lag;
            if (last / 2 > 0 && last / 2 < last)
                report.stationarity.push_back(compare(paths, coord, lag, 0, lag, last / 2, last / 2 + lag));
            report.stationarity.push_back(compare(paths, coord, lag, 0, lag, last, last + lag));
        }
    }
    report.reflexivity_applicable = paths.grid().symmetric();
    if (report.reflexivity_applicable) {
        for (std::size_t coord = 0; coord < paths.dim(); ++coord) {
            for (std::size_t lag = 0; lag < n_lags; ++lag) {
                std::vector<std::size_t> starts{0};
                if (n / 2 >= lag + 1 && n / 2 - 1 - lag != 0) starts.push_back(n / 2 - 1 - lag);
                for (std::size_t i : starts) {
                    // Mirror of cell k is n - 1 - k.
                    report.reflexivity.push_back(
                        compare(paths, coord, lag, i, i + lag, n - 1 - i, n - 1 - i - lag));
                }
            }
        }
    }
    auto worst = [](const std::vector<LawComparison>& v) {
        double m = 0.0;
        for (const auto& c : v) m = std::max(m, std::abs(c.z));
        return m;
    };
    report.max_abs_z_stationarity = worst(report.stationarity);
    report.max_abs_z_reflexivity = worst(report.reflexivity);
    report.stationary_pass = report.max_abs_z_stationarity <= z_threshold;
    report.reflexive_pass = report.reflexivity_applicable && report.max_abs_z_reflexivity <= z_threshold;
    return report;
}

std::string IncrementLawReport::to_text() const {
    return report::KeyValueBlock{}
        .add("n_paths", n_paths)
        .add("z_threshold", z_threshold)
        .add("stationarity_comparisons", stationarity.size())
        .add("stationarity_max_abs_z", max_abs_z_stationarity)
        .add("stationarity_pass", stationary_pass)
        .add("reflexivity_applicable", reflexivity_applicable)
        .add("reflexivity_comparisons", reflexivity.size())
        .add("reflexivity_max_abs_z", max_abs_z_reflexivity)
        .add("reflexivity_pass", reflexive_pass)
        .str();
}

} // namespace volterra::sampling
