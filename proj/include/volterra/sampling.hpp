#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "volterra/kernels.hpp"

namespace volterra::sampling {

/// Uniform grid t0 + k dt, k = 0..n_steps.
struct PathGrid {
    double t0 = 0.0;
    double dt = 1.0;
    std::size_t n_steps = 1;

    void validate() const;
    double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
    double end() const { return time(n_steps); }
    /// Grid index of t when t lies on the grid (to 1e-9 dt).
    std::optional<std::size_t> index_of(double t) const;
    /// Grid is mirror-symmetric about 0, so cell k reflects onto cell n - 1 - k.
    bool symmetric() const;
};

/// M[i][j] = R over grid cells i and j. Kernels with stationary increments
/// fill a Toeplitz matrix from the first row.
Eigen::MatrixXd increment_covariance_matrix(const kernels::VolterraKernel& kernel, const PathGrid& grid,
                                            quad::Tolerance tol = kernels::kCovarianceTolerance,
                                            unsigned threads = 0);

/// Sampled paths. Path p carries the global id first_path + p; values at grid
/// point 0 are 0 and values[k] is the running sum of the first k increments.
class ProcessPaths {
public:
    ProcessPaths(PathGrid grid, std::size_t dim, std::size_t n_paths, std::uint64_t seed,
                 std::size_t first_path, std::string kernel_id, std::vector<double> increments);

    const PathGrid& grid() const { return grid_; }
    std::size_t dim() const { return dim_; }
    std::size_t n_paths() const { return n_paths_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t first_path() const { return first_path_; }
    std::size_t path_id(std::size_t path) const { return first_path_ + path; }
    const std::string& kernel_id() const { return kernel_id_; }

    double increment(std::size_t path, std::size_t coord, std::size_t cell) const {
        return increments_[offset(path, coord) + cell];
    }
    double value(std::size_t path, std::size_t coord, std::size_t point) const {
        return values_[(path * dim_ + coord) * (grid_.n_steps + 1) + point];
    }
    std::span<const double> increments(std::size_t path, std::size_t coord) const {
        return {increments_.data() + offset(path, coord), grid_.n_steps};
    }
    std::span<const double> values(std::size_t path, std::size_t coord) const {
        return {values_.data() + (path * dim_ + coord) * (grid_.n_steps + 1), grid_.n_steps + 1};
    }

    /// Same paths on a grid with step factor * dt; each coarse increment is the
    /// left-to-right sum of `factor` fine increments.
    ProcessPaths coarsen(std::size_t factor) const;

    /// Columns path_id, coord, t, value.
    void write_csv(std::ostream& out) const;

private:
    std::size_t offset(std::size_t path, std::size_t coord) const {
        return (path * dim_ + coord) * grid_.n_steps;
    }

    PathGrid grid_;
    std::size_t dim_;
    std::size_t n_paths_;
    std::uint64_t seed_;
    std::size_t first_path_;
    std::string kernel_id_;
    std::vector<double> increments_;
    std::vector<double> values_;
};

/// In-place Cholesky (lower triangle) with diagonal jitter escalating
/// 0, 1e-12, ..., 1e-8 times the mean diagonal; returns the jitter used.
/// Throws CovarianceNotPSD when every level fails.
double factorize_with_jitter(Eigen::MatrixXd& matrix, const std::string& label);

struct SamplerOptions {
    quad::Tolerance tol = kernels::kCovarianceTolerance;
    unsigned threads = 0;
};

/// Cholesky factor of the increment covariance on a grid, reusable across
/// seeds and path blocks.
class IncrementSampler {
public:
    IncrementSampler(const kernels::VolterraKernel& kernel, PathGrid grid, SamplerOptions options = {});

    const PathGrid& grid() const { return grid_; }
    const std::string& kernel_id() const { return kernel_id_; }
    /// Diagonal shift that made the factorization succeed (0 when none was needed).
    double jitter() const { return jitter_; }
    /// Lower-triangular factor L with L L^T = covariance + jitter I.
    auto factor() const { return factor_.triangularView<Eigen::Lower>(); }

    /// Increments of path (first_path + p, coord) are L z with z drawn from the
    /// stream (seed, Noise, first_path + p, coord); blocks are therefore
    /// reproducible independently of how the paths are split.
    ProcessPaths sample(std::size_t dim, std::size_t n_paths, std::uint64_t seed,
                        std::size_t first_path = 0) const;

private:
    PathGrid grid_;
    std::string kernel_id_;
    Eigen::MatrixXd factor_;
    double jitter_ = 0.0;
    unsigned threads_ = 0;
};

ProcessPaths sample_paths(const kernels::VolterraKernel& kernel, const PathGrid& grid, std::size_t dim,
                          std::size_t n_paths, std::uint64_t seed, SamplerOptions options = {});

/// Paired comparison of E[D_a D_b] against E[D_c D_d] across paths.
struct LawComparison {
    std::size_t coord = 0;
    std::size_t lag = 0;
    std::size_t cell_a = 0;  ///< reference pair (cell_a, cell_a + lag)
    std::size_t cell_b = 0;  ///< compared pair (cell_b, cell_b +/- lag)
    double cov_a = 0.0;
    double cov_b = 0.0;
    double z = 0.0;
};

struct IncrementLawReport {
    std::size_t n_paths = 0;
    double z_threshold = 3.0;
    std::vector<LawComparison> stationarity;
    std::vector<LawComparison> reflexivity;
    bool reflexivity_applicable = false;
    double max_abs_z_stationarity = 0.0;
    double max_abs_z_reflexivity = 0.0;
    bool stationary_pass = false;
    bool reflexive_pass = false;

    std::string to_text() const;
};

/// Second-moment tests of stationary increments (shifted cell pairs against
/// the first cells) and, on symmetric grids, reflexive increments (cell pairs
/// against their mirror images). Laws are Gaussian, so covariances decide.
IncrementLawReport test_increment_laws(const ProcessPaths& paths, std::size_t n_lags,
                                       double z_threshold = 3.0);

} // namespace volterra::sampling
