#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <yaml-cpp/yaml.h>

#include "volterra/ergodicity.hpp"
#include "volterra/kernels.hpp"
#include "volterra/operators.hpp"
#include "volterra/wiener.hpp"

namespace volterra::cli {

enum class Subcommand {
    KernelCheck,
    Sample,
    Isometry,
    Simulate,
    Equivalence,
    ConditionH,
    Invariant,
    ErgodicStationary,
    ErgodicArbitrary,
    Stationarity,
};

std::optional<Subcommand> parse_subcommand(const std::string& name);
std::string to_string(Subcommand cmd);
const std::vector<std::string>& subcommand_names();

/// A YAML mapping read field by field. Errors carry the dotted path of the
/// offending field; finish() rejects keys nobody asked for.
class Section {
public:
    Section(YAML::Node node, std::string path);

    const std::string& path() const { return path_; }
    bool has(const std::string& key) const;
    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    double number(const std::string& key);
    double number(const std::string& key, double fallback);
    std::size_t count(const std::string& key);
    std::size_t count(const std::string& key, std::size_t fallback);
    std::uint64_t seed(const std::string& key);
    std::string text(const std::string& key);
    std::string text(const std::string& key, const std::string& fallback);
    bool flag(const std::string& key, bool fallback);
    std::vector<double> numbers(const std::string& key);
    std::vector<std::size_t> counts(const std::string& key);
    /// Scalar c -> c repeated n times; list -> its entries (length must be n).
    Eigen::VectorXd vector(const std::string& key, Eigen::Index n);
    /// Scalar c -> c I; flat list -> diagonal; list of rows -> full matrix.
    Eigen::MatrixXd matrix(const std::string& key, Eigen::Index rows, Eigen::Index cols);
    Section child(const std::string& key);
    std::optional<Section> optional_child(const std::string& key);

    void finish() const;

private:
    YAML::Node get(const std::string& key);

    YAML::Node node_;
    std::string path_;
    std::set<std::string> used_;
};

struct HistorySpec {
    Eigen::VectorXd head;
    Eigen::VectorXd value; ///< history phi1(theta) = value + slope theta
    Eigen::VectorXd slope;

    operators::LiftedState build(double delay_r, double dt) const;
};

struct SolverSpec {
    double T = 0.0;
    double dt = 0.0;
    std::vector<double> dts;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    double burn_in = 0.0;
    operators::Scheme scheme = operators::Scheme::Direct;
};

struct ToleranceSpec {
    quad::Tolerance covariance = kernels::kCovarianceTolerance;
    quad::Tolerance invariant{1e-11, 1e-9};
    quad::Tolerance kstar = wiener::kKstarTolerance;
    double z_threshold = 3.0;
};

struct KernelCheckSpec {
    std::size_t samples = 200;
    std::size_t phi_points = 50;
    std::size_t covariance_queries = 20;
    double phi_rel_tol = 1e-6;
    double covariance_abs_tol = 1e-6;
};

struct SampleSpec {
    std::size_t dim = 1;
    std::size_t n_lags = 4;
};

struct IsometrySpec {
    std::vector<double> breakpoints;
    std::vector<double> values;
};

struct EquivalenceSpec {
    double min_order = 0.8;
};

struct ConditionHSpec {
    double alpha = 0.25;
    double T0 = 1.0;
    std::vector<std::size_t> truncations; ///< heat spectrum study when non-empty
    double min_gap_ratio = 1.0;
};

struct InvariantSpec {
    double rel_tol = 1e-4;
    bool bias = false;
};

struct StationaritySpec {
    std::size_t n_lags = 4;
    std::size_t n_base_times = 4;
    double lag_step = 0.0;
    bool from_initial = false;
};

/// Everything a subcommand needs, validated before any computation.
struct ExperimentConfig {
    Subcommand command = Subcommand::KernelCheck;
    std::string source_text;
    std::optional<kernels::VolterraKernel> kernel;
    std::optional<operators::SpectralSystem> system;
    std::optional<HistorySpec> initial;
    SolverSpec solver;
    std::optional<ergodicity::Functional> functional;
    ToleranceSpec tolerance;
    ergodicity::ErgodicOptions ergodic;
    KernelCheckSpec kernel_check;
    SampleSpec sample;
    IsometrySpec isometry;
    EquivalenceSpec equivalence;
    ConditionHSpec condition_h;
    InvariantSpec invariant;
    StationaritySpec stationarity;
};

/// Parses and validates the configuration text for one subcommand. Tolerances
/// of quadratures are multiplied by tolerance_scale. Throws ConfigError.
ExperimentConfig parse_config(const std::string& text, Subcommand command, double tolerance_scale = 1.0);
ExperimentConfig load_config(const std::string& path, Subcommand command, double tolerance_scale = 1.0);

} // namespace volterra::cli
