#include "cli/commands.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "volterra/ergodicity.hpp"
#include "volterra/errors.hpp"
#include "volterra/kernels.hpp"
#include "volterra/parallel.hpp"
#include "volterra/report.hpp"
#include "volterra/rng.hpp"
#include "volterra/sampling.hpp"
#include "volterra/solver.hpp"
#include "volterra/stats.hpp"
#include "volterra/wiener.hpp"

namespace volterra::cli {

namespace {

using report::KeyValueBlock;
using report::number;

double fbm_increment_covariance(double H, const kernels::CovarianceQuery& q) {
    auto p = [H](double x) { return std::pow(std::abs(x), 2.0 * H); };
    return 0.5 * (p(q.t1 - q.s2) + p(q.s1 - q.t2) - p(q.t1 - q.t2) - p(q.s1 - q.s2));
}

bool run_kernel_check(const ExperimentConfig& c, OutputDirectory& out) {
    const auto& k = *c.kernel;
    const auto& spec = c.kernel_check;
    const std::uint64_t seed = c.solver.seed;
    const bool fbm = k.kind() == kernels::KernelKind::FbmMandelbrotVanNess;
    const double H = k.hurst();

    const auto reg = kernels::verify_regularity(k, spec.samples, seed);
    const auto bound = kernels::phi_bound(k, spec.samples, seed);

    // phi on off-diagonal points with log-spaced gaps in [1e-3, 10].
    std::mt19937_64 gen = rng::stream(seed, rng::Purpose::Property, 0);
    std::uniform_real_distribution<double> centre(0.0, 5.0);
    std::ostringstream phi_csv;
    phi_csv << (fbm ? "u,v,phi,closed_form,rel_err\n" : "u,v,phi\n");
    double phi_err = 0.0;
    for (std::size_t i = 0; i < spec.phi_points; ++i) {
        const double gap = std::pow(10.0, -3.0 + 4.0 * static_cast<double>(i) / static_cast<double>(spec.phi_points - 1));
        const double u = centre(gen);
        const double v = u + gap;
        const double phi = kernels::eval_phi(k, u, v);
        phi_csv << number(u, 17) << ',' << number(v, 17) << ',' << number(phi, 17);
        if (fbm) {
            const double exact = H * (2.0 * H - 1.0) * std::pow(gap, 2.0 * H - 2.0);
            const double err = std::abs(phi / exact - 1.0);
            phi_err = std::max(phi_err, err);
            phi_csv << ',' << number(exact, 17) << ',' << number(err, 6);
        }
        phi_csv << '\n';
    }
    out.write("phi.csv", phi_csv.str());

    KeyValueBlock rep;
    rep.add("kernel", k.id())
        .add("alpha", k.alpha())
        .add("regularity_samples", reg.samples)
        .add("regularity_max_ratio", reg.max_ratio)
        .add("regularity_worst_lag", reg.worst_lag)
        .add("regularity_constant", reg.regularity_constant)
        .add("regularity_pass", reg.pass)
        .add("phi_bound_samples", bound.samples)
        .add("phi_bound_constant", bound.constant);
    bool pass = reg.pass;
    if (fbm) {
        // Increment covariance against the closed form on random queries.
        std::mt19937_64 qgen = rng::stream(seed, rng::Purpose::Property, 1);
        std::uniform_real_distribution<double> start(0.0, 5.0), length(0.05, 2.0);
        std::ostringstream cov_csv;
        cov_csv << "s1,t1,s2,t2,quadrature,closed_form,abs_err\n";
        double cov_err = 0.0;
        for (std::size_t i = 0; i < spec.covariance_queries; ++i) {
            kernels::CovarianceQuery q;
            q.s1 = start(qgen);
            q.t1 = q.s1 + length(qgen);
            q.s2 = start(qgen);
            q.t2 = q.s2 + length(qgen);
            const double quad = kernels::covariance_R(k, q, c.tolerance.covariance);
            const double exact = fbm_increment_covariance(H, q);
            cov_err = std::max(cov_err, std::abs(quad - exact));
            cov_csv << number(q.s1, 17) << ',' << number(q.t1, 17) << ',' << number(q.s2, 17) << ','
                    << number(q.t2, 17) << ',' << number(quad, 17) << ',' << number(exact, 17) << ','
                    << number(std::abs(quad - exact), 6) << '\n';
        }
        out.write("covariance.csv", cov_csv.str());
        const bool phi_pass = phi_err <= spec.phi_rel_tol;
        const bool cov_pass = cov_err <= spec.covariance_abs_tol;
        rep.add("phi_max_rel_err", phi_err, 6)
            .add("phi_rel_tol", spec.phi_rel_tol, 6)
            .add("phi_pass", phi_pass)
            .add("covariance_queries", spec.covariance_queries)
            .add("covariance_max_abs_err", cov_err, 6)
            .add("covariance_abs_tol", spec.covariance_abs_tol, 6)
            .add("covariance_pass", cov_pass);
        pass = pass && phi_pass && cov_pass;
    }
    rep.add("pass", pass);
    out.write("kernel_check_report.txt", rep.str());
    return pass;
}

bool run_sample(const ExperimentConfig& c, OutputDirectory& out) {
    const auto& k = *c.kernel;
    const sampling::PathGrid grid{0.0, c.solver.dt, solver::step_count(c.solver.T, c.solver.dt)};
    const auto paths = sampling::sample_paths(k, grid, c.sample.dim, c.solver.n_paths, c.solver.seed,
                                              {c.tolerance.covariance, 0});
    std::ostringstream csv;
    paths.write_csv(csv);
    out.write("paths.csv", csv.str());

    const auto laws = sampling::test_increment_laws(paths, c.sample.n_lags, c.tolerance.z_threshold);
    // Only stationary-increment kernels predict equal laws under shifts and reflections.
    const bool expected = k.stationary_increments();
    const bool pass = !expected || (laws.stationary_pass && (!laws.reflexivity_applicable || laws.reflexive_pass));
    KeyValueBlock rep;
    rep.add("kernel", k.id())
        .add("n_paths", c.solver.n_paths)
        .add("dim", c.sample.dim)
        .add("T", c.solver.T)
        .add("dt", c.solver.dt)
        .add("laws_expected", expected);
    out.write("increment_laws_report.txt", rep.str() + laws.to_text() + "pass=" + (pass ? "true" : "false") + "\n");
    return pass;
}

bool run_isometry(const ExperimentConfig& c, OutputDirectory& out) {
    const wiener::StepFunction f(c.isometry.breakpoints, c.isometry.values);
    wiener::IsometryOptions o;
    o.tol = c.tolerance.kstar;
    o.sampler.tol = c.tolerance.covariance;
    o.z_threshold = c.tolerance.z_threshold;
    const auto r = wiener::verify_isometry(*c.kernel, f, c.solver.n_paths, c.solver.seed, o);
    KeyValueBlock rep;
    rep.add("kernel", c.kernel->id()).add("pieces", f.pieces());
    out.write("isometry_report.txt", rep.str() + r.to_text());
    return r.pass;
}

bool run_simulate(const ExperimentConfig& c, OutputDirectory& out) {
    const auto& sys = *c.system;
    const auto phi = c.initial->build(sys.delay(), c.solver.dt);
    const std::size_t n_paths = std::max<std::size_t>(c.solver.n_paths, 1);
    const auto trajs = solver::solve_paths(sys, *c.kernel, phi, c.solver.T, c.solver.dt, n_paths, c.solver.seed,
                                           c.solver.scheme, c.ergodic.solver);
    std::ostringstream csv;
    csv << "path,t,coord,x,head\n";
    for (std::size_t p = 0; p < trajs.size(); ++p) {
        std::ostringstream one;
        trajs[p].write_csv(one);
        std::istringstream lines(one.str());
        std::string line;
        std::getline(lines, line); // per-trajectory header
        while (std::getline(lines, line)) csv << p << ',' << line << '\n';
    }
    out.write("trajectories.csv", csv.str());

    KeyValueBlock rep;
    rep.add("kernel", c.kernel->id())
        .add("scheme", operators::to_string(c.solver.scheme))
        .add("n_paths", n_paths)
        .add("T", c.solver.T)
        .add("dt", c.solver.dt);
    for (std::size_t coord = 0; coord < sys.dim(); ++coord) {
        std::vector<double> xT(n_paths);
        for (std::size_t p = 0; p < n_paths; ++p)
            xT[p] = trajs[p].x_at_step(trajs[p].steps())[static_cast<Eigen::Index>(coord)];
        const std::string suffix = "_" + std::to_string(coord);
        rep.add("mean_xT" + suffix, stats::mean(xT));
        if (n_paths > 1) rep.add("var_xT" + suffix, stats::sample_variance(xT));
    }
    rep.add("pass", true);
    out.write("simulate_report.txt", rep.str());
    return true;
}

void equivalence_row(std::ostringstream& csv, const solver::EquivalenceReport& r) {
    csv << number(r.dt, 17) << ',' << number(r.sup_err_x, 17) << ',' << number(r.sup_err_segment, 17) << ','
        << number(r.tolerance, 17) << ',' << (r.pass ? "true" : "false") << '\n';
}

bool run_equivalence(const ExperimentConfig& c, OutputDirectory& out) {
    const auto& sys = *c.system;
    std::ostringstream csv;
    csv << "dt,sup_err_x,sup_err_segment,tolerance,pass\n";
    KeyValueBlock head;
    head.add("kernel", c.kernel->id()).add("T", c.solver.T);
    bool pass = false;
    if (!c.solver.dts.empty()) {
        const auto r = solver::equivalence_convergence(
            sys, *c.kernel, [&](double dt) { return c.initial->build(sys.delay(), dt); }, c.solver.T, c.solver.dts,
            c.solver.seed, c.equivalence.min_order, c.ergodic.solver);
        for (const auto& run : r.runs) equivalence_row(csv, run);
        out.write("equivalence_report.txt", head.str() + r.to_text());
        pass = r.pass;
    } else {
        const auto r = solver::verify_equivalence(sys, *c.kernel, c.initial->build(sys.delay(), c.solver.dt),
                                                  c.solver.T, c.solver.dt, c.solver.seed, c.ergodic.solver);
        equivalence_row(csv, r);
        out.write("equivalence_report.txt", head.str() + r.to_text());
        pass = r.pass;
    }
    out.write("equivalence.csv", csv.str());
    return pass;
}

bool run_condition_h(const ExperimentConfig& c, OutputDirectory& out) {
    const auto& h = c.condition_h;
    KeyValueBlock rep;
    rep.add("alpha", h.alpha).add("T0", h.T0);
    bool pass = true;
    if (c.system) {
        const double v = ergodicity::check_condition_H(*c.system, h.alpha, h.T0);
        rep.add("system_value", v, 17);
        if (c.system->dim() == 1 && c.system->noise_dim() == 1) {
            const double exact = ergodicity::condition_H_single_mode(c.system->eigenvalues()[0],
                                                                     c.system->noise_B()(0, 0), h.alpha, h.T0);
            rep.add("single_mode_closed_form", exact, 17).add("single_mode_abs_err", std::abs(v - exact), 6);
        }
        pass = std::isfinite(v);
    }
    std::string study;
    if (!h.truncations.empty()) {
        const auto r = ergodicity::condition_H_truncation(ergodicity::heat_truncation, h.alpha, h.T0, h.truncations);
        bool ratios = true;
        for (double q : r.gap_ratios) ratios = ratios && q >= h.min_gap_ratio;
        rep.add("min_gap_ratio", h.min_gap_ratio).add("gap_ratios_pass", ratios);
        pass = pass && r.monotone && r.converging && ratios;
        std::ostringstream csv;
        r.write_csv(csv);
        out.write("condition_h.csv", csv.str());
        study = r.to_text();
    }
    out.write("condition_h_report.txt", rep.str() + study + "pass=" + (pass ? "true" : "false") + "\n");
    return pass;
}

bool run_invariant(const ExperimentConfig& c, OutputDirectory& out) {
    const auto& sys = *c.system;
    const auto& k = *c.kernel;
    const Eigen::MatrixXd Q = ergodicity::invariant_covariance(sys, k, c.tolerance.invariant);
    std::optional<Eigen::MatrixXd> bias;
    if (c.invariant.bias) bias = ergodicity::discretization_bias(sys, k, c.solver.dt, c.ergodic.solver);

    std::ostringstream csv;
    csv << (bias ? "row,col,covariance,bias\n" : "row,col,covariance\n");
    for (Eigen::Index i = 0; i < Q.rows(); ++i)
        for (Eigen::Index j = 0; j < Q.cols(); ++j) {
            csv << i << ',' << j << ',' << number(Q(i, j), 17);
            if (bias) csv << ',' << number((*bias)(i, j), 17);
            csv << '\n';
        }
    out.write("invariant.csv", csv.str());

    KeyValueBlock rep;
    rep.add("kernel", k.id()).add("dim", sys.dim()).add("delay_terms_ignored", sys.has_delay()).add("trace", Q.trace(), 17);
    bool pass = true;
    if (sys.dim() == 1 && sys.noise_dim() == 1 && k.kind() == kernels::KernelKind::FbmMandelbrotVanNess) {
        const double H = k.hurst();
        const double b = sys.noise_B()(0, 0);
        const double exact = 0.5 * std::tgamma(2.0 * H + 1.0) * std::pow(sys.eigenvalues()[0], -2.0 * H) * b * b;
        const double rel = exact != 0.0 ? std::abs(Q(0, 0) / exact - 1.0) : std::abs(Q(0, 0));
        pass = rel <= c.invariant.rel_tol;
        rep.add("closed_form", exact, 17).add("rel_err", rel, 6).add("rel_tol", c.invariant.rel_tol, 6);
    }
    if (bias) rep.add("dt", c.solver.dt).add("bias_trace", bias->trace(), 17);
    rep.add("pass", pass);
    out.write("invariant_report.txt", rep.str());
    return pass;
}

bool run_ergodic(const ExperimentConfig& c, OutputDirectory& out, bool arbitrary) {
    const auto& sys = *c.system;
    const auto r = arbitrary ? ergodicity::ergodic_test_arbitrary(sys, *c.kernel, c.initial->build(sys.delay(), c.solver.dt),
                                                                  *c.functional, c.solver.T, c.solver.dt,
                                                                  c.solver.n_paths, c.solver.seed, c.ergodic)
                             : ergodicity::ergodic_test_stationary(sys, *c.kernel, *c.functional, c.solver.T,
                                                                   c.solver.dt, c.solver.n_paths, c.solver.seed,
                                                                   c.ergodic);
    KeyValueBlock head;
    head.add("kernel", c.kernel->id())
        .add("functional", c.functional->describe())
        .add("start", arbitrary ? "arbitrary" : "stationary")
        .add("T", c.solver.T)
        .add("dt", c.solver.dt);
    out.write("ergodic_report.txt", head.str() + r.to_text());
    std::ostringstream csv;
    r.write_csv(csv);
    out.write("ergodic_horizons.csv", csv.str());
    return r.pass;
}

bool run_stationarity(const ExperimentConfig& c, OutputDirectory& out) {
    const auto& sys = *c.system;
    ergodicity::StationarityOptions o;
    if (c.stationarity.from_initial) o.start = c.initial->build(sys.delay(), c.solver.dt);
    o.n_base_times = c.stationarity.n_base_times;
    o.lag_step = c.stationarity.lag_step;
    o.z_threshold = c.tolerance.z_threshold;
    o.ergodic = c.ergodic;
    const auto r = ergodicity::stationarity_test(sys, *c.kernel, c.solver.T, c.solver.dt, c.solver.n_paths,
                                                 c.stationarity.n_lags, c.solver.seed, o);
    KeyValueBlock head;
    head.add("kernel", c.kernel->id()).add("start", c.stationarity.from_initial ? "initial" : "stationary");
    out.write("stationarity_report.txt", head.str() + r.to_text());
    std::ostringstream csv;
    r.write_csv(csv);
    out.write("stationarity.csv", csv.str());
    return r.pass;
}

} // namespace

bool execute(const ExperimentConfig& c, OutputDirectory& out, std::ostream& log) {
    log << to_string(c.command) << ": seed " << c.solver.seed << ", writing to " << out.path().string() << '\n';
    switch (c.command) {
    case Subcommand::KernelCheck: return run_kernel_check(c, out);
    case Subcommand::Sample: return run_sample(c, out);
    case Subcommand::Isometry: return run_isometry(c, out);
    case Subcommand::Simulate: return run_simulate(c, out);
    case Subcommand::Equivalence: return run_equivalence(c, out);
    case Subcommand::ConditionH: return run_condition_h(c, out);
    case Subcommand::Invariant: return run_invariant(c, out);
    case Subcommand::ErgodicStationary: return run_ergodic(c, out, false);
    case Subcommand::ErgodicArbitrary: return run_ergodic(c, out, true);
    case Subcommand::Stationarity: return run_stationarity(c, out);
    }
    return false;
}

RunResult run_subcommand(Subcommand command, const RunOptions& options, std::ostream& log) {
    const auto started = std::chrono::steady_clock::now();
    RunResult result;
    std::optional<OutputDirectory> out;
    RunRecord record;
    record.subcommand = to_string(command);
    record.config_path = options.config_path;
    record.threads = options.threads;
    record.tolerance_scale = options.tolerance_scale;

    auto fail = [&](int status, std::string outcome, const std::string& message) {
        result.exit_status = status;
        result.outcome = std::move(outcome);
        result.message = message;
        log << "error: " << message << '\n';
    };
    try {
        out.emplace(options.out_dir);
        {
            std::ifstream in(options.config_path, std::ios::binary);
            if (!in) throw ConfigError("--config", "cannot read '" + options.config_path + "'");
            std::ostringstream text;
            text << in.rdbuf();
            record.config_text = text.str();
        }
        const ExperimentConfig config = parse_config(record.config_text, command, options.tolerance_scale);
        record.seed = config.solver.seed;
        record.seed_known = true;
        const bool pass = execute(config, *out, log);
        result.exit_status = pass ? kPass : kFail;
        result.outcome = pass ? "pass" : "fail";
        log << to_string(command) << ": " << result.outcome << '\n';
    } catch (const ConfigError& e) {
        fail(kConfigError, "config_error", e.what());
    } catch (const PreconditionError& e) {
        fail(kConfigError, "precondition_error", e.what());
    } catch (const std::invalid_argument& e) {
        fail(kConfigError, "precondition_error", e.what());
    } catch (const NumericalError& e) {
        fail(kNumericalError, "numerical_error", e.what());
    } catch (const std::exception& e) {
        fail(kNumericalError, "error", e.what());
    }
    if (out) {
        record.exit_status = result.exit_status;
        record.outcome = result.outcome;
        record.message = result.message;
        record.wall_time_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        try {
            write_manifest(*out, record);
        } catch (const std::exception& e) {
            log << "error: " << e.what() << '\n';
            if (result.exit_status == kPass || result.exit_status == kFail) result.exit_status = kNumericalError;
        }
    }
    return result;
}

} // namespace volterra::cli
