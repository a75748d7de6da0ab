#include "cli/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "volterra/errors.hpp"

namespace volterra::cli {

namespace {

struct NamedCommand {
    const char* name;
    Subcommand cmd;
};

constexpr NamedCommand kCommands[] = {
    {"kernel-check", Subcommand::KernelCheck},
    {"sample", Subcommand::Sample},
    {"isometry", Subcommand::Isometry},
    {"simulate", Subcommand::Simulate},
    {"equivalence", Subcommand::Equivalence},
    {"condition-h", Subcommand::ConditionH},
    {"invariant", Subcommand::Invariant},
    {"ergodic-stationary", Subcommand::ErgodicStationary},
    {"ergodic-arbitrary", Subcommand::ErgodicArbitrary},
    {"stationarity", Subcommand::Stationarity},
};

const std::set<std::string> kSections{"kernel",     "system",       "initial", "solver",     "functional",
                                      "tolerance",  "ergodic",      "kernel_check", "sample", "isometry",
                                      "equivalence", "condition_h", "invariant", "stationarity"};

template <class T>
T convert(const YAML::Node& node, const std::string& field, const char* expected) {
    if (!node.IsScalar()) throw ConfigError(field, std::string("expected ") + expected);
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError(field, std::string("expected ") + expected + ", got '" + node.Scalar() + "'");
    }
}

// Rethrows library argument checks as configuration errors on `field`.
template <class F>
auto guarded(const std::string& field, F&& make) {
    try {
        return make();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(field, e.what());
    }
}

kernels::VolterraKernel parse_kernel(Section s) {
    const std::string type = s.text("type");
    kernels::VolterraKernel k = [&] {
        if (type == "fbm") {
            const double H = s.number("hurst");
            return guarded(s.field("hurst"), [&] { return kernels::VolterraKernel::fbm(H); });
        }
        if (type == "liouville") {
            const double alpha = s.number("alpha");
            const double sc = s.number("scale", 1.0);
            return guarded(s.path(), [&] { return kernels::VolterraKernel::liouville(alpha, sc); });
        }
        if (type == "power_law") {
            const double alpha = s.number("alpha");
            const double sc = s.number("scale", 1.0);
            const double exponent = s.number("exponent", alpha - 1.0);
            const double c = s.number("regularity_constant", std::abs(sc));
            const double lower = s.has("support_lower") ? s.number("support_lower")
                                                        : -std::numeric_limits<double>::infinity();
            return guarded(s.path(), [&] {
                return kernels::VolterraKernel::power_law(alpha, sc, exponent, c, lower);
            });
        }
        throw ConfigError(s.field("type"), "unknown kernel type '" + type + "' (fbm, liouville, power_law)");
    }();
    s.finish();
    return k;
}

operators::SpectralSystem parse_system(Section s) {
    Eigen::VectorXd lambda;
    if (s.has("heat") && s.has("eigenvalues"))
        throw ConfigError(s.field("heat"), "give either heat or eigenvalues, not both");
    if (s.has("heat")) {
        const std::size_t n = s.count("heat");
        if (n == 0) throw ConfigError(s.field("heat"), "needs at least one mode");
        lambda = operators::heat_spectrum(n);
    } else {
        const auto ev = s.numbers("eigenvalues");
        if (ev.empty()) throw ConfigError(s.field("eigenvalues"), "needs at least one mode");
        lambda = Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
    }
    const Eigen::Index n = lambda.size();
    const double r = s.number("delay", 1.0);
    const Eigen::Index m = s.has("noise_dim") ? static_cast<Eigen::Index>(s.count("noise_dim")) : n;
    if (m == 0) throw ConfigError(s.field("noise_dim"), "must be positive");
    const Eigen::MatrixXd D1 = s.has("D1") ? s.matrix("D1", n, n) : Eigen::MatrixXd::Zero(n, n);
    const Eigen::MatrixXd F1 = s.has("F1") ? s.matrix("F1", n, n) : Eigen::MatrixXd::Zero(n, n);
    const Eigen::MatrixXd D2 = s.has("D2_density") ? s.matrix("D2_density", n, n) : Eigen::MatrixXd::Zero(n, n);
    const Eigen::MatrixXd F2 = s.has("F2_density") ? s.matrix("F2_density", n, n) : Eigen::MatrixXd::Zero(n, n);
    const Eigen::MatrixXd B = s.has("B") ? s.matrix("B", n, m) : Eigen::MatrixXd::Identity(n, m);
    s.finish();
    return guarded(s.path(), [&] {
        return operators::SpectralSystem(lambda, r, D1, F1, operators::DelayDensity::constant(D2),
                                         operators::DelayDensity::constant(F2), B);
    });
}

HistorySpec parse_initial(Section s, Eigen::Index n) {
    HistorySpec h;
    h.head = s.vector("head", n);
    h.value = s.has("history") ? s.vector("history", n) : Eigen::VectorXd::Zero(n);
    h.slope = s.has("history_slope") ? s.vector("history_slope", n) : Eigen::VectorXd::Zero(n);
    s.finish();
    return h;
}

ergodicity::Functional parse_functional(Section s, Eigen::Index n) {
    const std::string type = s.text("type");
    const Eigen::VectorXd w = s.has("weights") ? s.vector("weights", n) : Eigen::VectorXd::Ones(n);
    auto f = [&] {
        if (type == "linear") {
            const double offset = s.number("offset", 0.0);
            return ergodicity::Functional::linear(w, offset);
        }
        if (type == "quadratic") {
            std::optional<double> clip;
            if (s.has("clip")) clip = s.number("clip");
            return guarded(s.field("clip"), [&] { return ergodicity::Functional::quadratic(w, clip); });
        }
        if (type == "clipped_lipschitz") {
            const double clip = s.number("clip");
            return guarded(s.field("clip"), [&] { return ergodicity::Functional::clipped_lipschitz(w, clip); });
        }
        throw ConfigError(s.field("type"),
                          "unknown functional type '" + type + "' (linear, quadratic, clipped_lipschitz)");
    }();
    s.finish();
    return f;
}

void require_positive(double v, const std::string& field) {
    if (!(v > 0.0)) throw ConfigError(field, "must be positive");
}

void parse_solver(Section s, SolverSpec& out) {
    if (s.has("T")) require_positive(out.T = s.number("T"), s.field("T"));
    if (s.has("dt")) require_positive(out.dt = s.number("dt"), s.field("dt"));
    if (s.has("dts")) {
        out.dts = s.numbers("dts");
        for (double d : out.dts) require_positive(d, s.field("dts"));
    }
    if (s.has("n_paths")) {
        out.n_paths = s.count("n_paths");
        if (out.n_paths == 0) throw ConfigError(s.field("n_paths"), "must be positive");
    }
    out.seed = s.seed("seed");
    out.burn_in = s.number("burn_in", 0.0);
    if (out.burn_in < 0.0) throw ConfigError(s.field("burn_in"), "must be non-negative");
    const std::string scheme = s.text("scheme", "direct");
    if (scheme == "direct")
        out.scheme = operators::Scheme::Direct;
    else if (scheme == "lifted")
        out.scheme = operators::Scheme::Lifted;
    else
        throw ConfigError(s.field("scheme"), "expected direct or lifted, got '" + scheme + "'");
    s.finish();
}

void parse_tolerance(Section s, ToleranceSpec& t) {
    t.covariance.abs = s.number("covariance_abs", t.covariance.abs);
    t.covariance.rel = s.number("covariance_rel", t.covariance.rel);
    t.invariant.abs = s.number("invariant_abs", t.invariant.abs);
    t.invariant.rel = s.number("invariant_rel", t.invariant.rel);
    t.z_threshold = s.number("z_threshold", t.z_threshold);
    require_positive(t.covariance.abs, s.field("covariance_abs"));
    require_positive(t.covariance.rel, s.field("covariance_rel"));
    require_positive(t.invariant.abs, s.field("invariant_abs"));
    require_positive(t.invariant.rel, s.field("invariant_rel"));
    require_positive(t.z_threshold, s.field("z_threshold"));
    s.finish();
}

void parse_ergodic(Section s, ergodicity::ErgodicOptions& o) {
    o.n_batches = s.count("n_batches", o.n_batches);
    if (o.n_batches < 2) throw ConfigError(s.field("n_batches"), "needs at least 2 batches");
    o.pre_roll_factor = s.number("pre_roll_factor", o.pre_roll_factor);
    require_positive(o.pre_roll_factor, s.field("pre_roll_factor"));
    o.stability_horizon = s.number("stability_horizon", o.stability_horizon);
    require_positive(o.stability_horizon, s.field("stability_horizon"));
    o.stability_probes = s.count("stability_probes", o.stability_probes);
    if (s.has("horizon_fractions")) {
        o.horizon_fractions = s.numbers("horizon_fractions");
        for (double f : o.horizon_fractions)
            if (!(f > 0.0 && f <= 1.0)) throw ConfigError(s.field("horizon_fractions"), "entries must lie in (0, 1]");
    }
    o.ensemble_paths = s.count("ensemble_paths", o.ensemble_paths);
    o.bias_correction = s.flag("bias_correction", o.bias_correction);
    s.finish();
}

} // namespace

std::optional<Subcommand> parse_subcommand(const std::string& name) {
    for (const auto& c : kCommands)
        if (name == c.name) return c.cmd;
    return std::nullopt;
}

std::string to_string(Subcommand cmd) {
    for (const auto& c : kCommands)
        if (c.cmd == cmd) return c.name;
    return "unknown";
}

const std::vector<std::string>& subcommand_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& c : kCommands) v.emplace_back(c.name);
        return v;
    }();
    return names;
}

Section::Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (!node_.IsMap()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected a table of key: value pairs");
}

bool Section::has(const std::string& key) const {
    const YAML::Node n = node_[key];
    return n.IsDefined() && !n.IsNull();
}

YAML::Node Section::get(const std::string& key) {
    used_.insert(key);
    YAML::Node n = node_[key];
    if (!n.IsDefined() || n.IsNull()) throw ConfigError(field(key), "required field is missing");
    return n;
}

double Section::number(const std::string& key) {
    const double v = convert<double>(get(key), field(key), "a number");
    if (!std::isfinite(v)) throw ConfigError(field(key), "must be finite");
    return v;
}

double Section::number(const std::string& key, double fallback) {
    used_.insert(key);
    return has(key) ? number(key) : fallback;
}

std::size_t Section::count(const std::string& key) {
    const YAML::Node n = get(key);
    const long long v = convert<long long>(n, field(key), "a non-negative integer");
    if (v < 0) throw ConfigError(field(key), "expected a non-negative integer");
    return static_cast<std::size_t>(v);
}

std::size_t Section::count(const std::string& key, std::size_t fallback) {
    used_.insert(key);
    return has(key) ? count(key) : fallback;
}

std::uint64_t Section::seed(const std::string& key) {
    const YAML::Node n = get(key);
    if (n.IsScalar() && !n.Scalar().empty() && n.Scalar().front() == '-')
        throw ConfigError(field(key), "expected a non-negative integer");
    return convert<std::uint64_t>(n, field(key), "a non-negative integer");
}

std::string Section::text(const std::string& key) { return convert<std::string>(get(key), field(key), "a string"); }

std::string Section::text(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    return has(key) ? text(key) : fallback;
}

bool Section::flag(const std::string& key, bool fallback) {
    used_.insert(key);
    return has(key) ? convert<bool>(get(key), field(key), "true or false") : fallback;
}

std::vector<double> Section::numbers(const std::string& key) {
    const YAML::Node n = get(key);
    if (!n.IsSequence()) throw ConfigError(field(key), "expected a list of numbers");
    std::vector<double> v;
    for (std::size_t i = 0; i < n.size(); ++i) {
        const std::string f = field(key) + "[" + std::to_string(i) + "]";
        v.push_back(convert<double>(n[i], f, "a number"));
        if (!std::isfinite(v.back())) throw ConfigError(f, "must be finite");
    }
    return v;
}

std::vector<std::size_t> Section::counts(const std::string& key) {
    const YAML::Node n = get(key);
    if (!n.IsSequence()) throw ConfigError(field(key), "expected a list of integers");
    std::vector<std::size_t> v;
    for (std::size_t i = 0; i < n.size(); ++i) {
        const std::string f = field(key) + "[" + std::to_string(i) + "]";
        const long long x = convert<long long>(n[i], f, "a non-negative integer");
        if (x < 0) throw ConfigError(f, "expected a non-negative integer");
        v.push_back(static_cast<std::size_t>(x));
    }
    return v;
}

Eigen::VectorXd Section::vector(const std::string& key, Eigen::Index n) {
    const YAML::Node node = get(key);
    if (node.IsScalar()) return Eigen::VectorXd::Constant(n, number(key));
    const auto v = numbers(key);
    if (static_cast<Eigen::Index>(v.size()) != n)
        throw ConfigError(field(key), "expected " + std::to_string(n) + " entries, got " + std::to_string(v.size()));
    return Eigen::Map<const Eigen::VectorXd>(v.data(), n);
}

Eigen::MatrixXd Section::matrix(const std::string& key, Eigen::Index rows, Eigen::Index cols) {
    const YAML::Node node = get(key);
    const std::string shape = std::to_string(rows) + " x " + std::to_string(cols);
    if (node.IsScalar()) {
        if (rows != cols) throw ConfigError(field(key), "scalar shorthand needs a square matrix, this one is " + shape);
        return number(key) * Eigen::MatrixXd::Identity(rows, cols);
    }
    if (!node.IsSequence() || node.size() == 0) throw ConfigError(field(key), "expected a number or a list");
    if (node[0].IsScalar()) {
        if (rows != cols) throw ConfigError(field(key), "diagonal shorthand needs a square matrix, this one is " + shape);
        return vector(key, rows).asDiagonal();
    }
    if (static_cast<Eigen::Index>(node.size()) != rows)
        throw ConfigError(field(key), "expected " + std::to_string(rows) + " rows for a " + shape + " matrix");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const YAML::Node row = node[static_cast<std::size_t>(i)];
        const std::string f = field(key) + "[" + std::to_string(i) + "]";
        if (!row.IsSequence() || static_cast<Eigen::Index>(row.size()) != cols)
            throw ConfigError(f, "expected a row of " + std::to_string(cols) + " numbers");
        for (Eigen::Index j = 0; j < cols; ++j) {
            const std::string fj = f + "[" + std::to_string(j) + "]";
            m(i, j) = convert<double>(row[static_cast<std::size_t>(j)], fj, "a number");
            if (!std::isfinite(m(i, j))) throw ConfigError(fj, "must be finite");
        }
    }
    return m;
}

Section Section::child(const std::string& key) { return Section(get(key), field(key)); }

std::optional<Section> Section::optional_child(const std::string& key) {
    used_.insert(key);
    if (!has(key)) return std::nullopt;
    return child(key);
}

void Section::finish() const {
    for (const auto& kv : node_) {
        const std::string key = kv.first.as<std::string>();
        if (!used_.count(key)) throw ConfigError(field(key), "unknown field");
    }
}

operators::LiftedState HistorySpec::build(double delay_r, double dt) const {
    auto phi1 = operators::Segment::sample([&](double theta) -> Eigen::VectorXd { return value + slope * theta; },
                                           delay_r, dt);
    return {head, std::move(phi1)};
}

ExperimentConfig parse_config(const std::string& text, Subcommand command, double tolerance_scale) {
    if (!(tolerance_scale > 0.0) || !std::isfinite(tolerance_scale))
        throw ConfigError("--tolerance-scale", "must be a positive number");
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError("<root>", std::string("not valid YAML: ") + e.what());
    }
    if (!root.IsDefined() || root.IsNull()) throw ConfigError("<root>", "configuration is empty");
    Section top(root, "");
    for (const auto& kv : root) {
        const std::string key = kv.first.as<std::string>();
        if (!kSections.count(key)) throw ConfigError(key, "unknown section");
    }

    ExperimentConfig c;
    c.command = command;
    c.source_text = text;

    if (auto s = top.optional_child("tolerance")) parse_tolerance(*s, c.tolerance);
    c.tolerance.covariance = c.tolerance.covariance.scaled(tolerance_scale);
    c.tolerance.invariant = c.tolerance.invariant.scaled(tolerance_scale);
    c.tolerance.kstar = c.tolerance.kstar.scaled(tolerance_scale);

    // Solver first: the seed is mandatory for every subcommand.
    parse_solver(top.child("solver"), c.solver);
    c.ergodic.z_threshold = c.tolerance.z_threshold;
    c.ergodic.burn_in = c.solver.burn_in;
    c.ergodic.solver.sampler.tol = c.tolerance.covariance;

    if (auto s = top.optional_child("kernel")) c.kernel = parse_kernel(*s);
    if (auto s = top.optional_child("system")) c.system = parse_system(*s);
    const Eigen::Index n = c.system ? static_cast<Eigen::Index>(c.system->dim()) : 1;
    if (auto s = top.optional_child("initial")) {
        if (!c.system) throw ConfigError("initial", "needs a system section to size the state");
        c.initial = parse_initial(*s, n);
    }
    if (auto s = top.optional_child("functional")) {
        if (!c.system) throw ConfigError("functional", "needs a system section to size the weights");
        c.functional = parse_functional(*s, n);
    }
    if (auto s = top.optional_child("ergodic")) parse_ergodic(*s, c.ergodic);
    if (auto s = top.optional_child("kernel_check")) {
        auto& k = c.kernel_check;
        k.samples = s->count("samples", k.samples);
        k.phi_points = s->count("phi_points", k.phi_points);
        k.covariance_queries = s->count("covariance_queries", k.covariance_queries);
        k.phi_rel_tol = s->number("phi_rel_tol", k.phi_rel_tol);
        k.covariance_abs_tol = s->number("covariance_abs_tol", k.covariance_abs_tol);
        if (k.samples == 0) throw ConfigError(s->field("samples"), "must be positive");
        if (k.phi_points < 2) throw ConfigError(s->field("phi_points"), "needs at least 2 points");
        s->finish();
    }
    if (auto s = top.optional_child("sample")) {
        c.sample.dim = s->count("dim", c.sample.dim);
        c.sample.n_lags = s->count("n_lags", c.sample.n_lags);
        if (c.sample.dim == 0) throw ConfigError(s->field("dim"), "must be positive");
        s->finish();
    }
    if (auto s = top.optional_child("isometry")) {
        c.isometry.breakpoints = s->numbers("breakpoints");
        c.isometry.values = s->numbers("values");
        if (c.isometry.breakpoints.size() != c.isometry.values.size() + 1)
            throw ConfigError(s->field("values"), "needs exactly one value per interval between breakpoints");
        s->finish();
    }
    if (auto s = top.optional_child("equivalence")) {
        c.equivalence.min_order = s->number("min_order", c.equivalence.min_order);
        s->finish();
    }
    if (auto s = top.optional_child("condition_h")) {
        auto& h = c.condition_h;
        h.alpha = s->number("alpha", c.kernel ? c.kernel->alpha() : h.alpha);
        h.T0 = s->number("T0", h.T0);
        if (s->has("truncations")) h.truncations = s->counts("truncations");
        h.min_gap_ratio = s->number("min_gap_ratio", h.min_gap_ratio);
        if (!(h.alpha > 0.0 && h.alpha < 0.5)) throw ConfigError(s->field("alpha"), "must lie in (0, 1/2)");
        require_positive(h.T0, s->field("T0"));
        if (!h.truncations.empty()) {
            if (h.truncations.size() < 2) throw ConfigError(s->field("truncations"), "needs at least two sizes");
            for (std::size_t i = 0; i < h.truncations.size(); ++i)
                if (h.truncations[i] == 0 || (i > 0 && h.truncations[i] <= h.truncations[i - 1]))
                    throw ConfigError(s->field("truncations"), "sizes must be positive and increasing");
        }
        s->finish();
    }
    if (auto s = top.optional_child("invariant")) {
        c.invariant.rel_tol = s->number("rel_tol", c.invariant.rel_tol);
        c.invariant.bias = s->flag("bias", c.invariant.bias);
        s->finish();
    }
    if (auto s = top.optional_child("stationarity")) {
        auto& st = c.stationarity;
        st.n_lags = s->count("n_lags", st.n_lags);
        st.n_base_times = s->count("n_base_times", st.n_base_times);
        st.lag_step = s->number("lag_step", st.lag_step);
        const std::string start = s->text("start", "stationary");
        if (start == "initial")
            st.from_initial = true;
        else if (start != "stationary")
            throw ConfigError(s->field("start"), "expected stationary or initial, got '" + start + "'");
        if (st.n_lags == 0) throw ConfigError(s->field("n_lags"), "must be positive");
        if (st.n_base_times < 2) throw ConfigError(s->field("n_base_times"), "needs at least 2 base times");
        s->finish();
    }

    // Presence requirements per subcommand.
    auto need = [](bool present, const std::string& field) {
        if (!present) throw ConfigError(field, "required field is missing");
    };
    const auto& sv = c.solver;
    auto need_grid = [&] {
        need(sv.T > 0.0, "solver.T");
        need(sv.dt > 0.0, "solver.dt");
    };
    switch (command) {
    case Subcommand::KernelCheck:
        need(c.kernel.has_value(), "kernel");
        break;
    case Subcommand::Sample:
        need(c.kernel.has_value(), "kernel");
        need_grid();
        need(sv.n_paths > 0, "solver.n_paths");
        break;
    case Subcommand::Isometry:
        need(c.kernel.has_value(), "kernel");
        need(sv.n_paths > 0, "solver.n_paths");
        need(!c.isometry.breakpoints.empty(), "isometry");
        break;
    case Subcommand::Simulate:
        need(c.kernel.has_value(), "kernel");
        need(c.system.has_value(), "system");
        need(c.initial.has_value(), "initial");
        need_grid();
        break;
    case Subcommand::Equivalence:
        need(c.kernel.has_value(), "kernel");
        need(c.system.has_value(), "system");
        need(c.initial.has_value(), "initial");
        need(sv.T > 0.0, "solver.T");
        need(sv.dt > 0.0 || !sv.dts.empty(), "solver.dt");
        break;
    case Subcommand::ConditionH:
        need(c.system.has_value() || !c.condition_h.truncations.empty(), "system");
        break;
    case Subcommand::Invariant:
        need(c.kernel.has_value(), "kernel");
        need(c.system.has_value(), "system");
        if (c.invariant.bias) need(sv.dt > 0.0, "solver.dt");
        break;
    case Subcommand::ErgodicStationary:
    case Subcommand::ErgodicArbitrary:
        need(c.kernel.has_value(), "kernel");
        need(c.system.has_value(), "system");
        need(c.functional.has_value(), "functional");
        need_grid();
        need(sv.n_paths > 0, "solver.n_paths");
        if (command == Subcommand::ErgodicArbitrary) need(c.initial.has_value(), "initial");
        break;
    case Subcommand::Stationarity:
        need(c.kernel.has_value(), "kernel");
        need(c.system.has_value(), "system");
        need_grid();
        need(sv.n_paths > 0, "solver.n_paths");
        if (c.stationarity.from_initial) need(c.initial.has_value(), "initial");
        break;
    }
    if (sv.burn_in >= sv.T && sv.T > 0.0 &&
        (command == Subcommand::ErgodicStationary || command == Subcommand::ErgodicArbitrary))
        throw ConfigError("solver.burn_in", "must be smaller than solver.T");
    return c;
}

ExperimentConfig load_config(const std::string& path, Subcommand command, double tolerance_scale) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("--config", "cannot read '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), command, tolerance_scale);
}

} // namespace volterra::cli
