#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "cli/commands.hpp"
#include "cli/config.hpp"
#include "cli/manifest.hpp"
#include "volterra/errors.hpp"

using namespace volterra;
using namespace volterra::cli;
namespace fs = std::filesystem;

namespace {

const char* kDelayConfig = R"(
kernel:
  type: fbm
  hurst: 0.75
system:
  eigenvalues: [1.0]
  delay: 1.0
  D1: 0.3
  F1: 0.5
  B: 1.0
initial:
  head: 1.0
  history: 1.0
solver:
  T: 2.0
  dt: 0.125
  seed: 4
)";

std::string field_of(const std::string& text, Subcommand cmd) {
    try {
        parse_config(text, cmd);
    } catch (const ConfigError& e) {
        return e.field();
    }
    return "<none>";
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("volterra_cli_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    fs::create_directories(dir);
    const fs::path p = dir / "config.yaml";
    std::ofstream(p) << text;
    return p;
}

} // namespace

TEST(Config, SubcommandNames) {
    EXPECT_EQ(subcommand_names().size(), 10u);
    for (const auto& name : subcommand_names()) {
        const auto cmd = parse_subcommand(name);
        ASSERT_TRUE(cmd.has_value()) << name;
        EXPECT_EQ(to_string(*cmd), name);
    }
    EXPECT_FALSE(parse_subcommand("simulate2").has_value());
}

TEST(Config, ParsesDelaySystem) {
    const auto c = parse_config(kDelayConfig, Subcommand::Equivalence);
    ASSERT_TRUE(c.kernel && c.system && c.initial);
    EXPECT_DOUBLE_EQ(c.kernel->hurst(), 0.75);
    EXPECT_DOUBLE_EQ(c.system->D1()(0, 0), 0.3);
    EXPECT_DOUBLE_EQ(c.system->F1()(0, 0), 0.5);
    EXPECT_EQ(c.solver.seed, 4u);
    const auto phi = c.initial->build(1.0, 0.125);
    EXPECT_EQ(phi.segment.slots(), 9u);
    EXPECT_DOUBLE_EQ(phi.segment.values(0, 0), 1.0);
}

TEST(Config, MatrixShorthands) {
    const std::string text = R"(
system:
  eigenvalues: [1.0, 4.0]
  D1: 0.2
  F1: [0.1, -0.1]
  B: [[1.0, 0.5, 0.0], [0.0, 1.0, 2.0]]
  noise_dim: 3
solver: {seed: 1}
)";
    const auto c = parse_config(text, Subcommand::ConditionH);
    EXPECT_EQ(c.system->D1(), (0.2 * Eigen::Matrix2d::Identity()).eval());
    EXPECT_DOUBLE_EQ(c.system->F1()(1, 1), -0.1);
    EXPECT_DOUBLE_EQ(c.system->F1()(0, 1), 0.0);
    EXPECT_EQ(c.system->noise_dim(), 3u);
    EXPECT_DOUBLE_EQ(c.system->noise_B()(1, 2), 2.0);
}

TEST(Config, HeatSpectrum) {
    const auto c = parse_config("system: {heat: 3}\nsolver: {seed: 1}\n", Subcommand::ConditionH);
    EXPECT_EQ(c.system->dim(), 3u);
    EXPECT_NEAR(c.system->eigenvalues()[2], 9.0 * M_PI * M_PI, 1e-12);
}

TEST(Config, ErrorsNameTheField) {
    const std::string base = kDelayConfig;
    auto replaced = [&](const std::string& from, const std::string& to) {
        std::string s = base;
        s.replace(s.find(from), from.size(), to);
        return s;
    };
    EXPECT_EQ(field_of(replaced("  seed: 4\n", ""), Subcommand::Equivalence), "solver.seed");
    EXPECT_EQ(field_of(replaced("seed: 4", "seed: -4"), Subcommand::Equivalence), "solver.seed");
    EXPECT_EQ(field_of(replaced("seed: 4", "seed: four"), Subcommand::Equivalence), "solver.seed");
    EXPECT_EQ(field_of(replaced("hurst: 0.75", "hurst: 1.2"), Subcommand::Equivalence), "kernel.hurst");
    EXPECT_EQ(field_of(replaced("type: fbm", "type: brownian"), Subcommand::Equivalence), "kernel.type");
    EXPECT_EQ(field_of(replaced("D1: 0.3", "D1: [[0.3, 1.0]]"), Subcommand::Equivalence), "system.D1[0]");
    EXPECT_EQ(field_of(replaced("dt: 0.125", "dt: -0.125"), Subcommand::Equivalence), "solver.dt");
    EXPECT_EQ(field_of(replaced("dt: 0.125", "dtt: 0.125"), Subcommand::Equivalence), "solver.dtt");
    EXPECT_EQ(field_of(base + "extras: 1\n", Subcommand::Equivalence), "extras");
    EXPECT_EQ(field_of(replaced("head: 1.0", "head: [1.0, 2.0]"), Subcommand::Equivalence), "initial.head");
    EXPECT_EQ(field_of(base, Subcommand::ErgodicStationary), "functional");
    EXPECT_EQ(field_of(base, Subcommand::Sample), "solver.n_paths");
    EXPECT_EQ(field_of(base, Subcommand::Isometry), "solver.n_paths");
    EXPECT_EQ(field_of("solver: {seed: 1}\n", Subcommand::ConditionH), "system");
    EXPECT_EQ(field_of("solver: [unclosed", Subcommand::ConditionH), "<root>");
    EXPECT_EQ(field_of("", Subcommand::ConditionH), "<root>");
    EXPECT_THROW(parse_config(base, Subcommand::Equivalence, 0.0), ConfigError);
}

TEST(Config, FunctionalsAndToleranceScale) {
    const std::string text = std::string(kDelayConfig) + "  n_paths: 2\n" +
                             "functional: {type: quadratic, weights: 2.0, clip: 1.5}\n"
                             "tolerance: {covariance_abs: 1.0e-9, z_threshold: 4}\n";
    const auto c = parse_config(text, Subcommand::ErgodicStationary, 10.0);
    EXPECT_DOUBLE_EQ(*c.functional->lipschitz_constant(), 2.0 * 1.5 * 2.0);
    EXPECT_DOUBLE_EQ(c.tolerance.covariance.abs, 1e-8);
    EXPECT_DOUBLE_EQ(c.tolerance.covariance.rel, 1e-7);
    EXPECT_DOUBLE_EQ(c.ergodic.z_threshold, 4.0);
    EXPECT_DOUBLE_EQ(c.ergodic.solver.sampler.tol.abs, 1e-8);
}

TEST(Manifest, Sha256KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const fs::path dir = scratch("sha");
    fs::create_directories(dir);
    std::ofstream(dir / "f.bin", std::ios::binary) << "abc";
    EXPECT_EQ(sha256_file(dir / "f.bin"), sha256_hex("abc"));
    fs::remove_all(dir);
}

TEST(Manifest, NamesEveryFile) {
    const fs::path dir = scratch("manifest");
    {
        OutputDirectory out(dir);
        out.write("a.csv", "x\n1\n");
        out.write("b.txt", "pass=true\n");
        RunRecord r;
        r.subcommand = "simulate";
        r.outcome = "pass";
        write_manifest(out, r);
    }
    const auto m = nlohmann::json::parse(slurp(dir / kManifestName));
    ASSERT_EQ(m["files"].size(), 2u);
    EXPECT_EQ(m["files"][0]["name"], "a.csv");
    EXPECT_EQ(m["files"][0]["sha256"], sha256_hex("x\n1\n"));
    EXPECT_EQ(m["files"][1]["bytes"], 10);
    EXPECT_EQ(std::distance(fs::directory_iterator(dir), fs::directory_iterator()), 3);

    // A new run replaces the files of the previous one.
    {
        OutputDirectory again(dir);
        EXPECT_FALSE(fs::exists(dir / "a.csv"));
        EXPECT_FALSE(fs::exists(dir / kManifestName));
    }
    std::ofstream(dir / "foreign.txt") << "x";
    EXPECT_THROW(OutputDirectory{dir}, ConfigError);
    fs::remove_all(dir);
}

TEST(Run, ExitStatuses) {
    const fs::path dir = scratch("status");
    const fs::path cfg = write_config(dir / "cfg", kDelayConfig);
    std::ostringstream log;

    RunOptions o{cfg.string(), dir / "eq", 0, 1.0};
    auto r = run_subcommand(Subcommand::Equivalence, o, log);
    EXPECT_EQ(r.exit_status, kPass) << log.str();
    EXPECT_NE(slurp(dir / "eq" / "equivalence_report.txt").find("pass=true"), std::string::npos);

    std::string no_seed = kDelayConfig;
    no_seed.erase(no_seed.find("  seed: 4\n"));
    const fs::path bad = write_config(dir / "bad", no_seed);
    r = run_subcommand(Subcommand::Equivalence, {bad.string(), dir / "bad_out", 0, 1.0}, log);
    EXPECT_EQ(r.exit_status, kConfigError);
    EXPECT_NE(r.message.find("solver.seed"), std::string::npos);
    const auto m = nlohmann::json::parse(slurp(dir / "bad_out" / kManifestName));
    EXPECT_EQ(m["outcome"], "config_error");
    EXPECT_TRUE(m["files"].empty());

    // Step that does not divide the delay: precondition error.
    std::string grid = kDelayConfig;
    grid.replace(grid.find("dt: 0.125"), 9, "dt: 0.3");
    grid.replace(grid.find("T: 2.0"), 6, "T: 3.0");
    r = run_subcommand(Subcommand::Equivalence, {write_config(dir / "grid", grid).string(), dir / "grid_out", 0, 1.0},
                       log);
    EXPECT_EQ(r.exit_status, kConfigError);
    EXPECT_EQ(r.outcome, "precondition_error");

    // Condition (H) study demanding 4x gap shrinkage fails with status 1.
    const std::string study = "solver: {seed: 1}\ncondition_h: {alpha: 0.25, T0: 1.0, truncations: [4, 8, 16], "
                              "min_gap_ratio: 4.0}\n";
    r = run_subcommand(Subcommand::ConditionH, {write_config(dir / "h", study).string(), dir / "h_out", 0, 1.0}, log);
    EXPECT_EQ(r.exit_status, kFail);

    // Quadrature asked for more than double precision gives: numerical error.
    const std::string inv = "kernel: {type: fbm, hurst: 0.75}\nsystem: {eigenvalues: [1.0]}\nsolver: {seed: 1}\n";
    r = run_subcommand(Subcommand::Invariant, {write_config(dir / "inv", inv).string(), dir / "inv_out", 0, 1e-9},
                       log);
    EXPECT_EQ(r.exit_status, kNumericalError);
    fs::remove_all(dir);
}

TEST(Run, InvariantCsvHoldsClosedForm) {
    const fs::path dir = scratch("invariant");
    const std::string inv = "kernel: {type: fbm, hurst: 0.75}\nsystem: {eigenvalues: [1.0]}\nsolver: {seed: 1}\n";
    std::ostringstream log;
    const auto r =
        run_subcommand(Subcommand::Invariant, {write_config(dir / "cfg", inv).string(), dir / "out", 0, 1.0}, log);
    ASSERT_EQ(r.exit_status, kPass) << log.str();
    std::istringstream csv(slurp(dir / "out" / "invariant.csv"));
    std::string header, row;
    std::getline(csv, header);
    std::getline(csv, row);
    EXPECT_EQ(header, "row,col,covariance");
    EXPECT_NEAR(std::stod(row.substr(4)), 0.664670, 5e-7);
    fs::remove_all(dir);
}

TEST(Run, RerunIsBitwiseIdentical) {
    const fs::path dir = scratch("determinism");
    const std::string text = std::string(kDelayConfig) + "  n_paths: 3\n";
    const fs::path cfg = write_config(dir / "cfg", text);
    std::ostringstream log;
    for (const auto cmd : {Subcommand::Simulate, Subcommand::Equivalence}) {
        ASSERT_EQ(run_subcommand(cmd, {cfg.string(), dir / "a", 0, 1.0}, log).exit_status, kPass) << log.str();
        ASSERT_EQ(run_subcommand(cmd, {cfg.string(), dir / "b", 1, 1.0}, log).exit_status, kPass) << log.str();
        const auto ma = nlohmann::json::parse(slurp(dir / "a" / kManifestName));
        const auto mb = nlohmann::json::parse(slurp(dir / "b" / kManifestName));
        EXPECT_EQ(ma["files"], mb["files"]);
        EXPECT_FALSE(ma["files"].empty());
        for (const auto& f : ma["files"]) {
            const std::string name = f["name"];
            EXPECT_EQ(slurp(dir / "a" / name), slurp(dir / "b" / name)) << name;
        }
        fs::remove_all(dir / "a");
        fs::remove_all(dir / "b");
    }
    fs::remove_all(dir);
}
