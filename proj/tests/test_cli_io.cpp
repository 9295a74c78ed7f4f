#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "bsdelab/cli.hpp"

using namespace bsdelab;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = BSDELAB_SCENARIO_DIR;

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "bsdelab_cli_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_scenario(const std::string& name, const std::string& text) {
    const auto path = scratch("scenarios") / (name + ".json");
    std::ofstream(path) << text;
    return path;
}

int run(const std::string& command, const fs::path& scenario, const fs::path& out, std::string* log = nullptr,
        std::optional<std::uint64_t> seed = std::nullopt) {
    std::ostringstream ss;
    const int rc = run_command(command, scenario, out, seed, ss);
    if (log) *log = ss.str();
    return rc;
}

Json read_json(const fs::path& p) { return Json::parse(read_file(p)); }

const char* kSmallSweep = R"({
  "name": "small_sweep",
  "experiment": "sweep",
  "generator": {"family": "toy", "q": 3.0},
  "sde": {"x0": [0.0], "sigma": [1.0]},
  "terminal": {"kind": "sine", "const": 1.0, "amplitude": 1.0,
               "singular_set": {"shape": "half_line", "threshold": -0.5, "side": -1, "nu": 0.1}},
  "numerics": {"steps": 10, "paths": 400, "seed": 4, "basis": {"kind": "partition", "bins": 8}, "n_list": [1, 8]}
})";

}  // namespace

TEST(Cli, CheckPassesForToy) {
    std::string log;
    const auto out = scratch("toy_check");
    EXPECT_EQ(run("check", kScenarios / "toy_q3_check.json", out, &log), kExitOk) << log;
    const auto m = read_json(out / "manifest.json");
    EXPECT_EQ(m.at("verdicts").at("condition:A9"), "holds");
    EXPECT_TRUE(fs::exists(out / "conditions.json"));
}

TEST(Cli, CheckNamesViolatedCondition) {
    std::string log;
    EXPECT_EQ(run("check", kScenarios / "power_varpi32_q1.json", scratch("p32"), &log), kExitPrecondition);
    EXPECT_NE(log.find("A6"), std::string::npos) << log;
    EXPECT_EQ(run("check", kScenarios / "power_varpi16_q1.json", scratch("p16"), &log), kExitPrecondition);
    EXPECT_NE(log.find("A8"), std::string::npos) << log;
}

TEST(Cli, SchemaErrorsExitTwo) {
    std::string log;
    const auto out = scratch("schema");
    EXPECT_EQ(run("check", write_scenario("bad_json", "{ not json"), out, &log), kExitSchema);
    EXPECT_EQ(run("check", write_scenario("unknown_key", R"({"generator": {"family": "toy", "q": 2}, "sde": {"x0": [0]},
        "terminal": {"kind": "constant"}, "extra": 1})"), out, &log), kExitSchema);
    EXPECT_NE(log.find("extra"), std::string::npos);
    EXPECT_EQ(run("check", write_scenario("bad_q", R"({"generator": {"family": "toy", "q": -2}, "sde": {"x0": [0]},
        "terminal": {"kind": "constant"}})"), out, &log), kExitSchema);
    EXPECT_EQ(run("check", write_scenario("bad_family", R"({"generator": {"family": "cubic", "q": 2}, "sde": {"x0": [0]},
        "terminal": {"kind": "constant"}})"), out, &log), kExitSchema);
    EXPECT_EQ(run("check", write_scenario("missing", R"({"generator": {"family": "toy", "q": 2}, "sde": {"x0": [0]}})"), out, &log),
              kExitSchema);
    EXPECT_EQ(run("frobnicate", kScenarios / "toy_q3_check.json", out, &log), kExitSchema);
    EXPECT_EQ(run("check", kScenarios / "does_not_exist.json", out, &log), kExitSchema);
}

TEST(Cli, ControlOnNonControlGeneratorIsAPreconditionFailure) {
    std::string log;
    EXPECT_EQ(run("control", write_scenario("sweep_for_control", kSmallSweep), scratch("ctl"), &log), kExitPrecondition);
    EXPECT_NE(log.find("control"), std::string::npos);
}

TEST(Cli, SweepOutputsAreDeterministic) {
    const auto path = write_scenario("small_sweep", kSmallSweep);
    const auto a = scratch("sweep_a"), b = scratch("sweep_b"), c = scratch("sweep_c");
    ASSERT_EQ(run("sweep", path, a), kExitOk);
    ASSERT_EQ(run("sweep", path, b), kExitOk);
    ASSERT_EQ(run("sweep", path, c, nullptr, 99u), kExitOk);
    EXPECT_EQ(read_file(a / "sweep.csv"), read_file(b / "sweep.csv"));
    EXPECT_NE(read_file(a / "sweep.csv"), read_file(c / "sweep.csv"));
    const auto ma = read_json(a / "manifest.json"), mb = read_json(b / "manifest.json");
    EXPECT_EQ(ma.at("outputs"), mb.at("outputs"));
    EXPECT_EQ(ma.at("seed"), 4u);
    EXPECT_EQ(read_json(c / "manifest.json").at("seed"), 99u);
    for (const auto& f : ma.at("outputs")) {
        EXPECT_EQ(f.at("sha256"), sha256_hex(read_file(a / f.at("file").get<std::string>())));
    }
    EXPECT_EQ(ma.at("verdicts").at("result:monotone_construction"), true);
}

TEST(Cli, SimulateRoundTripsTheBundle) {
    const auto path = write_scenario("small_sweep", kSmallSweep);
    const auto out = scratch("simulate");
    ASSERT_EQ(run("simulate", path, out), kExitOk);
    const auto decoded = decode_bundle(read_file(out / "paths.bin"));
    const auto s = load_scenario(path);
    const auto direct = simulate(s.sde, s.grid(), s.num.paths, s.num.seed);
    EXPECT_EQ(decoded.raw_states(), direct.raw_states());
    EXPECT_EQ(read_json(out / "simulate.json").at("condition_C").at("pass"), true);
}

TEST(Cli, SolveWritesValueAtTimeZero) {
    const auto path = write_scenario("small_sweep", kSmallSweep);
    const auto out = scratch("solve");
    ASSERT_EQ(run("solve", path, out), kExitOk);
    const auto j = read_json(out / "solve.json");
    EXPECT_EQ(j.at("n"), 8.0);
    EXPECT_GT(j.at("y0").get<double>(), 0.0);
    EXPECT_LT(j.at("y0").get<double>(), 8.0);
}

TEST(Cli, DeterministicLiquidationMatchesValue) {
    std::string log;
    const auto out = scratch("liq");
    ASSERT_EQ(run("control", kScenarios / "liquidation_deterministic.json", out, &log), kExitOk) << log;
    const auto j = read_json(out / "control.json");
    EXPECT_NEAR(j.at("value").get<double>(), 1.0, 0.01);
    EXPECT_EQ(j.at("value_match"), true);
    EXPECT_EQ(j.at("ranking").at(0), "bsde_feedback");
    EXPECT_LT(j.at("rate_rule_check").get<double>(), 1e-8);
}

TEST(Cli, BlowupScenariosGiveTheDichotomy) {
    const auto a = scratch("blow10"), b = scratch("blow05");
    ASSERT_EQ(run("verify", kScenarios / "power_blowup_varpi10.json", a), kExitOk);
    ASSERT_EQ(run("verify", kScenarios / "power_blowup_varpi05.json", b), kExitOk);
    const auto ja = read_json(a / "verify.json").at("blowup"), jb = read_json(b / "verify.json").at("blowup");
    EXPECT_EQ(ja.at("divergent"), true);
    EXPECT_EQ(ja.at("source_integrable"), false);
    EXPECT_EQ(jb.at("stable"), true);
    EXPECT_EQ(jb.at("source_integrable"), true);
}

TEST(Csv, FormatsRoundTripDoubles) {
    const std::vector<double> values{0.1, 1e-300, -2.5, 1.0 / 3.0, 6.02214076e23};
    CsvTable t({"a", "b", "c", "d", "e"});
    t.row(values);
    const auto s = t.str();
    EXPECT_EQ(s.substr(0, 10), "a,b,c,d,e\n");
    std::istringstream in(s.substr(10));
    std::string cell;
    for (double v : values) {
        std::getline(in, cell, v == values.back() ? '\n' : ',');
        EXPECT_EQ(std::strtod(cell.c_str(), nullptr), v) << cell;
    }
}

TEST(Codec, SolutionEncodingIsStable) {
    AffineSdeParams p;
    p.x0 = {0.0};
    p.sigma = {1.0};
    const auto b = simulate(make_affine_sde(p), TimeGrid(1.0, 5), 64, 3);
    const auto tc = TerminalCondition::regular([](std::span<const double> x) { return 1.0 + std::tanh(x[0]); });
    SolverOptions o;
    o.basis = {BasisKind::Partition, 0, 4};
    const auto s1 = solve_truncated(make_toy(2.0), tc, b, o, 10.0);
    const auto s2 = solve_truncated(make_toy(2.0), tc, b, o, 10.0);
    EXPECT_EQ(sha256_hex(encode_solution(s1)), sha256_hex(encode_solution(s2)));
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Tool, BinaryReportsExitCodes) {
    const std::string tool = BSDELAB_TOOL;
    const auto out = scratch("tool");
    const auto cmd = [&](const std::string& args) {
        const int rc = std::system((tool + " " + args + " > /dev/null 2>&1").c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    };
    EXPECT_EQ(cmd("check --scenario " + (kScenarios / "toy_q3_check.json").string() + " --out " + out.string()), 0);
    EXPECT_EQ(cmd("check --scenario " + (kScenarios / "power_varpi32_q1.json").string() + " --out " + out.string()), 3);
    EXPECT_EQ(cmd("check --out " + out.string()), 2);
    EXPECT_EQ(cmd("check --scenario " + (kScenarios / "toy_q3_check.json").string() + " --seed notanumber"), 2);
}
