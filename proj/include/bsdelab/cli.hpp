#pragma once

// Command orchestration for the bsde-lab tool.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "bsde_solver.hpp"
#include "core.hpp"
#include "forward_sde.hpp"
#include "generator.hpp"
#include "io.hpp"
#include "liquidation.hpp"
#include "terminal_behavior.hpp"
#include "theta_transform.hpp"

namespace bsdelab {

enum ExitCode : int { kExitOk = 0, kExitSchema = 2, kExitPrecondition = 3, kExitNumeric = 4 };

namespace detail {

inline void require_conditions(const ConditionReport& rep, std::initializer_list<const char*> names) {
    for (const char* n : names) {
        const auto* e = rep.find(n);
        if (!e || !e->ok()) throw PreconditionError(n, e ? e->evidence : "not evaluated");
    }
}

inline Json regime_json(const RegimeResult& r) {
    return {{"holds", r.holds}, {"ell", r.ell}, {"eta", r.eta}, {"rho", num_json(r.rho)}, {"reason", r.reason},
            {"tag", "result:conclusion_regime"}};
}

inline Json check_json(const Scenario& s, const ConditionReport& rep) {
    Json j;
    j["conditions"] = to_json(rep);
    j["p"] = 1.0 + 1.0 / s.gen.q;
    j["rho"] = num_json(rho(s.gen.q, s.gen.ell, s.gen.eta));
    j["ell"] = s.gen.ell;
    j["eta"] = s.gen.eta;
    j["conclusion_regime"] = regime_json(conclusion_regime(s.gen, s.gen.jumps));
    return j;
}

inline std::string sweep_csv(const std::vector<BsdeSolution>& sols) {
    CsvTable t({"n", "t", "mean_y", "se_y", "min_y", "max_y"});
    for (const auto& s : sols) {
        for (std::size_t i = 0; i <= s.N(); ++i) {
            const auto c = s.column(i);
            const auto ms = mean_and_se(c);
            const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
            t.row({s.n, s.grid[i], ms.mean, ms.se, *lo, *hi});
        }
    }
    return t.str();
}

struct Context {
    const Scenario& s;
    OutputSet& out;
    std::uint64_t seed;
    std::ostream& log;
};

inline PathBundle simulate_scenario(const Context& c) {
    return simulate(c.s.sde, c.s.grid(), c.s.num.paths, c.seed);
}

inline SequenceResult sweep_scenario(const Context& c, const PathBundle& b, const std::vector<double>& levels) {
    const auto rep = check_conditions(c.s.gen, c.s.gen.jumps);
    require_conditions(rep, {"coefficients", "A1", "A2", "A3", "A4", "A5"});
    GeneratorSpec gen = c.s.gen;
    auto res = solve_singular_sequence(gen, c.s.tc, b, c.s.solver_options(), levels);
    if (gen.family == Family::Control || gen.family == Family::Custom) {
        calibrate_bound(gen, res.solutions, 0.5 * gen.horizon);
        res.diagnostics = sequence_diagnostics(gen, res.solutions);
    }
    return res;
}

inline int cmd_check(const Context& c) {
    const auto rep = check_conditions(c.s.gen, c.s.gen.jumps);
    c.out.write_json("conditions.json", check_json(c.s, rep));
    for (const auto& e : rep.entries) c.out.verdict("condition:" + e.name, verdict_name(e.verdict));
    if (const auto* bad = rep.first_problem()) {
        c.log << "condition " << bad->name << " " << verdict_name(bad->verdict) << ": " << bad->evidence << "\n";
        return kExitPrecondition;
    }
    c.log << "all conditions hold\n";
    return kExitOk;
}

inline int cmd_simulate(const Context& c) {
    const auto b = simulate_scenario(c);
    c.out.write("paths.bin", encode_bundle(b));
    CsvTable t({"t", "mean_x0", "sd_x0", "mean_jumps"});
    for (std::size_t i = 0; i <= b.steps(); ++i) {
        const auto col = b.coordinate(i, 0);
        const auto ms = mean_and_se(col);
        double jumps = 0.0;
        for (std::size_t m = 0; m < b.paths(); ++m) {
            for (const auto& e : b.events(m)) jumps += e.step < i ? 1.0 : 0.0;
        }
        t.row({b.grid()[i], ms.mean, ms.se * std::sqrt(static_cast<double>(b.paths())), jumps / static_cast<double>(b.paths())});
    }
    c.out.write("paths_summary.csv", t.str());
    Json j;
    if (c.s.tc.singular_set) {
        const auto e = check_condition_E(c.s.sde, *c.s.tc.singular_set);
        j["condition_E"] = {{"pass", e.pass}, {"checked", e.checked}, {"counterexamples", e.counterexamples.size()}, {"tag", "condition:E"}};
        c.out.verdict("condition:E", e.pass);
    }
    const auto cc = check_condition_C(c.s.tc, b);
    j["condition_C"] = {{"pass", cc.pass}, {"deltas", cc.deltas}, {"means", cc.means}, {"tag", "condition:C"}};
    c.out.verdict("condition:C", cc.pass);
    c.out.write_json("simulate.json", j);
    return kExitOk;
}

inline int cmd_solve(const Context& c) {
    const auto rep = check_conditions(c.s.gen, c.s.gen.jumps);
    require_conditions(rep, {"coefficients", "A1", "A2", "A3", "A4"});
    const auto b = simulate_scenario(c);
    const double n = c.s.num.n_list.back();
    const auto sol = solve_truncated(c.s.gen, c.s.tc, b, c.s.solver_options(), n);
    c.out.write("solution.csv", sweep_csv({sol}));
    c.out.write("solution.bin", encode_solution(sol));
    const auto y0 = sol.mean_at(0);
    c.out.write_json("solve.json", {{"n", n}, {"y0", y0.mean}, {"y0_se", y0.se}, {"fallback_steps", sol.fallback_steps()},
                                    {"clipped", sol.clipped}, {"max_preclip_negative", sol.max_preclip_negative},
                                    {"scheme", scheme_name(sol.scheme)}, {"basis", basis_name(sol.basis.kind)}});
    c.log << "Y0 = " << format_double(y0.mean) << " (se " << format_double(y0.se) << ")\n";
    return kExitOk;
}

inline Json sweep_verdicts(const Context& c, const SequenceResult& r) {
    const auto& d = r.diagnostics;
    const bool mono = d.monotonicity_violation_rate < 0.01;
    const bool bound = std::isnan(d.bound_violation_rate) || d.bound_violation_rate < 0.01;
    c.out.verdict("result:monotone_construction", mono);
    c.out.verdict("result:a_priori_bound", bound);
    return {{"monotone", mono}, {"bound", bound}};
}

inline int cmd_sweep(const Context& c) {
    const auto b = simulate_scenario(c);
    const auto r = sweep_scenario(c, b, c.s.num.n_list);
    c.out.write("sweep.csv", sweep_csv(r.solutions));
    Json j = to_json(r.diagnostics);
    j["levels"] = c.s.num.n_list;
    j["verdicts"] = sweep_verdicts(c, r);
    c.out.write_json("sweep.json", j);
    return kExitOk;
}

inline Json verify_body(const Context& c, const PathBundle& b, const SequenceResult& r) {
    Json j;
    const auto& gen = c.s.gen;
    const auto& top = r.solutions.back();
    if (c.s.verify.psi) {
        const ThetaMap map(gen.g);
        const auto est = psi_estimate(top, map, c.s.tc, b, c.s.num.basis);
        const int which = applicable_case(gen);
        CsvTable t({"t", "psi", "psi_plus", "psi_minus", "se_psi", "se_minus", "neg_part_bound"});
        for (std::size_t i = 0; i <= est.N(); ++i) {
            t.row({est.times[i], est.psi_mean[i], est.plus_mean[i], est.minus_mean[i], est.se_mean[i], est.se_minus_mean[i],
                   neg_part_bound(gen, which, est.times[i], map)});
        }
        c.out.write("psi.csv", t.str());
        const auto sp = supermartingale_test(est.psi_plus, b, c.s.num.basis);
        const auto sm = supermartingale_test(est.psi_minus, b, c.s.num.basis);
        const std::size_t last = est.N() - 1;
        const double bound = neg_part_bound(gen, which, est.times[last], map);
        const bool below = est.minus_mean[last] < bound + 3.0 * est.se_minus_mean[last];
        const auto trend = minus_trend(est);
        j["psi"] = {{"case", which},
                    {"psi_plus_violation_rate", sp.violation_rate},
                    {"psi_minus_violation_rate", sm.violation_rate},
                    {"psi_minus_last", est.minus_mean[last]},
                    {"neg_part_bound_last", bound},
                    {"below_bound", below},
                    {"minus_trend_decreasing", trend.decreasing},
                    {"reconstruction_error", est.reconstruction_error},
                    {"tag", "result:psi_decomposition"}};
        c.out.verdict("result:psi_decomposition", sp.pass && sm.pass && below && trend.decreasing);
    }
    if (c.s.verify.weighted_norm) {
        const double rh = c.s.verify.rho >= 0.0 ? c.s.verify.rho : rho(gen.q, gen.ell, gen.eta);
        const auto w = weighted_zu_norm(r.solutions, b.intensities(), rh, gen.ell, gen.eta);
        CsvTable t({"n", "value", "se"});
        for (std::size_t k = 0; k < w.levels.size(); ++k) t.row({w.levels[k], w.values[k], w.se[k]});
        c.out.write("weighted_norm.csv", t.str());
        const bool asserted = rh < 1.0;
        j["weighted_norm"] = {{"rho", rh}, {"ell", gen.ell}, {"ratio", num_json(w.ratio)}, {"bounded", w.bounded},
                              {"asserted", asserted}, {"tag", "result:weighted_zu_estimate"}};
        if (asserted) c.out.verdict("result:weighted_zu_estimate", w.bounded);
    }
    if (c.s.verify.continuity) {
        ContinuityOptions co;
        co.epsilon = c.s.num.epsilon;
        co.gamma = c.s.num.gamma;
        const auto cr = continuity_test(gen, c.s.sde, r.solutions, c.s.tc, b, co);
        CsvTable t({"n", "t", "mean_y_phi", "se", "gap", "gap_se"});
        for (const auto& lv : cr.levels) {
            for (std::size_t i = 0; i < lv.gap.size(); ++i) {
                t.row({lv.n, b.grid()[i], lv.series[i], lv.series_se[i], lv.gap[i], lv.gap_se[i]});
            }
        }
        c.out.write("continuity.csv", t.str());
        Json levels = Json::array();
        for (const auto& lv : cr.levels) {
            levels.push_back({{"n", lv.n}, {"terminal", lv.terminal}, {"final_gap", lv.gap.back()}, {"final_gap_se", lv.gap_se.back()},
                              {"gap_decreasing", lv.gap_decreasing}, {"final_gap_small", lv.final_gap_small},
                              {"probe_last", lv.probe_last}});
        }
        Json crossed = Json::array();
        for (double v : cr.crossed_at) crossed.push_back(num_json(v));
        j["continuity"] = {{"epsilon", cr.epsilon}, {"gamma", cr.gamma}, {"levels", levels}, {"thresholds", cr.thresholds},
                           {"crossed_at", crossed}, {"probe_terminal_mass", cr.probe_terminal_mass},
                           {"continuity", cr.continuity}, {"tag", "result:terminal_continuity"}};
        c.out.verdict("result:terminal_continuity", cr.continuity);
    }
    if (c.s.verify.blowup) {
        const double t = c.s.verify.blowup_t >= 0.0 ? c.s.verify.blowup_t : gen.horizon - 0.01;
        const auto br = blowup_test(gen, c.s.verify.blowup_levels, t);
        Json levels = Json::array();
        for (const auto& lv : br.levels) {
            levels.push_back({{"n", lv.n}, {"value", lv.value}, {"lower_bound", lv.lower_bound}, {"source", lv.source}});
        }
        j["blowup"] = {{"t", t}, {"source_integrable", br.source_integrable}, {"levels", levels},
                       {"per_decade_growth", br.per_decade_growth}, {"top_relative_change", br.top_relative_change},
                       {"lower_bound_holds", br.lower_bound_holds}, {"divergent", br.divergent}, {"stable", br.stable},
                       {"tag", "result:blowup_dichotomy"}};
        c.out.verdict("result:blowup_dichotomy", br.source_integrable ? br.stable : br.divergent);
    }
    return j;
}

inline int cmd_verify(const Context& c) {
    const auto b = simulate_scenario(c);
    const auto r = sweep_scenario(c, b, c.s.num.n_list);
    c.out.write_json("verify.json", verify_body(c, b, r));
    return kExitOk;
}

inline Json control_body(const Context& c, const PathBundle& b) {
    const auto& gen = c.s.gen;
    if (gen.family != Family::Control) throw PreconditionError("control", "the scenario generator is not a control generator");
    const double n = c.s.control.n, x0 = c.s.control.inventory;
    const auto sol = solve_truncated(gen, c.s.tc, b, c.s.solver_options(), n);
    const auto fb = feedback_policy(sol, gen);
    std::vector<ControlledRun> runs{run_controlled(fb, b, c.s.tc, n, x0), run_controlled(twap_policy(gen), b, c.s.tc, n, x0)};
    for (double f : c.s.control.perturbations) runs.push_back(run_controlled(perturbed_policy(fb, f), b, c.s.tc, n, x0));
    const double p = 1.0 + 1.0 / gen.q;
    const double value = sol.mean_at(0).mean * std::pow(std::abs(x0), p);
    const auto cmp = compare_policies(runs, value, c.s.control.tolerance);
    CsvTable t({"policy_index", "mean_total", "se_total", "rate", "state", "jump", "terminal", "terminal_violation"});
    Json rows = Json::array();
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const auto& r = runs[k];
        t.row({static_cast<double>(k), r.mean_total, r.se_total, r.mean_rate, r.mean_state, r.mean_jump, r.mean_terminal,
               r.terminal_violation});
        const auto& row = cmp.rows[k];
        rows.push_back({{"index", k}, {"policy", row.name}, {"mean", row.mean}, {"se", row.se}, {"diff_vs_feedback", row.diff_vs_reference},
                        {"paired_se", row.paired_se}, {"worse_than_feedback", row.worse_than_reference}});
    }
    c.out.write("control_costs.csv", t.str());
    bool optimal = true;
    for (std::size_t k = 1; k < cmp.rows.size(); ++k) optimal = optimal && cmp.rows[k].not_better_than_reference;
    c.out.verdict("result:value_function", cmp.value_match);
    c.out.verdict("result:feedback_optimality", optimal);
    return {{"n", n},
            {"inventory", x0},
            {"p", p},
            {"value", value},
            {"value_gap", cmp.value_gap},
            {"value_tolerance", cmp.value_tolerance},
            {"value_match", cmp.value_match},
            {"feedback_not_beaten", optimal},
            {"rate_rule_check", rate_rule_check(gen.q)},
            {"ranking", cmp.ranking},
            {"policies", rows},
            {"tag", "result:value_function"}};
}

inline int cmd_control(const Context& c) {
    const auto b = simulate_scenario(c);
    c.out.write_json("control.json", control_body(c, b));
    return kExitOk;
}

inline int cmd_report(const Context& c) {
    Json j;
    j["scenario"] = c.s.name;
    const auto rep = check_conditions(c.s.gen, c.s.gen.jumps);
    j["check"] = check_json(c.s, rep);
    const auto b = simulate_scenario(c);
    if (c.s.gen.family == Family::Control) {
        j["control"] = control_body(c, b);
    } else {
        const auto r = sweep_scenario(c, b, c.s.num.n_list);
        c.out.write("sweep.csv", sweep_csv(r.solutions));
        j["sweep"] = to_json(r.diagnostics);
        j["sweep"]["verdicts"] = sweep_verdicts(c, r);
        j["verify"] = verify_body(c, b, r);
    }
    c.out.write_json("report.json", j);
    return kExitOk;
}

}  // namespace detail

inline const std::vector<std::string>& commands() {
    static const std::vector<std::string> c{"check", "simulate", "solve", "sweep", "verify", "control", "report"};
    return c;
}

/// Runs one command and maps failures to exit codes; diagnostics go to `log`.
inline int run_command(const std::string& command, const std::filesystem::path& scenario_path,
                       const std::filesystem::path& out_dir, std::optional<std::uint64_t> seed_override, std::ostream& log) {
    const double started = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
    try {
        if (std::find(commands().begin(), commands().end(), command) == commands().end()) {
            throw SchemaError("unknown command '" + command + "'");
        }
        const Scenario s = load_scenario(scenario_path);
        const std::uint64_t seed = seed_override.value_or(s.num.seed);
        OutputSet out(out_dir);
        detail::Context c{s, out, seed, log};
        int code = kExitOk;
        if (command == "check") code = detail::cmd_check(c);
        else if (command == "simulate") code = detail::cmd_simulate(c);
        else if (command == "solve") code = detail::cmd_solve(c);
        else if (command == "sweep") code = detail::cmd_sweep(c);
        else if (command == "verify") code = detail::cmd_verify(c);
        else if (command == "control") code = detail::cmd_control(c);
        else code = detail::cmd_report(c);
        out.finish(s, command, seed, started);
        return code;
    } catch (const SchemaError& e) {
        log << "schema error: " << e.what() << "\n";
        return kExitSchema;
    } catch (const PreconditionError& e) {
        log << "precondition failed: " << e.what() << "\n";
        return kExitPrecondition;
    } catch (const DomainError& e) {
        log << "precondition failed: " << e.what() << "\n";
        return kExitPrecondition;
    } catch (const NumericError& e) {
        log << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const nlohmann::json::exception& e) {
        log << "schema error: " << e.what() << "\n";
        return kExitSchema;
    }
}

}  // namespace bsdelab
