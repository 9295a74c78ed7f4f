#pragma once

// Scenario documents, report serialization, binary caches and run manifests.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "bsde_solver.hpp"
#include "core.hpp"
#include "forward_sde.hpp"
#include "generator.hpp"
#include "regression.hpp"

namespace bsdelab {

using Json = nlohmann::json;

inline constexpr const char* kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Scenario

struct Numerics {
    std::size_t steps = 100;
    double refinement = 1.0;
    std::size_t paths = 10000;
    std::uint64_t seed = 1;
    BasisSpec basis;
    StepScheme scheme = StepScheme::Split;
    std::vector<double> n_list{1.0, 10.0, 100.0};
    double epsilon = 0.0;
    double gamma = 0.0;
    double ell = 1.1;
    double eta = 0.05;
};

struct VerifyOptions {
    bool psi = true;
    bool weighted_norm = true;
    bool continuity = false;
    bool blowup = false;
    std::vector<double> blowup_levels{10.0, 100.0, 1000.0};
    double blowup_t = -1.0;  // negative: T - 0.01
    double rho = -1.0;       // negative: rho(q, ell, eta)
};

struct ControlOptions {
    double inventory = 1.0;
    double n = 1000.0;
    std::vector<double> perturbations{0.5, 0.8, 1.25, 2.0};
    double tolerance = 0.03;
};

struct Scenario {
    std::string name;
    std::string experiment = "sweep";
    GeneratorSpec gen;
    SdeSpec sde;
    TerminalCondition tc;
    Numerics num;
    VerifyOptions verify;
    ControlOptions control;
    std::string source_text;

    TimeGrid grid() const { return TimeGrid(gen.horizon, num.steps, num.refinement); }
    SolverOptions solver_options() const { return {num.basis, num.scheme, true}; }
};

namespace detail {

inline void only_keys(const Json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw SchemaError(where + ": expected an object");
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) throw SchemaError(where + ": unknown key '" + it.key() + "'");
    }
}

inline double num_at(const Json& j, const std::string& where, const char* key, std::optional<double> fallback = std::nullopt) {
    if (!j.contains(key)) {
        if (fallback) return *fallback;
        throw SchemaError(where + ": missing '" + key + "'");
    }
    const auto& v = j.at(key);
    if (v.is_string() && (v == "inf" || v == "+inf")) return kInf;
    if (!v.is_number()) throw SchemaError(where + "." + key + ": expected a number");
    return v.get<double>();
}

inline std::vector<double> vec_at(const Json& j, const std::string& where, const char* key,
                                  std::optional<std::vector<double>> fallback = std::nullopt) {
    if (!j.contains(key)) {
        if (fallback) return *fallback;
        throw SchemaError(where + ": missing '" + key + "'");
    }
    const auto& v = j.at(key);
    if (!v.is_array()) throw SchemaError(where + "." + key + ": expected an array");
    std::vector<double> out;
    for (const auto& e : v) {
        if (e.is_string() && e == "inf") {
            out.push_back(kInf);
            continue;
        }
        if (!e.is_number()) throw SchemaError(where + "." + key + ": expected numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

inline std::string str_at(const Json& j, const std::string& where, const char* key, std::optional<std::string> fallback = std::nullopt) {
    if (!j.contains(key)) {
        if (fallback) return *fallback;
        throw SchemaError(where + ": missing '" + key + "'");
    }
    if (!j.at(key).is_string()) throw SchemaError(where + "." + key + ": expected a string");
    return j.at(key).get<std::string>();
}

inline bool bool_at(const Json& j, const std::string& where, const char* key, bool fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_boolean()) throw SchemaError(where + "." + key + ": expected a boolean");
    return j.at(key).get<bool>();
}

inline std::size_t count_at(const Json& j, const std::string& where, const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() <= 0) throw SchemaError(where + "." + key + ": expected a positive integer");
    return v.get<std::size_t>();
}

inline JumpMeasure parse_jumps(const Json& j, const std::string& where) {
    JumpMeasure jm;
    if (j.is_null()) return jm;
    only_keys(j, where, {"marks", "weights"});
    jm.marks = vec_at(j, where, "marks");
    jm.weights = vec_at(j, where, "weights");
    try {
        jm.validate();
    } catch (const Error& e) {
        throw SchemaError(where + ": " + e.what());
    }
    return jm;
}

inline GFunction parse_g(const Json& j, double q) {
    if (j.is_null()) return GFunction::standard(q);
    const std::string where = "generator.g";
    only_keys(j, where, {"kind", "q"});
    const auto kind = str_at(j, where, "kind");
    if (kind == "standard") return GFunction::standard(num_at(j, where, "q", q));
    if (kind == "quadratic") return GFunction::quadratic();
    if (kind == "exponential") return GFunction::exponential();
    throw SchemaError(where + ".kind: unsupported '" + kind + "'");
}

inline GeneratorSpec parse_generator(const Json& j, const JumpMeasure& jumps) {
    const std::string where = "generator";
    only_keys(j, where, {"family", "q", "horizon", "varsigma", "varpi", "alpha", "beta", "gamma", "a0", "k", "c0", "lz", "g"});
    const auto fam = str_at(j, where, "family");
    const double q = num_at(j, where, "q");
    const double T = num_at(j, where, "horizon", 1.0);
    if (!(q > 0.0) || !std::isfinite(q)) throw SchemaError(where + ".q: must be positive");
    if (!(T > 0.0) || !std::isfinite(T)) throw SchemaError(where + ".horizon: must be positive");
    GeneratorSpec g;
    if (fam == "toy") {
        g = make_toy(q, T);
        if (!jumps.weights.empty()) g.jumps = jumps;
    } else if (fam == "power") {
        g = make_power(q, num_at(j, where, "varsigma"), num_at(j, where, "varpi"), T);
        if (!jumps.weights.empty()) g.jumps = jumps;
    } else if (fam == "control") {
        const double a = num_at(j, where, "alpha"), b = num_at(j, where, "beta", kInf), c = num_at(j, where, "gamma", 0.0);
        if (!(a > 0.0) || !(b >= 0.0) || !(c >= 0.0)) throw SchemaError(where + ": alpha > 0, beta >= 0, gamma >= 0 required");
        g = make_control(q, constant_control(a, b, c), jumps, T);
    } else if (fam == "polynomial") {
        g = make_polynomial(q, num_at(j, where, "a0"), num_at(j, where, "k", 0.0), num_at(j, where, "c0", 0.0),
                            num_at(j, where, "lz", 0.0), T);
        g.jumps = jumps;
    } else {
        throw SchemaError(where + ".family: unsupported '" + fam + "'");
    }
    if (j.contains("g")) g.g = parse_g(j.at("g"), q);
    return g;
}

inline SdeSpec parse_sde(const Json& j, const JumpMeasure& jumps) {
    const std::string where = "sde";
    only_keys(j, where, {"x0", "drift_const", "drift_linear", "sigma", "jumps", "jump_const", "jump_linear"});
    AffineSdeParams p;
    p.x0 = vec_at(j, where, "x0");
    const std::size_t d = p.x0.size();
    if (d == 0) throw SchemaError(where + ".x0: must be nonempty");
    p.drift_const = vec_at(j, where, "drift_const", std::vector<double>(d, 0.0));
    p.drift_linear = vec_at(j, where, "drift_linear", std::vector<double>{});
    p.sigma = vec_at(j, where, "sigma", std::vector<double>(d * d, 0.0));
    p.jumps = jumps;
    if (j.contains("jump_const")) {
        if (!j.at("jump_const").is_array()) throw SchemaError(where + ".jump_const: expected an array of arrays");
        for (const auto& row : j.at("jump_const")) {
            Json wrap{{"r", row}};
            p.jump_const.push_back(vec_at(wrap, where + ".jump_const", "r"));
        }
    }
    p.jump_linear = vec_at(j, where, "jump_linear", std::vector<double>{});
    if (p.drift_const.size() != d || p.sigma.size() != d * d || (!p.drift_linear.empty() && p.drift_linear.size() != d * d)) {
        throw SchemaError(where + ": coefficient dimensions do not match x0");
    }
    if (p.jump_const.empty()) p.jump_const.assign(jumps.size(), std::vector<double>(d, 0.0));
    if (p.jump_const.size() != jumps.size()) throw SchemaError(where + ".jump_const: one row per mark required");
    for (const auto& r : p.jump_const) {
        if (r.size() != d) throw SchemaError(where + ".jump_const: rows must have length d");
    }
    if (!p.jump_linear.empty() && p.jump_linear.size() != jumps.size()) throw SchemaError(where + ".jump_linear: one entry per mark");
    try {
        auto s = make_affine_sde(p);
        s.validate();
        return s;
    } catch (const SchemaError&) {
        throw;
    } catch (const Error& e) {
        throw SchemaError(where + ": " + e.what());
    }
}

inline SingularSet parse_set(const Json& j) {
    const std::string where = "terminal.singular_set";
    only_keys(j, where, {"shape", "threshold", "side", "center", "radius", "nu"});
    const auto shape = str_at(j, where, "shape");
    const double nu = num_at(j, where, "nu", 0.1);
    if (!(nu > 0.0)) throw SchemaError(where + ".nu: must be positive");
    if (shape == "half_line") {
        const double side = num_at(j, where, "side", -1.0);
        if (side != -1.0 && side != 1.0) throw SchemaError(where + ".side: must be -1 or 1");
        return SingularSet::half_line(num_at(j, where, "threshold", 0.0), static_cast<int>(side), nu);
    }
    const auto c = vec_at(j, where, "center");
    const double r = num_at(j, where, "radius");
    if (!(r > 0.0)) throw SchemaError(where + ".radius: must be positive");
    if (shape == "ball") return SingularSet::ball(c, r, nu);
    if (shape == "complement_of_ball") return SingularSet::complement_of_ball(c, r, nu);
    throw SchemaError(where + ".shape: unsupported '" + shape + "'");
}

inline TerminalCondition parse_terminal(const Json& j, std::size_t d) {
    const std::string where = "terminal";
    only_keys(j, where, {"kind", "value", "const", "coef", "amplitude", "frequency", "singular_set"});
    const auto kind = str_at(j, where, "kind", std::string("constant"));
    StateFunction f;
    std::string desc;
    if (kind == "constant") {
        const double v = num_at(j, where, "value", 0.0);
        if (!(v >= 0.0) || !std::isfinite(v)) throw SchemaError(where + ".value: must be finite and nonnegative");
        f = [v](std::span<const double>) { return v; };
        desc = "constant " + format_double(v);
    } else if (kind == "affine") {
        const double c = num_at(j, where, "const", 0.0);
        const auto a = vec_at(j, where, "coef");
        if (a.size() != d) throw SchemaError(where + ".coef: length must equal the state dimension");
        f = [c, a](std::span<const double> x) {
            double v = c;
            for (std::size_t i = 0; i < a.size(); ++i) v += a[i] * x[i];
            return v;
        };
        desc = "affine";
    } else if (kind == "sine") {
        const double c = num_at(j, where, "const", 1.0), amp = num_at(j, where, "amplitude", 0.5);
        const double w = num_at(j, where, "frequency", 1.0);
        if (std::abs(amp) > c) throw SchemaError(where + ": |amplitude| must not exceed const");
        if (!std::isfinite(w)) throw SchemaError(where + ".frequency: must be finite");
        f = [c, amp, w](std::span<const double> x) { return c + amp * std::sin(w * x[0]); };
        desc = "sine";
    } else {
        throw SchemaError(where + ".kind: unsupported '" + kind + "'");
    }
    if (j.contains("singular_set") && !j.at("singular_set").is_null()) {
        auto s = parse_set(j.at("singular_set"));
        if (s.dim() != d) throw SchemaError(where + ".singular_set: dimension mismatch");
        return TerminalCondition::singular(std::move(s), std::move(f), desc + " + inf on singular set");
    }
    return TerminalCondition::regular(std::move(f), desc);
}

inline Numerics parse_numerics(const Json& j) {
    const std::string where = "numerics";
    Numerics n;
    if (j.is_null()) return n;
    only_keys(j, where, {"steps", "refinement", "paths", "seed", "basis", "scheme", "n_list", "epsilon", "gamma", "ell", "eta"});
    n.steps = count_at(j, where, "steps", n.steps);
    n.refinement = num_at(j, where, "refinement", 1.0);
    if (!(n.refinement >= 1.0)) throw SchemaError(where + ".refinement: must be at least 1");
    n.paths = count_at(j, where, "paths", n.paths);
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) throw SchemaError(where + ".seed: expected an unsigned integer");
        n.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("basis")) {
        const auto& b = j.at("basis");
        only_keys(b, where + ".basis", {"kind", "degree", "bins"});
        const auto kind = str_at(b, where + ".basis", "kind", std::string("polynomial"));
        if (kind == "polynomial") n.basis.kind = BasisKind::Polynomial;
        else if (kind == "partition") n.basis.kind = BasisKind::Partition;
        else if (kind == "local_linear") n.basis.kind = BasisKind::LocalLinear;
        else throw SchemaError(where + ".basis.kind: unsupported '" + kind + "'");
        n.basis.degree = count_at(b, where + ".basis", "degree", n.basis.degree);
        n.basis.bins = count_at(b, where + ".basis", "bins", n.basis.bins);
    }
    const auto scheme = str_at(j, where, "scheme", std::string("split"));
    if (scheme == "split") n.scheme = StepScheme::Split;
    else if (scheme == "implicit") n.scheme = StepScheme::Implicit;
    else throw SchemaError(where + ".scheme: unsupported '" + scheme + "'");
    n.n_list = vec_at(j, where, "n_list", n.n_list);
    if (n.n_list.empty()) throw SchemaError(where + ".n_list: must be nonempty");
    for (double v : n.n_list) {
        if (!(v > 0.0)) throw SchemaError(where + ".n_list: levels must be positive");
    }
    n.epsilon = num_at(j, where, "epsilon", 0.0);
    n.gamma = num_at(j, where, "gamma", 0.0);
    n.ell = num_at(j, where, "ell", n.ell);
    n.eta = num_at(j, where, "eta", n.eta);
    if (!(n.ell >= 1.0) || !(n.eta < 1.0)) throw SchemaError(where + ": ell >= 1 and eta < 1 required");
    return n;
}

}  // namespace detail

inline Scenario parse_scenario(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw SchemaError(std::string("scenario: invalid JSON: ") + e.what());
    }
    detail::only_keys(j, "scenario", {"name", "experiment", "generator", "sde", "terminal", "numerics", "verify", "control"});
    for (const char* k : {"generator", "sde", "terminal"}) {
        if (!j.contains(k)) throw SchemaError(std::string("scenario: missing '") + k + "'");
    }
    Scenario s;
    s.source_text = text;
    s.name = detail::str_at(j, "scenario", "name", std::string("scenario"));
    s.experiment = detail::str_at(j, "scenario", "experiment", std::string("sweep"));
    static const std::set<std::string> experiments{"check", "simulate", "solve", "sweep", "verify", "control", "report"};
    if (!experiments.count(s.experiment)) throw SchemaError("scenario.experiment: unsupported '" + s.experiment + "'");
    const Json& sj = j.at("sde");
    const JumpMeasure jm = detail::parse_jumps(sj.is_object() && sj.contains("jumps") ? sj.at("jumps") : Json(), "sde.jumps");
    s.gen = detail::parse_generator(j.at("generator"), jm);
    s.sde = detail::parse_sde(sj, jm);
    s.tc = detail::parse_terminal(j.at("terminal"), s.sde.dim);
    s.num = detail::parse_numerics(j.contains("numerics") ? j.at("numerics") : Json());
    s.gen.ell = s.num.ell;
    s.gen.eta = s.num.eta;
    if (j.contains("verify")) {
        const auto& v = j.at("verify");
        const std::string w = "verify";
        detail::only_keys(v, w, {"psi", "weighted_norm", "continuity", "blowup", "blowup_levels", "blowup_t", "rho"});
        s.verify.psi = detail::bool_at(v, w, "psi", s.verify.psi);
        s.verify.weighted_norm = detail::bool_at(v, w, "weighted_norm", s.verify.weighted_norm);
        s.verify.continuity = detail::bool_at(v, w, "continuity", s.verify.continuity);
        s.verify.blowup = detail::bool_at(v, w, "blowup", s.verify.blowup);
        s.verify.blowup_levels = detail::vec_at(v, w, "blowup_levels", s.verify.blowup_levels);
        s.verify.blowup_t = detail::num_at(v, w, "blowup_t", s.verify.blowup_t);
        s.verify.rho = detail::num_at(v, w, "rho", s.verify.rho);
    }
    if (j.contains("control")) {
        const auto& c = j.at("control");
        const std::string w = "control";
        detail::only_keys(c, w, {"inventory", "n", "perturbations", "tolerance"});
        s.control.inventory = detail::num_at(c, w, "inventory", s.control.inventory);
        s.control.n = detail::num_at(c, w, "n", s.control.n);
        s.control.perturbations = detail::vec_at(c, w, "perturbations", s.control.perturbations);
        s.control.tolerance = detail::num_at(c, w, "tolerance", s.control.tolerance);
    }
    return s;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw SchemaError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Scenario load_scenario(const std::filesystem::path& p) { return parse_scenario(read_file(p)); }

// ---------------------------------------------------------------------------
// Digests

inline std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw NumericError("sha256 failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

// ---------------------------------------------------------------------------
// Serialization

inline Json num_json(double v) {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

inline Json to_json(const ConditionReport& r) {
    Json out = Json::object();
    for (const auto& e : r.entries) {
        out[e.name] = {{"verdict", verdict_name(e.verdict)}, {"value", num_json(e.value)}, {"evidence", e.evidence},
                       {"tag", "condition:" + e.name}};
    }
    return out;
}

inline Json to_json(const SequenceDiagnostics& d) {
    return {{"monotonicity_violation_rate", d.monotonicity_violation_rate},
            {"sup_gap", d.sup_gap},
            {"sup_gap_pathwise", d.sup_gap_pathwise},
            {"bound_violation_rate", num_json(d.bound_violation_rate)},
            {"bound_checked", d.bound_checked},
            {"max_preclip_negative", d.max_preclip_negative},
            {"tag", "result:monotone_construction"}};
}

/// Plain CSV writer with round-trip double formatting.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
    void row(const std::vector<double>& values) {
        if (values.size() != header_.size()) throw SchemaError("csv: row width mismatch");
        rows_.push_back(values);
    }
    std::string str() const {
        std::ostringstream os;
        for (std::size_t i = 0; i < header_.size(); ++i) os << (i ? "," : "") << header_[i];
        os << "\n";
        for (const auto& r : rows_) {
            for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << format_double(r[i]);
            os << "\n";
        }
        return os.str();
    }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<double>> rows_;
};

// ---------------------------------------------------------------------------
// Binary caches: magic, u64 header fields, little-endian doubles

namespace detail {
template <class T>
void put(std::string& buf, const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T take(std::string_view& in) {
    if (in.size() < sizeof(T)) throw SchemaError("binary cache truncated");
    T v;
    std::memcpy(&v, in.data(), sizeof(T));
    in.remove_prefix(sizeof(T));
    return v;
}
}  // namespace detail

inline std::string encode_bundle(const PathBundle& b) {
    std::string buf = "BSDEPB01";
    const std::uint64_t hdr[] = {b.paths(), b.steps(), b.dim(), b.marks(), b.seed()};
    for (auto v : hdr) detail::put(buf, v);
    for (double t : b.grid().times()) detail::put(buf, t);
    for (double l : b.intensities()) detail::put(buf, l);
    for (double v : b.raw_states()) detail::put(buf, v);
    for (double v : b.raw_increments()) detail::put(buf, v);
    for (auto c : b.raw_counts()) detail::put(buf, c);
    for (std::size_t m = 0; m < b.paths(); ++m) {
        detail::put(buf, static_cast<std::uint64_t>(b.events(m).size()));
        for (const auto& e : b.events(m)) {
            detail::put(buf, static_cast<std::uint64_t>(e.step));
            detail::put(buf, static_cast<std::uint64_t>(e.mark));
            detail::put(buf, e.time);
        }
    }
    return buf;
}

inline PathBundle decode_bundle(std::string_view in) {
    if (in.substr(0, 8) != "BSDEPB01") throw SchemaError("not a path bundle cache");
    in.remove_prefix(8);
    const auto M = detail::take<std::uint64_t>(in), N = detail::take<std::uint64_t>(in), d = detail::take<std::uint64_t>(in),
               K = detail::take<std::uint64_t>(in), seed = detail::take<std::uint64_t>(in);
    std::vector<double> times(N + 1), lam(K);
    for (auto& t : times) t = detail::take<double>(in);
    for (auto& l : lam) l = detail::take<double>(in);
    PathBundle b(TimeGrid::from_times(times), M, d, K, seed);
    b.set_intensities(lam);
    for (auto& v : b.raw_states()) v = detail::take<double>(in);
    for (auto& v : b.raw_increments()) v = detail::take<double>(in);
    for (auto& c : b.raw_counts()) c = detail::take<std::uint8_t>(in);
    for (std::size_t m = 0; m < M; ++m) {
        const auto count = detail::take<std::uint64_t>(in);
        for (std::uint64_t e = 0; e < count; ++e) {
            JumpEvent ev{};
            ev.step = static_cast<decltype(ev.step)>(detail::take<std::uint64_t>(in));
            ev.mark = static_cast<decltype(ev.mark)>(detail::take<std::uint64_t>(in));
            ev.time = detail::take<double>(in);
            b.events(m).push_back(ev);
        }
    }
    if (!in.empty()) throw SchemaError("path bundle cache has trailing bytes");
    return b;
}

inline std::string encode_solution(const BsdeSolution& s) {
    std::string buf = "BSDESL01";
    const std::uint64_t hdr[] = {s.M, s.N(), s.d, s.K};
    for (auto v : hdr) detail::put(buf, v);
    detail::put(buf, s.n);
    for (double t : s.grid.times()) detail::put(buf, t);
    for (const auto* v : {&s.y, &s.y_se, &s.z, &s.u}) {
        detail::put(buf, static_cast<std::uint64_t>(v->size()));
        for (double x : *v) detail::put(buf, x);
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Output directory with manifest

class OutputSet {
public:
    explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

    const std::filesystem::path& dir() const noexcept { return dir_; }

    void write(const std::string& name, const std::string& content) {
        std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
        if (!out) throw SchemaError("cannot write " + (dir_ / name).string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        files_.push_back({name, sha256_hex(content), content.size()});
    }
    void write_json(const std::string& name, const Json& j) { write(name, j.dump(2) + "\n"); }

    void verdict(const std::string& key, Json v) { verdicts_[key] = std::move(v); }

    Json manifest(const Scenario& s, const std::string& command, std::uint64_t seed, double started, double finished) const {
        Json files = Json::array();
        for (const auto& f : files_) files.push_back({{"file", f.name}, {"sha256", f.digest}, {"bytes", f.bytes}});
        return {{"tool", "bsde-lab"},
                {"tool_version", kToolVersion},
                {"command", command},
                {"scenario", s.name},
                {"scenario_sha256", sha256_hex(s.source_text)},
                {"seed", seed},
                {"rng", StreamCell::kScheme},
                {"started_unix", started},
                {"finished_unix", finished},
                {"outputs", files},
                {"verdicts", verdicts_}};
    }

    void finish(const Scenario& s, const std::string& command, std::uint64_t seed, double started) {
        const double now = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
        const auto m = manifest(s, command, seed, started, now).dump(2) + "\n";
        std::ofstream out(dir_ / "manifest.json", std::ios::binary | std::ios::trunc);
        out << m;
    }

private:
    struct FileEntry {
        std::string name, digest;
        std::size_t bytes;
    };
    std::filesystem::path dir_;
    std::vector<FileEntry> files_;
    Json verdicts_ = Json::object();
};

}  // namespace bsdelab
