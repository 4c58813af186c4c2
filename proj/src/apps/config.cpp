#include "psmp/apps.hpp"

#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace psmp {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw ValidationError("config: " + path + ": " + what);
}

void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
    if (!obj.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key)) fail(path.empty() ? key : path + "." + key, "unknown key");
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

template <class T>
void read(const json& obj, const std::string& path, const std::string& key, T& dst) {
    if (!obj.contains(key)) return;
    try {
        dst = obj.at(key).get<T>();
    } catch (const json::exception&) {
        fail(join(path, key), "wrong type");
    }
}

void read_count(const json& obj, const std::string& path, const std::string& key, int& dst, int min) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number_integer()) fail(join(path, key), "expected an integer");
    dst = v.get<int>();
    if (dst < min) fail(join(path, key), "must be >= " + std::to_string(min));
}

void read_positive(const json& obj, const std::string& path, const std::string& key, double& dst, bool allow_zero = false) {
    read(obj, path, key, dst);
    if (!(dst > 0.0 || (allow_zero && dst == 0.0))) fail(join(path, key), allow_zero ? "must be >= 0" : "must be positive");
}

std::vector<std::pair<double, double>> read_measure(const json& v, const std::string& path, double K) {
    if (!v.is_array() || v.empty()) fail(path, "expected a non-empty list of [atom, weight] pairs");
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string at = path + "[" + std::to_string(i) + "]";
        const auto& e = v[i];
        if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) fail(at, "expected [atom, weight]");
        const double s = e[0].get<double>(), w = e[1].get<double>();
        if (w < 0.0) fail(at, "negative weight violates the FiniteMeasure invariant (weights >= 0)");
        if (s > 1e-12 || s < -K - 1e-12) fail(at, "atom outside [-K, 0]");
        out.emplace_back(s, w);
    }
    return out;
}

void scenario_defaults(ExperimentConfig& c) {
    if (c.scenario == "lq_basic") {
        c.dim = 2;
        c.modes = 1;
        c.mu1 = {{0.0, 1.0}};
        c.mu2 = {{0.0, 0.7}, {-0.25, 0.3}};
        c.n_paths = 16384;
        c.delay_diffusion = 0.0;
        c.basis.kind = RegressionBasis::Kind::Chaos;
    } else if (c.scenario == "heat_spde") {
        c.dim = 7;
        c.modes = 1;
        c.mu1 = {{-0.25, 0.5}, {0.0, 0.5}};
        c.mu2 = {{0.0, 1.0}};
        c.n_paths = 4096;
        c.basis.kind = RegressionBasis::Kind::Chaos;
    } else if (c.scenario == "nonlinear_delay") {
        c.dim = 1;
        c.modes = 1;
        c.mu1 = {{0.0, 1.0}};
        c.mu2 = {{0.0, 1.0}};
        c.n_paths = 16384;
        c.basis.kind = RegressionBasis::Kind::Polynomial;
        c.basis.degree = 2;
        c.basis.include_delayed = true;
        c.basis.ridge = 1e-8;
    } else {
        fail("scenario", "unknown scenario '" + c.scenario + "' (expected lq_basic, heat_spde or nonlinear_delay)");
    }
    c.out_dir = "runs/" + c.scenario;
}

ExperimentConfig from_json(const json& root) {
    if (root.is_object() && root.value("kind", "") == "psmp-run-manifest") {
        if (!root.contains("config")) fail("config", "manifest has no config block");
        return from_json(root.at("config"));
    }
    check_keys(root, "", {"scenario", "grid", "dims", "measures", "coefficients", "constraint", "mc", "regression",
                          "optimizer", "checks", "output"});
    ExperimentConfig c;
    read(root, "", "scenario", c.scenario);
    scenario_defaults(c);

    if (root.contains("grid")) {
        const auto& g = root["grid"];
        check_keys(g, "grid", {"T", "K", "n_steps"});
        read_positive(g, "grid", "T", c.T);
        read_positive(g, "grid", "K", c.K, true);
        read_count(g, "grid", "n_steps", c.n_steps, 1);
    }
    try {
        build_grid(c.T, c.K, c.n_steps);
    } catch (const ValidationError& e) {
        fail("grid.K", e.what());
    }
    // default measure atoms given for K = 0.25 follow K
    for (auto* mu : {&c.mu1, &c.mu2})
        for (auto& a : *mu)
            if (a.first != 0.0) a.first = -c.K;

    if (root.contains("dims")) {
        const auto& d = root["dims"];
        check_keys(d, "dims", {"d", "m"});
        read_count(d, "dims", "d", c.dim, 1);
        read_count(d, "dims", "m", c.modes, 1);
    }
    if (c.scenario == "lq_basic" && (c.dim != 2 || c.modes != 1)) fail("dims", "lq_basic is fixed at d = 2, m = 1");
    if (c.scenario == "nonlinear_delay" && (c.dim != 1 || c.modes != 1)) fail("dims", "nonlinear_delay is scalar (d = 1, m = 1)");
    if (c.dim > 64) fail("dims.d", "at most 64");

    if (root.contains("measures")) {
        const auto& m = root["measures"];
        check_keys(m, "measures", {"mu1", "mu2"});
        if (m.contains("mu1")) c.mu1 = read_measure(m["mu1"], "measures.mu1", c.K);
        if (m.contains("mu2")) c.mu2 = read_measure(m["mu2"], "measures.mu2", c.K);
    }

    if (root.contains("coefficients")) {
        const auto& k = root["coefficients"];
        const std::string p = "coefficients";
        check_keys(k, p, {"noise", "noise_scale", "control_penalty", "state_weight", "terminal_weight", "delay_drift",
                          "delay_diffusion"});
        read(k, p, "noise", c.noise);
        read_positive(k, p, "noise_scale", c.noise_scale, true);
        read_positive(k, p, "control_penalty", c.control_penalty);
        read_positive(k, p, "state_weight", c.state_weight, true);
        read_positive(k, p, "terminal_weight", c.terminal_weight, true);
        read(k, p, "delay_drift", c.delay_drift);
        read(k, p, "delay_diffusion", c.delay_diffusion);
    }

    if (root.contains("constraint")) {
        const auto& k = root["constraint"];
        check_keys(k, "constraint", {"kind", "lo", "hi", "radius"});
        read(k, "constraint", "kind", c.constraint);
        read(k, "constraint", "lo", c.box_lo);
        read(k, "constraint", "hi", c.box_hi);
        read(k, "constraint", "radius", c.ball_radius);
        if (c.constraint != "whole" && c.constraint != "box" && c.constraint != "ball")
            fail("constraint.kind", "expected whole, box or ball");
        if (c.constraint == "box" && !(c.box_lo <= c.box_hi)) fail("constraint.lo", "must be <= constraint.hi");
        if (c.constraint == "ball" && !(c.ball_radius > 0.0)) fail("constraint.radius", "must be positive");
    }

    if (root.contains("mc")) {
        const auto& k = root["mc"];
        check_keys(k, "mc", {"n_paths", "seed"});
        read_count(k, "mc", "n_paths", c.n_paths, 1);
        if (k.contains("seed")) {
            if (!k["seed"].is_number_unsigned()) fail("mc.seed", "expected a nonnegative integer");
            c.seed = k["seed"].get<std::uint64_t>();
        }
    }

    if (root.contains("regression")) {
        const auto& k = root["regression"];
        const std::string p = "regression";
        check_keys(k, p, {"basis", "degree", "include_delayed", "ridge", "control_variate"});
        if (k.contains("basis")) {
            std::string b;
            read(k, p, "basis", b);
            if (b == "chaos")
                c.basis.kind = RegressionBasis::Kind::Chaos;
            else if (b == "polynomial")
                c.basis.kind = RegressionBasis::Kind::Polynomial;
            else
                fail("regression.basis", "expected chaos or polynomial");
        }
        read_count(k, p, "degree", c.basis.degree, 1);
        read(k, p, "include_delayed", c.basis.include_delayed);
        read_positive(k, p, "ridge", c.basis.ridge, true);
        read(k, p, "control_variate", c.basis.control_variate);
    }

    if (root.contains("optimizer")) {
        const auto& k = root["optimizer"];
        const std::string p = "optimizer";
        check_keys(k, p, {"max_iter", "tol", "abs_tol", "initial_step", "armijo", "line_search_budget", "noise_slack"});
        read_count(k, p, "max_iter", c.optimizer.max_iter, 0);
        read_positive(k, p, "tol", c.optimizer.tol, true);
        read_positive(k, p, "abs_tol", c.optimizer.abs_tol, true);
        read_positive(k, p, "initial_step", c.optimizer.initial_step);
        read_positive(k, p, "armijo", c.optimizer.armijo, true);
        read_count(k, p, "line_search_budget", c.optimizer.line_search_budget, 1);
        read_positive(k, p, "noise_slack", c.optimizer.noise_slack, true);
    }

    if (root.contains("checks")) {
        const auto& k = root["checks"];
        const std::string p = "checks";
        check_keys(k, p, {"rhos", "sufficiency", "perturbations", "perturbation_scale"});
        read(k, p, "rhos", c.rhos);
        for (double r : c.rhos)
            if (!(r > 0.0)) fail("checks.rhos", "entries must be positive");
        read(k, p, "sufficiency", c.sufficiency);
        read_count(k, p, "perturbations", c.perturbations, 0);
        read_positive(k, p, "perturbation_scale", c.perturbation_scale);
    }

    if (root.contains("output")) {
        const auto& k = root["output"];
        check_keys(k, "output", {"dir"});
        read(k, "output", "dir", c.out_dir);
    }
    if (!c.noise) c.n_paths = 1;
    return c;
}

json measure_json(const std::vector<std::pair<double, double>>& mu) {
    json a = json::array();
    for (const auto& [s, w] : mu) a.push_back({s, w});
    return a;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config: malformed JSON: ") + e.what());
    }
    return from_json(root);
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
    json j;
    j["scenario"] = c.scenario;
    j["grid"] = {{"T", c.T}, {"K", c.K}, {"n_steps", c.n_steps}};
    j["dims"] = {{"d", c.dim}, {"m", c.modes}};
    j["measures"] = {{"mu1", measure_json(c.mu1)}, {"mu2", measure_json(c.mu2)}};
    j["coefficients"] = {{"noise", c.noise},
                         {"noise_scale", c.noise_scale},
                         {"control_penalty", c.control_penalty},
                         {"state_weight", c.state_weight},
                         {"terminal_weight", c.terminal_weight},
                         {"delay_drift", c.delay_drift},
                         {"delay_diffusion", c.delay_diffusion}};
    j["constraint"] = {{"kind", c.constraint}, {"lo", c.box_lo}, {"hi", c.box_hi}, {"radius", c.ball_radius}};
    j["mc"] = {{"n_paths", c.n_paths}, {"seed", c.seed}};
    j["regression"] = {{"basis", c.basis.kind == RegressionBasis::Kind::Chaos ? "chaos" : "polynomial"},
                       {"degree", c.basis.degree},
                       {"include_delayed", c.basis.include_delayed},
                       {"ridge", c.basis.ridge},
                       {"control_variate", c.basis.control_variate}};
    j["optimizer"] = {{"max_iter", c.optimizer.max_iter},
                      {"tol", c.optimizer.tol},
                      {"abs_tol", c.optimizer.abs_tol},
                      {"initial_step", c.optimizer.initial_step},
                      {"armijo", c.optimizer.armijo},
                      {"line_search_budget", c.optimizer.line_search_budget},
                      {"noise_slack", c.optimizer.noise_slack}};
    j["checks"] = {{"rhos", c.rhos},
                   {"sufficiency", c.sufficiency},
                   {"perturbations", c.perturbations},
                   {"perturbation_scale", c.perturbation_scale}};
    j["output"] = {{"dir", c.out_dir}};
    return j.dump(2);
}

// the output directory does not change results and is left out
std::string config_hash(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.out_dir.clear();
    const std::string s = config_to_json(c);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace psmp
