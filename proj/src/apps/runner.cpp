#include "psmp/apps.hpp"

#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace psmp {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << fmt_double(r[i]);
        out << '\n';
    }
}

namespace {

// path mean of the control on nodes 0..N-1
std::vector<std::vector<double>> control_rows(const Control& u, const TimeGrid& g) {
    std::vector<std::vector<double>> rows;
    const int P = static_cast<int>(u.paths.size());
    for (int n = 0; n < g.n_steps; ++n) {
        std::vector<double> r{g.time(n)};
        for (int j = 0; j < u.dim(); ++j) {
            double s = 0.0;
            for (int p = 0; p < P; ++p) s += u.paths[static_cast<std::size_t>(p)].col(n)[j];
            r.push_back(s / P);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

double relative_l2(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

std::vector<std::vector<double>> read_csv(const std::string& path, std::vector<std::string>& header) {
    std::ifstream in(path);
    if (!in) throw ValidationError("emit_plotdata: missing artifact " + path);
    std::string line;
    std::getline(in, line);
    header.clear();
    std::stringstream hs(line);
    for (std::string h; std::getline(hs, h, ',');) header.push_back(h);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> r;
        std::stringstream ls(line);
        for (std::string v; std::getline(ls, v, ',');) r.push_back(std::stod(v));
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

FdReport scenario_grad_check(const ExperimentConfig& cfg) {
    Scenario sc = build_scenario(cfg);
    SmpSession s(sc.problem, sc.ens);
    return fd_gradient_check(s, sc.u0, sc.direction, cfg.rhos);
}

OracleSummary scenario_lq_oracle(const ExperimentConfig& cfg) {
    ExperimentConfig det = cfg;
    det.noise = false;
    det.n_paths = 1;
    Scenario sc = build_scenario(det);
    if (!sc.lq) throw ValidationError("lq-oracle: scenario '" + cfg.scenario + "' is not linear-quadratic");
    OracleSummary out;
    out.qp = lq_bruteforce_deterministic(*sc.lq);
    const auto& g = sc.problem.grid;
    SmpSession s(sc.problem, sc.ens);
    DescentOptions opts = cfg.optimizer;
    opts.tol = std::min(opts.tol, 1e-6);
    opts.max_iter = std::max(opts.max_iter, 2000);
    const auto gd = projected_gradient_descent(s, sc.u0, opts);
    const Vector Q = stack_control(out.qp.u, g);
    out.descent_gap = relative_l2(stack_control(gd.u, g), Q);
    out.descent_J = gd.last.J;
    const auto formula = lq_closed_form_control(*sc.lq, sc.problem, s.solve(out.qp.u));
    out.formula_gap = relative_l2(stack_control(formula, g), Q);
    return out;
}

RunSummary run_scenario(const ExperimentConfig& cfg) {
    Scenario sc = build_scenario(cfg);
    const auto& prob = sc.problem;
    const auto& g = prob.grid;
    fs::create_directories(cfg.out_dir);
    RunSummary sum;
    sum.out_dir = cfg.out_dir;
    auto path = [&](const std::string& f) {
        sum.files.push_back(f);
        return (fs::path(cfg.out_dir) / f).string();
    };

    const auto cert = certify_problem(prob, 64, cfg.seed);

    SmpSession session(prob, sc.ens);
    const auto fd = fd_gradient_check(session, sc.u0, sc.direction, cfg.rhos);
    std::vector<std::vector<double>> fd_rows;
    for (const auto& r : fd.rows) fd_rows.push_back({r.rho, r.fd, r.central, r.yhat0, r.pairing});
    write_csv(path("gradcheck.csv"), {"rho", "fd", "central", "yhat0", "pairing"}, fd_rows);

    const auto res = projected_gradient_descent(session, sc.u0, cfg.optimizer);
    std::vector<std::vector<double>> trace;
    bool monotone = true;
    for (std::size_t i = 0; i < res.trace.size(); ++i) {
        const auto& t = res.trace[i];
        trace.push_back({static_cast<double>(t.iter), t.J, t.residual, t.step});
        if (i > 0 && t.J > res.trace[i - 1].J) monotone = false;
    }
    write_csv(path("trace.csv"), {"iter", "J", "residual", "step"}, trace);
    std::vector<std::string> ch{"t"};
    for (int j = 0; j < prob.control_dim(); ++j) ch.push_back("u" + std::to_string(j + 1));
    write_csv(path("control.csv"), ch, control_rows(res.u, g));

    sum.J0 = res.trace.front().J;
    sum.J = res.last.J;
    sum.se = res.last.se;
    sum.initial_residual = res.initial_residual;
    sum.final_residual = res.final_residual;
    sum.converged = res.converged;
    sum.iterations = static_cast<int>(res.trace.size()) - 1;

    // identities along the final candidate
    const auto c = session.solve(res.u);
    const auto k = path_kernels(prob, c.lin, 0);
    StatePath Z(prob.forward.coeffs.dim, -g.n_delay, g.n_steps - 1), Q(prob.forward.coeffs.dim, 0, g.n_steps - 1);
    for (int n = Z.first; n <= Z.last(); ++n)
        for (int j = 0; j < Z.dim(); ++j) Z.col(n)[j] = counter_normal(cfg.seed, 1, n + g.n_delay, j);
    for (int n = 0; n < g.n_steps; ++n)
        for (int j = 0; j < Q.dim(); ++j) Q.col(n)[j] = counter_normal(cfg.seed, 2, n, j);
    const auto dual = duality_residual(k.b, Z, Q);
    const auto star = k.b.apply_star(Q);
    const auto tr = k.b.apply_star_transpose(Q);
    const double star_gap = (star.values - tr.values).norm() / std::max(star.values.norm(), 1e-300);

    std::vector<std::pair<std::string, double>> ident{
        {"duality_relative", dual.relative},
        {"adjoint_vs_transpose", star_gap},
        {"coercivity_violations", static_cast<double>(cert.coercivity.n_violations)},
        {"lipschitz_ratio", cert.lipschitz.max_ratio},
        {"kernel_M0", cert.b_bounds.M0},
        {"kernel_M", cert.b_bounds.M},
        {"trace_monotone", monotone ? 1.0 : 0.0},
        {"k_is_minus_one", (c.k.array() == -1.0).all() ? 1.0 : 0.0},
    };
    if (sc.lq && !cfg.noise) {
        const auto qp = lq_bruteforce_deterministic(*sc.lq);
        sum.qp_gap = relative_l2(stack_control(res.u, g), stack_control(qp.u, g));
        ident.emplace_back("qp_gap", *sum.qp_gap);
        ident.emplace_back("qp_value", qp.value);
    }
    if (cfg.sufficiency) {
        const auto sc_cert = sufficiency_certificate(session, res.u, cfg.perturbations, cfg.perturbation_scale, cfg.seed + 1);
        ident.emplace_back("sufficiency_h_convex", sc_cert.h_convex);
        ident.emplace_back("sufficiency_H_convex", sc_cert.H_convex);
        ident.emplace_back("sufficiency_k_terminal", sc_cert.k_terminal_nonpositive);
        ident.emplace_back("sufficiency_below", sc_cert.below);
        ident.emplace_back("sufficiency_min_gap", sc_cert.min_gap);
    }
    {
        std::ofstream out(path("identities.csv"));
        out << "name,value\n";
        for (const auto& [n, v] : ident) out << n << ',' << fmt_double(v) << '\n';
    }
    sum.files.push_back(fs::path(emit_plotdata(cfg.out_dir)).filename().string());

    json m;
    m["kind"] = "psmp-run-manifest";
    m["scenario"] = cfg.scenario;
    m["seed"] = cfg.seed;
    m["config_hash"] = config_hash(cfg);
    m["config"] = json::parse(config_to_json(cfg));
    m["files"] = sum.files;
    m["summary"] = {{"J0", sum.J0},
                    {"J", sum.J},
                    {"se", sum.se},
                    {"initial_residual", sum.initial_residual},
                    {"final_residual", sum.final_residual},
                    {"converged", sum.converged},
                    {"iterations", sum.iterations},
                    {"forward_method", "drift-implicit Euler"}};
    std::ofstream(fs::path(cfg.out_dir) / "manifest.json") << m.dump(2) << '\n';
    sum.files.push_back("manifest.json");
    return sum;
}

std::string emit_plotdata(const std::string& dir) {
    std::vector<std::string> h;
    std::ofstream out(fs::path(dir) / "plot_long.csv");
    out << "quantity,t,value,index\n";
    for (const auto& r : read_csv((fs::path(dir) / "trace.csv").string(), h)) {
        out << "J," << fmt_double(r[0]) << ',' << fmt_double(r[1]) << ',' << static_cast<int>(r[0]) << '\n';
        out << "residual," << fmt_double(r[0]) << ',' << fmt_double(r[2]) << ',' << static_cast<int>(r[0]) << '\n';
    }
    for (const auto& r : read_csv((fs::path(dir) / "control.csv").string(), h))
        for (std::size_t j = 1; j < r.size(); ++j) out << h[j] << ',' << fmt_double(r[0]) << ',' << fmt_double(r[j]) << ",0\n";
    const auto fd = read_csv((fs::path(dir) / "gradcheck.csv").string(), h);
    for (std::size_t i = 0; i < fd.size(); ++i)
        for (std::size_t j = 1; j < fd[i].size(); ++j)
            out << h[j] << ',' << fmt_double(fd[i][0]) << ',' << fmt_double(fd[i][j]) << ',' << i << '\n';
    return (fs::path(dir) / "plot_long.csv").string();
}

}  // namespace psmp
