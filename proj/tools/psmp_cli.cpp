// psmp: run scenarios, identity suites, gradient checks and the LQ oracle.
// Exit codes: 0 success, 1 validation failure, 2 numerical failure.
#include "psmp/apps.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>

using namespace psmp;

namespace {

int cmd_run(const std::string& config, const std::string& out) {
    auto cfg = load_config(config);
    if (!out.empty()) cfg.out_dir = out;
    const auto s = run_scenario(cfg);
    std::printf("scenario %s  hash %s\n", cfg.scenario.c_str(), config_hash(cfg).c_str());
    std::printf("J: %.10g -> %.10g (se %.3g)\n", s.J0, s.J, s.se);
    std::printf("residual: %.4g -> %.4g  iterations %d  %s\n", s.initial_residual, s.final_residual, s.iterations,
                s.converged ? "converged" : "NOT converged");
    if (s.qp_gap) std::printf("gap to QP oracle: %.3g\n", *s.qp_gap);
    std::printf("artifacts in %s\n", s.out_dir.c_str());
    return s.converged ? 0 : 2;
}

int cmd_identities(std::uint64_t seed) {
    bool ok = true;
    for (const auto& r : run_identity_suites(seed)) {
        std::printf("%-24s n=%-4d worst=%-12.4g tol=%-8.3g %s\n", r.name.c_str(), r.instances, r.worst, r.tol,
                    r.pass ? "PASS" : "FAIL");
        ok = ok && r.pass;
    }
    return ok ? 0 : 2;
}

int cmd_grad_check(const std::string& config) {
    const auto cfg = load_config(config);
    const auto rep = scenario_grad_check(cfg);
    std::printf("J = %.10g (se %.3g)\n", rep.J, rep.se);
    std::printf("%10s %16s %16s %16s %16s\n", "rho", "fd", "central", "yhat0", "pairing");
    for (const auto& r : rep.rows)
        std::printf("%10.3g %16.10g %16.10g %16.10g %16.10g\n", r.rho, r.fd, r.central, r.yhat0, r.pairing);
    return 0;
}

int cmd_lq_oracle(const std::string& config) {
    const auto cfg = load_config(config);
    const auto o = scenario_lq_oracle(cfg);
    std::printf("QP value %.12g  min Hessian eigenvalue %.3g\n", o.qp.value, o.qp.min_eig);
    std::printf("descent J %.12g  gap %.3g\n", o.descent_J, o.descent_gap);
    std::printf("closed-form gap %.3g\n", o.formula_gap);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Path-dependent stochastic maximum principle toolkit"};
    app.require_subcommand(1);

    std::string config, out, dir;
    std::uint64_t seed = 20240611;
    auto* run = app.add_subcommand("run", "Run a scenario (config or manifest) and write CSV artifacts");
    run->add_option("config", config, "JSON config or run manifest")->required();
    run->add_option("-o,--out", out, "Output directory (overrides output.dir)");
    auto* ids = app.add_subcommand("check-identities", "Duality, change-of-variables, adjoint and energy suites");
    ids->add_option("--seed", seed, "Seed of the randomized instances");
    auto* gc = app.add_subcommand("grad-check", "Finite differences vs variational derivative vs gradient pairing");
    gc->add_option("config", config, "JSON config")->required();
    auto* lq = app.add_subcommand("lq-oracle", "Brute-force QP on the noise-free LQ scenario");
    lq->add_option("config", config, "JSON config")->required();
    auto* pd = app.add_subcommand("plotdata", "Rebuild plot_long.csv of a finished run");
    pd->add_option("dir", dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*run) return cmd_run(config, out);
        if (*ids) return cmd_identities(seed);
        if (*gc) return cmd_grad_check(config);
        if (*lq) return cmd_lq_oracle(config);
        if (*pd) {
            std::printf("%s\n", emit_plotdata(dir).c_str());
            return 0;
        }
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
