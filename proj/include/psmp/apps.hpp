#pragma once

#include "psmp/lq_module.hpp"

#include <optional>
#include <string>

namespace psmp {

struct ExperimentConfig {
    std::string scenario = "lq_basic";

    double T = 1.0;
    double K = 0.25;
    int n_steps = 32;
    int dim = 2;
    int modes = 1;

    std::vector<std::pair<double, double>> mu1;  // (atom, weight), atoms in [-K, 0]
    std::vector<std::pair<double, double>> mu2;

    bool noise = true;
    double noise_scale = 1.0;
    double control_penalty = 1.0;
    double state_weight = 1.0;
    double terminal_weight = 1.0;
    double delay_drift = 1.0;
    double delay_diffusion = 1.0;
    std::string constraint = "whole";  // whole | box | ball
    double box_lo = -1.0;
    double box_hi = 1.0;
    double ball_radius = 1.0;

    int n_paths = 16384;
    std::uint64_t seed = 20240611;

    RegressionBasis basis;
    DescentOptions optimizer;
    std::vector<double> rhos{1e-1, 1e-2, 1e-3};
    bool sufficiency = false;
    int perturbations = 100;
    double perturbation_scale = 0.3;

    std::string out_dir = "runs";
};

/// Strict JSON config: unknown keys and invalid values throw ValidationError naming the key path.
/// A run manifest is accepted too (its resolved "config" block is used).
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// Fully resolved config as canonical JSON text (sorted keys, every field present).
std::string config_to_json(const ExperimentConfig& cfg);
/// FNV-1a 64 of the canonical JSON, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

struct Scenario {
    std::string name;
    ControlProblem problem;
    std::optional<LQSpec> lq;
    NoiseEnsemble ens;
    Control u0;
    Control direction;  // used by the gradient check
};

Scenario build_scenario(const ExperimentConfig& cfg);

struct RunSummary {
    std::string out_dir;
    double J0 = 0.0;
    double J = 0.0;
    double se = 0.0;
    double initial_residual = 0.0;
    double final_residual = 0.0;
    bool converged = false;
    int iterations = 0;
    std::optional<double> qp_gap;  // relative L2 gap to the brute-force QP (deterministic LQ scenarios)
    std::vector<std::string> files;
};

/// Gradient check, descent, identity checks; writes CSVs, plot data and manifest.json into cfg.out_dir.
RunSummary run_scenario(const ExperimentConfig& cfg);

/// Gradient-check table at the scenario's initial control.
FdReport scenario_grad_check(const ExperimentConfig& cfg);

struct OracleSummary {
    QpResult qp;
    double descent_gap = 0.0;  // ||u_gd - u_qp|| / ||u_qp||
    double formula_gap = 0.0;  // ||u_formula - u_qp|| / ||u_qp||
    double descent_J = 0.0;
};
/// Brute-force QP on the scenario with the noise removed, compared against descent and the closed form.
OracleSummary scenario_lq_oracle(const ExperimentConfig& cfg);

/// Long-format plot data from trace.csv, control.csv and gradcheck.csv in `dir`; returns the written path.
std::string emit_plotdata(const std::string& dir);

struct SuiteRow {
    std::string name;
    int instances = 0;
    double worst = 0.0;
    double tol = 0.0;
    bool pass = false;
};

/// Randomized duality, change-of-variables, adjoint-vs-transpose and energy-identity suites.
std::vector<SuiteRow> run_identity_suites(std::uint64_t seed);

void write_csv(const std::string& path, const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows);
std::string fmt_double(double v);

}  // namespace psmp
