#pragma once

#include "psmp/backward_absee.hpp"
#include "psmp/path_calculus.hpp"

#include <memory>

namespace psmp {

/// Convex admissible set U in the control space with its exact projection.
struct ControlConstraint {
    enum class Kind { Whole, Box, Ball };
    Kind kind = Kind::Whole;
    Vector lo;
    Vector hi;
    Vector center;
    double radius = 0.0;

    [[nodiscard]] Vector project(const Vector& v) const;
    [[nodiscard]] bool contains(const Vector& v, double tol = 1e-12) const;

    static ControlConstraint whole() { return {}; }
    static ControlConstraint box(Vector lo, Vector hi);
    static ControlConstraint ball(Vector center, double radius);
};

struct ControlProblem {
    TimeGrid grid;
    QWienerConfig noise;
    GelfandTriple triple;
    ForwardSetup forward;  // (A, B), b, sigma, mu1, gamma
    CostSpec cost;         // f, h, mu2
    StatePath v0;          // control on [-K, 0)
    ControlConstraint U;
    RegressionBasis basis;
    bool project_running_terminal = false;  // regress zeta onto F_s instead of the pathwise value

    [[nodiscard]] int control_dim() const { return forward.coeffs.control_dim; }
};

/// Deterministic control with values(n) on nodes 0..N-1 and v0 before 0.
Control make_control(const ControlProblem& prob, const std::function<Vector(int node)>& values);
/// Direction on nodes 0..N-1, zero before 0.
Control make_direction(const ControlProblem& prob, const std::function<Vector(int node)>& values);
/// a + s * b (pathwise; broadcasts deterministic operands).
Control control_axpy(const Control& a, double s, const Control& b);
/// E sum_{n<N} <a_n, b_n> dt.
double control_inner(const Control& a, const Control& b, const TimeGrid& grid);
Control project_control(const Control& u, const ControlConstraint& U, const TimeGrid& grid);

struct CostValue {
    double J = 0.0;
    double se = 0.0;
};

/// Jacobians of b, sigma, f along a solved forward path, stored contiguously per (path, node).
struct Linearization {
    int n_paths = 0;
    int n_steps = 0;
    int dim = 0;
    int modes = 0;
    int control_dim = 0;
    int reads = 0;
    std::vector<double> bx, bv, sx, sv, fx, fv, fy, fz;

    [[nodiscard]] Eigen::Map<const Matrix> db_dx(int p, int n) const { return block(bx, p, n, dim, dim * reads); }
    [[nodiscard]] Eigen::Map<const Matrix> db_dv(int p, int n) const { return block(bv, p, n, dim, control_dim); }
    [[nodiscard]] Eigen::Map<const Matrix> dsigma_dx(int p, int n) const { return block(sx, p, n, dim * modes, dim * reads); }
    [[nodiscard]] Eigen::Map<const Matrix> dsigma_dv(int p, int n) const { return block(sv, p, n, dim * modes, control_dim); }
    [[nodiscard]] Eigen::Map<const Matrix> df_dx(int p, int n) const { return block(fx, p, n, dim * reads, 1); }
    [[nodiscard]] Eigen::Map<const Matrix> df_dv(int p, int n) const { return block(fv, p, n, control_dim, 1); }
    [[nodiscard]] double df_dy(int p, int n) const { return fy[static_cast<std::size_t>(p) * n_steps + n]; }
    [[nodiscard]] Eigen::Map<const Matrix> df_dz(int p, int n) const { return block(fz, p, n, modes, 1); }

private:
    [[nodiscard]] Eigen::Map<const Matrix> block(const std::vector<double>& v, int p, int n, int r, int c) const {
        const std::size_t sz = static_cast<std::size_t>(r) * c;
        return Eigen::Map<const Matrix>(v.data() + (static_cast<std::size_t>(p) * n_steps + n) * sz, r, c);
    }
};

/// State, cost, cost-adjoint and adjoint solved at one control on a fixed ensemble.
struct Candidate {
    Control u;
    std::shared_ptr<const ForwardSolution> fwd;
    std::shared_ptr<const ConditionalExpectation> E;
    BSDESolution bsde;
    Linearization lin;
    Matrix k;  // paths x (N+1)
    BackwardSolution adjoint;
};

struct GradientReport {
    Control G;              // per path on [0, T) (zero before 0)
    Control dH;             // d_v H(t_n), n < N
    double residual = 0.0;  // |G|_L2 or |u - Proj(u - G)|_L2
    double J = 0.0;
    double se = 0.0;
};

struct VariationalSolution {
    std::vector<StatePath> xhat;  // per path on [-K, T]
    BSDESolution yz;              // (yhat, zhat)
    double yhat0 = 0.0;
};

/// Keeps the ensemble and, for noise-only bases, one regression cache shared by all controls.
class SmpSession {
public:
    SmpSession(ControlProblem prob, NoiseEnsemble ens);

    [[nodiscard]] const ControlProblem& problem() const { return prob_; }
    [[nodiscard]] const NoiseEnsemble& ensemble() const { return ens_; }

    [[nodiscard]] CostValue cost(const Control& u);
    [[nodiscard]] Candidate solve(const Control& u);

private:
    std::shared_ptr<const ConditionalExpectation> expectation(const std::shared_ptr<const ForwardSolution>& fwd);

    ControlProblem prob_;
    NoiseEnsemble ens_;
    std::shared_ptr<const ConditionalExpectation> shared_;
};

/// Jacobians of the coefficients and cost along the candidate's forward solution.
Linearization linearize(const ControlProblem& prob, const ForwardSolution& fwd, const Control& u,
                        const BSDESolution& yz);

/// rho_b, rho_sigma, rho_f along one path as kernel representations on nodes 0..N-1 (nu0 = read counting measure).
struct PathKernels {
    KernelRepresentation b;
    KernelRepresentation sigma;
    KernelRepresentation f;
};
PathKernels path_kernels(const ControlProblem& prob, const Linearization& lin, int path);

/// Adjoint equation data: M = A^T, N_j = B_j^T, g = rho*_b(p) + rho*_sigma(Lambda q) - rho*_f(k),
/// running terminal zeta = -k(T) dh(T) with dF given by mu2 at T + s.
ABSEEProblem assemble_adjoint(const ControlProblem& prob, const Candidate& c, const ConditionalExpectation& E,
                              const NoiseEnsemble& ens);

/// <b, p> + <sigma, q>_{L2_0} - f k.
double hamiltonian(const ControlProblem& prob, int node, const Matrix& X, double y, const Vector& z, const Vector& v,
                   const Vector& p, const Matrix& q, double k);
/// d_v H at the same point.
Vector hamiltonian_dv(const ControlProblem& prob, int node, const Matrix& X, double y, const Vector& z,
                      const Vector& v, const Vector& p, const Matrix& q, double k);

/// G(t_m) = E_m[sum_i w_i d_vH(t_m - s_i) 1[t_m - s_i <= T - dt]].
GradientReport smp_gradient(const ControlProblem& prob, const Candidate& c);

VariationalSolution solve_variational(const ControlProblem& prob, const Candidate& c, const Control& direction,
                                      const NoiseEnsemble& ens);

struct FdRow {
    double rho = 0.0;
    double fd = 0.0;       // [J(u + rho d) - J(u)] / rho
    double central = 0.0;  // [J(u + rho d) - J(u - rho d)] / (2 rho)
    double yhat0 = 0.0;
    double pairing = 0.0;  // E int <G, d> dt
};

struct FdReport {
    std::vector<FdRow> rows;
    double J = 0.0;
    double se = 0.0;
};

FdReport fd_gradient_check(SmpSession& s, const Control& u, const Control& direction, const std::vector<double>& rhos);

struct DescentOptions {
    int max_iter = 200;
    double tol = 1e-3;           // relative to the initial residual
    double abs_tol = 1e-10;      // stops at an already stationary start
    double initial_step = 1.0;
    double armijo = 1e-4;
    int line_search_budget = 30;
    double noise_slack = 0.0;    // multiples of the MC standard error tolerated in the sufficient-decrease test
};

struct TraceRow {
    int iter = 0;
    double J = 0.0;
    double residual = 0.0;
    double step = 0.0;
};

struct DescentResult {
    Control u;
    std::vector<TraceRow> trace;
    double initial_residual = 0.0;
    double final_residual = 0.0;
    bool converged = false;
    GradientReport last;
};

DescentResult projected_gradient_descent(SmpSession& s, const Control& u0, const DescentOptions& opts);

struct SufficiencyCertificate {
    bool h_convex = false;
    bool H_convex = false;
    bool k_terminal_nonpositive = false;
    int perturbations = 0;
    int below = 0;          // perturbations with J(u) < J(ubar) - 3 se
    double J = 0.0;
    double se = 0.0;
    double min_gap = 0.0;   // min over perturbations of J(u) - J(ubar)
    [[nodiscard]] bool passed() const { return h_convex && H_convex && k_terminal_nonpositive && below == 0; }
};

SufficiencyCertificate sufficiency_certificate(SmpSession& s, const Control& ubar, int n_perturb, double scale,
                                               std::uint64_t seed);

/// Sampled certificates of the standing assumptions.
struct ProblemCertificate {
    CoercivityReport coercivity;
    LipschitzReport lipschitz;
    BoundConstants b_bounds;
    bool finite_at_zero = false;
    [[nodiscard]] bool clean() const { return coercivity.clean() && finite_at_zero; }
};

ProblemCertificate certify_problem(const ControlProblem& prob, int samples, std::uint64_t seed);

}  // namespace psmp
