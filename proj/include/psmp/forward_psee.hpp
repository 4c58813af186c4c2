#pragma once

#include "psmp/delay_measures.hpp"

#include <string>

namespace psmp {

/// Drift b and diffusion sigma of the state equation.
///
/// Both read the state at fixed grid offsets `reads` (each in [-n_delay, 0]); callbacks get
/// X = [x(t_n + o_1) ... x(t_n + o_R)] (d x R) and the delayed control v = u_mu1(t_n).
/// Jacobians stack the per-read blocks horizontally; the sigma Jacobian flattens the d x m
/// output column-major, so dsigma_dx is (d*m) x (d*R) and dsigma_dv is (d*m) x c.
struct CoefficientSet {
    int dim = 1;
    int modes = 1;
    int control_dim = 1;
    std::vector<int> reads{0};

    std::function<Vector(int node, const Matrix& X, const Vector& v)> b;
    std::function<Matrix(int node, const Matrix& X, const Vector& v)> sigma;  // empty => 0
    std::function<Matrix(int node, const Matrix& X, const Vector& v)> db_dx;
    std::function<Matrix(int node, const Matrix& X, const Vector& v)> db_dv;
    std::function<Matrix(int node, const Matrix& X, const Vector& v)> dsigma_dx;
    std::function<Matrix(int node, const Matrix& X, const Vector& v)> dsigma_dv;

    double L1 = 0.0;  // declared Lipschitz constant (sup-norm in the path)

    [[nodiscard]] int n_reads() const { return static_cast<int>(reads.size()); }
    [[nodiscard]] int reach() const;
};

struct LipschitzReport {
    int samples = 0;
    double max_ratio = 0.0;  // (|b-b'|^2 + |sigma-sigma'|^2) / sup|x-x'|^2
    bool certified = false;  // max_ratio <= L1
};

LipschitzReport certify_lipschitz(const CoefficientSet& coeffs, const TimeGrid& grid, int samples, std::uint64_t seed);

/// Control per path on [-K, T] (node N unused); a single path is broadcast to all paths.
struct Control {
    std::vector<StatePath> paths;

    [[nodiscard]] const StatePath& path(int p) const { return paths.size() == 1 ? paths[0] : paths[static_cast<std::size_t>(p)]; }
    [[nodiscard]] bool deterministic() const { return paths.size() == 1; }
    [[nodiscard]] int dim() const { return paths.empty() ? 0 : paths.front().dim(); }

    static Control constant(const TimeGrid& grid, const Vector& value);
    static Control zero(const TimeGrid& grid, int control_dim) { return constant(grid, Vector::Zero(control_dim)); }
};

/// u_mu1(t_n) = sum_i w_i u(t_n + s_i).
Vector delayed_control(const StatePath& u, const FiniteMeasure& mu1, int node);

/// Everything the forward solver needs besides the noise.
struct ForwardSetup {
    OperatorPair ops;
    CoefficientSet coeffs;
    FiniteMeasure mu1;
    StatePath gamma;  // on [-K, 0]
};

struct ForwardSolution {
    TimeGrid grid;
    std::vector<StatePath> x;  // per path on [-K, T]
    std::string method = "drift-implicit Euler";

    [[nodiscard]] int n_paths() const { return static_cast<int>(x.size()); }
};

/// Gather X = [x(t_n + o_r)]_r.
void gather_reads(const StatePath& x, const std::vector<int>& reads, int node, Matrix& X);

/// (I - dt A(t_{n+1})) x_{n+1} = x_n + dt b_n + (B_n x_n + sigma_n) sqrt(lambda) dW_n.
ForwardSolution solve_forward(const ForwardSetup& setup, const Control& u, const QWienerConfig& noise,
                              const NoiseEnsemble& ens, const TimeGrid& grid);

/// Discrete X-norm: (mean_paths [max_n |x_n|_H^2 + sum_n |x_n|_V^2 dt])^{1/2} over [0, T].
double x_norm(const std::vector<StatePath>& a, const std::vector<StatePath>& b, const GelfandTriple& triple,
              const TimeGrid& grid);

struct PicardResult {
    std::vector<ForwardSolution> iterates;
    std::vector<double> increments;  // ||x^{k+1} - x^k||_X
    std::vector<double> ratios;      // r_k = inc_k / inc_{k-1}, k >= 1
};

/// x^{k+1} solves the linear equation with the path arguments of b, sigma frozen at x^k.
PicardResult picard_iterate(const ForwardSetup& setup, const Control& u, const QWienerConfig& noise,
                            const NoiseEnsemble& ens, const TimeGrid& grid, const GelfandTriple& triple, int n_iter);

struct AprioriReport {
    double lhs = 0.0;   // E sup|x - x'|^2 + E int |x - x'|_V^2
    double rhs = 0.0;   // E sup|gamma - gamma'|^2 + E int (|b - b'|^2 + |sigma - sigma'|^2) along x'
    double ratio = 0.0; // lhs / rhs (0 when both vanish)
};

/// Solves both systems on the same ensemble and compares them. Operators (A, B) must agree.
AprioriReport apriori_diagnostic(const ForwardSetup& a, const Control& ua, const ForwardSetup& b, const Control& ub,
                                 const QWienerConfig& noise, const NoiseEnsemble& ens, const TimeGrid& grid,
                                 const GelfandTriple& triple);

}  // namespace psmp
