#pragma once

#include "psmp/forward_psee.hpp"

#include <map>
#include <memory>
#include <optional>

namespace psmp {

/// Least-squares fit of `samples` (rows = paths) on [1, features], ridge on the non-intercept part.
/// Constant feature columns are dropped. Throws NumericalError on a rank-deficient design without ridge.
Matrix condexp_regress(const Matrix& samples, const Matrix& features, double ridge);

struct RegressionBasis {
    enum class Kind { Polynomial, Chaos };
    Kind kind = Kind::Polynomial;
    int degree = 1;                // total degree of state monomials
    bool include_delayed = false;  // add x(t - K) to the polynomial variables
    double ridge = 0.0;
    bool control_variate = false;  // q from (Y - E_n[Y]) dW

    [[nodiscard]] bool depends_on_state() const { return kind == Kind::Polynomial; }
};

struct RegressionStats {
    int node = 0;
    int n_features = 0;  // retained columns including the intercept
    int rank = 0;
};

/// E_n[.] realized by per-node regression; factorizations are cached and shared across targets.
/// Noise-free ensembles give the identity map.
class ConditionalExpectation {
public:
    ConditionalExpectation(RegressionBasis basis, const TimeGrid& grid, const QWienerConfig& noise,
                           const NoiseEnsemble& ens, const ForwardSolution* fwd);
    ConditionalExpectation(ConditionalExpectation&&) noexcept;
    ConditionalExpectation& operator=(ConditionalExpectation&&) noexcept;
    ~ConditionalExpectation();

    [[nodiscard]] bool identity() const { return identity_; }
    [[nodiscard]] const RegressionBasis& basis() const { return basis_; }
    /// Project each column of `samples` (n_paths rows) onto the node-n span.
    [[nodiscard]] Matrix project(int node, const Matrix& samples) const;
    [[nodiscard]] std::vector<RegressionStats> stats() const;

private:
    struct Factor;
    [[nodiscard]] Matrix features(int node) const;

    RegressionBasis basis_;
    TimeGrid grid_;
    QWienerConfig noise_;
    const NoiseEnsemble* ens_;
    const ForwardSolution* fwd_;
    bool identity_ = false;
    mutable std::map<int, std::unique_ptr<Factor>> cache_;
};

/// Conditional expectation of increments: E_n[Y dW_n^j] / (dt sqrt(lambda_j)), 0 for lambda_j = 0.
/// Y is (paths x d); result is (paths x d*m), column-major over (d, m).
Matrix estimate_q(const ConditionalExpectation& E, const NoiseEnsemble& ens, const QWienerConfig& noise, int node,
                  const Matrix& Y, const Matrix* fitted_mean);

/// Recursive cost: running f(t, X, y, z, v) with reads as in CoefficientSet, terminal h(x^1), x^1 = x_mu2(T).
struct CostSpec {
    struct Gradient {
        Vector dx;  // d * R, stacked per read
        double dy = 0.0;
        Vector dz;  // m
        Vector dv;  // c
    };
    std::function<double(int node, const Matrix& X, double y, const Vector& z, const Vector& v)> f;
    std::function<Gradient(int node, const Matrix& X, double y, const Vector& z, const Vector& v)> df;
    std::function<double(const Vector& x1)> h;
    std::function<Vector(const Vector& x1)> dh;
    FiniteMeasure mu2;
    bool depends_on_yz = true;  // false => k == -1 and y needs no regression for J
};

struct BSDESolution {
    Matrix y;               // paths x (N+1)
    std::vector<Matrix> z;  // per node n < N: paths x m
    double J = 0.0;         // mean y(0)
    double se = 0.0;        // MC standard error of J
};

/// Generic scalar backward recursion y_n = E_n[y_{n+1} + dt * driver(path, n, y_{n+1}, z_n)].
using ScalarDriver = std::function<double(int path, int node, double y_next, const Vector& z)>;
BSDESolution solve_scalar_bsde(const Vector& terminal, const ScalarDriver& driver, const ConditionalExpectation& E,
                               const NoiseEnsemble& ens, const QWienerConfig& noise, const TimeGrid& grid);

/// y(T) = h(x_mu2(T)); driver f(t_n, reads, y_{n+1}, z_n, u_mu1(t_n)).
BSDESolution solve_bsde(const CostSpec& cost, const CoefficientSet& coeffs, const ForwardSolution& fwd,
                        const Control& u, const FiniteMeasure& mu1, const ConditionalExpectation& E,
                        const NoiseEnsemble& ens, const QWienerConfig& noise);

/// k_0 = -1, k_{n+1} = k_n + dt dyf_n k_n + k_n sum_j dzf_{n,j} dW^j_n / sqrt(lambda_j).
/// dyf: paths x N; dzf: per node, paths x m. Returns paths x (N+1).
Matrix solve_cost_adjoint_k(const Matrix& dyf, const std::vector<Matrix>& dzf, const NoiseEnsemble& ens,
                            const QWienerConfig& noise, const TimeGrid& grid);

/// Increments of the running-terminal process F on nodes 0..N (entry 0 unused).
struct RunningTerminal {
    std::vector<double> dF;

    [[nodiscard]] double total_variation() const;
    [[nodiscard]] bool empty() const;
    static RunningTerminal none(const TimeGrid& grid);
    static RunningTerminal jumps(const TimeGrid& grid, const std::vector<std::pair<int, double>>& at);
};

struct BackwardSolution {
    TimeGrid grid;
    int dim = 0;
    int modes = 0;
    std::vector<StatePath> p;  // per path on [0, T + K]
    std::vector<StatePath> q;  // per path, dim*modes rows (column-major d x m), on [0, T + K]
    std::vector<RegressionStats> stats;

    [[nodiscard]] int n_paths() const { return static_cast<int>(p.size()); }
    [[nodiscard]] Matrix q_at(int path, int node) const;
};

struct ABSEEProblem {
    TimeGrid grid;
    QWienerConfig noise;
    int dim = 1;

    std::function<Matrix(int node)> M;                    // empty => 0
    std::function<std::vector<Matrix>(int node)> N;       // N q = sum_j lambda_j N_j q e_j; empty => 0
    /// Anticipated generator at `node`, reading p, q on [node, node + k] of `sol`. Empty => 0.
    std::function<Vector(int path, int node, const BackwardSolution& sol)> g;
    std::vector<StatePath> xi;   // p data on [T, T + K], one per path or broadcast
    std::vector<StatePath> eta;  // q data (dim*modes rows) on [T, T + K], node T ignored; may be empty
    std::function<Vector(int path, int node)> zeta;  // running datum on (0, T]; empty => 0
    RunningTerminal F;

    double K2 = 0.0;
    double L2 = 0.0;
    double KF = 0.0;
};

/// Backward induction: Y_n = (I - dt M_{n+1})^{-1}[p_{n+1} + zeta_{n+1} dF_{n+1} + dt(N q_{n+1} + g_{n+1})],
/// p_n = E_n[Y_n], q_n = E_n[Y_n dW_n]/(dt sqrt(lambda)).
BackwardSolution solve_absee(const ABSEEProblem& prob, const ConditionalExpectation& E, const NoiseEnsemble& ens);

struct TranslatedProblem {
    ABSEEProblem problem;
    std::vector<StatePath> alpha;  // per path on [0, T + K], zero beyond T

    /// p = pbar - alpha on a solved translated problem.
    [[nodiscard]] BackwardSolution map_back(const BackwardSolution& bar) const;
};

/// pbar = p + alpha with alpha_n = sum_{j <= n} zeta_j dF_j; removes zeta and F.
TranslatedProblem translate_running_terminal(const ABSEEProblem& prob, int n_paths);

/// Discrete process h_{n+1} = h_n + dt v*_n + zeta_{n+1} dF_{n+1} + m_n sqrt(lambda) dW_n (single path).
struct EnergyInput {
    Vector h0;
    std::function<Vector(int node, const Vector& h)> drift;      // v*; empty => 0
    std::function<Vector(int node)> zeta;                        // empty => 0
    RunningTerminal F;
    std::function<Matrix(int node, const Vector& h)> martingale; // d x m integrand; empty => 0
};

struct EnergyReport {
    double lhs = 0.0;  // |h_N|^2
    double rhs = 0.0;  // |h_0|^2 + 2 sum <h, v*> dt + jump terms + 2 sum <h, dM> + [M]
    double residual = 0.0;
};

EnergyReport energy_identity_check(const EnergyInput& in, const TimeGrid& grid, const QWienerConfig& noise,
                                   const NoiseEnsemble& ens, int path = 0);

}  // namespace psmp
