#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace psmp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Bad input: malformed configuration, violated preconditions. CLI exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical breakdown: singular solve, NaN, divergence. CLI exit code 2.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Uniform grid on [-K, T + K] with step dt = T / n_steps and K = n_delay * dt.
///
/// Nodes are addressed by signed integer index: node 0 is t = 0, node n_steps is T,
/// node -n_delay is -K, node n_steps + n_delay is T + K.
struct TimeGrid {
    double T = 1.0;
    double K = 0.0;
    double dt = 1.0;
    int n_steps = 1;
    int n_delay = 0;

    [[nodiscard]] double time(int node) const { return node * dt; }
    [[nodiscard]] int first_node() const { return -n_delay; }
    [[nodiscard]] int last_node() const { return n_steps + n_delay; }
    /// All node times from -K to T + K.
    [[nodiscard]] std::vector<double> nodes() const;
    /// Node index of a grid-aligned time; throws ValidationError otherwise.
    [[nodiscard]] int node_of(double t) const;
};

TimeGrid build_grid(double T, double K, int n_steps);

/// Diagonal truncation of V ⊂ H ⊂ V*: H = R^d, ‖u‖_V² = Σ ρ_j² u_j², ‖u‖_*² = Σ u_j²/ρ_j².
struct GelfandTriple {
    Vector weights;  // ρ_j >= 1

    [[nodiscard]] int dim() const { return static_cast<int>(weights.size()); }
    [[nodiscard]] double norm_v(const Vector& u) const;
    [[nodiscard]] double norm_h(const Vector& u) const { return u.norm(); }
    [[nodiscard]] double norm_dual(const Vector& u) const;
};

GelfandTriple make_triple(const Vector& weights);
GelfandTriple unit_triple(int dim);

/// Truncated Q-Wiener process: m retained modes with eigenvalues λ_j >= 0.
struct QWienerConfig {
    Vector eigenvalues;

    [[nodiscard]] int modes() const { return static_cast<int>(eigenvalues.size()); }
    /// Hilbert–Schmidt pairing Σ_j λ_j ⟨F e_j, G e_j⟩ of two d×m operators.
    [[nodiscard]] double l20_inner(const Matrix& F, const Matrix& G) const;
    [[nodiscard]] double l20_norm2(const Matrix& F) const { return l20_inner(F, F); }
};

QWienerConfig make_noise(const Vector& eigenvalues);
QWienerConfig cylindrical_noise(int modes);

/// Counter-based standard normal draw: a pure function of (seed, path, step, mode).
double counter_normal(std::uint64_t seed, std::uint64_t path, std::uint64_t step, std::uint64_t mode);

/// Brownian increments ΔW ~ N(0, dt) for every (path, step, mode).
class NoiseEnsemble {
public:
    NoiseEnsemble() = default;
    NoiseEnsemble(int n_paths, int n_steps, int n_modes, double dt, std::uint64_t seed);

    [[nodiscard]] int n_paths() const { return n_paths_; }
    [[nodiscard]] int n_steps() const { return n_steps_; }
    [[nodiscard]] int n_modes() const { return n_modes_; }
    [[nodiscard]] double dt() const { return dt_; }
    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    /// True when every increment is zero (noise-free runs).
    [[nodiscard]] bool is_zero() const { return zero_; }

    [[nodiscard]] double dw(int path, int step, int mode) const {
        return data_[(static_cast<std::size_t>(path) * n_steps_ + step) * n_modes_ + mode];
    }
    /// Increment vector (one entry per mode) for a given path and step.
    [[nodiscard]] Vector dw(int path, int step) const;
    /// Cumulative W(t_n) per mode on a path (W(0) = 0).
    [[nodiscard]] Vector cumulative(int path, int node) const;

    /// Replace increments for steps >= `from_step` by fresh draws from `other_seed`.
    [[nodiscard]] NoiseEnsemble scrambled_after(int from_step, std::uint64_t other_seed) const;
    /// Sum consecutive groups of `factor` steps (same Brownian paths on a coarser grid).
    [[nodiscard]] NoiseEnsemble coarsened(int factor) const;
    /// All-zero ensemble with the same shape.
    static NoiseEnsemble zeros(int n_paths, int n_steps, int n_modes, double dt);

private:
    int n_paths_ = 0;
    int n_steps_ = 0;
    int n_modes_ = 0;
    double dt_ = 0.0;
    std::uint64_t seed_ = 0;
    bool zero_ = false;
    std::vector<double> data_;
};

NoiseEnsemble sample_noise(const QWienerConfig& cfg, const TimeGrid& grid, int n_paths, std::uint64_t seed);

/// Integrand of a stochastic integral: d×m matrix for (path, step).
using StepIntegrand = std::function<Matrix(int path, int step)>;

/// Left-endpoint Itô sums I_n = Σ_{j<n} f(t_j) Q^{1/2} ΔW_j. Returns d × (n_steps + 1) per path.
std::vector<Matrix> ito_integral(const StepIntegrand& integrand, int dim, const NoiseEnsemble& ens,
                                 const QWienerConfig& cfg);

struct IsometryReport {
    double lhs = 0.0;  // mean ‖I_T‖²
    double rhs = 0.0;  // mean Σ ‖f‖²_{L²₀} dt
    double relative_gap = 0.0;
};

IsometryReport ito_isometry(const StepIntegrand& integrand, int dim, const NoiseEnsemble& ens,
                            const QWienerConfig& cfg);

/// (A, B) of the state equation with coercivity constants.
///
/// B(t) is given per noise mode: (B(t)u) e_j = B_j(t) u.
struct OperatorPair {
    std::function<Matrix(double)> A;
    std::function<std::vector<Matrix>(double)> B;
    int dim = 0;
    int modes = 0;
    double alpha = 0.0;
    double lambda = 0.0;
    double K1 = 0.0;

    static OperatorPair constant(Matrix A, std::vector<Matrix> B, double alpha, double lambda, double K1);
};

struct CoercivityReport {
    int n_checked = 0;
    int n_violations = 0;
    double max_violation = 0.0;  // max of 2⟨Au,u⟩ + ‖Bu‖² + α‖u‖_V² − λ‖u‖_H², clipped at 0
    double worst_time = 0.0;
    int bound_violations = 0;  // ‖Au‖_* > K1 ‖u‖_V
    [[nodiscard]] bool clean() const { return n_violations == 0 && bound_violations == 0; }
};

CoercivityReport check_coercivity(const OperatorPair& ops, const GelfandTriple& triple, const QWienerConfig& noise,
                                  const TimeGrid& grid, int trials, std::uint64_t seed = 7);

}  // namespace psmp
