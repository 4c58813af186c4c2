#pragma once

#include "psmp/delay_measures.hpp"

#include <functional>

namespace psmp {

/// rho_t(Z) = sum_i k(t, s_i) Z(t + s_i) w_i for t in [t_lo, t_hi], k(t, s_i) an (out x in) matrix.
class KernelRepresentation {
public:
    KernelRepresentation() = default;
    KernelRepresentation(TimeGrid grid, FiniteMeasure nu0, int out_dim, int in_dim, int t_lo, int t_hi);

    [[nodiscard]] const TimeGrid& grid() const { return grid_; }
    [[nodiscard]] const FiniteMeasure& nu0() const { return nu0_; }
    [[nodiscard]] int out_dim() const { return out_; }
    [[nodiscard]] int in_dim() const { return in_; }
    [[nodiscard]] int t_lo() const { return t_lo_; }
    [[nodiscard]] int t_hi() const { return t_hi_; }

    Matrix& kernel(int node, int atom) { return k_[index(node, atom)]; }
    [[nodiscard]] const Matrix& kernel(int node, int atom) const { return k_[index(node, atom)]; }

    /// Output on [t_lo, t_hi]; Z must cover [t_lo - K, t_hi].
    [[nodiscard]] StatePath apply(const StatePath& Z) const;
    /// Single node of apply().
    [[nodiscard]] Vector apply_at(const StatePath& Z, int node) const;
    /// Formula adjoint on [t_lo - reach, t_hi]: sum_i k^T(t - s_i, s_i) Q(t - s_i) w_i 1[t - s_i in [t_lo, t_hi]].
    [[nodiscard]] StatePath apply_star(const StatePath& Q) const;
    [[nodiscard]] Vector apply_star_at(const StatePath& Q, int node) const;

    /// Dense matrix of Z -> rho(Z) between stacked node vectors.
    [[nodiscard]] Matrix dense() const;
    /// Adjoint computed as the transpose of dense().
    [[nodiscard]] StatePath apply_star_transpose(const StatePath& Q) const;

    [[nodiscard]] int in_first() const { return t_lo_ + nu0_.reach(); }

private:
    [[nodiscard]] std::size_t index(int node, int atom) const {
        return static_cast<std::size_t>(node - t_lo_) * static_cast<std::size_t>(nu0_.size()) +
               static_cast<std::size_t>(atom);
    }

    TimeGrid grid_;
    FiniteMeasure nu0_;
    int out_ = 0;
    int in_ = 0;
    int t_lo_ = 0;
    int t_hi_ = 0;
    std::vector<Matrix> k_;
};

/// sum_t <rho(Z)(t), Q(t)> dt and sum_t <Z(t), rho*(Q)(t)> dt.
struct DualityResult {
    double lhs = 0.0;
    double rhs = 0.0;
    double residual = 0.0;
    double relative = 0.0;
};

DualityResult duality_residual(const KernelRepresentation& rep, const StatePath& Z, const StatePath& Q);

/// g is evaluated at (kernel node t, atom index i).
using AtomFunction = std::function<double(int node, int atom)>;

struct ChangeOfVariables {
    double lhs = 0.0;
    double rhs = 0.0;
};

/// lhs = sum_{t in [0,T]} sum_i g(t,s_i) 1[s_i >= K' - t] w_i dt,
/// rhs = sum_{u in [-K,T]} sum_i g(u - s_i, s_i) 1[u - s_i in [0,T]] 1[u >= K'] w_i dt.
ChangeOfVariables change_of_variables_check(const AtomFunction& g, const FiniteMeasure& nu0, int k_prime_node,
                                            const TimeGrid& grid);

struct BoundConstants {
    double M0 = 0.0;
    double M = 0.0;
};

BoundConstants compute_bounds(const KernelRepresentation& rep);

struct BoundCheck {
    BoundConstants bounds;
    double max_rho_ratio = 0.0;       // sum ||rho Z||^2 / sum ||Z||^2
    double max_rho_star_ratio = 0.0;  // sum_{t >= K'} ||rho* Q||^2 / sum_{t >= 0 v K'} ||Q||^2
    int samples = 0;
    [[nodiscard]] bool holds() const {
        const double c = bounds.M0 * bounds.M * (1.0 + 1e-12);
        return max_rho_ratio <= c && max_rho_star_ratio <= c;
    }
};

/// Random-sample verification of the operator-norm inequalities.
BoundCheck check_bounds(const KernelRepresentation& rep, int samples, std::uint64_t seed);

/// k(t, s) = derivative_at(t) for every atom of mu.
KernelRepresentation integral_delay_kernel(const std::function<Matrix(int node)>& derivative_at,
                                           const FiniteMeasure& mu, const TimeGrid& grid, int t_lo, int t_hi);

}  // namespace psmp
