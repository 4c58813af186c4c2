#include "psmp/path_calculus.hpp"

#include <algorithm>
#include <cmath>

namespace psmp {

KernelRepresentation::KernelRepresentation(TimeGrid grid, FiniteMeasure nu0, int out_dim, int in_dim, int t_lo,
                                           int t_hi)
    : grid_(grid), nu0_(std::move(nu0)), out_(out_dim), in_(in_dim), t_lo_(t_lo), t_hi_(t_hi) {
    if (t_hi < t_lo) throw ValidationError("KernelRepresentation: empty node range");
    if (out_dim < 1 || in_dim < 1) throw ValidationError("KernelRepresentation: dimensions must be >= 1");
    k_.assign(static_cast<std::size_t>(t_hi - t_lo + 1) * static_cast<std::size_t>(nu0_.size()),
              Matrix::Zero(out_dim, in_dim));
}

Vector KernelRepresentation::apply_at(const StatePath& Z, int node) const {
    Vector acc = Vector::Zero(out_);
    for (int i = 0; i < nu0_.size(); ++i) acc.noalias() += nu0_.weight(i) * (kernel(node, i) * Z.col(node + nu0_.offset(i)));
    return acc;
}

StatePath KernelRepresentation::apply(const StatePath& Z) const {
    if (Z.dim() != in_) throw ValidationError("apply_rho: path dimension mismatch");
    if (!Z.covers(in_first()) || !Z.covers(t_hi_)) throw ValidationError("apply_rho: path does not cover [t-K, t]");
    StatePath out(out_, t_lo_, t_hi_);
    for (int n = t_lo_; n <= t_hi_; ++n) out.col(n) = apply_at(Z, n);
    return out;
}

Vector KernelRepresentation::apply_star_at(const StatePath& Q, int node) const {
    Vector acc = Vector::Zero(in_);
    for (int i = 0; i < nu0_.size(); ++i) {
        const int src = node - nu0_.offset(i);
        if (src < t_lo_ || src > t_hi_) continue;
        acc.noalias() += nu0_.weight(i) * (kernel(src, i).transpose() * Q.col(src));
    }
    return acc;
}

StatePath KernelRepresentation::apply_star(const StatePath& Q) const {
    if (Q.dim() != out_) throw ValidationError("apply_rho_star: path dimension mismatch");
    if (!Q.covers(t_lo_) || !Q.covers(t_hi_)) throw ValidationError("apply_rho_star: Q must cover the kernel range");
    StatePath out(in_, in_first(), t_hi_);
    for (int n = out.first; n <= out.last(); ++n) out.col(n) = apply_star_at(Q, n);
    return out;
}

Matrix KernelRepresentation::dense() const {
    const int n_in = t_hi_ - in_first() + 1;
    const int n_out = t_hi_ - t_lo_ + 1;
    Matrix R = Matrix::Zero(static_cast<Eigen::Index>(n_out) * out_, static_cast<Eigen::Index>(n_in) * in_);
    for (int n = t_lo_; n <= t_hi_; ++n)
        for (int i = 0; i < nu0_.size(); ++i) {
            const int col = n + nu0_.offset(i) - in_first();
            R.block((n - t_lo_) * out_, col * in_, out_, in_) += nu0_.weight(i) * kernel(n, i);
        }
    return R;
}

StatePath KernelRepresentation::apply_star_transpose(const StatePath& Q) const {
    const Matrix R = dense();
    Vector q(R.rows());
    for (int n = t_lo_; n <= t_hi_; ++n) q.segment((n - t_lo_) * out_, out_) = Q.col(n);
    const Vector z = R.transpose() * q;
    StatePath out(in_, in_first(), t_hi_);
    for (int n = out.first; n <= out.last(); ++n) out.col(n) = z.segment((n - out.first) * in_, in_);
    return out;
}

DualityResult duality_residual(const KernelRepresentation& rep, const StatePath& Z, const StatePath& Q) {
    const StatePath rz = rep.apply(Z);
    const StatePath rq = rep.apply_star(Q);
    const double dt = rep.grid().dt;
    DualityResult r;
    double scale = 0.0;
    for (int n = rz.first; n <= rz.last(); ++n) {
        const double v = rz.col(n).dot(Q.col(n)) * dt;
        r.lhs += v;
        scale += std::abs(v);
    }
    for (int n = rq.first; n <= rq.last(); ++n) r.rhs += Z.col(n).dot(rq.col(n)) * dt;
    r.residual = std::abs(r.lhs - r.rhs);
    r.relative = scale > 0.0 ? r.residual / scale : r.residual;
    return r;
}

ChangeOfVariables change_of_variables_check(const AtomFunction& g, const FiniteMeasure& nu0, int k_prime_node,
                                            const TimeGrid& grid) {
    ChangeOfVariables out;
    const int N = grid.n_steps;
    for (int t = 0; t <= N; ++t)
        for (int i = 0; i < nu0.size(); ++i)
            if (nu0.offset(i) >= k_prime_node - t) out.lhs += g(t, i) * nu0.weight(i) * grid.dt;
    for (int u = -grid.n_delay; u <= N; ++u) {
        if (u < k_prime_node) continue;
        for (int i = 0; i < nu0.size(); ++i) {
            const int t = u - nu0.offset(i);
            if (t < 0 || t > N) continue;
            out.rhs += g(t, i) * nu0.weight(i) * grid.dt;
        }
    }
    return out;
}

namespace {

double op_norm(const Matrix& k) {
    if (k.size() == 0) return 0.0;
    if (k.rows() == 1 || k.cols() == 1) return k.norm();
    Eigen::JacobiSVD<Matrix> svd(k);
    return svd.singularValues()(0);
}

}  // namespace

BoundConstants compute_bounds(const KernelRepresentation& rep) {
    const auto& nu = rep.nu0();
    BoundConstants b;
    std::vector<double> norms(static_cast<std::size_t>((rep.t_hi() - rep.t_lo() + 1) * nu.size()));
    for (int n = rep.t_lo(); n <= rep.t_hi(); ++n) {
        double s = 0.0;
        for (int i = 0; i < nu.size(); ++i) {
            const double v = op_norm(rep.kernel(n, i)) * nu.weight(i);
            norms[static_cast<std::size_t>((n - rep.t_lo()) * nu.size() + i)] = v;
            s += v;
        }
        b.M0 = std::max(b.M0, s);
    }
    for (int t = rep.in_first(); t <= rep.t_hi(); ++t) {
        double s = 0.0;
        for (int i = 0; i < nu.size(); ++i) {
            const int src = t - nu.offset(i);
            if (src < rep.t_lo() || src > rep.t_hi()) continue;
            s += norms[static_cast<std::size_t>((src - rep.t_lo()) * nu.size() + i)];
        }
        b.M = std::max(b.M, s);
    }
    return b;
}

BoundCheck check_bounds(const KernelRepresentation& rep, int samples, std::uint64_t seed) {
    BoundCheck out;
    out.bounds = compute_bounds(rep);
    out.samples = samples;
    for (int k = 0; k < samples; ++k) {
        StatePath Z(rep.in_dim(), rep.in_first(), rep.t_hi());
        for (int n = Z.first; n <= Z.last(); ++n)
            for (int j = 0; j < Z.dim(); ++j)
                Z.col(n)[j] = counter_normal(seed, 2 * static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(n - Z.first), j);
        StatePath Q(rep.out_dim(), rep.t_lo(), rep.t_hi());
        for (int n = Q.first; n <= Q.last(); ++n)
            for (int j = 0; j < Q.dim(); ++j)
                Q.col(n)[j] = counter_normal(seed, 2 * static_cast<std::uint64_t>(k) + 1, static_cast<std::uint64_t>(n - Q.first), j);

        const StatePath rz = rep.apply(Z);
        const double zn = Z.values.squaredNorm();
        if (zn > 0) out.max_rho_ratio = std::max(out.max_rho_ratio, rz.values.squaredNorm() / zn);

        // K' cycles through the adjoint span
        const int span = rep.t_hi() - rep.in_first() + 1;
        const int kp = rep.in_first() + static_cast<int>(k % span);
        const StatePath rq = rep.apply_star(Q);
        double lhs = 0.0;
        double rhs = 0.0;
        for (int n = std::max(kp, rq.first); n <= rq.last(); ++n) lhs += rq.col(n).squaredNorm();
        for (int n = std::max(kp, Q.first); n <= Q.last(); ++n) rhs += Q.col(n).squaredNorm();
        if (rhs > 0) out.max_rho_star_ratio = std::max(out.max_rho_star_ratio, lhs / rhs);
    }
    return out;
}

KernelRepresentation integral_delay_kernel(const std::function<Matrix(int node)>& derivative_at,
                                           const FiniteMeasure& mu, const TimeGrid& grid, int t_lo, int t_hi) {
    const Matrix k0 = derivative_at(t_lo);
    KernelRepresentation rep(grid, mu, static_cast<int>(k0.rows()), static_cast<int>(k0.cols()), t_lo, t_hi);
    for (int n = t_lo; n <= t_hi; ++n) {
        const Matrix kn = n == t_lo ? k0 : derivative_at(n);
        if (kn.rows() != k0.rows() || kn.cols() != k0.cols())
            throw ValidationError("integral_delay_kernel: derivative shape changes over time");
        for (int i = 0; i < mu.size(); ++i) rep.kernel(n, i) = kn;
    }
    return rep;
}

}  // namespace psmp
