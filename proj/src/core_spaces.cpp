#include "psmp/core_spaces.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace psmp {

namespace {

constexpr double kAlignTol = 1e-9;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// 53-bit uniform in (0, 1).
double to_open_unit(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

bool is_integral(double v) { return std::abs(v - std::round(v)) <= kAlignTol * std::max(1.0, std::abs(v)); }

}  // namespace

std::vector<double> TimeGrid::nodes() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(last_node() - first_node() + 1));
    for (int n = first_node(); n <= last_node(); ++n) out.push_back(time(n));
    return out;
}

int TimeGrid::node_of(double t) const {
    const double r = t / dt;
    if (!is_integral(r)) {
        std::ostringstream os;
        os << "time " << t << " is not a grid node (dt = " << dt << ")";
        throw ValidationError(os.str());
    }
    const int n = static_cast<int>(std::lround(r));
    if (n < first_node() || n > last_node()) {
        std::ostringstream os;
        os << "time " << t << " outside grid span [" << -K << ", " << T + K << "]";
        throw ValidationError(os.str());
    }
    return n;
}

TimeGrid build_grid(double T, double K, int n_steps) {
    if (!(T > 0.0)) throw ValidationError("build_grid: T must be positive");
    if (!(K >= 0.0)) throw ValidationError("build_grid: K must be nonnegative");
    if (n_steps < 1) throw ValidationError("build_grid: n_steps must be >= 1");
    const double ratio = K * n_steps / T;
    if (!is_integral(ratio)) {
        // Nearest admissible step counts on either side.
        int below = 0;
        int above = 0;
        for (int n = n_steps - 1; n >= 1 && n >= n_steps - 100000; --n) {
            if (is_integral(K * n / T)) {
                below = n;
                break;
            }
        }
        for (int n = n_steps + 1; n <= n_steps + 100000; ++n) {
            if (is_integral(K * n / T)) {
                above = n;
                break;
            }
        }
        std::ostringstream os;
        os << "K not grid-aligned: K/dt = " << ratio << " is not an integer (T = " << T << ", K = " << K
           << ", n_steps = " << n_steps << ")";
        if (below > 0 || above > 0) {
            os << "; nearest admissible n_steps:";
            if (below > 0) os << ' ' << below;
            if (above > 0) os << ' ' << above;
        }
        throw ValidationError(os.str());
    }
    TimeGrid g;
    g.T = T;
    g.K = K;
    g.n_steps = n_steps;
    g.dt = T / n_steps;
    g.n_delay = static_cast<int>(std::lround(ratio));
    return g;
}

double GelfandTriple::norm_v(const Vector& u) const { return u.cwiseProduct(weights).norm(); }

double GelfandTriple::norm_dual(const Vector& u) const { return u.cwiseQuotient(weights).norm(); }

GelfandTriple make_triple(const Vector& weights) {
    if (weights.size() == 0) throw ValidationError("GelfandTriple: dimension must be >= 1");
    for (Eigen::Index j = 0; j < weights.size(); ++j) {
        if (!(weights[j] >= 1.0)) {
            std::ostringstream os;
            os << "GelfandTriple: weight rho_" << j << " = " << weights[j] << " must be >= 1";
            throw ValidationError(os.str());
        }
    }
    return GelfandTriple{weights};
}

GelfandTriple unit_triple(int dim) { return make_triple(Vector::Ones(dim)); }

double QWienerConfig::l20_inner(const Matrix& F, const Matrix& G) const {
    double s = 0.0;
    for (int j = 0; j < modes(); ++j) s += eigenvalues[j] * F.col(j).dot(G.col(j));
    return s;
}

QWienerConfig make_noise(const Vector& eigenvalues) {
    if (eigenvalues.size() < 1) throw ValidationError("QWienerConfig: need at least one noise mode");
    for (Eigen::Index j = 0; j < eigenvalues.size(); ++j) {
        if (!(eigenvalues[j] >= 0.0)) throw ValidationError("QWienerConfig: eigenvalues must be >= 0");
    }
    return QWienerConfig{eigenvalues};
}

QWienerConfig cylindrical_noise(int modes) { return make_noise(Vector::Ones(modes)); }

double counter_normal(std::uint64_t seed, std::uint64_t path, std::uint64_t step, std::uint64_t mode) {
    std::uint64_t key = splitmix64(seed);
    key = splitmix64(key ^ path);
    key = splitmix64(key ^ (step * 0x632be59bd9b4e019ULL));
    key = splitmix64(key ^ (mode * 0x85157af5ULL + 0x1234567ULL));
    const double u1 = to_open_unit(splitmix64(key ^ 0x1ULL));
    const double u2 = to_open_unit(splitmix64(key ^ 0x2ULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

NoiseEnsemble::NoiseEnsemble(int n_paths, int n_steps, int n_modes, double dt, std::uint64_t seed)
    : n_paths_(n_paths), n_steps_(n_steps), n_modes_(n_modes), dt_(dt), seed_(seed) {
    if (n_paths < 1) throw ValidationError("NoiseEnsemble: n_paths must be >= 1");
    if (n_steps < 1 || n_modes < 1) throw ValidationError("NoiseEnsemble: bad shape");
    data_.resize(static_cast<std::size_t>(n_paths) * n_steps * n_modes);
    const double sd = std::sqrt(dt);
    std::size_t idx = 0;
    for (int p = 0; p < n_paths; ++p)
        for (int s = 0; s < n_steps; ++s)
            for (int m = 0; m < n_modes; ++m) data_[idx++] = sd * counter_normal(seed, p, s, m);
}

Vector NoiseEnsemble::dw(int path, int step) const {
    Vector v(n_modes_);
    for (int m = 0; m < n_modes_; ++m) v[m] = dw(path, step, m);
    return v;
}

Vector NoiseEnsemble::cumulative(int path, int node) const {
    Vector w = Vector::Zero(n_modes_);
    for (int s = 0; s < node; ++s) w += dw(path, s);
    return w;
}

NoiseEnsemble NoiseEnsemble::scrambled_after(int from_step, std::uint64_t other_seed) const {
    NoiseEnsemble out = *this;
    const double sd = std::sqrt(dt_);
    for (int p = 0; p < n_paths_; ++p)
        for (int s = std::max(0, from_step); s < n_steps_; ++s)
            for (int m = 0; m < n_modes_; ++m)
                out.data_[(static_cast<std::size_t>(p) * n_steps_ + s) * n_modes_ + m] =
                    sd * counter_normal(other_seed, p, s, m);
    out.zero_ = false;
    return out;
}

NoiseEnsemble NoiseEnsemble::coarsened(int factor) const {
    if (factor < 1 || n_steps_ % factor != 0) throw ValidationError("coarsened: factor must divide n_steps");
    NoiseEnsemble out = *this;
    out.n_steps_ = n_steps_ / factor;
    out.dt_ = dt_ * factor;
    out.data_.assign(static_cast<std::size_t>(n_paths_) * out.n_steps_ * n_modes_, 0.0);
    for (int p = 0; p < n_paths_; ++p)
        for (int s = 0; s < n_steps_; ++s)
            for (int m = 0; m < n_modes_; ++m)
                out.data_[(static_cast<std::size_t>(p) * out.n_steps_ + s / factor) * n_modes_ + m] += dw(p, s, m);
    return out;
}

NoiseEnsemble NoiseEnsemble::zeros(int n_paths, int n_steps, int n_modes, double dt) {
    NoiseEnsemble out;
    out.n_paths_ = n_paths;
    out.n_steps_ = n_steps;
    out.n_modes_ = n_modes;
    out.dt_ = dt;
    out.zero_ = true;
    out.data_.assign(static_cast<std::size_t>(n_paths) * n_steps * n_modes, 0.0);
    return out;
}

NoiseEnsemble sample_noise(const QWienerConfig& cfg, const TimeGrid& grid, int n_paths, std::uint64_t seed) {
    if (n_paths < 1) throw ValidationError("sample_noise: n_paths must be >= 1");
    return NoiseEnsemble(n_paths, grid.n_steps, cfg.modes(), grid.dt, seed);
}

std::vector<Matrix> ito_integral(const StepIntegrand& integrand, int dim, const NoiseEnsemble& ens,
                                 const QWienerConfig& cfg) {
    if (cfg.modes() != ens.n_modes()) throw ValidationError("ito_integral: mode count mismatch");
    const Vector sqrt_lambda = cfg.eigenvalues.cwiseSqrt();
    std::vector<Matrix> out(static_cast<std::size_t>(ens.n_paths()));
    for (int p = 0; p < ens.n_paths(); ++p) {
        Matrix acc = Matrix::Zero(dim, ens.n_steps() + 1);
        for (int s = 0; s < ens.n_steps(); ++s) {
            const Matrix f = integrand(p, s);
            if (f.rows() != dim || f.cols() != cfg.modes())
                throw ValidationError("ito_integral: integrand must be d x m");
            acc.col(s + 1) = acc.col(s) + f * ens.dw(p, s).cwiseProduct(sqrt_lambda);
        }
        out[static_cast<std::size_t>(p)] = std::move(acc);
    }
    return out;
}

IsometryReport ito_isometry(const StepIntegrand& integrand, int dim, const NoiseEnsemble& ens,
                            const QWienerConfig& cfg) {
    const auto paths = ito_integral(integrand, dim, ens, cfg);
    IsometryReport r;
    for (int p = 0; p < ens.n_paths(); ++p) {
        r.lhs += paths[static_cast<std::size_t>(p)].col(ens.n_steps()).squaredNorm();
        for (int s = 0; s < ens.n_steps(); ++s) r.rhs += cfg.l20_norm2(integrand(p, s)) * ens.dt();
    }
    r.lhs /= ens.n_paths();
    r.rhs /= ens.n_paths();
    r.relative_gap = r.rhs > 0 ? std::abs(r.lhs - r.rhs) / r.rhs : std::abs(r.lhs);
    return r;
}

OperatorPair OperatorPair::constant(Matrix A, std::vector<Matrix> B, double alpha, double lambda, double K1) {
    OperatorPair ops;
    ops.dim = static_cast<int>(A.rows());
    ops.modes = static_cast<int>(B.size());
    for (const auto& b : B) {
        if (b.rows() != A.rows() || b.cols() != A.cols()) throw ValidationError("OperatorPair: B_j must be d x d");
    }
    ops.A = [A = std::move(A)](double) { return A; };
    ops.B = [B = std::move(B)](double) { return B; };
    ops.alpha = alpha;
    ops.lambda = lambda;
    ops.K1 = K1;
    return ops;
}

CoercivityReport check_coercivity(const OperatorPair& ops, const GelfandTriple& triple, const QWienerConfig& noise,
                                  const TimeGrid& grid, int trials, std::uint64_t seed) {
    if (trials < 1) throw ValidationError("check_coercivity: trials must be >= 1");
    const int d = triple.dim();
    if (ops.dim != d) throw ValidationError("check_coercivity: operator dimension differs from the triple");
    std::vector<Vector> tests;
    for (int j = 0; j < d; ++j) tests.push_back(Vector::Unit(d, j));
    for (int k = 0; k < trials; ++k) {
        Vector u(d);
        for (int j = 0; j < d; ++j) u[j] = counter_normal(seed, 0xC0E5ULL, static_cast<std::uint64_t>(k), j);
        if (u.norm() > 0) tests.push_back(u / u.norm());
    }

    CoercivityReport rep;
    for (int n = 0; n <= grid.n_steps; ++n) {
        const double t = grid.time(n);
        const Matrix A = ops.A(t);
        const std::vector<Matrix> B = ops.B ? ops.B(t) : std::vector<Matrix>{};
        for (const Vector& u : tests) {
            const Vector Au = A * u;
            double bu2 = 0.0;
            for (std::size_t j = 0; j < B.size() && static_cast<int>(j) < noise.modes(); ++j)
                bu2 += noise.eigenvalues[static_cast<Eigen::Index>(j)] * (B[j] * u).squaredNorm();
            const double nv2 = std::pow(triple.norm_v(u), 2);
            const double nh2 = u.squaredNorm();
            const double value = 2.0 * Au.dot(u) + bu2 + ops.alpha * nv2 - ops.lambda * nh2;
            const double scale = 2.0 * std::abs(Au.dot(u)) + bu2 + ops.alpha * nv2 + std::abs(ops.lambda) * nh2;
            ++rep.n_checked;
            if (value > 1e-12 * std::max(1.0, scale)) {
                ++rep.n_violations;
                if (value > rep.max_violation) {
                    rep.max_violation = value;
                    rep.worst_time = t;
                }
            }
            if (ops.K1 > 0.0 && triple.norm_dual(Au) > ops.K1 * triple.norm_v(u) * (1.0 + 1e-12)) ++rep.bound_violations;
        }
    }
    return rep;
}

}  // namespace psmp
