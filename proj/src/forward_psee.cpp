#include "psmp/forward_psee.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace psmp {

int CoefficientSet::reach() const {
    int r = 0;
    for (int o : reads) r = std::min(r, o);
    return r;
}

LipschitzReport certify_lipschitz(const CoefficientSet& coeffs, const TimeGrid& grid, int samples, std::uint64_t seed) {
    LipschitzReport rep;
    rep.samples = samples;
    const int d = coeffs.dim;
    const int R = coeffs.n_reads();
    Matrix X(d, R);
    Matrix Y(d, R);
    const Vector v = Vector::Zero(coeffs.control_dim);
    for (int k = 0; k < samples; ++k) {
        const int node = grid.n_steps > 1 ? k % grid.n_steps : 0;
        for (int r = 0; r < R; ++r)
            for (int i = 0; i < d; ++i) {
                X(i, r) = counter_normal(seed, 2 * static_cast<std::uint64_t>(k), r, i);
                Y(i, r) = X(i, r) + 0.1 * counter_normal(seed, 2 * static_cast<std::uint64_t>(k) + 1, r, i);
            }
        double sup2 = 0.0;
        for (int r = 0; r < R; ++r) sup2 = std::max(sup2, (X.col(r) - Y.col(r)).squaredNorm());
        double num = (coeffs.b(node, X, v) - coeffs.b(node, Y, v)).squaredNorm();
        if (coeffs.sigma) num += (coeffs.sigma(node, X, v) - coeffs.sigma(node, Y, v)).squaredNorm();
        if (sup2 > 0) rep.max_ratio = std::max(rep.max_ratio, num / sup2);
    }
    rep.certified = rep.max_ratio <= coeffs.L1 * (1.0 + 1e-12);
    return rep;
}

Control Control::constant(const TimeGrid& grid, const Vector& value) {
    StatePath p(static_cast<int>(value.size()), -grid.n_delay, grid.n_steps);
    p.values.colwise() = value;
    Control c;
    c.paths.push_back(std::move(p));
    return c;
}

Vector delayed_control(const StatePath& u, const FiniteMeasure& mu1, int node) {
    Vector acc = Vector::Zero(u.dim());
    for (int i = 0; i < mu1.size(); ++i) acc.noalias() += mu1.weight(i) * u.col(node + mu1.offset(i));
    return acc;
}

void gather_reads(const StatePath& x, const std::vector<int>& reads, int node, Matrix& X) {
    X.resize(x.dim(), static_cast<Eigen::Index>(reads.size()));
    for (std::size_t r = 0; r < reads.size(); ++r) X.col(static_cast<Eigen::Index>(r)) = x.col(node + reads[r]);
}

namespace {

struct StepCache {
    std::vector<Eigen::PartialPivLU<Matrix>> implicit;  // index n -> factor of I - dt A(t_n), n = 1..N
    std::vector<std::vector<Matrix>> B;                 // index n -> B_j(t_n), n = 0..N-1
    Vector sqrt_lambda;
    bool has_A = false;
    bool has_B = false;
};

StepCache build_cache(const OperatorPair& ops, const QWienerConfig& noise, const TimeGrid& grid, int d) {
    StepCache c;
    c.sqrt_lambda = noise.eigenvalues.cwiseSqrt();
    c.implicit.resize(static_cast<std::size_t>(grid.n_steps + 1));
    c.B.resize(static_cast<std::size_t>(grid.n_steps));
    for (int n = 1; n <= grid.n_steps; ++n) {
        const Matrix A = ops.A ? ops.A(grid.time(n)) : Matrix::Zero(d, d);
        if (A.rows() != d || A.cols() != d) throw ValidationError("solve_forward: A must be d x d");
        if (A.cwiseAbs().maxCoeff() > 0) c.has_A = true;
        Matrix S = Matrix::Identity(d, d) - grid.dt * A;
        c.implicit[static_cast<std::size_t>(n)].compute(S);
        if (!(c.implicit[static_cast<std::size_t>(n)].rcond() > 1e-13)) {
            std::ostringstream os;
            os << "solve_forward: I - dt*A(t) is singular at t = " << grid.time(n) << "; reduce dt (increase n_steps)";
            throw NumericalError(os.str());
        }
    }
    for (int n = 0; n < grid.n_steps; ++n) {
        if (!ops.B) continue;
        auto Bn = ops.B(grid.time(n));
        if (static_cast<int>(Bn.size()) != noise.modes() && !Bn.empty())
            throw ValidationError("solve_forward: B(t) must provide one matrix per noise mode");
        for (const auto& m : Bn)
            if (m.cwiseAbs().maxCoeff() > 0) c.has_B = true;
        c.B[static_cast<std::size_t>(n)] = std::move(Bn);
    }
    return c;
}

void check_finite(const Vector& v, int path, int node) {
    if (!v.allFinite()) {
        std::ostringstream os;
        os << "non-finite state at path " << path << ", step " << node;
        throw NumericalError(os.str());
    }
}

// One path; if `frozen` is given the coefficient reads come from it (Picard map).
void march_path(const ForwardSetup& s, const StatePath& u, const StepCache& cache, const NoiseEnsemble& ens,
                const TimeGrid& grid, int path, const StatePath* frozen, StatePath& x) {
    const int d = s.coeffs.dim;
    const int m = ens.n_modes();
    Matrix X;
    Vector rhs(d);
    Vector dw(m);
    for (int n = 0; n < grid.n_steps; ++n) {
        gather_reads(frozen ? *frozen : x, s.coeffs.reads, n, X);
        const Vector v = delayed_control(u, s.mu1, n);
        rhs = x.col(n) + grid.dt * s.coeffs.b(n, X, v);
        if (!ens.is_zero()) {
            for (int j = 0; j < m; ++j) dw[j] = cache.sqrt_lambda[j] * ens.dw(path, n, j);
            if (s.coeffs.sigma) rhs.noalias() += s.coeffs.sigma(n, X, v) * dw;
            if (cache.has_B) {
                const auto& Bn = cache.B[static_cast<std::size_t>(n)];
                for (std::size_t j = 0; j < Bn.size(); ++j) rhs.noalias() += dw[static_cast<Eigen::Index>(j)] * (Bn[j] * x.col(n));
            }
        }
        if (cache.has_A)
            x.col(n + 1) = cache.implicit[static_cast<std::size_t>(n + 1)].solve(rhs);
        else
            x.col(n + 1) = rhs;
        check_finite(x.col(n + 1), path, n + 1);
    }
}

void validate(const ForwardSetup& s, const Control& u, const QWienerConfig& noise, const NoiseEnsemble& ens,
              const TimeGrid& grid) {
    if (!s.coeffs.b) throw ValidationError("solve_forward: drift b missing");
    if (s.coeffs.reach() < -grid.n_delay) throw ValidationError("solve_forward: coefficient reads exceed the delay horizon");
    if (s.gamma.dim() != s.coeffs.dim || !s.gamma.covers(-grid.n_delay) || !s.gamma.covers(0))
        throw ValidationError("solve_forward: gamma must be a d-dimensional path on [-K, 0]");
    if (ens.n_steps() != grid.n_steps) throw ValidationError("solve_forward: ensemble and grid disagree on n_steps");
    if (ens.n_modes() != noise.modes()) throw ValidationError("solve_forward: ensemble and noise disagree on modes");
    if (u.paths.empty()) throw ValidationError("solve_forward: empty control");
    if (!u.deterministic() && static_cast<int>(u.paths.size()) != ens.n_paths())
        throw ValidationError("solve_forward: control path count differs from the ensemble");
    if (u.dim() != s.coeffs.control_dim) throw ValidationError("solve_forward: control dimension mismatch");
    if (!u.paths.front().covers(-grid.n_delay) || !u.paths.front().covers(grid.n_steps - 1))
        throw ValidationError("solve_forward: control must span [-K, T)");
}

StatePath initial_path(const ForwardSetup& s, const TimeGrid& grid) {
    StatePath x(s.coeffs.dim, -grid.n_delay, grid.n_steps);
    for (int n = -grid.n_delay; n <= 0; ++n) x.col(n) = s.gamma.col(n);
    return x;
}

}  // namespace

ForwardSolution solve_forward(const ForwardSetup& setup, const Control& u, const QWienerConfig& noise,
                              const NoiseEnsemble& ens, const TimeGrid& grid) {
    validate(setup, u, noise, ens, grid);
    const StepCache cache = build_cache(setup.ops, noise, grid, setup.coeffs.dim);
    ForwardSolution sol;
    sol.grid = grid;
    sol.x.reserve(static_cast<std::size_t>(ens.n_paths()));
    for (int p = 0; p < ens.n_paths(); ++p) {
        StatePath x = initial_path(setup, grid);
        march_path(setup, u.path(p), cache, ens, grid, p, nullptr, x);
        sol.x.push_back(std::move(x));
    }
    return sol;
}

double x_norm(const std::vector<StatePath>& a, const std::vector<StatePath>& b, const GelfandTriple& triple,
              const TimeGrid& grid) {
    if (a.size() != b.size()) throw ValidationError("x_norm: path counts differ");
    if (a.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t p = 0; p < a.size(); ++p) {
        double sup = 0.0;
        double integral = 0.0;
        for (int n = 0; n <= grid.n_steps; ++n) {
            const Vector e = a[p].col(n) - b[p].col(n);
            sup = std::max(sup, e.squaredNorm());
            const double nv = triple.norm_v(e);
            integral += nv * nv * grid.dt;
        }
        total += sup + integral;
    }
    return std::sqrt(total / static_cast<double>(a.size()));
}

PicardResult picard_iterate(const ForwardSetup& setup, const Control& u, const QWienerConfig& noise,
                            const NoiseEnsemble& ens, const TimeGrid& grid, const GelfandTriple& triple, int n_iter) {
    validate(setup, u, noise, ens, grid);
    if (n_iter < 1) throw ValidationError("picard_iterate: n_iter must be >= 1");
    if (triple.dim() != setup.coeffs.dim) throw ValidationError("picard_iterate: triple dimension mismatch");
    const StepCache cache = build_cache(setup.ops, noise, grid, setup.coeffs.dim);

    PicardResult res;
    // x^0: gamma, frozen at gamma(0) after 0
    ForwardSolution x0;
    x0.grid = grid;
    x0.method = "picard";
    for (int p = 0; p < ens.n_paths(); ++p) {
        StatePath x = initial_path(setup, grid);
        for (int n = 1; n <= grid.n_steps; ++n) x.col(n) = x.col(0);
        x0.x.push_back(std::move(x));
    }
    res.iterates.push_back(std::move(x0));

    int blowups = 0;
    for (int k = 0; k < n_iter; ++k) {
        const ForwardSolution& prev = res.iterates.back();
        ForwardSolution next;
        next.grid = grid;
        next.method = "picard";
        for (int p = 0; p < ens.n_paths(); ++p) {
            StatePath x = initial_path(setup, grid);
            march_path(setup, u.path(p), cache, ens, grid, p, &prev.x[static_cast<std::size_t>(p)], x);
            next.x.push_back(std::move(x));
        }
        const double inc = x_norm(next.x, prev.x, triple, grid);
        res.increments.push_back(inc);
        if (res.increments.size() >= 2) {
            const double before = res.increments[res.increments.size() - 2];
            const double r = before > 0 ? inc / before : 0.0;
            res.ratios.push_back(r);
            if (r > 10.0 && ++blowups >= 2)
                throw NumericalError("picard_iterate: diverging (contraction ratio > 10 twice); shorten the time window T");
        }
        res.iterates.push_back(std::move(next));
        if (inc == 0.0) break;
    }
    return res;
}

AprioriReport apriori_diagnostic(const ForwardSetup& a, const Control& ua, const ForwardSetup& b, const Control& ub,
                                 const QWienerConfig& noise, const NoiseEnsemble& ens, const TimeGrid& grid,
                                 const GelfandTriple& triple) {
    const ForwardSolution xa = solve_forward(a, ua, noise, ens, grid);
    const ForwardSolution xb = solve_forward(b, ub, noise, ens, grid);
    AprioriReport rep;
    const double xn = x_norm(xa.x, xb.x, triple, grid);
    rep.lhs = xn * xn;

    double g = 0.0;
    for (int n = -grid.n_delay; n <= 0; ++n) g = std::max(g, (a.gamma.col(n) - b.gamma.col(n)).squaredNorm());
    double data = 0.0;
    Matrix X;
    for (int p = 0; p < ens.n_paths(); ++p) {
        const StatePath& x = xb.x[static_cast<std::size_t>(p)];
        for (int n = 0; n < grid.n_steps; ++n) {
            gather_reads(x, b.coeffs.reads, n, X);
            Matrix Xa;
            gather_reads(x, a.coeffs.reads, n, Xa);
            const Vector va = delayed_control(ua.path(p), a.mu1, n);
            const Vector vb = delayed_control(ub.path(p), b.mu1, n);
            double s = (a.coeffs.b(n, Xa, va) - b.coeffs.b(n, X, vb)).squaredNorm();
            const Matrix sa = a.coeffs.sigma ? a.coeffs.sigma(n, Xa, va) : Matrix::Zero(a.coeffs.dim, noise.modes());
            const Matrix sb = b.coeffs.sigma ? b.coeffs.sigma(n, X, vb) : Matrix::Zero(b.coeffs.dim, noise.modes());
            for (int j = 0; j < noise.modes(); ++j) s += noise.eigenvalues[j] * (sa.col(j) - sb.col(j)).squaredNorm();
            data += s * grid.dt;
        }
    }
    rep.rhs = g + data / ens.n_paths();
    rep.ratio = rep.rhs > 0 ? rep.lhs / rep.rhs : (rep.lhs > 0 ? INFINITY : 0.0);
    return rep;
}

}  // namespace psmp
