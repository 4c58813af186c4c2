#include "psmp/smp_engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace psmp {

Vector ControlConstraint::project(const Vector& v) const {
    switch (kind) {
        case Kind::Whole:
            return v;
        case Kind::Box:
            return v.cwiseMax(lo).cwiseMin(hi);
        case Kind::Ball: {
            const Vector d = v - center;
            const double n = d.norm();
            return n <= radius ? v : Vector(center + d * (radius / n));
        }
    }
    return v;
}

bool ControlConstraint::contains(const Vector& v, double tol) const { return (project(v) - v).norm() <= tol; }

ControlConstraint ControlConstraint::box(Vector lo, Vector hi) {
    if (lo.size() != hi.size() || (lo.array() > hi.array()).any()) throw ValidationError("box constraint: need lo <= hi");
    ControlConstraint c;
    c.kind = Kind::Box;
    c.lo = std::move(lo);
    c.hi = std::move(hi);
    return c;
}

ControlConstraint ControlConstraint::ball(Vector center, double radius) {
    if (!(radius > 0.0)) throw ValidationError("ball constraint: radius must be positive");
    ControlConstraint c;
    c.kind = Kind::Ball;
    c.center = std::move(center);
    c.radius = radius;
    return c;
}

Control make_control(const ControlProblem& prob, const std::function<Vector(int node)>& values) {
    const auto& g = prob.grid;
    StatePath u(prob.control_dim(), -g.n_delay, g.n_steps);
    for (int n = -g.n_delay; n < 0; ++n) u.col(n) = prob.v0.col(n);
    for (int n = 0; n < g.n_steps; ++n) {
        const Vector v = values(n);
        if (v.size() != prob.control_dim()) throw ValidationError("make_control: control dimension mismatch");
        u.col(n) = v;
    }
    u.col(g.n_steps) = u.col(g.n_steps - 1);
    Control c;
    c.paths.push_back(std::move(u));
    return c;
}

Control make_direction(const ControlProblem& prob, const std::function<Vector(int node)>& values) {
    const auto& g = prob.grid;
    StatePath u(prob.control_dim(), -g.n_delay, g.n_steps);
    for (int n = 0; n < g.n_steps; ++n) u.col(n) = values(n);
    Control c;
    c.paths.push_back(std::move(u));
    return c;
}

Control control_axpy(const Control& a, double s, const Control& b) {
    Control out;
    const std::size_t n = std::max(a.paths.size(), b.paths.size());
    if (!a.deterministic() && !b.deterministic() && a.paths.size() != b.paths.size())
        throw ValidationError("control_axpy: path counts differ");
    out.paths.reserve(n);
    for (std::size_t p = 0; p < n; ++p) {
        StatePath u = a.path(static_cast<int>(p));
        u.values += s * b.path(static_cast<int>(p)).values;
        out.paths.push_back(std::move(u));
    }
    return out;
}

double control_inner(const Control& a, const Control& b, const TimeGrid& grid) {
    const std::size_t n = std::max(a.paths.size(), b.paths.size());
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        const auto& ua = a.path(static_cast<int>(p));
        const auto& ub = b.path(static_cast<int>(p));
        for (int t = 0; t < grid.n_steps; ++t) total += ua.col(t).dot(ub.col(t));
    }
    return total * grid.dt / static_cast<double>(n);
}

Control project_control(const Control& u, const ControlConstraint& U, const TimeGrid& grid) {
    if (U.kind == ControlConstraint::Kind::Whole) return u;
    Control out = u;
    for (auto& path : out.paths)
        for (int n = 0; n < grid.n_steps; ++n) path.col(n) = U.project(path.col(n));
    return out;
}

SmpSession::SmpSession(ControlProblem prob, NoiseEnsemble ens) : prob_(std::move(prob)), ens_(std::move(ens)) {
    if (ens_.n_steps() != prob_.grid.n_steps) throw ValidationError("SmpSession: ensemble and grid disagree");
}

std::shared_ptr<const ConditionalExpectation> SmpSession::expectation(const std::shared_ptr<const ForwardSolution>& fwd) {
    if (ens_.is_zero() || !prob_.basis.depends_on_state()) {
        if (!shared_) shared_ = std::make_shared<ConditionalExpectation>(prob_.basis, prob_.grid, prob_.noise, ens_, nullptr);
        return shared_;
    }
    return std::make_shared<ConditionalExpectation>(prob_.basis, prob_.grid, prob_.noise, ens_, fwd.get());
}

CostValue SmpSession::cost(const Control& u) {
    auto fwd = std::make_shared<const ForwardSolution>(solve_forward(prob_.forward, u, prob_.noise, ens_, prob_.grid));
    const auto E = expectation(fwd);
    const auto y = solve_bsde(prob_.cost, prob_.forward.coeffs, *fwd, u, prob_.forward.mu1, *E, ens_, prob_.noise);
    return {y.J, y.se};
}

Candidate SmpSession::solve(const Control& u) {
    Candidate c;
    c.u = u;
    c.fwd = std::make_shared<const ForwardSolution>(solve_forward(prob_.forward, u, prob_.noise, ens_, prob_.grid));
    c.E = expectation(c.fwd);
    c.bsde = solve_bsde(prob_.cost, prob_.forward.coeffs, *c.fwd, u, prob_.forward.mu1, *c.E, ens_, prob_.noise);
    c.lin = linearize(prob_, *c.fwd, u, c.bsde);
    const int M = ens_.n_paths();
    const int N = prob_.grid.n_steps;
    if (prob_.cost.depends_on_yz) {
        Matrix dyf(M, N);
        std::vector<Matrix> dzf(static_cast<std::size_t>(N), Matrix(M, prob_.noise.modes()));
        for (int p = 0; p < M; ++p)
            for (int n = 0; n < N; ++n) {
                dyf(p, n) = c.lin.df_dy(p, n);
                dzf[static_cast<std::size_t>(n)].row(p) = c.lin.df_dz(p, n).transpose();
            }
        c.k = solve_cost_adjoint_k(dyf, dzf, ens_, prob_.noise, prob_.grid);
    } else {
        c.k = Matrix::Constant(M, N + 1, -1.0);
    }
    const ABSEEProblem adj = assemble_adjoint(prob_, c, *c.E, ens_);
    c.adjoint = solve_absee(adj, *c.E, ens_);
    return c;
}

Linearization linearize(const ControlProblem& prob, const ForwardSolution& fwd, const Control& u,
                        const BSDESolution& yz) {
    const auto& co = prob.forward.coeffs;
    Linearization L;
    L.n_paths = fwd.n_paths();
    L.n_steps = prob.grid.n_steps;
    L.dim = co.dim;
    L.modes = prob.noise.modes();
    L.control_dim = co.control_dim;
    L.reads = co.n_reads();
    const std::size_t cells = static_cast<std::size_t>(L.n_paths) * L.n_steps;
    const int d = L.dim, m = L.modes, c = L.control_dim, R = L.reads;
    L.bx.assign(cells * d * d * R, 0.0);
    L.bv.assign(cells * d * c, 0.0);
    L.sx.assign(cells * d * m * d * R, 0.0);
    L.sv.assign(cells * d * m * c, 0.0);
    L.fx.assign(cells * d * R, 0.0);
    L.fv.assign(cells * c, 0.0);
    L.fy.assign(cells, 0.0);
    L.fz.assign(cells * m, 0.0);

    auto put = [](std::vector<double>& dst, std::size_t cell, const Matrix& src, int r, int cc, const char* what) {
        if (src.rows() != r || src.cols() != cc) {
            std::ostringstream os;
            os << "linearize: " << what << " has shape " << src.rows() << "x" << src.cols() << ", expected " << r << "x" << cc;
            throw ValidationError(os.str());
        }
        std::copy(src.data(), src.data() + src.size(), dst.data() + cell * static_cast<std::size_t>(r) * cc);
    };

    Matrix X;
    for (int p = 0; p < L.n_paths; ++p) {
        const StatePath& x = fwd.x[static_cast<std::size_t>(p)];
        const StatePath& up = u.path(p);
        for (int n = 0; n < L.n_steps; ++n) {
            const std::size_t cell = static_cast<std::size_t>(p) * L.n_steps + n;
            gather_reads(x, co.reads, n, X);
            const Vector v = delayed_control(up, prob.forward.mu1, n);
            if (co.db_dx) put(L.bx, cell, co.db_dx(n, X, v), d, d * R, "db_dx");
            if (co.db_dv) put(L.bv, cell, co.db_dv(n, X, v), d, c, "db_dv");
            if (co.dsigma_dx) put(L.sx, cell, co.dsigma_dx(n, X, v), d * m, d * R, "dsigma_dx");
            if (co.dsigma_dv) put(L.sv, cell, co.dsigma_dv(n, X, v), d * m, c, "dsigma_dv");
            if (prob.cost.df) {
                const Vector z = yz.z.empty() ? Vector(Vector::Zero(m)) : Vector(yz.z[static_cast<std::size_t>(n)].row(p).transpose());
                const auto gr = prob.cost.df(n, X, yz.y(p, n + 1), z, v);
                put(L.fx, cell, gr.dx, d * R, 1, "df_dx");
                put(L.fv, cell, gr.dv, c, 1, "df_dv");
                L.fy[cell] = gr.dy;
                if (gr.dz.size() == m) put(L.fz, cell, gr.dz, m, 1, "df_dz");
            }
        }
    }
    return L;
}

PathKernels path_kernels(const ControlProblem& prob, const Linearization& lin, int path) {
    const auto& reads = prob.forward.coeffs.reads;
    const auto& g = prob.grid;
    std::map<int, std::vector<int>> by_offset;
    for (std::size_t r = 0; r < reads.size(); ++r) by_offset[reads[r]].push_back(static_cast<int>(r));
    FiniteMeasure nu0;
    nu0.dt = g.dt;
    for (const auto& kv : by_offset) {
        nu0.offsets.push_back(kv.first);
        nu0.weights.push_back(1.0);
    }
    const int d = lin.dim, m = lin.modes, N = g.n_steps;
    PathKernels out{KernelRepresentation(g, nu0, d, d, 0, N - 1), KernelRepresentation(g, nu0, d * m, d, 0, N - 1),
                    KernelRepresentation(g, nu0, 1, d, 0, N - 1)};
    for (int n = 0; n < N; ++n) {
        int atom = 0;
        for (const auto& kv : by_offset) {
            for (int r : kv.second) {
                out.b.kernel(n, atom) += lin.db_dx(path, n).middleCols(r * d, d);
                out.sigma.kernel(n, atom) += lin.dsigma_dx(path, n).middleCols(r * d, d);
                out.f.kernel(n, atom) += lin.df_dx(path, n).middleRows(r * d, d).transpose();
            }
            ++atom;
        }
    }
    return out;
}

namespace {

// q column (d*m, column-major) with mode j scaled by lambda_j
Vector lambda_weighted(const Eigen::Ref<const Vector>& q, const QWienerConfig& noise, int d) {
    Vector out = q;
    for (int j = 0; j < noise.modes(); ++j) out.segment(j * d, d) *= noise.eigenvalues[j];
    return out;
}

}  // namespace

ABSEEProblem assemble_adjoint(const ControlProblem& prob, const Candidate& c, const ConditionalExpectation& E,
                              const NoiseEnsemble& ens) {
    const auto& g = prob.grid;
    const int N = g.n_steps;
    const int d = prob.forward.coeffs.dim;
    const int M = ens.n_paths();
    ABSEEProblem a;
    a.grid = g;
    a.noise = prob.noise;
    a.dim = d;
    const auto& ops = prob.forward.ops;
    if (ops.A) a.M = [A = ops.A, g](int n) { return Matrix(A(g.time(n)).transpose()); };
    if (ops.B)
        a.N = [B = ops.B, g](int n) {
            auto Bs = B(g.time(n));
            for (auto& b : Bs) b.transposeInPlace();
            return Bs;
        };

    const Linearization* lin = &c.lin;
    const Matrix* k = &c.k;
    const auto reads = prob.forward.coeffs.reads;
    const QWienerConfig noise = prob.noise;
    const bool has_sigma = static_cast<bool>(prob.forward.coeffs.dsigma_dx);
    const bool has_f = static_cast<bool>(prob.cost.df);
    a.g = [lin, k, reads, noise, has_sigma, has_f, N, d](int path, int s, const BackwardSolution& sol) -> Vector {
        Vector out = Vector::Zero(d);
        for (std::size_t r = 0; r < reads.size(); ++r) {
            const int m = s - reads[r];
            if (m < 0 || m > N - 1) continue;
            const int col = static_cast<int>(r) * d;
            out.noalias() += lin->db_dx(path, m).middleCols(col, d).transpose() * sol.p[static_cast<std::size_t>(path)].col(m);
            if (has_sigma)
                out.noalias() += lin->dsigma_dx(path, m).middleCols(col, d).transpose() *
                                 lambda_weighted(sol.q[static_cast<std::size_t>(path)].col(m), noise, d);
            if (has_f) out.noalias() -= (*k)(path, m) * lin->df_dx(path, m).middleRows(col, d);
        }
        return out;
    };

    StatePath xi(d, N, N + g.n_delay);
    a.xi = {xi};
    a.F = RunningTerminal::none(g);
    const auto& mu2 = prob.cost.mu2;
    for (int i = 0; i < mu2.size(); ++i) {
        const int node = N + mu2.offset(i);
        if (node >= 1) a.F.dF[static_cast<std::size_t>(node)] += mu2.weight(i);
    }

    if (prob.cost.dh && !a.F.empty()) {
        // zeta = -k(T) dh(x^1(T)), pathwise or regressed onto F_s
        auto zeta = std::make_shared<Matrix>(M, d);
        for (int p = 0; p < M; ++p) {
            const Vector x1 = delay_integral(c.fwd->x[static_cast<std::size_t>(p)], mu2, N);
            zeta->row(p) = (-(*k)(p, N) * prob.cost.dh(x1)).transpose();
        }
        if (prob.project_running_terminal && !E.identity()) {
            auto proj = std::make_shared<std::map<int, Matrix>>();
            for (int s = 1; s <= N; ++s)
                if (a.F.dF[static_cast<std::size_t>(s)] != 0.0) (*proj)[s] = E.project(s < N ? s : N - 1, *zeta);
            // at s = N the datum is F_N-measurable; keep it pathwise
            (*proj)[N] = *zeta;
            a.zeta = [proj](int path, int s) { return Vector(proj->at(s).row(path).transpose()); };
        } else {
            a.zeta = [zeta](int path, int) { return Vector(zeta->row(path).transpose()); };
        }
    }
    return a;
}

double hamiltonian(const ControlProblem& prob, int node, const Matrix& X, double y, const Vector& z, const Vector& v,
                   const Vector& p, const Matrix& q, double k) {
    const auto& co = prob.forward.coeffs;
    double H = co.b(node, X, v).dot(p);
    if (co.sigma) H += prob.noise.l20_inner(co.sigma(node, X, v), q);
    if (prob.cost.f) H -= prob.cost.f(node, X, y, z, v) * k;
    return H;
}

Vector hamiltonian_dv(const ControlProblem& prob, int node, const Matrix& X, double y, const Vector& z,
                      const Vector& v, const Vector& p, const Matrix& q, double k) {
    const auto& co = prob.forward.coeffs;
    const int d = co.dim;
    Vector out = co.db_dv(node, X, v).transpose() * p;
    if (co.dsigma_dv) {
        const Eigen::Map<const Vector> qf(q.data(), q.size());
        out += co.dsigma_dv(node, X, v).transpose() * lambda_weighted(qf, prob.noise, d);
    }
    if (prob.cost.df) out -= k * prob.cost.df(node, X, y, z, v).dv;
    return out;
}

GradientReport smp_gradient(const ControlProblem& prob, const Candidate& c) {
    const auto& g = prob.grid;
    const int N = g.n_steps;
    const int M = c.fwd->n_paths();
    const int d = c.lin.dim;
    const int cd = c.lin.control_dim;
    const auto& mu1 = prob.forward.mu1;
    GradientReport rep;
    rep.J = c.bsde.J;
    rep.se = c.bsde.se;

    // d_v H on nodes 0..N-1, per path
    std::vector<Matrix> dH(static_cast<std::size_t>(N), Matrix::Zero(M, cd));
    for (int p = 0; p < M; ++p)
        for (int n = 0; n < N; ++n) {
            Vector h = c.lin.db_dv(p, n).transpose() * c.adjoint.p[static_cast<std::size_t>(p)].col(n);
            h.noalias() += c.lin.dsigma_dv(p, n).transpose() * lambda_weighted(c.adjoint.q[static_cast<std::size_t>(p)].col(n), prob.noise, d);
            h.noalias() -= c.k(p, n) * c.lin.df_dv(p, n);
            dH[static_cast<std::size_t>(n)].row(p) = h.transpose();
        }

    const bool single = c.E->identity() && c.u.deterministic();
    const int paths_out = single ? 1 : M;
    rep.G.paths.assign(static_cast<std::size_t>(paths_out), StatePath(cd, -g.n_delay, N));
    rep.dH.paths.assign(static_cast<std::size_t>(paths_out), StatePath(cd, -g.n_delay, N));
    for (int m = 0; m < N; ++m) {
        Matrix agg = Matrix::Zero(M, cd);
        for (int i = 0; i < mu1.size(); ++i) {
            const int n = m - mu1.offset(i);
            if (n > N - 1) continue;
            agg += mu1.weight(i) * dH[static_cast<std::size_t>(n)];
        }
        const Matrix Gm = c.E->project(m, agg);
        for (int p = 0; p < paths_out; ++p) {
            rep.G.paths[static_cast<std::size_t>(p)].col(m) = Gm.row(p).transpose();
            rep.dH.paths[static_cast<std::size_t>(p)].col(m) = dH[static_cast<std::size_t>(m)].row(p).transpose();
        }
    }

    if (prob.U.kind == ControlConstraint::Kind::Whole) {
        rep.residual = std::sqrt(std::max(0.0, control_inner(rep.G, rep.G, g)));
    } else {
        const Control moved = project_control(control_axpy(c.u, -1.0, rep.G), prob.U, g);
        const Control diff = control_axpy(c.u, -1.0, moved);
        rep.residual = std::sqrt(std::max(0.0, control_inner(diff, diff, g)));
    }
    return rep;
}

VariationalSolution solve_variational(const ControlProblem& prob, const Candidate& c, const Control& direction,
                                      const NoiseEnsemble& ens) {
    const auto& g = prob.grid;
    const auto& co = prob.forward.coeffs;
    const int N = g.n_steps, d = co.dim, m = prob.noise.modes(), R = co.n_reads();
    const int M = ens.n_paths();
    const Vector sl = prob.noise.eigenvalues.cwiseSqrt();

    std::vector<Eigen::PartialPivLU<Matrix>> S(static_cast<std::size_t>(N + 1));
    std::vector<std::vector<Matrix>> B(static_cast<std::size_t>(N));
    for (int n = 1; n <= N; ++n) {
        const Matrix A = prob.forward.ops.A ? prob.forward.ops.A(g.time(n)) : Matrix::Zero(d, d);
        S[static_cast<std::size_t>(n)].compute(Matrix::Identity(d, d) - g.dt * A);
    }
    for (int n = 0; n < N; ++n)
        if (prob.forward.ops.B) B[static_cast<std::size_t>(n)] = prob.forward.ops.B(g.time(n));

    VariationalSolution out;
    out.xhat.assign(static_cast<std::size_t>(M), StatePath(d, -g.n_delay, N));
    Vector Xh(d * R);
    for (int p = 0; p < M; ++p) {
        auto& xh = out.xhat[static_cast<std::size_t>(p)];
        const StatePath& dir = direction.path(p);
        for (int n = 0; n < N; ++n) {
            for (int r = 0; r < R; ++r) Xh.segment(r * d, d) = xh.col(n + co.reads[static_cast<std::size_t>(r)]);
            const Vector vh = delayed_control(dir, prob.forward.mu1, n);
            Vector rhs = xh.col(n) + g.dt * (c.lin.db_dx(p, n) * Xh + c.lin.db_dv(p, n) * vh);
            if (!ens.is_zero()) {
                const Vector sig = c.lin.dsigma_dx(p, n) * Xh + c.lin.dsigma_dv(p, n) * vh;
                for (int j = 0; j < m; ++j) {
                    const double w = sl[j] * ens.dw(p, n, j);
                    rhs.noalias() += w * sig.segment(j * d, d);
                    if (!B[static_cast<std::size_t>(n)].empty()) rhs.noalias() += w * (B[static_cast<std::size_t>(n)][static_cast<std::size_t>(j)] * xh.col(n));
                }
            }
            xh.col(n + 1) = S[static_cast<std::size_t>(n + 1)].solve(rhs);
        }
    }

    Vector terminal = Vector::Zero(M);
    if (prob.cost.dh)
        for (int p = 0; p < M; ++p) {
            const Vector x1 = delay_integral(c.fwd->x[static_cast<std::size_t>(p)], prob.cost.mu2, N);
            terminal[p] = prob.cost.dh(x1).dot(delay_integral(out.xhat[static_cast<std::size_t>(p)], prob.cost.mu2, N));
        }
    ScalarDriver driver;
    if (prob.cost.df)
        driver = [&](int p, int n, double ynext, const Vector& z) {
            Vector X(d * R);
            const auto& xh = out.xhat[static_cast<std::size_t>(p)];
            for (int r = 0; r < R; ++r) X.segment(r * d, d) = xh.col(n + co.reads[static_cast<std::size_t>(r)]);
            const Vector vh = delayed_control(direction.path(p), prob.forward.mu1, n);
            return c.lin.df_dx(p, n).col(0).dot(X) + c.lin.df_dy(p, n) * ynext + c.lin.df_dz(p, n).col(0).dot(z) +
                   c.lin.df_dv(p, n).col(0).dot(vh);
        };
    out.yz = solve_scalar_bsde(terminal, driver, *c.E, ens, prob.noise, g);
    out.yhat0 = out.yz.J;
    return out;
}

FdReport fd_gradient_check(SmpSession& s, const Control& u, const Control& direction, const std::vector<double>& rhos) {
    const auto& prob = s.problem();
    const Candidate c = s.solve(u);
    const GradientReport G = smp_gradient(prob, c);
    const VariationalSolution var = solve_variational(prob, c, direction, s.ensemble());
    const double pairing = control_inner(G.G, direction, prob.grid);
    FdReport rep;
    rep.J = c.bsde.J;
    rep.se = c.bsde.se;
    for (double rho : rhos) {
        FdRow row;
        row.rho = rho;
        const double jp = s.cost(control_axpy(u, rho, direction)).J;
        const double jm = s.cost(control_axpy(u, -rho, direction)).J;
        row.fd = (jp - c.bsde.J) / rho;
        row.central = (jp - jm) / (2.0 * rho);
        row.yhat0 = var.yhat0;
        row.pairing = pairing;
        rep.rows.push_back(row);
    }
    return rep;
}

DescentResult projected_gradient_descent(SmpSession& s, const Control& u0, const DescentOptions& opts) {
    const auto& prob = s.problem();
    const auto& g = prob.grid;
    DescentResult res;
    res.u = project_control(u0, prob.U, g);
    for (auto& path : res.u.paths)
        for (int n = -g.n_delay; n < 0; ++n) path.col(n) = prob.v0.col(n);
    Candidate c = s.solve(res.u);
    GradientReport rep = smp_gradient(prob, c);
    res.initial_residual = rep.residual;
    res.trace.push_back({0, rep.J, rep.residual, 0.0});
    double step = opts.initial_step;
    const auto done = [&](double r) { return r <= std::max(opts.tol * res.initial_residual, opts.abs_tol); };
    for (int it = 1; it <= opts.max_iter; ++it) {
        if (done(rep.residual)) break;
        bool accepted = false;
        Control trial;
        CostValue cv;
        for (int ls = 0; ls < opts.line_search_budget; ++ls) {
            trial = project_control(control_axpy(res.u, -step, rep.G), prob.U, g);
            cv = s.cost(trial);
            const double decrease = control_inner(rep.G, control_axpy(res.u, -1.0, trial), g);
            if (cv.J <= rep.J - opts.armijo * decrease + opts.noise_slack * rep.se) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            std::ostringstream os;
            os << "line search failed after " << opts.line_search_budget << " halvings at iteration " << it
               << " (J = " << rep.J << ", residual = " << rep.residual << ")";
            throw NumericalError(os.str());
        }
        res.u = std::move(trial);
        c = s.solve(res.u);
        rep = smp_gradient(prob, c);
        res.trace.push_back({it, rep.J, rep.residual, step});
        step = std::min(2.0 * step, opts.initial_step);
    }
    res.final_residual = rep.residual;
    res.converged = done(rep.residual);
    res.last = std::move(rep);
    return res;
}

SufficiencyCertificate sufficiency_certificate(SmpSession& s, const Control& ubar, int n_perturb, double scale,
                                               std::uint64_t seed) {
    const auto& prob = s.problem();
    const auto& g = prob.grid;
    const auto& co = prob.forward.coeffs;
    const int N = g.n_steps, d = co.dim, R = co.n_reads(), m = prob.noise.modes(), cd = co.control_dim;
    const Candidate c = s.solve(ubar);
    SufficiencyCertificate cert;
    cert.J = c.bsde.J;
    cert.se = c.bsde.se;
    const int M = c.fwd->n_paths();

    auto rnd = [seed](std::uint64_t a, std::uint64_t b, std::uint64_t j) { return counter_normal(seed ^ 0x5EEDULL, a, b, j); };

    // (a) midpoint convexity of h around the realized terminal values
    cert.h_convex = true;
    if (prob.cost.h)
        for (int t = 0; t < 200; ++t) {
            const int p = t % M;
            const Vector x1 = delay_integral(c.fwd->x[static_cast<std::size_t>(p)], prob.cost.mu2, N);
            Vector a(d), b(d);
            for (int j = 0; j < d; ++j) {
                a[j] = x1[j] + rnd(1, t, j);
                b[j] = x1[j] + rnd(2, t, j);
            }
            const double lhs = prob.cost.h(0.5 * (a + b));
            const double rhs = 0.5 * (prob.cost.h(a) + prob.cost.h(b));
            if (lhs > rhs + 1e-10 * (1.0 + std::abs(rhs))) cert.h_convex = false;
        }

    // (b) midpoint convexity of H in (x, y, z, v) with (p, q, k) frozen at ubar
    cert.H_convex = true;
    Matrix X;
    for (int t = 0; t < 200; ++t) {
        const int p = t % M;
        const int n = (t * 7) % N;
        gather_reads(c.fwd->x[static_cast<std::size_t>(p)], co.reads, n, X);
        const Vector v = delayed_control(ubar.path(p), prob.forward.mu1, n);
        const double y = c.bsde.y(p, n + 1);
        const Vector z = c.bsde.z.empty() ? Vector(Vector::Zero(m)) : Vector(c.bsde.z[static_cast<std::size_t>(n)].row(p).transpose());
        const Vector pp = c.adjoint.p[static_cast<std::size_t>(p)].col(n);
        const Matrix qq = c.adjoint.q_at(p, n);
        const double kk = c.k(p, n);
        auto perturb = [&](int tag, Matrix& Xo, double& yo, Vector& zo, Vector& vo) {
            Xo = X;
            for (int r = 0; r < R; ++r)
                for (int j = 0; j < d; ++j) Xo(j, r) += rnd(10 + tag, t, r * d + j);
            yo = y + rnd(20 + tag, t, 0);
            zo = z;
            for (int j = 0; j < m; ++j) zo[j] += rnd(30 + tag, t, j);
            vo = v;
            for (int j = 0; j < cd; ++j) vo[j] += rnd(40 + tag, t, j);
        };
        Matrix Xa, Xb;
        double ya, yb;
        Vector za, zb, va, vb;
        perturb(0, Xa, ya, za, va);
        perturb(1, Xb, yb, zb, vb);
        const double Ha = hamiltonian(prob, n, Xa, ya, za, va, pp, qq, kk);
        const double Hb = hamiltonian(prob, n, Xb, yb, zb, vb, pp, qq, kk);
        const double Hm = hamiltonian(prob, n, 0.5 * (Xa + Xb), 0.5 * (ya + yb), 0.5 * (za + zb), 0.5 * (va + vb), pp, qq, kk);
        if (Hm > 0.5 * (Ha + Hb) + 1e-10 * (1.0 + std::abs(Ha) + std::abs(Hb))) cert.H_convex = false;
    }

    // (c) sign of the cost adjoint at T
    cert.k_terminal_nonpositive = (c.k.col(N).array() <= 0.0).all();

    // empirical: random admissible perturbations never beat ubar beyond noise
    cert.perturbations = n_perturb;
    cert.min_gap = INFINITY;
    for (int i = 0; i < n_perturb; ++i) {
        const Control dir = make_direction(prob, [&](int n) {
            Vector v(cd);
            for (int j = 0; j < cd; ++j) v[j] = scale * rnd(100 + static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(n), j);
            return v;
        });
        const Control u = project_control(control_axpy(ubar, 1.0, dir), prob.U, g);
        const double J = s.cost(u).J;
        cert.min_gap = std::min(cert.min_gap, J - cert.J);
        if (J < cert.J - 3.0 * cert.se) ++cert.below;
    }
    return cert;
}

ProblemCertificate certify_problem(const ControlProblem& prob, int samples, std::uint64_t seed) {
    ProblemCertificate cert;
    cert.coercivity = check_coercivity(prob.forward.ops, prob.triple, prob.noise, prob.grid, samples, seed);
    cert.lipschitz = certify_lipschitz(prob.forward.coeffs, prob.grid, samples, seed);
    const auto& co = prob.forward.coeffs;
    const int d = co.dim, R = co.n_reads();
    const Matrix X0 = Matrix::Zero(d, R);
    const Vector v0 = Vector::Zero(co.control_dim);
    cert.finite_at_zero = true;
    std::map<int, int> atom_of;
    for (int o : co.reads) atom_of.emplace(o, 0);
    FiniteMeasure nu0;
    nu0.dt = prob.grid.dt;
    for (auto& kv : atom_of) {
        kv.second = nu0.size();
        nu0.offsets.push_back(kv.first);
        nu0.weights.push_back(1.0);
    }
    KernelRepresentation rep(prob.grid, nu0, d, d, 0, prob.grid.n_steps - 1);
    for (int n = 0; n < prob.grid.n_steps; ++n) {
        if (!co.b(n, X0, v0).allFinite()) cert.finite_at_zero = false;
        if (co.sigma && !co.sigma(n, X0, v0).allFinite()) cert.finite_at_zero = false;
        if (co.db_dx) {
            const Matrix J = co.db_dx(n, X0, v0);
            for (int r = 0; r < R; ++r) rep.kernel(n, atom_of[co.reads[static_cast<std::size_t>(r)]]) += J.middleCols(r * d, d);
        }
    }
    cert.b_bounds = compute_bounds(rep);
    return cert;
}

}  // namespace psmp
