#include "psmp/lq_module.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace psmp {

namespace {

double min_sym_eig(const Matrix& M) {
    if (M.size() == 0) return 0.0;
    return Eigen::SelfAdjointEigenSolver<Matrix>(M, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

void require_shape(const Matrix& M, int r, int c, const char* name) {
    if (M.rows() != r || M.cols() != c) {
        std::ostringstream os;
        os << "LQSpec: " << name << " is " << M.rows() << "x" << M.cols() << ", expected " << r << "x" << c;
        throw ValidationError(os.str());
    }
}

void require_symmetric(const Matrix& M, const char* name) {
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + M.cwiseAbs().maxCoeff()))
        throw ValidationError(std::string("LQSpec: ") + name + " must be symmetric");
}

std::vector<int> lq_reads(const LQSpec& s) {
    std::set<int> r{0};
    for (const auto& a : s.A1) r.insert(a.first);
    for (const auto& b : s.B1) r.insert(b.first);
    return {r.begin(), r.end()};
}

// per-read sums of the path-operator blocks
std::vector<Matrix> blocks_by_read(const std::vector<std::pair<int, Matrix>>& atoms, const std::vector<int>& reads,
                                   int rows, int cols) {
    std::vector<Matrix> out(reads.size(), Matrix::Zero(rows, cols));
    for (const auto& a : atoms) {
        const auto it = std::find(reads.begin(), reads.end(), a.first);
        out[static_cast<std::size_t>(it - reads.begin())] += a.second;
    }
    return out;
}

Matrix hcat(const std::vector<Matrix>& blocks, int rows) {
    int cols = 0;
    for (const auto& b : blocks) cols += static_cast<int>(b.cols());
    Matrix out(rows, cols);
    int at = 0;
    for (const auto& b : blocks) {
        out.middleCols(at, b.cols()) = b;
        at += static_cast<int>(b.cols());
    }
    return out;
}

}  // namespace

LQCheck check_lq_spec(const LQSpec& s) {
    const int d = s.dim, c = s.control_dim, m = s.noise.modes();
    if (d < 1 || c < 1) throw ValidationError("LQSpec: dimensions must be positive");
    require_shape(s.A, d, d, "A");
    if (!s.B.empty() && static_cast<int>(s.B.size()) != m) throw ValidationError("LQSpec: B needs one block per noise mode");
    for (const auto& b : s.B) require_shape(b, d, d, "B_j");
    for (const auto& a : s.A1) {
        require_shape(a.second, d, d, "A1 block");
        if (a.first > 0 || a.first < -s.grid.n_delay) throw ValidationError("LQSpec: A1 offset outside [-K, 0]");
    }
    for (const auto& b : s.B1) {
        require_shape(b.second, d * m, d, "B1 block");
        if (b.first > 0 || b.first < -s.grid.n_delay) throw ValidationError("LQSpec: B1 offset outside [-K, 0]");
    }
    require_shape(s.C, d, c, "C");
    if (s.D.size() != 0) require_shape(s.D, d * m, c, "D");
    require_shape(s.F, d, d, "F");
    require_shape(s.N, c, c, "N");
    require_shape(s.Phi, d, d, "Phi");
    if (s.G2.size() != 0 && s.G2.size() != m) throw ValidationError("LQSpec: G2 needs one entry per noise mode");
    if (s.gamma.size() != d) throw ValidationError("LQSpec: gamma has the wrong dimension");
    if (s.v0.size() != c) throw ValidationError("LQSpec: v0 has the wrong dimension");
    require_symmetric(s.F, "F");
    require_symmetric(s.N, "N");
    require_symmetric(s.Phi, "Phi");

    LQCheck chk;
    chk.F_min_eig = min_sym_eig(s.F);
    chk.Phi_min_eig = min_sym_eig(s.Phi);
    chk.N_min_eig = min_sym_eig(s.N);
    if (chk.F_min_eig < -1e-12) throw ValidationError("LQSpec: F must be nonnegative definite");
    if (chk.Phi_min_eig < -1e-12) throw ValidationError("LQSpec: Phi must be nonnegative definite");
    if (!(chk.N_min_eig > 0.0)) throw ValidationError("LQSpec: N must be uniformly positive definite");
    const auto ops = OperatorPair::constant(s.A, s.B.empty() ? std::vector<Matrix>(static_cast<std::size_t>(m), Matrix::Zero(d, d)) : s.B,
                                            s.alpha, s.lambda, s.K1);
    chk.coercivity = check_coercivity(ops, s.triple, s.noise, s.grid, 64, 11);
    return chk;
}

ControlProblem lq_to_problem(const LQSpec& s) {
    check_lq_spec(s);
    const int d = s.dim, c = s.control_dim, m = s.noise.modes();
    const auto& g = s.grid;

    ControlProblem prob;
    prob.grid = g;
    prob.noise = s.noise;
    prob.triple = s.triple;
    prob.basis = s.basis;
    prob.U = s.U;

    auto& fw = prob.forward;
    fw.ops = OperatorPair::constant(s.A, s.B.empty() ? std::vector<Matrix>(static_cast<std::size_t>(m), Matrix::Zero(d, d)) : s.B,
                                    s.alpha, s.lambda, s.K1);
    if (s.B.empty()) fw.ops.B = nullptr;
    fw.mu1 = s.mu1;
    fw.gamma = StatePath(d, -g.n_delay, 0);
    fw.gamma.values.colwise() = s.gamma;

    auto& co = fw.coeffs;
    co.dim = d;
    co.modes = m;
    co.control_dim = c;
    co.reads = lq_reads(s);
    const auto a_blocks = blocks_by_read(s.A1, co.reads, d, d);
    const auto b_blocks = blocks_by_read(s.B1, co.reads, d * m, d);
    const Matrix Ax = hcat(a_blocks, d);
    const Matrix Bx = hcat(b_blocks, d * m);
    const Matrix C = s.C;
    const Matrix D = s.D.size() ? s.D : Matrix(Matrix::Zero(d * m, c));
    double la = 0.0, lb = 0.0;
    for (const auto& b : a_blocks) la += b.norm();
    for (const auto& b : b_blocks) lb += b.norm();
    co.L1 = (la * la + lb * lb) * (1.0 + 1e-9);

    co.b = [Ax, C](int, const Matrix& X, const Vector& v) {
        const Eigen::Map<const Vector> x(X.data(), X.size());
        return Vector(Ax * x + C * v);
    };
    co.db_dx = [Ax](int, const Matrix&, const Vector&) { return Ax; };
    co.db_dv = [C](int, const Matrix&, const Vector&) { return C; };
    const bool has_sigma = !s.B1.empty() || s.D.size() != 0;
    if (has_sigma) {
        co.sigma = [Bx, D, d, m](int, const Matrix& X, const Vector& v) {
            const Eigen::Map<const Vector> x(X.data(), X.size());
            const Vector flat = Bx * x + D * v;
            return Matrix(Eigen::Map<const Matrix>(flat.data(), d, m));
        };
        co.dsigma_dx = [Bx](int, const Matrix&, const Vector&) { return Bx; };
        co.dsigma_dv = [D](int, const Matrix&, const Vector&) { return D; };
    }

    auto& cost = prob.cost;
    cost.mu2 = s.mu2;
    const Matrix F = s.F, N = s.N, Phi = s.Phi;
    const double G1 = s.G1;
    const Vector G2 = s.G2.size() ? s.G2 : Vector(Vector::Zero(m));
    const int R = co.n_reads();
    const int r0 = static_cast<int>(std::find(co.reads.begin(), co.reads.end(), 0) - co.reads.begin());
    cost.depends_on_yz = G1 != 0.0 || G2.cwiseAbs().maxCoeff() != 0.0;
    cost.f = [F, N, G1, G2, r0](int, const Matrix& X, double y, const Vector& z, const Vector& v) {
        const auto x = X.col(r0);
        return x.dot(F * x) + G1 * y + G2.dot(z) + v.dot(N * v);
    };
    cost.df = [F, N, G1, G2, r0, R, d](int, const Matrix& X, double, const Vector&, const Vector& v) {
        CostSpec::Gradient gr;
        gr.dx = Vector::Zero(d * R);
        gr.dx.segment(r0 * d, d) = 2.0 * F * X.col(r0);
        gr.dy = G1;
        gr.dz = G2;
        gr.dv = 2.0 * N * v;
        return gr;
    };
    cost.h = [Phi](const Vector& x1) { return x1.dot(Phi * x1); };
    cost.dh = [Phi](const Vector& x1) { return Vector(2.0 * Phi * x1); };

    prob.v0 = StatePath(c, -g.n_delay, -1);
    if (g.n_delay > 0) prob.v0.values.colwise() = s.v0;
    return prob;
}

Control lq_closed_form_control(const LQSpec& s, const ControlProblem& prob, const Candidate& c) {
    const auto& g = prob.grid;
    const int N = g.n_steps, d = s.dim, cd = s.control_dim, m = s.noise.modes();
    const int M = c.fwd->n_paths();
    const Matrix D = s.D.size() ? s.D : Matrix(Matrix::Zero(d * m, cd));
    const Eigen::LDLT<Matrix> Nf(s.N);
    if (Nf.info() != Eigen::Success) throw NumericalError("lq_closed_form_control: N factorization failed");

    std::vector<Matrix> S(static_cast<std::size_t>(N), Matrix::Zero(M, cd));
    for (int p = 0; p < M; ++p)
        for (int n = 0; n < N; ++n) {
            Vector lq = c.adjoint.q[static_cast<std::size_t>(p)].col(n);
            for (int j = 0; j < m; ++j) lq.segment(j * d, d) *= s.noise.eigenvalues[j];
            S[static_cast<std::size_t>(n)].row(p) =
                (s.C.transpose() * c.adjoint.p[static_cast<std::size_t>(p)].col(n) + D.transpose() * lq).transpose();
        }
    const bool single = c.E->identity() && c.u.deterministic();
    Control out;
    out.paths.assign(single ? 1 : static_cast<std::size_t>(M), StatePath(cd, -g.n_delay, N));
    for (auto& path : out.paths)
        for (int n = -g.n_delay; n < 0; ++n) path.col(n) = s.v0;
    for (int t = 0; t < N; ++t) {
        Matrix agg = Matrix::Zero(M, cd);
        for (int i = 0; i < s.mu1.size(); ++i) {
            const int n = t - s.mu1.offset(i);
            if (n > N - 1) continue;
            agg += s.mu1.weight(i) * S[static_cast<std::size_t>(n)];
        }
        const Matrix proj = c.E->project(t, agg);
        for (std::size_t p = 0; p < out.paths.size(); ++p)
            out.paths[p].col(t) = -0.5 * Nf.solve(Vector(proj.row(static_cast<Eigen::Index>(p)).transpose()));
    }
    for (auto& path : out.paths) path.col(N) = path.col(N - 1);
    return out;
}

QpResult lq_bruteforce_deterministic(const LQSpec& s) {
    check_lq_spec(s);
    const auto zero = [](const Matrix& M) { return M.size() == 0 || M.cwiseAbs().maxCoeff() == 0.0; };
    for (const auto& b : s.B)
        if (!zero(b)) throw ValidationError("lq_bruteforce_deterministic: needs B = 0");
    for (const auto& b : s.B1)
        if (!zero(b.second)) throw ValidationError("lq_bruteforce_deterministic: needs B1 = 0");
    if (!zero(s.D)) throw ValidationError("lq_bruteforce_deterministic: needs D = 0");
    if (s.G1 != 0.0 || !zero(s.G2)) throw ValidationError("lq_bruteforce_deterministic: needs G1 = G2 = 0");
    const auto& g = s.grid;
    const int N = g.n_steps, d = s.dim, c = s.control_dim, k = g.n_delay;
    const int n = N * c;
    if (n > 2000) throw ValidationError("lq_bruteforce_deterministic: n_steps * control_dim exceeds 2000");
    const double dt = g.dt;

    // x_i = a_i + S_i U on nodes -k..N
    std::vector<Vector> a(static_cast<std::size_t>(N + k + 1), s.gamma);
    std::vector<Matrix> S(static_cast<std::size_t>(N + k + 1), Matrix::Zero(d, n));
    auto at = [k](int node) { return static_cast<std::size_t>(node + k); };
    const Eigen::PartialPivLU<Matrix> L(Matrix::Identity(d, d) - dt * s.A);

    // v_i = bv_i + P_i U
    auto control_at = [&](int node, Vector& bv, Matrix& P) {
        bv = Vector::Zero(c);
        P = Matrix::Zero(c, n);
        for (int i = 0; i < s.mu1.size(); ++i) {
            const int j = node + s.mu1.offset(i);
            if (j < 0)
                bv += s.mu1.weight(i) * s.v0;
            else
                P.middleCols(j * c, c) += s.mu1.weight(i) * Matrix::Identity(c, c);
        }
    };

    Vector bv;
    Matrix P;
    QpResult out;
    out.H = Matrix::Zero(n, n);
    out.g = Vector::Zero(n);
    out.c0 = 0.0;
    for (int i = 0; i < N; ++i) {
        control_at(i, bv, P);
        Vector ra = a[at(i)] + dt * s.C * bv;
        Matrix rS = S[at(i)] + dt * s.C * P;
        for (const auto& blk : s.A1) {
            ra += dt * blk.second * a[at(i + blk.first)];
            rS += dt * blk.second * S[at(i + blk.first)];
        }
        a[at(i + 1)] = L.solve(ra);
        S[at(i + 1)] = L.solve(rS);

        out.H.noalias() += dt * (S[at(i)].transpose() * s.F * S[at(i)] + P.transpose() * s.N * P);
        out.g.noalias() += dt * (S[at(i)].transpose() * s.F * a[at(i)] + P.transpose() * s.N * bv);
        out.c0 += dt * (a[at(i)].dot(s.F * a[at(i)]) + bv.dot(s.N * bv));
    }
    Vector a1 = Vector::Zero(d);
    Matrix S1 = Matrix::Zero(d, n);
    for (int i = 0; i < s.mu2.size(); ++i) {
        a1 += s.mu2.weight(i) * a[at(N + s.mu2.offset(i))];
        S1 += s.mu2.weight(i) * S[at(N + s.mu2.offset(i))];
    }
    out.H.noalias() += S1.transpose() * s.Phi * S1;
    out.g.noalias() += S1.transpose() * s.Phi * a1;
    out.c0 += a1.dot(s.Phi * a1);
    out.H = 0.5 * (out.H + out.H.transpose());
    out.min_eig = min_sym_eig(out.H);

    const Vector U = out.H.completeOrthogonalDecomposition().solve(-out.g);
    out.value = qp_value(out, U);
    Control u;
    u.paths.emplace_back(c, -k, N);
    auto& path = u.paths.front();
    for (int i = -k; i < 0; ++i) path.col(i) = s.v0;
    for (int i = 0; i < N; ++i) path.col(i) = U.segment(i * c, c);
    path.col(N) = path.col(N - 1);
    out.u = std::move(u);
    return out;
}

double qp_value(const QpResult& qp, const Vector& U) { return U.dot(qp.H * U) + 2.0 * qp.g.dot(U) + qp.c0; }

Vector qp_box_minimize(const QpResult& qp, const Vector& lo, const Vector& hi, int n_steps) {
    const int n = static_cast<int>(qp.g.size());
    const int c = static_cast<int>(lo.size());
    if (c * n_steps != n) throw ValidationError("qp_box_minimize: bounds do not match the stacked control");
    Vector L(n), Hb(n);
    for (int i = 0; i < n_steps; ++i) {
        L.segment(i * c, c) = lo;
        Hb.segment(i * c, c) = hi;
    }
    // accelerated projected gradient to find the active set, then an exact solve on the free coordinates
    const double lip = 2.0 * Eigen::SelfAdjointEigenSolver<Matrix>(qp.H, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    Vector U = Vector::Zero(n).cwiseMax(L).cwiseMin(Hb);
    Vector Y = U;
    double t = 1.0;
    for (int it = 0; it < 20000; ++it) {
        const Vector grad = 2.0 * (qp.H * Y + qp.g);
        const Vector next = (Y - grad / lip).cwiseMax(L).cwiseMin(Hb);
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        Y = next + ((t - 1.0) / tn) * (next - U);
        const double change = (next - U).norm();
        U = next;
        t = tn;
        if (change < 1e-14 * (1.0 + U.norm())) break;
    }
    for (int pass = 0; pass < 50; ++pass) {
        const Vector grad = qp.H * U + qp.g;
        std::vector<int> free;
        for (int i = 0; i < n; ++i) {
            const bool at_lo = U[i] <= L[i] + 1e-12 && grad[i] > 0.0;
            const bool at_hi = U[i] >= Hb[i] - 1e-12 && grad[i] < 0.0;
            if (!at_lo && !at_hi) free.push_back(i);
        }
        Vector V = U;
        if (!free.empty()) {
            const int f = static_cast<int>(free.size());
            Matrix Hff(f, f);
            Vector rhs(f);
            for (int i = 0; i < f; ++i) {
                double r = -qp.g[free[i]];
                for (int j = 0; j < n; ++j)
                    if (std::find(free.begin(), free.end(), j) == free.end()) r -= qp.H(free[i], j) * U[j];
                rhs[i] = r;
                for (int j = 0; j < f; ++j) Hff(i, j) = qp.H(free[i], free[j]);
            }
            const Vector sol = Hff.ldlt().solve(rhs);
            for (int i = 0; i < f; ++i) V[free[i]] = sol[i];
        }
        const Vector clipped = V.cwiseMax(L).cwiseMin(Hb);
        const bool same = (clipped - U).norm() <= 1e-15 * (1.0 + U.norm());
        U = clipped;
        if (same) break;
    }
    return U;
}

Vector stack_control(const Control& u, const TimeGrid& grid) {
    const int c = u.dim();
    Vector out(grid.n_steps * c);
    for (int n = 0; n < grid.n_steps; ++n) out.segment(n * c, c) = u.path(0).col(n);
    return out;
}

}  // namespace psmp
