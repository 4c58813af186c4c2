#include "psmp/backward_absee.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace psmp {

namespace {

// Standardized least squares: fitted = mean(y) + Z beta, Z the standardized retained columns.
struct LsqFactor {
    std::vector<int> keep;
    Vector mean;
    Vector scale;
    Eigen::LDLT<Matrix> ldlt;
    int rank = 0;
    double ridge = 0.0;

    Matrix standardized(const Matrix& raw) const {
        Matrix Z(raw.rows(), static_cast<Eigen::Index>(keep.size()));
        for (std::size_t c = 0; c < keep.size(); ++c) {
            const auto k = static_cast<Eigen::Index>(c);
            Z.col(k) = (raw.col(keep[c]).array() - mean[k]) / scale[k];
        }
        return Z;
    }

    void build(const Matrix& raw, double ridge_in, int node) {
        ridge = ridge_in;
        const auto M = raw.rows();
        std::vector<double> mus;
        std::vector<double> sds;
        for (Eigen::Index c = 0; c < raw.cols(); ++c) {
            const double mu = raw.col(c).mean();
            const double sd = std::sqrt((raw.col(c).array() - mu).square().mean());
            const double mag = std::max(1.0, raw.col(c).cwiseAbs().maxCoeff());
            if (sd > 1e-12 * mag) {
                keep.push_back(static_cast<int>(c));
                mus.push_back(mu);
                sds.push_back(sd);
            }
        }
        mean = Eigen::Map<Vector>(mus.data(), static_cast<Eigen::Index>(mus.size()));
        scale = Eigen::Map<Vector>(sds.data(), static_cast<Eigen::Index>(sds.size()));
        const auto B = static_cast<Eigen::Index>(keep.size());
        if (M < B + 2) {
            std::ostringstream os;
            os << "regression at node " << node << " needs at least " << B + 2 << " paths for " << B + 1
               << " basis functions, got " << M;
            throw ValidationError(os.str());
        }
        if (B == 0) {
            rank = 1;
            return;
        }
        const Matrix Z = standardized(raw);
        Matrix G = Z.transpose() * Z / static_cast<double>(M);
        Eigen::SelfAdjointEigenSolver<Matrix> es(G, Eigen::EigenvaluesOnly);
        const double top = es.eigenvalues().maxCoeff();
        rank = 1;
        for (Eigen::Index i = 0; i < B; ++i)
            if (es.eigenvalues()[i] > 1e-10 * top) ++rank;
        if (ridge <= 0.0 && rank < B + 1) {
            std::ostringstream os;
            os << "rank-deficient regression design at node " << node << " (rank " << rank << " of " << B + 1
               << "); set a positive ridge";
            throw NumericalError(os.str());
        }
        G.diagonal().array() += ridge;
        ldlt.compute(G);
    }

    Matrix fit(const Matrix& raw, const Matrix& Y) const {
        const Eigen::RowVectorXd ybar = Y.colwise().mean();
        Matrix out(Y.rows(), Y.cols());
        out.rowwise() = ybar;
        if (keep.empty()) return out;
        const Matrix Z = standardized(raw);
        const Matrix rhs = Z.transpose() * (Y.rowwise() - ybar) / static_cast<double>(Y.rows());
        const Matrix beta = ldlt.solve(rhs);
        out.noalias() += Z * beta;
        return out;
    }
};

void monomials(int vars, int degree, std::vector<std::vector<int>>& out) {
    std::vector<int> cur;
    std::function<void(int, int)> rec = [&](int start, int left) {
        if (!cur.empty()) out.push_back(cur);
        if (left == 0) return;
        for (int v = start; v < vars; ++v) {
            cur.push_back(v);
            rec(v, left - 1);
            cur.pop_back();
        }
    };
    rec(0, degree);
}

}  // namespace

Matrix condexp_regress(const Matrix& samples, const Matrix& features, double ridge) {
    if (samples.rows() != features.rows()) throw ValidationError("condexp_regress: row counts differ");
    if (ridge < 0.0) throw ValidationError("condexp_regress: ridge must be >= 0");
    LsqFactor f;
    f.build(features, ridge, 0);
    return f.fit(features, samples);
}

struct ConditionalExpectation::Factor {
    LsqFactor f;
};

ConditionalExpectation::ConditionalExpectation(RegressionBasis basis, const TimeGrid& grid, const QWienerConfig& noise,
                                               const NoiseEnsemble& ens, const ForwardSolution* fwd)
    : basis_(basis), grid_(grid), noise_(noise), ens_(&ens), fwd_(fwd) {
    identity_ = ens.is_zero();
    if (basis_.ridge < 0.0) throw ValidationError("regression ridge must be >= 0");
    if (basis_.degree < 1) throw ValidationError("regression degree must be >= 1");
    if (!identity_ && basis_.depends_on_state() && fwd_ == nullptr)
        throw ValidationError("polynomial regression basis needs the forward solution");
}

ConditionalExpectation::ConditionalExpectation(ConditionalExpectation&&) noexcept = default;
ConditionalExpectation& ConditionalExpectation::operator=(ConditionalExpectation&&) noexcept = default;
ConditionalExpectation::~ConditionalExpectation() = default;

Matrix ConditionalExpectation::features(int node) const {
    const int M = ens_->n_paths();
    if (basis_.kind == RegressionBasis::Kind::Chaos) {
        std::vector<int> modes;
        for (int j = 0; j < noise_.modes(); ++j)
            if (noise_.eigenvalues[j] > 0) modes.push_back(j);
        Matrix F(M, static_cast<Eigen::Index>(node) * static_cast<Eigen::Index>(modes.size()));
        const double inv = 1.0 / std::sqrt(grid_.dt);
        for (int p = 0; p < M; ++p) {
            Eigen::Index c = 0;
            for (int s = 0; s < node; ++s)
                for (int j : modes) F(p, c++) = ens_->dw(p, s, j) * inv;
        }
        return F;
    }
    const int d = fwd_->x.front().dim();
    const int vars = basis_.include_delayed ? 2 * d : d;
    Matrix V(M, vars);
    for (int p = 0; p < M; ++p) {
        const auto& x = fwd_->x[static_cast<std::size_t>(p)];
        V.row(p).head(d) = x.col(node).transpose();
        if (basis_.include_delayed) V.row(p).tail(d) = x.col(node - grid_.n_delay).transpose();
    }
    // center and scale variables before forming monomials
    for (int c = 0; c < vars; ++c) {
        const double mu = V.col(c).mean();
        const double sd = std::sqrt((V.col(c).array() - mu).square().mean());
        V.col(c).array() -= mu;
        if (sd > 0) V.col(c) /= sd;
    }
    std::vector<std::vector<int>> mons;
    monomials(vars, basis_.degree, mons);
    Matrix F(M, static_cast<Eigen::Index>(mons.size()));
    for (std::size_t k = 0; k < mons.size(); ++k) {
        Vector col = Vector::Ones(M);
        for (int v : mons[k]) col.array() *= V.col(v).array();
        F.col(static_cast<Eigen::Index>(k)) = col;
    }
    return F;
}

Matrix ConditionalExpectation::project(int node, const Matrix& samples) const {
    if (identity_) return samples;
    if (samples.rows() != ens_->n_paths()) throw ValidationError("project: sample rows must equal n_paths");
    auto it = cache_.find(node);
    const Matrix F = features(node);
    if (it == cache_.end()) {
        auto lf = std::make_unique<Factor>();
        lf->f.build(F, basis_.ridge, node);
        it = cache_.emplace(node, std::move(lf)).first;
    }
    return it->second->f.fit(F, samples);
}

std::vector<RegressionStats> ConditionalExpectation::stats() const {
    std::vector<RegressionStats> out;
    for (const auto& [node, h] : cache_)
        out.push_back({node, static_cast<int>(h->f.keep.size()) + 1, h->f.rank});
    return out;
}

Matrix estimate_q(const ConditionalExpectation& E, const NoiseEnsemble& ens, const QWienerConfig& noise, int node,
                  const Matrix& Y, const Matrix* fitted_mean) {
    const auto M = Y.rows();
    const auto d = Y.cols();
    const int m = noise.modes();
    Matrix out = Matrix::Zero(M, d * m);
    if (ens.is_zero()) return out;
    const double dt = ens.dt();
    for (int j = 0; j < m; ++j) {
        const double lam = noise.eigenvalues[j];
        if (lam <= 0.0) continue;
        Matrix T = fitted_mean ? Matrix(Y - *fitted_mean) : Y;
        for (Eigen::Index p = 0; p < M; ++p) T.row(p) *= ens.dw(static_cast<int>(p), node, j);
        out.middleCols(j * d, d) = E.project(node, T) / (dt * std::sqrt(lam));
    }
    return out;
}

BSDESolution solve_scalar_bsde(const Vector& terminal, const ScalarDriver& driver, const ConditionalExpectation& E,
                               const NoiseEnsemble& ens, const QWienerConfig& noise, const TimeGrid& grid) {
    const int M = ens.n_paths();
    const int N = grid.n_steps;
    if (terminal.size() != M) throw ValidationError("solve_bsde: terminal size differs from n_paths");
    BSDESolution sol;
    sol.y = Matrix::Zero(M, N + 1);
    sol.z.assign(static_cast<std::size_t>(N), Matrix::Zero(M, noise.modes()));
    sol.y.col(N) = terminal;
    Vector pathwise = terminal;
    Matrix target(M, 1);
    for (int n = N - 1; n >= 0; --n) {
        const Matrix ynext = sol.y.col(n + 1);
        if (E.basis().control_variate && !E.identity()) {
            const Matrix mean = E.project(n, ynext);
            sol.z[static_cast<std::size_t>(n)] = estimate_q(E, ens, noise, n, ynext, &mean);
        } else {
            sol.z[static_cast<std::size_t>(n)] = estimate_q(E, ens, noise, n, ynext, nullptr);
        }
        for (int p = 0; p < M; ++p) {
            const Vector zp = sol.z[static_cast<std::size_t>(n)].row(p).transpose();
            const double f = driver ? driver(p, n, ynext(p, 0), zp) : 0.0;
            target(p, 0) = ynext(p, 0) + grid.dt * f;
            pathwise[p] += grid.dt * f;
        }
        if (!target.allFinite()) throw NumericalError("solve_bsde: non-finite value at step " + std::to_string(n));
        sol.y.col(n) = E.project(n, target);
    }
    sol.J = sol.y.col(0).mean();
    if (M > 1) {
        const double mu = pathwise.mean();
        sol.se = std::sqrt((pathwise.array() - mu).square().sum() / (M - 1) / M);
    }
    return sol;
}

BSDESolution solve_bsde(const CostSpec& cost, const CoefficientSet& coeffs, const ForwardSolution& fwd,
                        const Control& u, const FiniteMeasure& mu1, const ConditionalExpectation& E,
                        const NoiseEnsemble& ens, const QWienerConfig& noise) {
    const TimeGrid& grid = fwd.grid;
    const int M = fwd.n_paths();
    Vector terminal(M);
    for (int p = 0; p < M; ++p) {
        const Vector x1 = delay_integral(fwd.x[static_cast<std::size_t>(p)], cost.mu2, grid.n_steps);
        terminal[p] = cost.h ? cost.h(x1) : 0.0;
    }
    Matrix X;
    ScalarDriver driver;
    if (cost.f)
        driver = [&](int p, int n, double y, const Vector& z) {
            gather_reads(fwd.x[static_cast<std::size_t>(p)], coeffs.reads, n, X);
            return cost.f(n, X, y, z, delayed_control(u.path(p), mu1, n));
        };
    return solve_scalar_bsde(terminal, driver, E, ens, noise, grid);
}

Matrix solve_cost_adjoint_k(const Matrix& dyf, const std::vector<Matrix>& dzf, const NoiseEnsemble& ens,
                            const QWienerConfig& noise, const TimeGrid& grid) {
    const int M = ens.n_paths();
    const int N = grid.n_steps;
    Matrix k(M, N + 1);
    k.col(0).setConstant(-1.0);
    for (int n = 0; n < N; ++n) {
        for (int p = 0; p < M; ++p) {
            double inc = dyf.size() ? grid.dt * dyf(p, n) : 0.0;
            if (!dzf.empty() && !ens.is_zero()) {
                const Matrix& dz = dzf[static_cast<std::size_t>(n)];
                for (int j = 0; j < noise.modes(); ++j) {
                    const double lam = noise.eigenvalues[j];
                    if (lam > 0.0 && dz(p, j) != 0.0) inc += dz(p, j) * ens.dw(p, n, j) / std::sqrt(lam);
                }
            }
            k(p, n + 1) = inc == 0.0 ? k(p, n) : k(p, n) + inc * k(p, n);
        }
        if (!k.col(n + 1).allFinite()) throw NumericalError("solve_cost_adjoint_k: non-finite value at step " + std::to_string(n + 1));
    }
    return k;
}

double RunningTerminal::total_variation() const {
    double s = 0.0;
    for (std::size_t n = 1; n < dF.size(); ++n) s += std::abs(dF[n]);
    return s;
}

bool RunningTerminal::empty() const {
    return std::all_of(dF.begin(), dF.end(), [](double v) { return v == 0.0; });
}

RunningTerminal RunningTerminal::none(const TimeGrid& grid) {
    return RunningTerminal{std::vector<double>(static_cast<std::size_t>(grid.n_steps + 1), 0.0)};
}

RunningTerminal RunningTerminal::jumps(const TimeGrid& grid, const std::vector<std::pair<int, double>>& at) {
    auto F = none(grid);
    for (const auto& [n, s] : at) {
        if (n < 1 || n > grid.n_steps) throw ValidationError("RunningTerminal: jump times must lie in (0, T]");
        F.dF[static_cast<std::size_t>(n)] += s;
    }
    return F;
}

Matrix BackwardSolution::q_at(int path, int node) const {
    const auto& col = q[static_cast<std::size_t>(path)].col(node);
    return Eigen::Map<const Matrix>(col.data(), dim, modes);
}

namespace {

const StatePath& pick(const std::vector<StatePath>& v, int p) {
    return v.size() == 1 ? v.front() : v[static_cast<std::size_t>(p)];
}

}  // namespace

BackwardSolution solve_absee(const ABSEEProblem& prob, const ConditionalExpectation& E, const NoiseEnsemble& ens) {
    const TimeGrid& grid = prob.grid;
    const int N = grid.n_steps;
    const int k = grid.n_delay;
    const int d = prob.dim;
    const int m = prob.noise.modes();
    const int M = ens.n_paths();
    if (prob.xi.empty()) throw ValidationError("solve_absee: terminal data xi missing");
    if (prob.xi.size() != 1 && static_cast<int>(prob.xi.size()) != M)
        throw ValidationError("solve_absee: xi must be broadcast or per path");
    if (!prob.xi.front().covers(N) || !prob.xi.front().covers(N + k) || prob.xi.front().dim() != d)
        throw ValidationError("solve_absee: xi must be a d-dimensional path on [T, T+K]");
    if (static_cast<int>(prob.F.dF.size()) != N + 1) throw ValidationError("solve_absee: F must have one increment per node");
    if (prob.KF > 0.0 && prob.F.total_variation() > prob.KF * (1.0 + 1e-12))
        throw ValidationError("solve_absee: total variation of F exceeds K_F");

    BackwardSolution sol;
    sol.grid = grid;
    sol.dim = d;
    sol.modes = m;
    sol.p.assign(static_cast<std::size_t>(M), StatePath(d, 0, N + k));
    sol.q.assign(static_cast<std::size_t>(M), StatePath(d * m, 0, N + k));
    for (int p = 0; p < M; ++p) {
        const StatePath& xi = pick(prob.xi, p);
        for (int n = N; n <= N + k; ++n) sol.p[static_cast<std::size_t>(p)].col(n) = xi.col(n);
        if (!prob.eta.empty()) {
            const StatePath& eta = pick(prob.eta, p);
            for (int n = N + 1; n <= N + k; ++n) sol.q[static_cast<std::size_t>(p)].col(n) = eta.col(n);
        }
    }

    std::vector<Eigen::PartialPivLU<Matrix>> implicit(static_cast<std::size_t>(N + 1));
    std::vector<bool> has_M(static_cast<std::size_t>(N + 1), false);
    std::vector<Matrix> Nsum(static_cast<std::size_t>(N + 1));
    std::vector<std::vector<Matrix>> Nops(static_cast<std::size_t>(N + 1));
    for (int n = 1; n <= N; ++n) {
        if (prob.M) {
            const Matrix Mn = prob.M(n);
            if (Mn.cwiseAbs().maxCoeff() > 0) {
                has_M[static_cast<std::size_t>(n)] = true;
                implicit[static_cast<std::size_t>(n)].compute(Matrix::Identity(d, d) - grid.dt * Mn);
                if (!(implicit[static_cast<std::size_t>(n)].rcond() > 1e-13))
                    throw NumericalError("solve_absee: singular implicit solve; reduce dt");
            }
        }
        if (prob.N) Nops[static_cast<std::size_t>(n)] = prob.N(n);
    }

    Matrix Y(M, d);
    for (int n = N - 1; n >= 0; --n) {
        const int s = n + 1;
        const double dF = prob.F.dF[static_cast<std::size_t>(s)];
        for (int p = 0; p < M; ++p) {
            Vector target = sol.p[static_cast<std::size_t>(p)].col(s);
            if (prob.zeta && dF != 0.0) target.noalias() += dF * prob.zeta(p, s);
            Vector drift = Vector::Zero(d);
            const auto& Ns = Nops[static_cast<std::size_t>(s)];
            if (!Ns.empty()) {
                const auto qcol = sol.q[static_cast<std::size_t>(p)].col(s);
                for (int j = 0; j < m; ++j)
                    if (prob.noise.eigenvalues[j] != 0.0)
                        drift.noalias() += prob.noise.eigenvalues[j] * (Ns[static_cast<std::size_t>(j)] * qcol.segment(j * d, d));
            }
            if (prob.g) drift += prob.g(p, s, sol);
            target += grid.dt * drift;
            if (has_M[static_cast<std::size_t>(s)]) target = implicit[static_cast<std::size_t>(s)].solve(target);
            Y.row(p) = target.transpose();
        }
        if (!Y.allFinite()) throw NumericalError("solve_absee: non-finite value at step " + std::to_string(n));
        const Matrix pn = E.project(n, Y);
        const Matrix qn = estimate_q(E, ens, prob.noise, n, Y, E.basis().control_variate ? &pn : nullptr);
        for (int p = 0; p < M; ++p) {
            sol.p[static_cast<std::size_t>(p)].col(n) = pn.row(p).transpose();
            sol.q[static_cast<std::size_t>(p)].col(n) = qn.row(p).transpose();
        }
    }
    sol.stats = E.stats();
    return sol;
}

BackwardSolution TranslatedProblem::map_back(const BackwardSolution& bar) const {
    BackwardSolution out = bar;
    for (int p = 0; p < out.n_paths(); ++p) out.p[static_cast<std::size_t>(p)].values -= pick(alpha, p).values;
    return out;
}

TranslatedProblem translate_running_terminal(const ABSEEProblem& prob, int n_paths) {
    const TimeGrid& grid = prob.grid;
    const int N = grid.n_steps;
    const int k = grid.n_delay;
    const int d = prob.dim;
    TranslatedProblem out;
    out.problem = prob;
    const int count = prob.zeta ? n_paths : 1;
    out.alpha.assign(static_cast<std::size_t>(count), StatePath(d, 0, N + k));
    if (prob.zeta)
        for (int p = 0; p < count; ++p) {
            auto& a = out.alpha[static_cast<std::size_t>(p)];
            for (int n = 1; n <= N; ++n) {
                a.col(n) = a.col(n - 1);
                const double dF = prob.F.dF[static_cast<std::size_t>(n)];
                if (dF != 0.0) a.col(n) += dF * prob.zeta(p, n);
            }
        }

    // terminal data: xi(T) + alpha(T), unchanged beyond T
    const int xi_count = std::max<int>(static_cast<int>(prob.xi.size()), count);
    std::vector<StatePath> xi(static_cast<std::size_t>(xi_count));
    for (int p = 0; p < xi_count; ++p) {
        xi[static_cast<std::size_t>(p)] = pick(prob.xi, p);
        xi[static_cast<std::size_t>(p)].col(N) += pick(out.alpha, p).col(N);
    }
    out.problem.xi = std::move(xi);
    out.problem.zeta = nullptr;
    out.problem.F = RunningTerminal::none(grid);

    auto alpha = std::make_shared<std::vector<StatePath>>(out.alpha);
    auto shadow = std::make_shared<BackwardSolution>();
    const auto g = prob.g;
    const auto Mop = prob.M;
    out.problem.g = [g, Mop, alpha, shadow, k, d](int path, int node, const BackwardSolution& bar) -> Vector {
        Vector val = Vector::Zero(d);
        const StatePath& a = pick(*alpha, path);
        if (g) {
            if (shadow->n_paths() != bar.n_paths()) *shadow = bar;
            auto& sp = shadow->p[static_cast<std::size_t>(path)];
            auto& sq = shadow->q[static_cast<std::size_t>(path)];
            const int hi = std::min(node + k, sp.last());
            for (int n = node; n <= hi; ++n) {
                sp.col(n) = bar.p[static_cast<std::size_t>(path)].col(n) - a.col(n);
                sq.col(n) = bar.q[static_cast<std::size_t>(path)].col(n);
            }
            val += g(path, node, *shadow);
        }
        if (Mop) val.noalias() -= Mop(node) * a.col(node - 1);
        return val;
    };
    return out;
}

EnergyReport energy_identity_check(const EnergyInput& in, const TimeGrid& grid, const QWienerConfig& noise,
                                   const NoiseEnsemble& ens, int path) {
    const int N = grid.n_steps;
    const int m = noise.modes();
    const Vector sl = noise.eigenvalues.cwiseSqrt();
    Vector h = in.h0;
    EnergyReport r;
    r.rhs = h.squaredNorm();
    for (int n = 0; n < N; ++n) {
        Vector a = Vector::Zero(h.size());
        if (in.drift) a = grid.dt * in.drift(n, h);
        Vector j = Vector::Zero(h.size());
        const double dF = in.F.dF.empty() ? 0.0 : in.F.dF[static_cast<std::size_t>(n + 1)];
        if (in.zeta && dF != 0.0) j = dF * in.zeta(n + 1);
        Vector mart = Vector::Zero(h.size());
        if (in.martingale && !ens.is_zero()) {
            const Matrix S = in.martingale(n, h);
            for (int q = 0; q < m; ++q) mart += S.col(q) * sl[q] * ens.dw(path, n, q);
        }
        // jump term evaluated at the post-jump value h + j
        r.rhs += 2.0 * h.dot(a) + 2.0 * (h + j).dot(j) - j.squaredNorm() + 2.0 * h.dot(mart) + mart.squaredNorm();
        h += a + j + mart;
    }
    r.lhs = h.squaredNorm();
    r.residual = std::abs(r.lhs - r.rhs);
    return r;
}

}  // namespace psmp
