#include "psmp/apps.hpp"

#include <cmath>

namespace psmp {

namespace {

constexpr double kPi = 3.14159265358979323846;

FiniteMeasure to_measure(const TimeGrid& g, const std::vector<std::pair<double, double>>& atoms) {
    return snap_measure(g, atoms).measure;
}

ControlConstraint to_constraint(const ExperimentConfig& c) {
    const Vector lo = Vector::Constant(1, c.box_lo), hi = Vector::Constant(1, c.box_hi);
    if (c.constraint == "box") return ControlConstraint::box(lo, hi);
    if (c.constraint == "ball") return ControlConstraint::ball(Vector::Zero(1), c.ball_radius);
    return ControlConstraint::whole();
}

LQSpec lq_basic(const ExperimentConfig& c, const TimeGrid& g) {
    LQSpec s;
    s.grid = g;
    s.noise = cylindrical_noise(1);
    s.triple = unit_triple(2);
    s.dim = 2;
    s.control_dim = 1;
    s.A.resize(2, 2);
    s.A << -1.0, 1.0, 0.0, -1.0;
    s.alpha = 0.5;
    s.lambda = 0.0;
    s.K1 = 2.0;
    const double ns = c.noise ? c.noise_scale : 0.0;
    if (ns != 0.0) {
        s.B = {0.2 * ns * Matrix::Identity(2, 2)};
        s.D.resize(2, 1);
        s.D << 0.3 * ns, 0.0;
        if (c.delay_diffusion != 0.0) s.B1 = {{-g.n_delay, 0.1 * ns * c.delay_diffusion * Matrix::Identity(2, 2)}};
    }
    if (c.delay_drift != 0.0) s.A1 = {{-g.n_delay, 0.2 * c.delay_drift * Matrix::Identity(2, 2)}};
    s.C.resize(2, 1);
    s.C << 0.0, 1.0;
    s.F = c.state_weight * Matrix::Identity(2, 2);
    s.N = c.control_penalty * Matrix::Identity(1, 1);
    s.Phi = c.terminal_weight * Matrix::Identity(2, 2);
    s.mu1 = to_measure(g, c.mu1);
    s.mu2 = to_measure(g, c.mu2);
    s.gamma = Vector::Ones(2);
    s.v0 = Vector::Zero(1);
    s.basis = c.basis;
    s.U = to_constraint(c);
    return s;
}

// spectral heat equation: mode j has wavenumber pi*j, |u|_V^2 = sum (1 + (pi j)^2) u_j^2
LQSpec heat_spde(const ExperimentConfig& c, const TimeGrid& g) {
    const int d = c.dim, m = c.modes;
    const double nu = 0.05;
    Vector lam(m), wave(d), rho(d);
    for (int l = 0; l < m; ++l) lam[l] = 1.0 / ((l + 1.0) * (l + 1.0));
    for (int j = 0; j < d; ++j) {
        wave[j] = kPi * (j + 1);
        rho[j] = std::sqrt(1.0 + wave[j] * wave[j]);
    }
    LQSpec s;
    s.grid = g;
    s.noise = make_noise(lam);
    s.triple = make_triple(rho);
    s.dim = d;
    s.control_dim = 1;
    s.A = Matrix((-nu * wave.array().square()).matrix().asDiagonal());
    s.alpha = 0.05;
    s.lambda = 0.05;
    s.K1 = nu;
    const double ns = c.noise ? c.noise_scale : 0.0;
    if (ns != 0.0) {
        // first-order term: |B_l u|^2 ~ beta_l^2 sum (pi j)^2 u_j^2, kept below the diffusion
        for (int l = 0; l < m; ++l) s.B.push_back(Matrix((0.05 * ns / (l + 1.0) * wave).asDiagonal()));
        s.D = Matrix::Zero(d * m, 1);
        for (int j = 0; j < d; ++j) s.D(j, 0) = 0.1 * ns / (j + 1.0);
        if (c.delay_diffusion != 0.0) {
            Matrix B1 = Matrix::Zero(d * m, d);
            B1.topRows(d) = 0.05 * ns * c.delay_diffusion * Matrix::Identity(d, d);
            s.B1 = {{-g.n_delay, B1}};
        }
    }
    if (c.delay_drift != 0.0) s.A1 = {{-g.n_delay, 0.1 * c.delay_drift * Matrix::Identity(d, d)}};
    s.C.resize(d, 1);
    s.gamma.resize(d);
    for (int j = 0; j < d; ++j) {
        s.C(j, 0) = 1.0 / (j + 1.0);
        s.gamma[j] = 1.0 / (j + 1.0);
    }
    s.F = c.state_weight * Matrix::Identity(d, d);
    s.N = c.control_penalty * Matrix::Identity(1, 1);
    s.Phi = c.terminal_weight * Matrix::Identity(d, d);
    s.mu1 = to_measure(g, c.mu1);
    s.mu2 = to_measure(g, c.mu2);
    s.v0 = Vector::Zero(1);
    s.basis = c.basis;
    s.U = to_constraint(c);
    return s;
}

// b = sin(x(t - K)) - x + v, sigma = 0.3, f = x^2 + n v^2, h = phi x^2
ControlProblem nonlinear_delay(const ExperimentConfig& c, const TimeGrid& g) {
    ControlProblem p;
    p.grid = g;
    p.noise = cylindrical_noise(1);
    p.triple = unit_triple(1);
    p.basis = c.basis;
    p.U = to_constraint(c);
    p.forward.ops = OperatorPair::constant(Matrix::Zero(1, 1), {Matrix::Zero(1, 1)}, 1.0, 1.0, 1.0);
    p.forward.ops.B = nullptr;
    p.forward.mu1 = to_measure(g, c.mu1);
    p.forward.gamma = StatePath(1, -g.n_delay, 0);
    p.forward.gamma.values.setOnes();

    const int k = g.n_delay;
    const double a = c.delay_drift;
    const double s = c.noise ? 0.3 * c.noise_scale : 0.0;
    auto& co = p.forward.coeffs;
    co.dim = 1;
    co.modes = 1;
    co.control_dim = 1;
    co.reads = k > 0 ? std::vector<int>{-k, 0} : std::vector<int>{0, 0};
    co.L1 = (std::abs(a) + 1.0) * (std::abs(a) + 1.0) * (1.0 + 1e-9);
    co.b = [a](int, const Matrix& X, const Vector& v) { return Vector::Constant(1, a * std::sin(X(0, 0)) - X(0, 1) + v[0]); };
    co.db_dx = [a](int, const Matrix& X, const Vector&) {
        Matrix J(1, 2);
        J << a * std::cos(X(0, 0)), -1.0;
        return J;
    };
    co.db_dv = [](int, const Matrix&, const Vector&) { return Matrix(Matrix::Ones(1, 1)); };
    if (s != 0.0) {
        co.sigma = [s](int, const Matrix&, const Vector&) { return Matrix(Matrix::Constant(1, 1, s)); };
        co.dsigma_dx = [](int, const Matrix&, const Vector&) { return Matrix(Matrix::Zero(1, 2)); };
        co.dsigma_dv = [](int, const Matrix&, const Vector&) { return Matrix(Matrix::Zero(1, 1)); };
    }
    const double fw = c.state_weight, nw = c.control_penalty, hw = c.terminal_weight;
    auto& cost = p.cost;
    cost.mu2 = to_measure(g, c.mu2);
    cost.depends_on_yz = false;
    cost.f = [fw, nw](int, const Matrix& X, double, const Vector&, const Vector& v) {
        return fw * X(0, 1) * X(0, 1) + nw * v.squaredNorm();
    };
    cost.df = [fw, nw](int, const Matrix& X, double, const Vector&, const Vector& v) {
        CostSpec::Gradient gr;
        gr.dx = Vector::Zero(2);
        gr.dx[1] = 2.0 * fw * X(0, 1);
        gr.dz = Vector::Zero(1);
        gr.dv = 2.0 * nw * v;
        return gr;
    };
    cost.h = [hw](const Vector& x) { return hw * x.squaredNorm(); };
    cost.dh = [hw](const Vector& x) { return Vector(2.0 * hw * x); };
    p.v0 = StatePath(1, -g.n_delay, -1);
    return p;
}

}  // namespace

Scenario build_scenario(const ExperimentConfig& c) {
    Scenario sc;
    sc.name = c.scenario;
    const TimeGrid g = build_grid(c.T, c.K, c.n_steps);
    if (c.scenario == "lq_basic") {
        sc.lq = lq_basic(c, g);
    } else if (c.scenario == "heat_spde") {
        sc.lq = heat_spde(c, g);
    } else if (c.scenario == "nonlinear_delay") {
        sc.problem = nonlinear_delay(c, g);
    } else {
        throw ValidationError("unknown scenario '" + c.scenario + "'");
    }
    if (sc.lq) sc.problem = lq_to_problem(*sc.lq);
    const auto& prob = sc.problem;
    sc.ens = c.noise ? sample_noise(prob.noise, g, c.n_paths, c.seed)
                     : NoiseEnsemble::zeros(1, g.n_steps, prob.noise.modes(), g.dt);
    sc.u0 = make_control(prob, [&](int) { return Vector(prob.U.project(Vector::Zero(prob.control_dim()))); });
    sc.direction = make_direction(prob, [&](int n) {
        return Vector(Vector::Constant(prob.control_dim(), std::cos(kPi * g.time(n) / g.T)));
    });
    return sc;
}

}  // namespace psmp
