#include "doctest.h"
#include "psmp/lq_module.hpp"

#include <cmath>

using namespace psmp;

namespace {

Matrix mat(int r, int c, std::initializer_list<double> v) {
    Matrix M(r, c);
    auto it = v.begin();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) M(i, j) = *it++;
    return M;
}

// two-dimensional delayed LQ; noise terms optional
LQSpec small_lq(int n_steps, bool noisy, bool delayed_control) {
    LQSpec s;
    s.grid = build_grid(1.0, 0.25, n_steps);
    s.noise = cylindrical_noise(1);
    s.triple = unit_triple(2);
    s.dim = 2;
    s.control_dim = 1;
    s.A = mat(2, 2, {-1, 1, 0, -1});
    s.alpha = 0.5;
    s.lambda = 1.0;
    s.K1 = 2.0;
    const int k = s.grid.n_delay;
    s.A1 = {{-k, 0.2 * Matrix::Identity(2, 2)}};
    if (noisy) {
        s.B = {0.2 * Matrix::Identity(2, 2)};
        s.B1 = {{-k, 0.1 * Matrix::Identity(2, 2)}};
        s.D = mat(2, 1, {0.3, 0.0});
    }
    s.C = mat(2, 1, {0.0, 1.0});
    s.F = Matrix::Identity(2, 2);
    s.N = Matrix::Identity(1, 1);
    s.Phi = Matrix::Identity(2, 2);
    s.mu1 = delayed_control ? dirac(s.grid, -0.25) : dirac(s.grid, 0.0);
    s.mu2 = measure_from_offsets(s.grid, {-k, 0}, {0.3, 0.7});
    s.gamma = Vector::Ones(2);
    s.v0 = Vector::Constant(1, 0.5);
    s.basis.kind = RegressionBasis::Kind::Chaos;
    s.basis.control_variate = true;
    return s;
}

Control wiggly(const ControlProblem& prob, double amp, int seed) {
    return make_control(prob, [&](int n) {
        return Vector::Constant(1, amp * std::sin(0.3 * n + seed) + 0.1 * seed);
    });
}

NoiseEnsemble deterministic(const ControlProblem& prob) {
    return NoiseEnsemble::zeros(1, prob.grid.n_steps, prob.noise.modes(), prob.grid.dt);
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1e-300, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST_CASE("constraint projections") {
    const auto box = ControlConstraint::box(Vector::Constant(2, -1.0), Vector::Constant(2, 1.0));
    Vector v(2);
    v << 3.0, -0.5;
    const Vector p = box.project(v);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == -0.5);
    CHECK(box.project(p) == p);
    const auto ball = ControlConstraint::ball(Vector::Zero(2), 2.0);
    for (int t = 0; t < 100; ++t) {
        Vector a(2), b(2);
        a << 3 * counter_normal(3, t, 0, 0), 3 * counter_normal(3, t, 1, 0);
        b << 3 * counter_normal(4, t, 0, 0), 3 * counter_normal(4, t, 1, 0);
        CHECK((ball.project(ball.project(a)) - ball.project(a)).norm() <= 1e-15);
        CHECK((ball.project(a) - ball.project(b)).norm() <= (a - b).norm() + 1e-14);
        CHECK((box.project(a) - box.project(b)).norm() <= (a - b).norm() + 1e-14);
    }
    CHECK_THROWS_AS(ControlConstraint::ball(Vector::Zero(2), 0.0), ValidationError);
}

TEST_CASE("hamiltonian hand values") {
    LQSpec s;
    s.grid = build_grid(1.0, 0.0, 4);
    s.noise = cylindrical_noise(1);
    s.triple = unit_triple(1);
    s.A = Matrix::Zero(1, 1);
    s.C = Matrix::Ones(1, 1);
    s.D = Matrix::Ones(1, 1);
    s.F = Matrix::Ones(1, 1);
    s.N = Matrix::Ones(1, 1);
    s.Phi = Matrix::Zero(1, 1);
    s.mu1 = dirac(s.grid, 0.0);
    s.mu2 = dirac(s.grid, 0.0);
    s.gamma = Vector::Ones(1);
    s.v0 = Vector::Zero(1);
    const auto prob = lq_to_problem(s);
    const Matrix X = Matrix::Ones(1, 1);
    const Vector one = Vector::Ones(1);
    const Matrix q = Matrix::Ones(1, 1);
    CHECK(hamiltonian(prob, 0, X, 0.0, Vector::Zero(1), one, one, q, -1.0) == doctest::Approx(4.0));
    CHECK(hamiltonian_dv(prob, 0, X, 0.0, Vector::Zero(1), one, one, q, -1.0)[0] == doctest::Approx(4.0));
    CHECK(hamiltonian(prob, 0, X, 0.0, Vector::Zero(1), one, Vector::Zero(1), Matrix::Zero(1, 1), 0.0) == 0.0);
}

TEST_CASE("lq spec validation") {
    auto s = small_lq(16, false, false);
    s.N = Matrix::Zero(1, 1);
    CHECK_THROWS_AS(lq_to_problem(s), ValidationError);
    s = small_lq(16, false, false);
    s.F = mat(2, 2, {1, 0, 0, -1});
    CHECK_THROWS_AS(lq_to_problem(s), ValidationError);
    s = small_lq(16, false, false);
    s.C = Matrix::Ones(3, 1);
    CHECK_THROWS_AS(lq_to_problem(s), ValidationError);
    const auto chk = check_lq_spec(small_lq(16, true, false));
    CHECK(chk.N_min_eig == doctest::Approx(1.0));
    CHECK(chk.coercivity.clean());
}

TEST_CASE("variational system") {
    SUBCASE("zero direction") {
        const auto prob = lq_to_problem(small_lq(16, true, true));
        SmpSession s(prob, sample_noise(prob.noise, prob.grid, 256, 5));
        const auto u = wiggly(prob, 0.5, 1);
        const auto c = s.solve(u);
        const auto dir = make_direction(prob, [](int) { return Vector::Zero(1); });
        const auto var = solve_variational(prob, c, dir, s.ensemble());
        for (const auto& x : var.xhat) CHECK(x.values.cwiseAbs().maxCoeff() == 0.0);
        CHECK(var.yz.y.cwiseAbs().maxCoeff() == 0.0);
        CHECK(var.yhat0 == 0.0);
        const auto fd = fd_gradient_check(s, u, dir, {1e-3});
        CHECK(fd.rows[0].fd == 0.0);
        CHECK(fd.rows[0].pairing == 0.0);
    }
    SUBCASE("linear system: perturbed state is exactly affine") {
        const auto prob = lq_to_problem(small_lq(16, true, true));
        const auto ens = sample_noise(prob.noise, prob.grid, 64, 9);
        SmpSession s(prob, ens);
        const auto u = wiggly(prob, 0.5, 1);
        const auto dir = wiggly(prob, 1.0, 3);
        const Control d = make_direction(prob, [&](int n) { return Vector(dir.path(0).col(n)); });
        const auto c = s.solve(u);
        const auto var = solve_variational(prob, c, d, ens);
        const double rho = 0.37;
        const auto moved = solve_forward(prob.forward, control_axpy(u, rho, d), prob.noise, ens, prob.grid);
        double err = 0.0;
        for (int p = 0; p < 64; ++p)
            err = std::max(err, (moved.x[p].values - c.fwd->x[p].values - rho * var.xhat[p].values).cwiseAbs().maxCoeff());
        CHECK(err <= 1e-12);
    }
    SUBCASE("nonlinear delayed drift: remainder is o(rho)") {
        auto base = small_lq(32, false, false);
        base.dim = 1;
        base.triple = unit_triple(1);
        base.A = Matrix::Zero(1, 1);
        base.A1.clear();
        base.C = Matrix::Ones(1, 1);
        base.F = Matrix::Ones(1, 1);
        base.Phi = Matrix::Ones(1, 1);
        base.gamma = Vector::Ones(1);
        base.mu2 = dirac(base.grid, 0.0);
        auto prob = lq_to_problem(base);
        const int k = prob.grid.n_delay;
        auto& co = prob.forward.coeffs;
        co.reads = {-k, 0};
        co.b = [](int, const Matrix& X, const Vector& v) { return Vector::Constant(1, std::sin(X(0, 0)) - X(0, 1) + v[0]); };
        co.db_dx = [](int, const Matrix& X, const Vector&) { return mat(1, 2, {std::cos(X(0, 0)), -1.0}); };
        co.db_dv = [](int, const Matrix&, const Vector&) { return Matrix::Ones(1, 1); };
        co.sigma = [](int, const Matrix&, const Vector&) { return Matrix::Constant(1, 1, 0.3); };
        co.dsigma_dx = [](int, const Matrix&, const Vector&) { return Matrix::Zero(1, 2); };
        co.dsigma_dv = [](int, const Matrix&, const Vector&) { return Matrix::Zero(1, 1); };
        prob.cost.df = [](int, const Matrix& X, double, const Vector&, const Vector& v) {
            CostSpec::Gradient g;
            g.dx = Vector::Zero(2);
            g.dx[1] = 2 * X(0, 1);
            g.dz = Vector::Zero(1);
            g.dv = 2 * v;
            return g;
        };
        prob.cost.f = [](int, const Matrix& X, double, const Vector&, const Vector& v) { return X(0, 1) * X(0, 1) + v.squaredNorm(); };
        const auto ens = sample_noise(prob.noise, prob.grid, 128, 4);
        SmpSession s(prob, ens);
        const auto u = wiggly(prob, 1.0, 2);
        const auto d = make_direction(prob, [](int n) { return Vector::Constant(1, 2.0 + std::cos(0.2 * n)); });
        const auto c = s.solve(u);
        const auto var = solve_variational(prob, c, d, ens);
        std::vector<double> ratios;
        for (double rho : {1e-1, 1e-2, 1e-3}) {
            const auto moved = solve_forward(prob.forward, control_axpy(u, rho, d), prob.noise, ens, prob.grid);
            double err = 0.0;
            for (int p = 0; p < 128; ++p)
                err = std::max(err, (moved.x[p].values - c.fwd->x[p].values - rho * var.xhat[p].values).cwiseAbs().maxCoeff());
            ratios.push_back(err / rho);
        }
        CHECK(ratios[1] < 0.2 * ratios[0]);
        CHECK(ratios[2] < 0.2 * ratios[1]);
    }
}

TEST_CASE("deterministic gradient is the exact discrete gradient") {
    for (bool delayed : {false, true}) {
        const auto prob = lq_to_problem(small_lq(24, false, delayed));
        SmpSession s(prob, deterministic(prob));
        const auto u = wiggly(prob, 0.8, 1);
        const auto c = s.solve(u);
        const auto G = smp_gradient(prob, c);
        // coordinate directions
        for (int node : {0, 3, 11, 17, 23}) {
            const auto e = make_direction(prob, [&](int n) { return Vector::Constant(1, n == node ? 1.0 : 0.0); });
            const double jp = s.cost(control_axpy(u, 1e-3, e)).J;
            const double jm = s.cost(control_axpy(u, -1e-3, e)).J;
            const double fd = (jp - jm) / 2e-3;
            const double g = G.G.path(0).col(node)[0] * prob.grid.dt;
            CHECK(std::abs(fd - g) <= 1e-6 * std::max(std::abs(g), 1e-3));
        }
        // duality bookkeeping: yhat(0) equals the gradient pairing
        const auto d = make_direction(prob, [](int n) { return Vector::Constant(1, std::cos(0.5 * n)); });
        const auto rep = fd_gradient_check(s, u, d, {1e-3});
        CHECK(std::abs(rep.rows[0].yhat0 - rep.rows[0].pairing) <= 1e-10 * (1.0 + std::abs(rep.rows[0].pairing)));
        CHECK(rel(rep.rows[0].central, rep.rows[0].pairing) <= 1e-6);
    }
}

TEST_CASE("gradient support and degenerate costs") {
    SUBCASE("zero cost") {
        auto s = small_lq(16, true, false);
        s.F.setZero();
        s.Phi.setZero();
        auto prob = lq_to_problem(s);
        prob.cost.f = [](int, const Matrix&, double, const Vector&, const Vector&) { return 0.0; };
        prob.cost.df = [](int, const Matrix&, double, const Vector&, const Vector&) {
            CostSpec::Gradient g;
            g.dx = Vector::Zero(4);
            g.dz = Vector::Zero(1);
            g.dv = Vector::Zero(1);
            return g;
        };
        SmpSession sess(prob, sample_noise(prob.noise, prob.grid, 128, 2));
        const auto G = smp_gradient(prob, sess.solve(wiggly(prob, 1.0, 1)));
        for (const auto& p : G.G.paths) CHECK(p.values.cwiseAbs().maxCoeff() == 0.0);
        CHECK(G.residual == 0.0);
    }
    SUBCASE("pointwise control delay") {
        const auto prob = lq_to_problem(small_lq(16, false, true));
        SmpSession sess(prob, deterministic(prob));
        const auto c = sess.solve(wiggly(prob, 1.0, 1));
        const auto G = smp_gradient(prob, c);
        const int N = prob.grid.n_steps, k = prob.grid.n_delay;
        for (int m = 0; m < N; ++m) {
            if (m + k > N - 1)
                CHECK(G.G.path(0).col(m).norm() == 0.0);
            else
                CHECK(G.G.path(0).col(m)[0] == G.dH.path(0).col(m + k)[0]);
        }
    }
    SUBCASE("cost independent of y, z keeps k at -1") {
        const auto prob = lq_to_problem(small_lq(16, true, false));
        SmpSession sess(prob, sample_noise(prob.noise, prob.grid, 64, 2));
        const auto c = sess.solve(wiggly(prob, 1.0, 1));
        CHECK((c.k.array() == -1.0).all());
    }
}

TEST_CASE("brute-force QP oracle") {
    SUBCASE("Riccati benchmark") {
        LQSpec s;
        s.triple = unit_triple(1);
        s.noise = cylindrical_noise(1);
        s.A = Matrix::Zero(1, 1);
        s.C = Matrix::Ones(1, 1);
        s.F = Matrix::Ones(1, 1);
        s.N = Matrix::Ones(1, 1);
        s.Phi = Matrix::Zero(1, 1);
        s.gamma = Vector::Ones(1);
        s.v0 = Vector::Zero(1);
        double prev = 1.0;
        for (int n : {50, 100, 200, 400}) {
            s.grid = build_grid(1.0, 0.0, n);
            s.mu1 = dirac(s.grid, 0.0);
            s.mu2 = dirac(s.grid, 0.0);
            const auto qp = lq_bruteforce_deterministic(s);
            const double err = std::abs(qp.value - std::tanh(1.0));
            CHECK(err <= 2.0 / n);
            CHECK(err < prev);
            prev = err;
            CHECK(qp.min_eig > 0.0);
        }
    }
    SUBCASE("no running or terminal weight") {
        auto s = small_lq(16, false, false);
        s.F.setZero();
        s.Phi.setZero();
        const auto qp = lq_bruteforce_deterministic(s);
        CHECK(qp.u.path(0).values.leftCols(16 + 4).cwiseAbs().maxCoeff() <= 0.5);
        CHECK(stack_control(qp.u, s.grid).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK(std::abs(qp.value) <= 1e-12);
    }
    SUBCASE("scaling leaves the argmin and scales the value") {
        auto s = small_lq(16, false, true);
        const auto a = lq_bruteforce_deterministic(s);
        s.F *= 3.0;
        s.N *= 3.0;
        s.Phi *= 3.0;
        const auto b = lq_bruteforce_deterministic(s);
        CHECK((stack_control(a.u, s.grid) - stack_control(b.u, s.grid)).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK(rel(b.value, 3.0 * a.value) <= 1e-12);
    }
    SUBCASE("value matches the simulated cost") {
        const auto s = small_lq(16, false, true);
        const auto prob = lq_to_problem(s);
        const auto qp = lq_bruteforce_deterministic(s);
        SmpSession sess(prob, deterministic(prob));
        CHECK(rel(sess.cost(qp.u).J, qp.value) <= 1e-12);
        const auto u = wiggly(prob, 1.0, 2);
        CHECK(rel(sess.cost(u).J, qp_value(qp, stack_control(u, s.grid))) <= 1e-12);
    }
    SUBCASE("noise terms rejected") { CHECK_THROWS_AS(lq_bruteforce_deterministic(small_lq(16, true, false)), ValidationError); }
}

TEST_CASE("descent, closed form and QP agree in the deterministic case") {
    for (bool delayed : {false, true}) {
        const auto s = small_lq(32, false, delayed);
        const auto prob = lq_to_problem(s);
        const auto qp = lq_bruteforce_deterministic(s);
        SmpSession sess(prob, deterministic(prob));
        DescentOptions opts;
        opts.tol = 1e-6;
        opts.max_iter = 2000;
        const auto res = projected_gradient_descent(sess, Control::zero(prob.grid, 1), opts);
        CHECK(res.converged);
        for (std::size_t i = 1; i < res.trace.size(); ++i) CHECK(res.trace[i].J <= res.trace[i - 1].J);
        const Vector U = stack_control(res.u, prob.grid);
        const Vector Q = stack_control(qp.u, prob.grid);
        CHECK((U - Q).norm() / Q.norm() <= 1e-4);

        const auto c = sess.solve(qp.u);
        const auto formula = lq_closed_form_control(s, prob, c);
        CHECK((stack_control(formula, prob.grid) - Q).cwiseAbs().maxCoeff() <= 1e-6);

        const auto again = projected_gradient_descent(sess, qp.u, DescentOptions{});
        CHECK(again.trace.size() <= 2);
    }
}

TEST_CASE("box-constrained descent sits on the face") {
    auto s = small_lq(24, false, false);
    s.U = ControlConstraint::box(Vector::Constant(1, -0.15), Vector::Constant(1, 2.0));
    const auto prob = lq_to_problem(s);
    const auto qp = lq_bruteforce_deterministic(s);
    const Vector box = qp_box_minimize(qp, s.U.lo, s.U.hi, s.grid.n_steps);
    CHECK(stack_control(qp.u, s.grid).minCoeff() < -0.15);
    SmpSession sess(prob, deterministic(prob));
    DescentOptions opts;
    opts.tol = 1e-6;
    opts.max_iter = 3000;
    const auto res = projected_gradient_descent(sess, Control::zero(prob.grid, 1), opts);
    CHECK(res.converged);
    const Vector U = stack_control(res.u, prob.grid);
    CHECK(U.minCoeff() == doctest::Approx(-0.15).epsilon(1e-12));
    CHECK((U - box).cwiseAbs().maxCoeff() <= 1e-5);
    CHECK(qp_value(qp, box) <= qp_value(qp, U) + 1e-12);
}

TEST_CASE("sufficiency certificate") {
    const auto s = small_lq(16, true, false);
    const auto prob = lq_to_problem(s);
    SmpSession sess(prob, sample_noise(prob.noise, prob.grid, 1024, 3));
    DescentOptions opts;
    opts.tol = 1e-3;
    const auto res = projected_gradient_descent(sess, Control::zero(prob.grid, 1), opts);
    const auto cert = sufficiency_certificate(sess, res.u, 20, 0.3, 5);
    CHECK(cert.h_convex);
    CHECK(cert.H_convex);
    CHECK(cert.k_terminal_nonpositive);
    CHECK(cert.below == 0);
    CHECK(cert.passed());

    auto concave = prob;
    concave.cost.h = [](const Vector& x) { return -x.squaredNorm(); };
    concave.cost.dh = [](const Vector& x) { return Vector(-2.0 * x); };
    SmpSession bad(concave, sample_noise(prob.noise, prob.grid, 1024, 3));
    CHECK_FALSE(sufficiency_certificate(bad, res.u, 2, 0.3, 5).h_convex);
}

TEST_CASE("cost adjoint k") {
    auto s = small_lq(64, false, false);
    s.G1 = 0.5;
    const auto prob = lq_to_problem(s);
    SmpSession sess(prob, deterministic(prob));
    const auto c = sess.solve(Control::zero(prob.grid, 1));
    const int N = prob.grid.n_steps;
    CHECK(c.k(0, N) == doctest::Approx(-std::pow(1.0 + 0.5 * prob.grid.dt, N)).epsilon(1e-13));
    CHECK(std::abs(c.k(0, N) + std::exp(0.5)) <= 0.5 * prob.grid.dt * std::exp(0.5));
}

TEST_CASE("problem certificate") {
    const auto prob = lq_to_problem(small_lq(16, true, true));
    const auto cert = certify_problem(prob, 50, 3);
    CHECK(cert.clean());
    CHECK(cert.lipschitz.certified);
    CHECK(std::isfinite(cert.b_bounds.M));
}
