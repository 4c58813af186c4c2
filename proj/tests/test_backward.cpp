#include "doctest.h"
#include "psmp/backward_absee.hpp"

#include <cmath>

using namespace psmp;

namespace {

StatePath constant_xi(const TimeGrid& g, int d, double c) {
    StatePath xi(d, g.n_steps, g.n_steps + g.n_delay);
    xi.values.setConstant(c);
    return xi;
}

ABSEEProblem empty_problem(const TimeGrid& g, int d, int m = 1) {
    ABSEEProblem pr;
    pr.grid = g;
    pr.noise = cylindrical_noise(m);
    pr.dim = d;
    pr.xi = {constant_xi(g, d, 0.0)};
    pr.F = RunningTerminal::none(g);
    return pr;
}

}  // namespace

TEST_CASE("regression projection") {
    const int M = 4000;
    Matrix F(M, 2);
    for (int p = 0; p < M; ++p) {
        F(p, 0) = counter_normal(1, p, 0, 0);
        F(p, 1) = counter_normal(1, p, 1, 0) + 0.3 * F(p, 0);
    }
    const Matrix in_span = 2.0 * F.col(0);
    CHECK((condexp_regress(in_span, F, 0.0) - in_span).cwiseAbs().maxCoeff() <= 1e-11);
    const Matrix cst = Matrix::Constant(M, 1, 4.25);
    CHECK((condexp_regress(cst, F, 0.0) - cst).cwiseAbs().maxCoeff() <= 1e-12);

    Matrix dup(M, 2);
    dup.col(0) = F.col(0);
    dup.col(1) = 2.0 * F.col(0);
    CHECK_THROWS_AS(condexp_regress(cst, dup, 0.0), NumericalError);
    CHECK_NOTHROW(condexp_regress(cst, dup, 1e-6));
    CHECK_THROWS_AS(condexp_regress(Matrix::Ones(2, 1), Matrix::Random(2, 2), 0.0), ValidationError);

    // E[W_T | W_t] = W_t
    const auto g = build_grid(1.0, 0.0, 4);
    const auto ens = sample_noise(cylindrical_noise(1), g, M, 3);
    Matrix Wt(M, 1);
    Matrix WT(M, 1);
    for (int p = 0; p < M; ++p) {
        Wt(p, 0) = ens.cumulative(p, 2)[0];
        WT(p, 0) = ens.cumulative(p, 4)[0];
    }
    const Matrix fit = condexp_regress(WT, Wt, 0.0);
    // recover the slope from two fitted points
    const double slope = (fit(0, 0) - fit(1, 0)) / (Wt(0, 0) - Wt(1, 0));
    CHECK(std::abs(slope - 1.0) <= 3.0 / std::sqrt(double(M)) * std::sqrt(2.0));
}

TEST_CASE("scalar BSDE benchmarks") {
    const auto g = build_grid(1.0, 0.0, 20);
    const auto noise = cylindrical_noise(1);
    const int M = 500;
    const auto ens = sample_noise(noise, g, M, 7);
    RegressionBasis basis;
    basis.kind = RegressionBasis::Kind::Chaos;
    ConditionalExpectation E(basis, g, noise, ens, nullptr);

    auto s = solve_scalar_bsde(Vector::Constant(M, 3.0), nullptr, E, ens, noise, g);
    CHECK((s.y.array() - 3.0).abs().maxCoeff() <= 1e-12);
    // plain estimator: zero up to sampling error; 3 / sqrt(dt) is the per-path scale of y dW / dt
    for (const auto& z : s.z) CHECK(std::abs(z.mean()) <= 4.0 * 3.0 / std::sqrt(g.dt * M));
    RegressionBasis cv = basis;
    cv.control_variate = true;
    ConditionalExpectation Ecv(cv, g, noise, ens, nullptr);
    s = solve_scalar_bsde(Vector::Constant(M, 3.0), nullptr, Ecv, ens, noise, g);
    for (const auto& z : s.z) CHECK(z.cwiseAbs().maxCoeff() <= 1e-12);

    s = solve_scalar_bsde(Vector::Zero(M), [](int, int, double, const Vector&) { return 1.0; }, E, ens, noise, g);
    for (int n = 0; n <= 20; ++n) CHECK(s.y(5, n) == doctest::Approx(1.0 - g.time(n)).epsilon(1e-12));

    s = solve_scalar_bsde(Vector::Ones(M), [](int, int, double y, const Vector&) { return -y; }, E, ens, noise, g);
    for (int n = 0; n <= 20; ++n) CHECK(std::abs(s.y(0, n) - std::exp(-(1.0 - g.time(n)))) <= 0.5 * g.dt);
}

TEST_CASE("cost adjoint k") {
    const auto g = build_grid(1.0, 0.0, 50);
    const auto noise = cylindrical_noise(1);
    const auto ens = sample_noise(noise, g, 8, 2);
    const Matrix k0 = solve_cost_adjoint_k(Matrix::Zero(8, 50), {}, ens, noise, g);
    CHECK((k0.array() == -1.0).all());

    const double a = 0.8;
    const Matrix k1 = solve_cost_adjoint_k(Matrix::Constant(8, 50, a), {}, ens, noise, g);
    for (int n = 0; n <= 50; ++n) CHECK(k1(3, n) == doctest::Approx(-std::pow(1.0 + a * g.dt, n)).epsilon(1e-13));
    CHECK(std::abs(k1(3, 50) + std::exp(a)) <= 2.0 * g.dt * std::exp(a));
    CHECK((k1.array() < 0.0).all());
}

TEST_CASE("ABSEE deterministic oracles") {
    const auto g = build_grid(1.0, 0.25, 16);
    const auto noise = cylindrical_noise(1);
    const auto ens = NoiseEnsemble::zeros(1, 16, 1, g.dt);
    ConditionalExpectation E(RegressionBasis{}, g, noise, ens, nullptr);

    auto pr = empty_problem(g, 1);
    pr.xi = {constant_xi(g, 1, 2.0)};
    auto sol = solve_absee(pr, E, ens);
    CHECK((sol.p[0].values.array() == 2.0).all());
    CHECK(sol.q[0].values.cwiseAbs().maxCoeff() == 0.0);

    const double a = -1.5;
    pr.M = [a](int) { return Matrix::Constant(1, 1, a); };
    sol = solve_absee(pr, E, ens);
    for (int n = 0; n <= 16; ++n) {
        CHECK(sol.p[0].col(n)[0] == doctest::Approx(2.0 * std::pow(1.0 - a * g.dt, -(16 - n))).epsilon(1e-13));
        CHECK(std::abs(sol.p[0].col(n)[0] - 2.0 * std::exp(a * (1.0 - g.time(n)))) <= 2.0 * g.dt);
    }

    // anticipated generator g = p(t + K)
    auto ant = empty_problem(g, 1);
    ant.xi = {constant_xi(g, 1, 1.5)};
    ant.g = [&](int path, int node, const BackwardSolution& s) { return Vector(s.p[path].col(node + g.n_delay)); };
    sol = solve_absee(ant, E, ens);
    for (int n = 16 - 4; n <= 16; ++n) CHECK(sol.p[0].col(n)[0] == doctest::Approx(1.5 * (1.0 + (1.0 - g.time(n)))).epsilon(1e-13));
    // independent recursion on the rest
    std::vector<double> ref(21, 1.5);
    for (int n = 15; n >= 0; --n) ref[n] = ref[n + 1] + g.dt * ref[n + 1 + 4];
    for (int n = 0; n <= 16; ++n) CHECK(sol.p[0].col(n)[0] == doctest::Approx(ref[n]).epsilon(1e-14));

    // single jump
    auto jump = empty_problem(g, 1);
    jump.zeta = [](int, int) { return Vector::Constant(1, 0.7); };
    jump.F = RunningTerminal::jumps(g, {{9, 1.0}});
    sol = solve_absee(jump, E, ens);
    for (int n = 0; n <= 16; ++n) CHECK(sol.p[0].col(n)[0] == (n < 9 ? 0.7 : 0.0));
}

TEST_CASE("ABSEE translation") {
    const auto g = build_grid(1.0, 0.25, 16);
    const auto noise = cylindrical_noise(1);
    const auto ens = NoiseEnsemble::zeros(1, 16, 1, g.dt);
    ConditionalExpectation E(RegressionBasis{}, g, noise, ens, nullptr);

    auto pr = empty_problem(g, 2);
    pr.M = [](int n) {
        Matrix m(2, 2);
        m << -1.0, 0.3, 0.1 * n / 16.0, -0.5;
        return m;
    };
    pr.g = [&](int path, int node, const BackwardSolution& s) {
        Vector v = 0.4 * s.p[path].col(node + 4);
        v[0] += std::sin(s.p[path].col(node)[1]);
        return v;
    };
    pr.xi = {constant_xi(g, 2, 0.5)};
    pr.zeta = [](int, int n) {
        Vector z(2);
        z << 1.0 + 0.1 * n, -0.5;
        return z;
    };
    pr.F = RunningTerminal::jumps(g, {{5, 1.0}, {12, -0.6}});
    const auto direct = solve_absee(pr, E, ens);
    const auto tr = translate_running_terminal(pr, 1);
    // alpha piecewise constant with both increments
    CHECK(tr.alpha[0].col(4).norm() == 0.0);
    CHECK(tr.alpha[0].col(5)[0] == doctest::Approx(1.5));
    CHECK(tr.alpha[0].col(12)[0] == doctest::Approx(1.5 - 0.6 * 2.2));
    CHECK(tr.alpha[0].col(17).norm() == 0.0);
    const auto back = tr.map_back(solve_absee(tr.problem, E, ens));
    CHECK((back.p[0].values - direct.p[0].values).cwiseAbs().maxCoeff() <= 1e-12);

    pr.F = RunningTerminal::none(g);
    const auto same = translate_running_terminal(pr, 1);
    CHECK(same.alpha[0].values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ABSEE stochastic linearity, zero data, martingale") {
    const auto g = build_grid(1.0, 0.25, 8);
    const auto noise = cylindrical_noise(1);
    const int M = 2000;
    const auto ens = sample_noise(noise, g, M, 5);
    RegressionBasis basis;
    basis.kind = RegressionBasis::Kind::Chaos;
    ConditionalExpectation E(basis, g, noise, ens, nullptr);

    auto make = [&](double c) {
        auto pr = empty_problem(g, 1);
        std::vector<StatePath> xi;
        for (int p = 0; p < M; ++p) {
            StatePath x = constant_xi(g, 1, c);
            x.col(8)[0] = c * ens.cumulative(p, 8)[0];
            xi.push_back(x);
        }
        pr.xi = xi;
        pr.M = [](int) { return Matrix::Constant(1, 1, -0.5); };
        pr.N = [](int) { return std::vector<Matrix>{Matrix::Constant(1, 1, 0.3)}; };
        pr.g = [c](int path, int node, const BackwardSolution& s) { return Vector(0.2 * s.p[path].col(node + 2) + Vector::Constant(1, c)); };
        pr.zeta = [c, &ens](int path, int n) { return Vector::Constant(1, c * ens.cumulative(path, n)[0]); };
        pr.F = RunningTerminal::jumps(g, {{3, 0.5}, {8, 1.0}});
        return pr;
    };
    const auto s1 = solve_absee(make(1.0), E, ens);
    const auto s2 = solve_absee(make(2.0), E, ens);
    double dp = 0.0;
    double dq = 0.0;
    for (int p = 0; p < M; ++p) {
        dp = std::max(dp, (s2.p[p].values - 2.0 * s1.p[p].values).cwiseAbs().maxCoeff());
        dq = std::max(dq, (s2.q[p].values - 2.0 * s1.q[p].values).cwiseAbs().maxCoeff());
    }
    CHECK(dp <= 1e-12);
    CHECK(dq <= 1e-12);

    const auto s0 = solve_absee(make(0.0), E, ens);
    double z = 0.0;
    for (int p = 0; p < M; ++p) z = std::max({z, s0.p[p].values.cwiseAbs().maxCoeff(), s0.q[p].values.cwiseAbs().maxCoeff()});
    CHECK(z <= 1e-14);

    // martingale: mean p(0) = mean xi(T) + sum zeta dF
    auto mart = empty_problem(g, 1);
    std::vector<StatePath> xi;
    Vector total(M);
    for (int p = 0; p < M; ++p) {
        StatePath x = constant_xi(g, 1, 0.0);
        const double w = ens.cumulative(p, 8)[0];
        x.col(8)[0] = 1.0 + w * w;
        total[p] = x.col(8)[0] + 0.5 * (2.0 + ens.cumulative(p, 4)[0]);
        xi.push_back(x);
    }
    mart.xi = xi;
    mart.zeta = [&ens](int path, int n) { return Vector::Constant(1, 2.0 + ens.cumulative(path, n)[0]); };
    mart.F = RunningTerminal::jumps(g, {{4, 0.5}});
    const auto sm = solve_absee(mart, E, ens);
    const double mean0 = sm.p[0].col(0)[0];
    const double sd = std::sqrt((total.array() - total.mean()).square().mean());
    CHECK(std::abs(mean0 - total.mean()) <= 3.0 * sd / std::sqrt(double(M)));
}

TEST_CASE("ABSEE stochastic translation with adapted datum") {
    const auto g = build_grid(1.0, 0.25, 8);
    const auto noise = cylindrical_noise(1);
    const int M = 2000;
    const auto ens = sample_noise(noise, g, M, 9);
    RegressionBasis basis;
    basis.kind = RegressionBasis::Kind::Chaos;
    ConditionalExpectation E(basis, g, noise, ens, nullptr);
    RegressionBasis cv = basis;
    cv.control_variate = true;
    ConditionalExpectation Ecv(cv, g, noise, ens, nullptr);
    auto pr = empty_problem(g, 1);
    pr.M = [](int) { return Matrix::Constant(1, 1, -0.7); };
    pr.g = [](int path, int node, const BackwardSolution& s) { return Vector(0.3 * s.p[path].col(node + 2) + 0.1 * s.q[path].col(node)); };
    pr.zeta = [&ens](int path, int n) { return Vector::Constant(1, 1.0 + ens.cumulative(path, n)[0]); };
    pr.F = RunningTerminal::jumps(g, {{2, 0.4}, {6, 0.8}});
    const auto tr = translate_running_terminal(pr, M);

    // alpha is in the regression span, so with the control variate the two solves coincide
    const auto direct_cv = solve_absee(pr, Ecv, ens);
    const auto back_cv = tr.map_back(solve_absee(tr.problem, Ecv, ens));
    double diff = 0.0;
    for (int p = 0; p < M; ++p)
        diff = std::max(diff, (back_cv.p[p].values.leftCols(9) - direct_cv.p[p].values.leftCols(9)).cwiseAbs().maxCoeff());
    CHECK(diff <= 1e-10);

    // plain estimator: agreement of p(0) within sampling error
    const auto direct = solve_absee(pr, E, ens);
    const auto back = tr.map_back(solve_absee(tr.problem, E, ens));
    Vector w(M);
    for (int p = 0; p < M; ++p) w[p] = ens.cumulative(p, 8)[0];
    const double se = std::sqrt((w.array() - w.mean()).square().mean() / M);
    CHECK(std::abs(back.p[0].col(0)[0] - direct.p[0].col(0)[0]) <= 3.0 * se);
}

TEST_CASE("energy identity") {
    const auto g = build_grid(1.0, 0.0, 16);
    const auto noise = cylindrical_noise(1);
    const auto ens0 = NoiseEnsemble::zeros(1, 16, 1, g.dt);
    EnergyInput in;
    in.h0 = Vector::Constant(2, 1.0);
    in.F = RunningTerminal::none(g);
    CHECK(energy_identity_check(in, g, noise, ens0).residual == 0.0);

    in.zeta = [](int) { Vector z(2); z << 0.3, -1.2; return z; };
    in.F = RunningTerminal::jumps(g, {{7, 1.7}});
    CHECK(energy_identity_check(in, g, noise, ens0).residual <= 1e-15);

    std::vector<double> res;
    for (int N : {16, 32, 64, 128}) {
        const auto gn = build_grid(1.0, 0.0, N);
        EnergyInput sm;
        sm.h0 = Vector::Constant(1, 1.0);
        sm.F = RunningTerminal::none(gn);
        sm.drift = [](int, const Vector& h) { return Vector(-h); };
        res.push_back(energy_identity_check(sm, gn, noise, NoiseEnsemble::zeros(1, N, 1, gn.dt)).residual);
    }
    const double slope = std::log(res.front() / res.back()) / std::log(8.0);
    CHECK(slope == doctest::Approx(1.0).epsilon(0.2));
}
