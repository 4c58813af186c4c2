#include "psmp/apps.hpp"

#include <cmath>

namespace psmp {

namespace {

StatePath random_path(int dim, int first, int last, std::uint64_t seed, std::uint64_t tag) {
    StatePath p(dim, first, last);
    for (int n = first; n <= last; ++n)
        for (int j = 0; j < dim; ++j) p.col(n)[j] = counter_normal(seed, tag, static_cast<std::uint64_t>(n - first), j);
    return p;
}

double uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return 0.5 * (1.0 + std::erf(counter_normal(seed, a, b, 99) / std::sqrt(2.0)));
}

struct Instance {
    TimeGrid grid;
    FiniteMeasure mu;
    int out = 1;
    int in = 1;
};

// random grid and atomic measure; every 5th draw is a pointwise delay, every 7th the trapezoid rule
Instance random_instance(std::uint64_t seed, int i) {
    const int k = 1 + static_cast<int>(uniform(seed, i, 0) * 6.0);
    const int N = k + 2 + static_cast<int>(uniform(seed, i, 1) * 20.0);
    Instance I;
    I.grid = build_grid(1.0, static_cast<double>(k) / N, N);
    if (i % 5 == 0) {
        I.mu = dirac(I.grid, -I.grid.K, 0.5 + uniform(seed, i, 2));
    } else if (i % 7 == 0) {
        I.mu = trapezoid_lebesgue(I.grid);
    } else {
        std::vector<int> off;
        std::vector<double> w;
        for (int o = -k; o <= 0; ++o)
            if (uniform(seed, i, 10 + o + k) < 0.6 || o == 0) {
                off.push_back(o);
                w.push_back(0.1 + 2.0 * uniform(seed, i, 40 + o + k));
            }
        I.mu = measure_from_offsets(I.grid, off, w);
    }
    I.out = 1 + static_cast<int>(uniform(seed, i, 3) * 3.0);
    I.in = 1 + static_cast<int>(uniform(seed, i, 4) * 3.0);
    return I;
}

KernelRepresentation random_kernel(const Instance& I, std::uint64_t seed, int i) {
    KernelRepresentation rep(I.grid, I.mu, I.out, I.in, 0, I.grid.n_steps);
    for (int n = 0; n <= I.grid.n_steps; ++n)
        for (int a = 0; a < I.mu.size(); ++a)
            for (int r = 0; r < I.out; ++r)
                for (int c = 0; c < I.in; ++c)
                    rep.kernel(n, a)(r, c) = counter_normal(seed ^ 0xABCDULL, static_cast<std::uint64_t>(i),
                                                            static_cast<std::uint64_t>(n * 64 + a), static_cast<std::uint64_t>(r * 8 + c));
    return rep;
}

}  // namespace

std::vector<SuiteRow> run_identity_suites(std::uint64_t seed) {
    std::vector<SuiteRow> rows;

    SuiteRow dual{"duality", 200, 0.0, 1e-12, false};
    for (int i = 0; i < dual.instances; ++i) {
        const auto I = random_instance(seed, i);
        const auto rep = random_kernel(I, seed, i);
        const auto Z = random_path(I.in, rep.in_first(), I.grid.n_steps, seed, 2 * i + 1);
        const auto Q = random_path(I.out, 0, I.grid.n_steps, seed, 2 * i + 2);
        dual.worst = std::max(dual.worst, duality_residual(rep, Z, Q).relative);
    }
    dual.pass = dual.worst <= dual.tol;
    rows.push_back(dual);

    SuiteRow cov{"change_of_variables", 200, 0.0, 1e-12, false};
    for (int i = 0; i < cov.instances; ++i) {
        const auto I = random_instance(seed + 1, i);
        const int kp = -I.grid.n_delay + static_cast<int>(uniform(seed + 1, i, 5) * (I.grid.n_steps + I.grid.n_delay + 1));
        const double a = counter_normal(seed, i, 6, 0), b = counter_normal(seed, i, 7, 0);
        const auto r = change_of_variables_check(
            [&](int t, int atom) { return std::sin(a * t + b * atom + 0.3) + 0.1 * t; }, I.mu, kp, I.grid);
        const double scale = std::max({std::abs(r.lhs), std::abs(r.rhs), 1e-300});
        cov.worst = std::max(cov.worst, r.lhs == r.rhs ? 0.0 : std::abs(r.lhs - r.rhs) / scale);
    }
    cov.pass = cov.worst <= cov.tol;
    rows.push_back(cov);

    SuiteRow tr{"adjoint_vs_transpose", 100, 0.0, 1e-12, false};
    for (int i = 0; i < tr.instances; ++i) {
        const auto I = random_instance(seed + 2, i);
        const auto rep = random_kernel(I, seed + 2, i);
        const auto Q = random_path(I.out, 0, I.grid.n_steps, seed + 2, i);
        const auto a = rep.apply_star(Q);
        const auto b = rep.apply_star_transpose(Q);
        const double scale = std::max(a.values.norm(), 1e-300);
        tr.worst = std::max(tr.worst, (a.values - b.values).norm() / scale);
    }
    tr.pass = tr.worst <= tr.tol;
    rows.push_back(tr);

    // energy identity: jumps only, then the smooth drift at five step sizes
    const auto noise = cylindrical_noise(1);
    SuiteRow jump{"energy_pure_jump", 20, 0.0, 1e-14, false};
    for (int i = 0; i < jump.instances; ++i) {
        const int N = 8 + 4 * i;
        const auto g = build_grid(1.0, 0.0, N);
        EnergyInput in;
        in.h0 = Vector::Constant(2, counter_normal(seed, i, 0, 0));
        const double z0 = counter_normal(seed, i, 1, 0), z1 = counter_normal(seed, i, 2, 0);
        in.zeta = [z0, z1](int n) {
            Vector z(2);
            z << z0 + 0.1 * n, z1;
            return z;
        };
        in.F = RunningTerminal::jumps(g, {{1 + i % (N - 1), 0.7}, {N, 1.3}});
        const auto r = energy_identity_check(in, g, noise, NoiseEnsemble::zeros(1, N, 1, g.dt));
        jump.worst = std::max(jump.worst, std::abs(r.residual) / std::max(1.0, std::abs(r.lhs)));
    }
    jump.pass = jump.worst <= jump.tol;
    rows.push_back(jump);

    std::vector<double> res;
    for (int N : {16, 32, 64, 128, 256}) {
        const auto g = build_grid(1.0, 0.0, N);
        EnergyInput sm;
        sm.h0 = Vector::Constant(1, 1.0);
        sm.F = RunningTerminal::none(g);
        sm.drift = [](int, const Vector& h) { return Vector(-h); };
        res.push_back(std::abs(energy_identity_check(sm, g, noise, NoiseEnsemble::zeros(1, N, 1, g.dt)).residual));
    }
    // least-squares slope of log residual against log dt
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < res.size(); ++i) {
        const double x = std::log(1.0 / (16 << i)), y = std::log(res[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = static_cast<double>(res.size());
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    rows.push_back({"energy_smooth_slope", 5, slope, 0.2, std::abs(slope - 1.0) <= 0.2});
    return rows;
}

}  // namespace psmp
