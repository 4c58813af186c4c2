#include "doctest.h"
#include "psmp/delay_measures.hpp"

using namespace psmp;

namespace {

StatePath linear_path(const TimeGrid& g, int first, int last) {
    StatePath p(1, first, last);
    for (int n = first; n <= last; ++n) p.col(n)[0] = g.time(n);
    return p;
}

}  // namespace

TEST_CASE("delay integrals") {
    const auto g = build_grid(2.0, 0.5, 8);  // dt = 0.25, k = 2
    const auto x = linear_path(g, -2, 10);

    const auto pointwise = dirac(g, -0.5);
    CHECK(delay_integral(x, pointwise, 5)[0] == doctest::Approx(g.time(5) - 0.5));

    CHECK(delay_integral(x, zero_measure(g), 5)[0] == 0.0);

    const auto mu = measure_from_offsets(g, {-2, 0}, {0.3, 0.7});
    CHECK(delay_integral(x, mu, 8)[0] == doctest::Approx(0.3 * 1.5 + 0.7 * 2.0));

    // linearity in path and in the weights
    StatePath y = x;
    y.values *= -2.0;
    StatePath sum = x;
    sum.values += y.values;
    CHECK(delay_integral(sum, mu, 6)[0] == doctest::Approx(delay_integral(x, mu, 6)[0] + delay_integral(y, mu, 6)[0]));
    CHECK(delay_integral(x, mu.scaled(3.0), 6)[0] == doctest::Approx(3.0 * delay_integral(x, mu, 6)[0]));

    StatePath short_path = linear_path(g, 0, 8);
    try {
        (void)delay_integral(short_path, pointwise, 1);
        FAIL("expected span error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("-0.5") != std::string::npos);
    }
}

TEST_CASE("measure validation and snapping") {
    const auto g = build_grid(1.0, 0.5, 4);
    CHECK_THROWS_AS(measure_from_offsets(g, {-1}, {-0.1}), ValidationError);
    CHECK_THROWS_AS(measure_from_offsets(g, {-3}, {1.0}), ValidationError);
    auto sm = snap_measure(g, {{-0.13, 1.0}});
    CHECK(sm.measure.offset(0) == -1);
    CHECK(sm.max_snap == doctest::Approx(0.12));
    sm = snap_measure(g, {{-0.125, 1.0}});  // tie
    CHECK(sm.measure.offset(0) == 0);
    const auto leb = trapezoid_lebesgue(g);
    CHECK(leb.total_mass() == doctest::Approx(0.5));
}

TEST_CASE("stopped segments") {
    const auto g = build_grid(1.0, 0.5, 4);
    const auto x = linear_path(g, -2, 4);
    auto seg = stopped_segment(x, 0, g);
    for (int n = -2; n <= 0; ++n) CHECK(seg.col(n)[0] == x.col(n)[0]);
    for (int n = 1; n <= 4; ++n) CHECK(seg.col(n)[0] == x.col(0)[0]);

    seg = stopped_segment(x, 4, g);
    for (int n = -2; n <= 2; ++n) CHECK(seg.col(n)[0] == x.col(2)[0]);
    for (int n = 2; n <= 4; ++n) CHECK(seg.col(n)[0] == x.col(n)[0]);

    StatePath c(2, -2, 4);
    c.values.setConstant(1.5);
    const auto sc = stopped_segment(c, 2, g);
    CHECK(sc.values == c.values);

    // delay reads only see the stopped segment
    const auto mu = measure_from_offsets(g, {-2, -1, 0}, {0.2, 0.3, 0.5});
    for (int t = 0; t <= 4; ++t)
        CHECK(delay_integral(x, mu, t)[0] == delay_integral(stopped_segment(x, t, g), mu, t)[0]);
}

TEST_CASE("shift operators") {
    const auto g = build_grid(1.0, 0.5, 4);
    StatePath zbar(1, -2, 0);
    zbar.col(-2)[0] = 3.0;
    zbar.col(-1)[0] = -1.0;
    zbar.col(0)[0] = 2.0;

    auto f0 = shift_forward(zbar, 0, g);
    for (int n = -2; n <= 0; ++n) CHECK(f0.col(n)[0] == zbar.col(n)[0]);
    for (int n = 1; n <= 4; ++n) CHECK(f0.col(n)[0] == 2.0);

    for (int t = 0; t <= 4; ++t) {
        const auto back = shift_back(shift_forward(zbar, t, g), t, g);
        CHECK(back.values == zbar.values);
    }
    auto f3 = shift_forward(zbar, 3, g);
    CHECK(f3.col(0)[0] == 3.0);  // left tail frozen at zbar(-K)
    CHECK(f3.col(2)[0] == -1.0);

    const auto g1 = build_grid(2.0, 1.0, 4);  // dt = 0.5, k = 2
    const auto Z = linear_path(g1, -2, 4);
    const auto sb = shift_back(Z, 2, g1);  // t = 1
    for (int n = -2; n <= 0; ++n) CHECK(sb.col(n)[0] == doctest::Approx(g1.time(n) + 1.0));
    CHECK(shift_back(Z, 0, g1).values == Z.values.leftCols(3));

    StatePath cst(1, -2, 0);
    cst.values.setConstant(4.0);
    CHECK((shift_forward(cst, 3, g).values.array() == 4.0).all());
}
