#include "psmp/delay_measures.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace psmp {

double FiniteMeasure::total_mass() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

FiniteMeasure FiniteMeasure::scaled(double c) const {
    if (!(c >= 0.0)) throw ValidationError("FiniteMeasure: scale factor must be >= 0");
    FiniteMeasure out = *this;
    for (double& w : out.weights) w *= c;
    return out;
}

FiniteMeasure measure_from_offsets(const TimeGrid& grid, std::vector<int> offsets, std::vector<double> weights) {
    if (offsets.size() != weights.size()) throw ValidationError("FiniteMeasure: offsets and weights differ in length");
    std::map<int, double> merged;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        if (offsets[i] > 0 || offsets[i] < -grid.n_delay) {
            std::ostringstream os;
            os << "FiniteMeasure: atom " << offsets[i] * grid.dt << " outside [" << -grid.K << ", 0]";
            throw ValidationError(os.str());
        }
        if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
            std::ostringstream os;
            os << "FiniteMeasure: weight " << weights[i] << " at atom " << offsets[i] * grid.dt
               << " must be finite and nonnegative";
            throw ValidationError(os.str());
        }
        merged[offsets[i]] += weights[i];
    }
    FiniteMeasure mu;
    mu.dt = grid.dt;
    for (const auto& [o, w] : merged) {
        mu.offsets.push_back(o);
        mu.weights.push_back(w);
    }
    return mu;
}

SnappedMeasure snap_measure(const TimeGrid& grid, const std::vector<std::pair<double, double>>& atoms) {
    SnappedMeasure out;
    std::vector<int> offs;
    std::vector<double> ws;
    for (const auto& [s, w] : atoms) {
        if (s > 0.5 * grid.dt || s < -grid.K - 0.5 * grid.dt) {
            std::ostringstream os;
            os << "FiniteMeasure: atom " << s << " outside [" << -grid.K << ", 0]";
            throw ValidationError(os.str());
        }
        const double r = s / grid.dt;
        double f = std::floor(r);
        // nearest, ties toward 0 (r <= 0 so toward the larger integer)
        int j = (r - f > 0.5 - 1e-12) ? static_cast<int>(f) + 1 : static_cast<int>(f);
        j = std::clamp(j, -grid.n_delay, 0);
        out.max_snap = std::max(out.max_snap, std::abs(s - j * grid.dt));
        offs.push_back(j);
        ws.push_back(w);
    }
    out.measure = measure_from_offsets(grid, std::move(offs), std::move(ws));
    return out;
}

FiniteMeasure dirac(const TimeGrid& grid, double s, double mass) {
    auto sm = snap_measure(grid, {{s, mass}});
    if (sm.max_snap > 1e-9 * std::max(1.0, grid.K)) throw ValidationError("dirac: atom not grid-aligned");
    return sm.measure;
}

FiniteMeasure zero_measure(const TimeGrid& grid) {
    FiniteMeasure mu;
    mu.dt = grid.dt;
    return mu;
}

FiniteMeasure trapezoid_lebesgue(const TimeGrid& grid) {
    const int k = grid.n_delay;
    if (k == 0) return zero_measure(grid);
    std::vector<int> offs;
    std::vector<double> ws;
    for (int j = -k; j <= 0; ++j) {
        offs.push_back(j);
        ws.push_back((j == -k || j == 0) ? 0.5 * grid.dt : grid.dt);
    }
    return measure_from_offsets(grid, std::move(offs), std::move(ws));
}

StatePath::StatePath(int dim, int first_node, int last_node)
    : first(first_node), values(Matrix::Zero(dim, std::max(0, last_node - first_node + 1))) {}

Vector StatePath::at(int node) const {
    if (!covers(node)) {
        std::ostringstream os;
        os << "StatePath: node " << node << " outside span [" << first << ", " << last() << "]";
        throw ValidationError(os.str());
    }
    return values.col(node - first);
}

Vector delay_integral(const StatePath& path, const FiniteMeasure& mu, int node) {
    Vector acc = Vector::Zero(path.dim());
    for (int i = 0; i < mu.size(); ++i) {
        const int n = node + mu.offset(i);
        if (!path.covers(n)) {
            std::ostringstream os;
            os << "delay_integral: atom s = " << mu.atom(i) << " reads node " << n << " outside the path span ["
               << path.first << ", " << path.last() << "]";
            throw ValidationError(os.str());
        }
        acc += mu.weight(i) * path.col(n);
    }
    return acc;
}

StatePath stopped_segment(const StatePath& path, int node, const TimeGrid& grid) {
    const int lo = node - grid.n_delay;
    if (!path.covers(lo) || !path.covers(node)) throw ValidationError("stopped_segment: path does not cover [t-K, t]");
    StatePath seg = path;
    for (int n = seg.first; n <= seg.last(); ++n) seg.col(n) = path.col(std::clamp(n, lo, node));
    return seg;
}

StatePath shift_forward(const StatePath& zbar, int node, const TimeGrid& grid) {
    if (node < 0 || node > grid.n_steps) throw ValidationError("shift_forward: t must lie in [0, T]");
    if (!zbar.covers(-grid.n_delay) || !zbar.covers(0)) throw ValidationError("shift_forward: zbar must span [-K, 0]");
    StatePath out(zbar.dim(), -grid.n_delay, grid.n_steps);
    for (int n = out.first; n <= out.last(); ++n) out.col(n) = zbar.col(std::clamp(n - node, -grid.n_delay, 0));
    return out;
}

StatePath shift_back(const StatePath& Z, int node, const TimeGrid& grid) {
    if (!Z.covers(node - grid.n_delay) || !Z.covers(node)) throw ValidationError("shift_back: Z must span [t-K, t]");
    StatePath out(Z.dim(), -grid.n_delay, 0);
    for (int n = out.first; n <= 0; ++n) out.col(n) = Z.col(n + node);
    return out;
}

}  // namespace psmp
