#pragma once

#include "psmp/core_spaces.hpp"

#include <utility>
#include <vector>

namespace psmp {

/// Atomic nonnegative measure on [-K, 0]. Atoms are grid offsets j_i <= 0 (s_i = j_i * dt).
struct FiniteMeasure {
    std::vector<int> offsets;  // ascending, distinct
    std::vector<double> weights;
    double dt = 1.0;

    [[nodiscard]] int size() const { return static_cast<int>(offsets.size()); }
    [[nodiscard]] bool empty() const { return offsets.empty(); }
    [[nodiscard]] double atom(int i) const { return offsets[static_cast<std::size_t>(i)] * dt; }
    [[nodiscard]] double weight(int i) const { return weights[static_cast<std::size_t>(i)]; }
    [[nodiscard]] int offset(int i) const { return offsets[static_cast<std::size_t>(i)]; }
    [[nodiscard]] double total_mass() const;
    /// Most negative offset (0 for the empty measure).
    [[nodiscard]] int reach() const { return offsets.empty() ? 0 : offsets.front(); }
    [[nodiscard]] FiniteMeasure scaled(double c) const;
};

/// Strict constructor: offsets in [-n_delay, 0], weights >= 0. Duplicate offsets are merged.
FiniteMeasure measure_from_offsets(const TimeGrid& grid, std::vector<int> offsets, std::vector<double> weights);

struct SnappedMeasure {
    FiniteMeasure measure;
    double max_snap = 0.0;  // largest |requested atom - grid atom|
};

/// Loader: snap (atom, weight) pairs to the nearest grid offset, ties toward 0.
SnappedMeasure snap_measure(const TimeGrid& grid, const std::vector<std::pair<double, double>>& atoms);

FiniteMeasure dirac(const TimeGrid& grid, double s, double mass = 1.0);
FiniteMeasure zero_measure(const TimeGrid& grid);
/// Lebesgue measure on [-K, 0] as the (k+1)-node trapezoid rule.
FiniteMeasure trapezoid_lebesgue(const TimeGrid& grid);

/// Vector-valued path on consecutive grid nodes [first, first + count - 1].
struct StatePath {
    int first = 0;
    Matrix values;  // dim x count

    StatePath() = default;
    StatePath(int dim, int first_node, int last_node);

    [[nodiscard]] int dim() const { return static_cast<int>(values.rows()); }
    [[nodiscard]] int count() const { return static_cast<int>(values.cols()); }
    [[nodiscard]] int last() const { return first + count() - 1; }
    [[nodiscard]] bool covers(int node) const { return node >= first && node <= last(); }
    auto col(int node) { return values.col(node - first); }
    [[nodiscard]] auto col(int node) const { return values.col(node - first); }
    /// Checked read.
    [[nodiscard]] Vector at(int node) const;
};

/// Sum_i w_i path(t + s_i).
Vector delay_integral(const StatePath& path, const FiniteMeasure& mu, int node);

/// x((s v (t-K)) ^ t) on the same span as `path`.
StatePath stopped_segment(const StatePath& path, int node, const TimeGrid& grid);

/// theta_t: body zbar(s - t) on [t-K, t], zbar(-K) before, zbar(0) after. Result spans [-K, T].
StatePath shift_forward(const StatePath& zbar, int node, const TimeGrid& grid);

/// theta_{-t}: s -> Z(s + t) on [-K, 0].
StatePath shift_back(const StatePath& Z, int node, const TimeGrid& grid);

}  // namespace psmp
