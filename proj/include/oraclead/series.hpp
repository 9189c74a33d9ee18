#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oraclead/mat.hpp"

namespace oraclead {

/// A T x N block of observations, one row per timestep. Test sets may carry
/// per-timestep binary labels.
struct RawSeries {
    Mat values;  // T x N
    std::vector<std::string> variable_names;
    std::optional<std::vector<std::uint8_t>> labels;

    std::size_t timesteps() const { return values.rows; }
    std::size_t n_vars() const { return values.cols; }
};

/// Per-column z-score statistics fitted on training data.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> std;
};

/// Column means and population standard deviations. Columns whose std falls
/// below 1e-8 get std = 1 so constant channels standardize to zeros instead
/// of blowing up.
Standardizer fit_standardizer(const RawSeries& train);

RawSeries apply_standardizer(const Standardizer& s, const RawSeries& x);

/// One model input: the L-1 observations preceding `target`, plus the target
/// itself. `origin_index` is the target's timestep in the source series.
struct Window {
    Mat past;  // (L-1) x N
    std::vector<double> target;
    std::size_t origin_index = 0;
};

std::vector<Window> make_windows(const RawSeries& x, std::size_t window_len, std::size_t stride = 1);

}  // namespace oraclead
