#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace oraclead {

/// Dense row-major matrix of doubles. The one container every module
/// exchanges; heavy math maps Eigen views onto `v` internally.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

    double* row(std::size_t r) { return v.data() + r * cols; }
    const double* row(std::size_t r) const { return v.data() + r * cols; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace oraclead
