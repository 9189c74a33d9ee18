#pragma once

// Shared helpers for the unit tests. Oracle implementations stay inside the
// individual test files so they remain independent of the library code paths
// they check.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "oraclead/mat.hpp"

namespace testsupport {

inline bool close(double a, double b, double tol) {
    if (std::isnan(a) || std::isnan(b)) return false;
    return std::abs(a - b) <= tol;
}

inline bool close_rel(double a, double b, double tol) {
    const double denom = std::max(1.0, std::max(std::abs(a), std::abs(b)));
    return std::abs(a - b) <= tol * denom;
}

/// Scratch directory cleaned up per test binary run.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        base_ = std::filesystem::temp_directory_path() /
                ("oraclead_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(base_);
        std::filesystem::create_directories(base_);
    }
    ~TempDir() { std::filesystem::remove_all(base_); }
    std::string path(const std::string& name) const { return (base_ / name).string(); }

private:
    std::filesystem::path base_;
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline oraclead::Mat random_mat(std::mt19937& gen, std::size_t rows, std::size_t cols, double lo = -1.0,
                                double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    oraclead::Mat m(rows, cols);
    for (auto& v : m.v) v = dist(gen);
    return m;
}

}  // namespace testsupport
