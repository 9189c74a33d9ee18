#include "oraclead/structure.hpp"

#include <cmath>

namespace oraclead {

DistanceMetric parse_metric(const std::string& name) {
    if (name == "l2") return DistanceMetric::l2;
    if (name == "l1") return DistanceMetric::l1;
    if (name == "cosine") return DistanceMetric::cosine;
    throw std::invalid_argument("unknown distance metric '" + name + "' (expected l2, l1 or cosine)");
}

std::string metric_name(DistanceMetric m) {
    switch (m) {
        case DistanceMetric::l2: return "l2";
        case DistanceMetric::l1: return "l1";
        case DistanceMetric::cosine: return "cosine";
    }
    return "l2";
}

Mat pairwise_dissimilarity(const Mat& embeddings, DistanceMetric metric) {
    const std::size_t n = embeddings.rows;
    const std::size_t d = embeddings.cols;
    require(n >= 1, "pairwise_dissimilarity: empty embedding matrix");

    Mat out(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* a = embeddings.row(i);
        for (std::size_t j = i + 1; j < n; ++j) {
            const double* b = embeddings.row(j);
            double dist = 0.0;
            switch (metric) {
                case DistanceMetric::l2: {
                    double s = 0.0;
                    for (std::size_t k = 0; k < d; ++k) {
                        const double diff = a[k] - b[k];
                        s += diff * diff;
                    }
                    dist = std::sqrt(s);
                    break;
                }
                case DistanceMetric::l1: {
                    double s = 0.0;
                    for (std::size_t k = 0; k < d; ++k) s += std::abs(a[k] - b[k]);
                    dist = s;
                    break;
                }
                case DistanceMetric::cosine: {
                    double dot = 0.0, na = 0.0, nb = 0.0;
                    for (std::size_t k = 0; k < d; ++k) {
                        dot += a[k] * b[k];
                        na += a[k] * a[k];
                        nb += b[k] * b[k];
                    }
                    na = std::sqrt(na);
                    nb = std::sqrt(nb);
                    if (na < 1e-12 || nb < 1e-12)
                        dist = 1.0;  // directionless vector
                    else
                        dist = 1.0 - dot / (na * nb);
                    break;
                }
            }
            out.at(i, j) = dist;
            out.at(j, i) = dist;
        }
    }
    return out;
}

StableLatentStructure aggregate_sls(std::span<const Mat> mats, std::size_t epoch) {
    require(!mats.empty(), "aggregate_sls: empty matrix sequence");
    const std::size_t n = mats.front().rows;
    StableLatentStructure sls;
    sls.values = Mat(n, n);
    sls.n_windows = mats.size();
    sls.epoch = epoch;
    for (const Mat& m : mats) {
        require(m.rows == n && m.cols == n, "aggregate_sls: inconsistent matrix size");
        for (std::size_t k = 0; k < n * n; ++k) sls.values.v[k] += m.v[k];
    }
    const double inv = 1.0 / static_cast<double>(mats.size());
    for (double& x : sls.values.v) x *= inv;
    return sls;
}

Mat deviation_matrix(const Mat& d_t, const Mat& sls) {
    require(d_t.same_shape(sls), "deviation_matrix: dimension mismatch");
    Mat out(d_t.rows, d_t.cols);
    for (std::size_t k = 0; k < out.v.size(); ++k) out.v[k] = std::abs(d_t.v[k] - sls.v[k]);
    return out;
}

double dissimilarity_variance(std::span<const Mat> mats) {
    require(!mats.empty(), "dissimilarity_variance: empty matrix sequence");
    double sum = 0.0;
    std::size_t count = 0;
    for (const Mat& m : mats)
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j)
                if (i != j) {
                    sum += m.at(i, j);
                    ++count;
                }
    if (count == 0) return 0.0;  // 1x1 matrices: no off-diagonal entries
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (const Mat& m : mats)
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j)
                if (i != j) {
                    const double d = m.at(i, j) - mean;
                    ss += d * d;
                }
    return ss / static_cast<double>(count);
}

}  // namespace oraclead
