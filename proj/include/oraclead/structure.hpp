#pragma once

#include <span>
#include <string>

#include "oraclead/mat.hpp"

namespace oraclead {

enum class DistanceMetric { l2, l1, cosine };

DistanceMetric parse_metric(const std::string& name);
std::string metric_name(DistanceMetric m);

/// N x N pairwise distances between the rows of `embeddings`. Symmetric with
/// a zero diagonal. Cosine distance is 1 - cos(a, b); rows with norm below
/// 1e-12 are treated as maximally dissimilar (distance 1) off the diagonal.
Mat pairwise_dissimilarity(const Mat& embeddings, DistanceMetric metric);

/// Epoch-mean of per-window dissimilarity matrices: the reference template
/// for the normal inter-variable structure.
struct StableLatentStructure {
    Mat values;
    std::size_t n_windows = 0;
    std::size_t epoch = 0;
};

StableLatentStructure aggregate_sls(std::span<const Mat> mats, std::size_t epoch);

/// |D_t - SLS|, element-wise.
Mat deviation_matrix(const Mat& d_t, const Mat& sls);

/// Population variance pooled over the off-diagonal entries of every matrix.
/// Logged once per epoch as a stability diagnostic.
double dissimilarity_variance(std::span<const Mat> mats);

}  // namespace oraclead
