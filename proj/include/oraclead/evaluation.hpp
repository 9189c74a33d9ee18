#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "oraclead/scoring.hpp"

namespace oraclead {

struct LabeledScores {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
};

std::vector<std::uint8_t> binarize(std::span<const double> scores, double tau);

struct PrecisionRecallF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

PrecisionRecallF1 point_f1(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> labels);

/// Metric maximized during threshold calibration: binary predictions and
/// ground truth in, score out.
using ThresholdMetric =
    std::function<double(std::span<const std::uint8_t>, std::span<const std::uint8_t>)>;

struct ThresholdResult {
    double tau_star = 0.0;
    double metric_value = 0.0;
    std::size_t candidate_count = 0;
};

/// Grid search over n_bins thresholds spanning [min(s), max(s)]; ties go to
/// the smallest threshold. Constant scores collapse to a single candidate.
ThresholdResult optimal_threshold(const LabeledScores& ls, const ThresholdMetric& metric,
                                  std::size_t n_bins = 200);

/// Trapezoidal area under the TPR-FPR curve swept over distinct score
/// values; ties earn half credit, matching the pairwise ranking statistic.
double auc_roc(const LabeledScores& ls);

/// Step-wise (right-continuous) precision-recall integration over the
/// distinct-score sweep.
double auc_pr(const LabeledScores& ls);

/// Binary dilation: a step becomes positive if any ground-truth positive
/// lies within omega steps.
std::vector<std::uint8_t> adjust_labels_with_lag(std::span<const std::uint8_t> labels, std::size_t omega);

enum class VusKind { roc, pr };

/// Mean AUC over the lag-adjusted label variants.
double vus(const LabeledScores& ls, std::span<const std::size_t> omega_set, VusKind kind);

struct RangeF1Config {
    double alpha_recall = 0.0;  // existence-reward weight; precision's alpha is fixed to 0
};

/// Segment-level F1 with partial credit from existence, overlap and
/// cardinality components under a flat positional bias.
double range_f1(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> labels,
                const RangeF1Config& cfg = {});

/// Proximity-decayed precision/recall between predicted points and label
/// ranges; linear decay f(x) = max(0, 1 - x/delta).
double affiliation_f1(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> labels, double delta);

struct EvalConfig {
    std::vector<std::size_t> omega_set;  // defaults to {0..10}, one window span
    std::size_t n_bins = 200;
    RangeF1Config range;
    double delta = 10.0;

    EvalConfig() {
        for (std::size_t w = 0; w <= 10; ++w) omega_set.push_back(w);
    }
};

struct EvalReport {
    double f1 = 0.0;
    double r_f1 = 0.0;
    double aff_f1 = 0.0;
    double auc_roc = 0.0;
    double auc_pr = 0.0;
    double vus_roc = 0.0;
    double vus_pr = 0.0;
    double tau_star = 0.0;
    std::vector<std::size_t> omega_set;
};

/// All seven metrics on the fused anomaly score. `labels` must already be
/// aligned to ss.timesteps (the first L-1 test labels dropped).
EvalReport evaluate_all(const ScoreSeries& ss, std::span<const std::uint8_t> labels, const EvalConfig& cfg);

}  // namespace oraclead
