#pragma once

#include <span>
#include <string>
#include <vector>

#include "oraclead/training.hpp"

namespace oraclead {

enum class FusionMode { multiplicative, additive };

FusionMode parse_fusion(const std::string& name);
std::string fusion_name(FusionMode m);

/// Mean absolute one-step forecast error across variables.
double prediction_score(std::span<const double> observed, std::span<const double> predicted);

/// Frobenius norm of D_t - SLS.
double deviation_score(const Mat& d_t, const Mat& sls);

double fuse(double p, double d, FusionMode mode);

/// Per-timestep scores over a test series; the first L-1 steps cannot be
/// scored and are excluded. All scores live on the standardized scale.
struct ScoreSeries {
    std::vector<std::size_t> timesteps;
    std::vector<double> p_score;
    std::vector<double> d_score;
    std::vector<double> a_score;
};

struct ScoreOptions {
    FusionMode fusion = FusionMode::multiplicative;
    /// z-normalize p and d over the series before fusing (off by default;
    /// mainly for additive fusion, which is scale-sensitive).
    bool normalize_components = false;
    int threads = 0;
};

ScoreSeries score_series(const TrainedModel& tm, const RawSeries& test, const ScoreOptions& opts = {});

/// Variables ranked by row sum of a deviation matrix, descending; ties break
/// toward the smaller index.
struct RootCauseRanking {
    std::size_t timestep = 0;
    std::vector<std::pair<std::size_t, double>> ranked;  // (variable, aggregate)
};

RootCauseRanking rank_root_causes(const Mat& deviation, std::size_t timestep, std::size_t k);

/// Deviation matrix |D_t - SLS| for one scorable timestep of a test series.
Mat deviation_matrix_at(const TrainedModel& tm, const RawSeries& test, std::size_t timestep);

}  // namespace oraclead
