#include "oraclead/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"

namespace oraclead {

FusionMode parse_fusion(const std::string& name) {
    if (name == "multiplicative") return FusionMode::multiplicative;
    if (name == "additive") return FusionMode::additive;
    throw std::invalid_argument("unknown fusion mode '" + name + "' (expected multiplicative or additive)");
}

std::string fusion_name(FusionMode m) {
    return m == FusionMode::multiplicative ? "multiplicative" : "additive";
}

double prediction_score(std::span<const double> observed, std::span<const double> predicted) {
    require(observed.size() == predicted.size(), "prediction_score: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) acc += std::abs(observed[i] - predicted[i]);
    return acc / static_cast<double>(observed.size());
}

double deviation_score(const Mat& d_t, const Mat& sls) {
    require(d_t.same_shape(sls), "deviation_score: dimension mismatch");
    double acc = 0.0;
    for (std::size_t k = 0; k < d_t.v.size(); ++k) {
        const double diff = d_t.v[k] - sls.v[k];
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

double fuse(double p, double d, FusionMode mode) {
    return mode == FusionMode::multiplicative ? p * d : p + d;
}

namespace {

void znormalize(std::vector<double>& xs) {
    if (xs.empty()) return;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    double sd = std::sqrt(var / static_cast<double>(xs.size()));
    if (sd < 1e-12) sd = 1.0;
    for (double& x : xs) x = (x - mean) / sd;
}

}  // namespace

ScoreSeries score_series(const TrainedModel& tm, const RawSeries& test, const ScoreOptions& opts) {
    const std::size_t window_len = tm.model.config().window;
    require(test.timesteps() >= window_len, "score_series: test series shorter than one window");
    require(test.n_vars() == tm.model.config().n_vars, "score_series: variable count mismatch");

    const RawSeries std_test = apply_standardizer(tm.standardizer, test);
    const std::vector<Window> windows = make_windows(std_test, window_len, 1);

    std::vector<Mat> d_mats;
    Mat preds;
    detail::run_forward(tm.model, windows, opts.threads, nullptr, &d_mats, &tm.metric, &preds);

    ScoreSeries ss;
    ss.timesteps.reserve(windows.size());
    ss.p_score.reserve(windows.size());
    ss.d_score.reserve(windows.size());
    for (std::size_t w = 0; w < windows.size(); ++w) {
        ss.timesteps.push_back(windows[w].origin_index);
        ss.p_score.push_back(prediction_score(windows[w].target,
                                              std::span<const double>(preds.row(w), preds.cols)));
        ss.d_score.push_back(deviation_score(d_mats[w], tm.sls.values));
    }

    std::vector<double> p = ss.p_score;
    std::vector<double> d = ss.d_score;
    if (opts.normalize_components) {
        znormalize(p);
        znormalize(d);
    }
    ss.a_score.resize(windows.size());
    for (std::size_t w = 0; w < windows.size(); ++w) ss.a_score[w] = fuse(p[w], d[w], opts.fusion);
    return ss;
}

RootCauseRanking rank_root_causes(const Mat& deviation, std::size_t timestep, std::size_t k) {
    const std::size_t n = deviation.rows;
    require(k >= 1 && k <= n, "rank_root_causes: k out of range");

    RootCauseRanking out;
    out.timestep = timestep;
    std::vector<std::pair<std::size_t, double>> agg(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += deviation.at(i, j);
        agg[i] = {i, s};
    }
    std::stable_sort(agg.begin(), agg.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    out.ranked.assign(agg.begin(), agg.begin() + static_cast<std::ptrdiff_t>(k));
    return out;
}

Mat deviation_matrix_at(const TrainedModel& tm, const RawSeries& test, std::size_t timestep) {
    const std::size_t window_len = tm.model.config().window;
    require(timestep >= window_len - 1, "deviation_matrix_at: timestep " + std::to_string(timestep) +
                                            " is before the first scorable step " +
                                            std::to_string(window_len - 1));
    require(timestep < test.timesteps(), "deviation_matrix_at: timestep out of range");

    const RawSeries std_test = apply_standardizer(tm.standardizer, test);
    const std::size_t n = test.n_vars();
    Window win;
    win.origin_index = timestep;
    win.past = Mat(window_len - 1, n);
    win.target.resize(n);
    const std::size_t start = timestep - (window_len - 1);
    for (std::size_t r = 0; r + 1 < window_len; ++r)
        for (std::size_t c = 0; c < n; ++c) win.past.at(r, c) = std_test.values.at(start + r, c);
    for (std::size_t c = 0; c < n; ++c) win.target[c] = std_test.values.at(timestep, c);

    std::vector<Mat> d_mats;
    detail::run_forward(tm.model, std::span<const Window>(&win, 1), 1, nullptr, &d_mats, &tm.metric);
    return deviation_matrix(d_mats.front(), tm.sls.values);
}

}  // namespace oraclead
