#include "oraclead/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace oraclead {

std::vector<std::uint8_t> binarize(std::span<const double> scores, double tau) {
    std::vector<std::uint8_t> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= tau ? 1 : 0;
    return out;
}

PrecisionRecallF1 point_f1(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> labels) {
    require(pred.size() == labels.size(), "point_f1: length mismatch");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] && labels[i]) ++tp;
        else if (pred[i] && !labels[i]) ++fp;
        else if (!pred[i] && labels[i]) ++fn;
    }
    PrecisionRecallF1 r;
    r.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    r.recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    r.f1 = (r.precision + r.recall > 0.0) ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

ThresholdResult optimal_threshold(const LabeledScores& ls, const ThresholdMetric& metric,
                                  std::size_t n_bins) {
    require(!ls.scores.empty(), "optimal_threshold: empty scores");
    require(ls.scores.size() == ls.labels.size(), "optimal_threshold: length mismatch");
    require(n_bins >= 2, "optimal_threshold: need at least 2 bins");

    const auto [mn_it, mx_it] = std::minmax_element(ls.scores.begin(), ls.scores.end());
    const double mn = *mn_it, mx = *mx_it;

    std::vector<double> candidates;
    if (mn == mx) {
        candidates.push_back(mn);
    } else {
        candidates.reserve(n_bins);
        for (std::size_t i = 0; i < n_bins; ++i)
            candidates.push_back(mn + static_cast<double>(i) / static_cast<double>(n_bins - 1) * (mx - mn));
    }

    ThresholdResult best;
    best.candidate_count = candidates.size();
    best.tau_star = candidates.front();
    best.metric_value = -std::numeric_limits<double>::infinity();
    for (const double tau : candidates) {
        const auto pred = binarize(ls.scores, tau);
        const double value = metric(pred, ls.labels);
        if (value > best.metric_value) {  // ties keep the smallest tau
            best.metric_value = value;
            best.tau_star = tau;
        }
    }
    return best;
}

namespace {

// Descending distinct-score sweep shared by both AUC flavors: calls
// visit(tp, fp) after each group of tied scores is admitted.
template <typename Visit>
void score_sweep(const LabeledScores& ls, std::size_t& total_pos, std::size_t& total_neg, Visit visit) {
    const std::size_t n = ls.scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ls.scores[a] > ls.scores[b];
    });
    total_pos = 0;
    total_neg = 0;
    for (const auto l : ls.labels) (l ? total_pos : total_neg) += 1;

    std::size_t tp = 0, fp = 0, i = 0;
    while (i < n) {
        const double s = ls.scores[order[i]];
        while (i < n && ls.scores[order[i]] == s) {
            (ls.labels[order[i]] ? tp : fp) += 1;
            ++i;
        }
        visit(tp, fp);
    }
}

}  // namespace

double auc_roc(const LabeledScores& ls) {
    require(ls.scores.size() == ls.labels.size() && !ls.scores.empty(), "auc_roc: bad input");
    std::size_t n_pos = 0;
    for (const auto l : ls.labels) n_pos += l ? 1 : 0;
    require(n_pos > 0 && n_pos < ls.labels.size(), "auc_roc: both classes must be present");

    std::size_t pos = 0, neg = 0;
    double area = 0.0;
    double prev_fpr = 0.0, prev_tpr = 0.0;
    score_sweep(ls, pos, neg, [&](std::size_t tp, std::size_t fp) {
        const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
        const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
        prev_fpr = fpr;
        prev_tpr = tpr;
    });
    return area;
}

double auc_pr(const LabeledScores& ls) {
    require(ls.scores.size() == ls.labels.size() && !ls.scores.empty(), "auc_pr: bad input");
    std::size_t n_pos = 0;
    for (const auto l : ls.labels) n_pos += l ? 1 : 0;
    require(n_pos > 0, "auc_pr: no positive labels");

    std::size_t pos = 0, neg = 0;
    double area = 0.0;
    double prev_recall = 0.0;
    score_sweep(ls, pos, neg, [&](std::size_t tp, std::size_t fp) {
        const double recall = static_cast<double>(tp) / static_cast<double>(pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    });
    return area;
}

std::vector<std::uint8_t> adjust_labels_with_lag(std::span<const std::uint8_t> labels, std::size_t omega) {
    const std::size_t n = labels.size();
    std::vector<std::uint8_t> out(labels.begin(), labels.end());
    if (omega == 0 || n == 0) return out;

    // distance to the nearest positive via two sweeps
    const std::size_t inf = n + 1;
    std::vector<std::size_t> dist(n, inf);
    std::size_t run = inf;
    for (std::size_t i = 0; i < n; ++i) {
        run = labels[i] ? 0 : (run >= inf ? inf : run + 1);
        dist[i] = run;
    }
    run = inf;
    for (std::size_t i = n; i-- > 0;) {
        run = labels[i] ? 0 : (run >= inf ? inf : run + 1);
        dist[i] = std::min(dist[i], run);
    }
    for (std::size_t i = 0; i < n; ++i) out[i] = dist[i] <= omega ? 1 : 0;
    return out;
}

double vus(const LabeledScores& ls, std::span<const std::size_t> omega_set, VusKind kind) {
    require(!omega_set.empty(), "vus: empty omega set");
    double acc = 0.0;
    for (const std::size_t omega : omega_set) {
        LabeledScores adjusted;
        adjusted.scores = ls.scores;
        adjusted.labels = adjust_labels_with_lag(ls.labels, omega);
        acc += (kind == VusKind::roc) ? auc_roc(adjusted) : auc_pr(adjusted);
    }
    return acc / static_cast<double>(omega_set.size());
}

namespace {

struct Run {
    std::size_t lo = 0;  // inclusive
    std::size_t hi = 0;  // inclusive
    std::size_t len() const { return hi - lo + 1; }
};

std::vector<Run> extract_runs(std::span<const std::uint8_t> xs) {
    std::vector<Run> runs;
    std::size_t i = 0;
    while (i < xs.size()) {
        if (xs[i]) {
            Run r{i, i};
            while (r.hi + 1 < xs.size() && xs[r.hi + 1]) ++r.hi;
            runs.push_back(r);
            i = r.hi + 1;
        } else {
            ++i;
        }
    }
    return runs;
}

// Overlap-based score of `targets` against `others`: mean over target runs of
// (covered fraction) * (cardinality factor), plus bookkeeping for the
// existence reward.
double range_side(const std::vector<Run>& targets, const std::vector<Run>& others, double alpha) {
    if (targets.empty()) return 0.0;
    double acc = 0.0;
    std::size_t touched = 0;
    for (const Run& t : targets) {
        std::size_t covered = 0;
        std::size_t overlapping = 0;
        for (const Run& o : others) {
            const std::size_t lo = std::max(t.lo, o.lo);
            const std::size_t hi = std::min(t.hi, o.hi);
            if (lo <= hi) {
                covered += hi - lo + 1;
                ++overlapping;
            }
        }
        if (overlapping > 0) ++touched;
        const double omega = static_cast<double>(covered) / static_cast<double>(t.len());  // flat bias
        const double cf = overlapping <= 1 ? 1.0 : 1.0 / static_cast<double>(overlapping);
        acc += omega * cf;
    }
    const double overlap_term = acc / static_cast<double>(targets.size());
    const double existence = static_cast<double>(touched) / static_cast<double>(targets.size());
    return (1.0 - alpha) * overlap_term + alpha * existence;
}

}  // namespace

double range_f1(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> labels,
                const RangeF1Config& cfg) {
    require(pred.size() == labels.size(), "range_f1: length mismatch");
    const auto label_runs = extract_runs(labels);
    const auto pred_runs = extract_runs(pred);
    const double recall = range_side(label_runs, pred_runs, cfg.alpha_recall);
    const double precision = range_side(pred_runs, label_runs, 0.0);
    if (precision + recall <= 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

double affiliation_f1(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> labels,
                      double delta) {
    require(pred.size() == labels.size(), "affiliation_f1: length mismatch");
    require(delta > 0.0, "affiliation_f1: delta must be > 0");
    const auto label_runs = extract_runs(labels);
    std::vector<std::size_t> points;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i]) points.push_back(i);
    if (points.empty() || label_runs.empty()) return 0.0;

    const auto decay = [delta](double x) { return std::max(0.0, 1.0 - x / delta); };
    const auto point_range_dist = [](std::size_t p, const Run& r) -> double {
        if (p >= r.lo && p <= r.hi) return 0.0;
        return p < r.lo ? static_cast<double>(r.lo - p) : static_cast<double>(p - r.hi);
    };

    double precision = 0.0;
    for (const std::size_t p : points) {
        double best = std::numeric_limits<double>::infinity();
        for (const Run& r : label_runs) best = std::min(best, point_range_dist(p, r));
        precision += decay(best);
    }
    precision /= static_cast<double>(points.size());

    double recall = 0.0;
    for (const Run& r : label_runs) {
        double best = std::numeric_limits<double>::infinity();
        for (const std::size_t p : points) best = std::min(best, point_range_dist(p, r));
        recall += decay(best);
    }
    recall /= static_cast<double>(label_runs.size());

    if (precision + recall <= 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

EvalReport evaluate_all(const ScoreSeries& ss, std::span<const std::uint8_t> labels, const EvalConfig& cfg) {
    require(labels.size() == ss.a_score.size(),
            "evaluate_all: " + std::to_string(labels.size()) + " labels vs " +
                std::to_string(ss.a_score.size()) + " scores after alignment");

    LabeledScores ls;
    ls.scores = ss.a_score;
    ls.labels.assign(labels.begin(), labels.end());

    EvalReport rep;
    rep.omega_set = cfg.omega_set;
    rep.auc_roc = auc_roc(ls);
    rep.auc_pr = auc_pr(ls);
    rep.vus_roc = vus(ls, cfg.omega_set, VusKind::roc);
    rep.vus_pr = vus(ls, cfg.omega_set, VusKind::pr);

    const ThresholdResult tr = optimal_threshold(
        ls, [](std::span<const std::uint8_t> p, std::span<const std::uint8_t> l) { return point_f1(p, l).f1; },
        cfg.n_bins);
    rep.tau_star = tr.tau_star;
    const auto pred = binarize(ls.scores, tr.tau_star);
    rep.f1 = point_f1(pred, ls.labels).f1;
    rep.r_f1 = range_f1(pred, ls.labels, cfg.range);
    rep.aff_f1 = affiliation_f1(pred, ls.labels, cfg.delta);
    return rep;
}

}  // namespace oraclead
