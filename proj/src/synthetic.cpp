#include "oraclead/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "oraclead/rng.hpp"

namespace oraclead {

BaseSignal parse_base_signal(const std::string& name) {
    if (name == "sinusoid_mix") return BaseSignal::sinusoid_mix;
    if (name == "ar_process") return BaseSignal::ar_process;
    throw std::invalid_argument("unknown base signal '" + name + "'");
}

AnomalyType parse_anomaly_type(const std::string& name) {
    if (name == "point_spike") return AnomalyType::point_spike;
    if (name == "level_shift") return AnomalyType::level_shift;
    if (name == "correlation_break") return AnomalyType::correlation_break;
    throw std::invalid_argument("unknown anomaly type '" + name + "'");
}

std::string base_signal_name(BaseSignal s) {
    return s == BaseSignal::sinusoid_mix ? "sinusoid_mix" : "ar_process";
}

std::string anomaly_type_name(AnomalyType t) {
    switch (t) {
        case AnomalyType::point_spike: return "point_spike";
        case AnomalyType::level_shift: return "level_shift";
        case AnomalyType::correlation_break: return "correlation_break";
    }
    return "point_spike";
}

void SyntheticSpec::validate() const {
    require(n_vars >= 2, "synthetic spec: n_vars must be >= 2");
    require(length_train >= 1 && length_test >= 1, "synthetic spec: lengths must be >= 1");
    require(anomaly_ratio > 0.0 && anomaly_ratio < 1.0, "synthetic spec: anomaly_ratio must be in (0,1)");
    require(segment_length_range.first >= 1 &&
                segment_length_range.first <= segment_length_range.second,
            "synthetic spec: bad segment_length_range");
    for (const std::size_t v : break_vars)
        require(v < n_vars, "synthetic spec: break variable index out of range");
}

namespace {

constexpr double kNoiseStd = 0.05;
constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr std::size_t kArBurn = 200;
constexpr std::size_t kStartMargin = 16;
constexpr std::size_t kSegmentGap = 10;

struct FactorParams {
    // sinusoid
    double period = 0.0;
    double phase = 0.0;
    // ar
    double a1 = 0.0;
    double a2 = 0.0;
};

std::vector<double> ar_series(const FactorParams& fp, std::size_t length, Rng& rng) {
    std::vector<double> xs(length + kArBurn, 0.0);
    for (std::size_t t = 2; t < xs.size(); ++t)
        xs[t] = fp.a1 * xs[t - 1] + fp.a2 * xs[t - 2] + rng.normal();
    xs.erase(xs.begin(), xs.begin() + kArBurn);
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    double sd = std::sqrt(var / static_cast<double>(xs.size()));
    if (sd < 1e-12) sd = 1.0;
    for (double& x : xs) x = (x - mean) / sd;
    return xs;
}

std::vector<double> sin_series(double period, double phase, std::size_t length) {
    std::vector<double> xs(length);
    for (std::size_t t = 0; t < length; ++t)
        xs[t] = std::sin(kTwoPi * static_cast<double>(t) / period + phase);
    return xs;
}

std::vector<std::size_t> pick_distinct(Rng& rng, std::size_t count, std::size_t n) {
    std::vector<std::size_t> out;
    while (out.size() < count) {
        const std::size_t v = static_cast<std::size_t>(rng.bounded(n));
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
    return out;
}

}  // namespace

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    const std::size_t n = spec.n_vars;
    const std::size_t total = spec.length_train + spec.length_test;
    constexpr std::size_t n_factors = 2;

    // factor parameters, then alternates used by correlation breaks
    std::vector<FactorParams> fp(n_factors), alt(n_factors);
    for (auto& f : fp) {
        f.period = rng.uniform(20.0, 60.0);
        f.phase = rng.uniform(0.0, kTwoPi);
        const double r = rng.uniform(0.90, 0.97);
        const double theta = rng.uniform(kTwoPi / 60.0, kTwoPi / 20.0);
        f.a1 = 2.0 * r * std::cos(theta);
        f.a2 = -r * r;
    }
    for (std::size_t m = 0; m < n_factors; ++m) {
        alt[m] = fp[m];
        alt[m].period = fp[m].period * rng.uniform(1.15, 1.45);
        alt[m].phase = rng.uniform(0.0, kTwoPi);
    }

    struct Loading {
        std::size_t dominant;
        double a_dom, a_oth, scale;
    };
    std::vector<Loading> load(n);
    for (std::size_t i = 0; i < n; ++i) {
        load[i].dominant = i % n_factors;
        load[i].a_dom = rng.uniform(0.75, 0.95);
        load[i].a_oth = rng.uniform(0.15, 0.35) * (rng.bounded(2) ? 1.0 : -1.0);
        load[i].scale = rng.uniform(0.8, 1.2);
    }

    std::vector<std::vector<double>> factors(n_factors), alt_factors(n_factors);
    for (std::size_t m = 0; m < n_factors; ++m)
        factors[m] = spec.base_signal == BaseSignal::sinusoid_mix
                         ? sin_series(fp[m].period, fp[m].phase, total)
                         : ar_series(fp[m], total, rng);
    for (std::size_t m = 0; m < n_factors; ++m)
        alt_factors[m] = spec.base_signal == BaseSignal::sinusoid_mix
                             ? sin_series(alt[m].period, alt[m].phase, total)
                             : ar_series(alt[m], total, rng);

    Mat x(total, n);
    for (std::size_t t = 0; t < total; ++t)
        for (std::size_t i = 0; i < n; ++i) {
            const Loading& ld = load[i];
            const double base = ld.a_dom * factors[ld.dominant][t] +
                                ld.a_oth * factors[1 - ld.dominant][t];
            x.at(t, i) = ld.scale * base + kNoiseStd * rng.normal();
        }

    // per-variable scale estimated on the (clean) training span
    std::vector<double> train_std(n, 0.0);
    {
        std::vector<double> mean(n, 0.0);
        for (std::size_t t = 0; t < spec.length_train; ++t)
            for (std::size_t i = 0; i < n; ++i) mean[i] += x.at(t, i);
        for (auto& m : mean) m /= static_cast<double>(spec.length_train);
        for (std::size_t t = 0; t < spec.length_train; ++t)
            for (std::size_t i = 0; i < n; ++i) {
                const double d = x.at(t, i) - mean[i];
                train_std[i] += d * d;
            }
        for (auto& s : train_std) {
            s = std::sqrt(s / static_cast<double>(spec.length_train));
            if (s < 1e-8) s = 1.0;
        }
    }

    std::vector<std::uint8_t> labels(spec.length_test, 0);
    std::vector<PlantedSegment> segments;

    if (!spec.anomaly_types.empty()) {
        // de-duplicated type cycle in enum order
        std::vector<AnomalyType> cycle;
        for (const AnomalyType t :
             {AnomalyType::point_spike, AnomalyType::level_shift, AnomalyType::correlation_break})
            if (std::find(spec.anomaly_types.begin(), spec.anomaly_types.end(), t) !=
                spec.anomaly_types.end())
                cycle.push_back(t);

        const std::size_t target =
            std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                         spec.anomaly_ratio * static_cast<double>(spec.length_test))));
        const std::size_t lo = spec.segment_length_range.first;
        const std::size_t hi = spec.segment_length_range.second;
        const std::size_t margin = std::min(kStartMargin, spec.length_test / 5);

        std::size_t total_labeled = 0;
        std::size_t type_index = 0;
        while (total_labeled < target) {
            std::size_t len = lo + static_cast<std::size_t>(rng.bounded(hi - lo + 1));
            const std::size_t remaining = target - total_labeled;
            if (len > remaining) {
                if (remaining >= lo)
                    len = remaining;  // land on the target exactly
                else if (total_labeled >= std::max<std::size_t>(1, (target * 9 + 9) / 10))
                    break;  // within 10% below target
                else
                    len = lo;
            }
            if (margin + len > spec.length_test)
                throw std::invalid_argument("gen_synthetic: segment length exceeds the test span");

            bool placed = false;
            for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
                const std::size_t start =
                    margin + static_cast<std::size_t>(rng.bounded(spec.length_test - margin - len + 1));
                const std::size_t end = start + len - 1;
                bool clash = false;
                for (const PlantedSegment& s : segments) {
                    const std::size_t s_lo = s.start >= kSegmentGap ? s.start - kSegmentGap : 0;
                    const std::size_t s_hi = s.end + kSegmentGap;
                    if (start <= s_hi && end >= s_lo) {
                        clash = true;
                        break;
                    }
                }
                if (clash) continue;

                PlantedSegment seg;
                seg.start = start;
                seg.end = end;
                seg.type = cycle[type_index % cycle.size()];
                ++type_index;

                const std::size_t row0 = spec.length_train;
                switch (seg.type) {
                    case AnomalyType::point_spike: {
                        for (std::size_t t = start; t <= end; ++t) {
                            const std::size_t v = static_cast<std::size_t>(rng.bounded(n));
                            const double sign = rng.bounded(2) ? 1.0 : -1.0;
                            const double mag = rng.uniform(4.0, 7.0);
                            x.at(row0 + t, v) += sign * mag * train_std[v];
                            if (std::find(seg.variables.begin(), seg.variables.end(), v) ==
                                seg.variables.end())
                                seg.variables.push_back(v);
                        }
                        break;
                    }
                    case AnomalyType::level_shift: {
                        const std::size_t count = 1 + static_cast<std::size_t>(rng.bounded(2));
                        seg.variables = pick_distinct(rng, std::min(count, n), n);
                        for (const std::size_t v : seg.variables) {
                            const double sign = rng.bounded(2) ? 1.0 : -1.0;
                            const double mag = rng.uniform(2.0, 3.5);
                            for (std::size_t t = start; t <= end; ++t)
                                x.at(row0 + t, v) += sign * mag * train_std[v];
                        }
                        break;
                    }
                    case AnomalyType::correlation_break: {
                        seg.variables = spec.break_vars.empty()
                                            ? pick_distinct(rng, std::min<std::size_t>(
                                                                     1 + rng.bounded(2), n),
                                                            n)
                                            : spec.break_vars;
                        for (const std::size_t v : seg.variables) {
                            const Loading& ld = load[v];
                            for (std::size_t t = start; t <= end; ++t) {
                                const std::size_t row = row0 + t;
                                const double base = ld.a_dom * alt_factors[ld.dominant][row] +
                                                    ld.a_oth * alt_factors[1 - ld.dominant][row];
                                x.at(row, v) = ld.scale * base + kNoiseStd * rng.normal();
                            }
                        }
                        break;
                    }
                }
                std::sort(seg.variables.begin(), seg.variables.end());
                for (std::size_t t = start; t <= end; ++t) labels[t] = 1;
                segments.push_back(std::move(seg));
                total_labeled += len;
                placed = true;
            }
            if (!placed)
                throw std::invalid_argument(
                    "gen_synthetic: could not place anomaly segments (spec infeasible)");
        }
        std::sort(segments.begin(), segments.end(),
                  [](const PlantedSegment& a, const PlantedSegment& b) { return a.start < b.start; });
    }

    SyntheticData out;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("var_" + std::to_string(i));

    out.train.values = Mat(spec.length_train, n);
    out.train.variable_names = names;
    for (std::size_t t = 0; t < spec.length_train; ++t)
        for (std::size_t i = 0; i < n; ++i) out.train.values.at(t, i) = x.at(t, i);

    out.test.values = Mat(spec.length_test, n);
    out.test.variable_names = names;
    for (std::size_t t = 0; t < spec.length_test; ++t)
        for (std::size_t i = 0; i < n; ++i) out.test.values.at(t, i) = x.at(spec.length_train + t, i);
    out.test.labels = std::move(labels);
    out.segments = std::move(segments);
    return out;
}

}  // namespace oraclead
