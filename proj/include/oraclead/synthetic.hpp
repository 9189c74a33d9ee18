#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oraclead/series.hpp"

namespace oraclead {

enum class BaseSignal { sinusoid_mix, ar_process };
enum class AnomalyType { point_spike, level_shift, correlation_break };

BaseSignal parse_base_signal(const std::string& name);
AnomalyType parse_anomaly_type(const std::string& name);
std::string base_signal_name(BaseSignal s);
std::string anomaly_type_name(AnomalyType t);

/// Deterministic benchmark description. Variables are linear mixes of two
/// shared latent factors plus observation noise, so cross-variable structure
/// exists for deviation scoring to exploit. correlation_break segments
/// re-drive chosen variables from independent factor streams with matching
/// marginal statistics, breaking the cross-variable relation without obvious
/// per-variable outliers.
struct SyntheticSpec {
    std::size_t n_vars = 8;
    std::size_t length_train = 8000;
    std::size_t length_test = 4000;
    std::uint64_t seed = 0;
    BaseSignal base_signal = BaseSignal::sinusoid_mix;
    std::vector<AnomalyType> anomaly_types = {AnomalyType::point_spike, AnomalyType::level_shift,
                                              AnomalyType::correlation_break};
    double anomaly_ratio = 0.05;
    std::pair<std::size_t, std::size_t> segment_length_range = {5, 25};
    /// Variables hit by correlation_break segments; empty picks 1-2 at random
    /// per segment.
    std::vector<std::size_t> break_vars;

    void validate() const;
};

struct PlantedSegment {
    std::size_t start = 0;  // inclusive, test coordinates
    std::size_t end = 0;    // inclusive
    AnomalyType type = AnomalyType::point_spike;
    std::vector<std::size_t> variables;
};

struct SyntheticData {
    RawSeries train;  // anomaly-free
    RawSeries test;   // labels mark exactly the planted segments
    std::vector<PlantedSegment> segments;
};

SyntheticData gen_synthetic(const SyntheticSpec& spec);

}  // namespace oraclead
