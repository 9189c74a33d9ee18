#pragma once

#include <string>

#include "oraclead/training.hpp"

namespace oraclead {

/// Little-endian binary container: magic "ORACLEAD", format version, model
/// config, distance metric, standardizer, SLS, then every named parameter
/// tensor with its shape and raw float64 payload. A JSON manifest mirroring
/// the shapes (plus the pinned optimizer constants) is written alongside at
/// `path + ".manifest.json"`.
void save_checkpoint(const std::string& path, const TrainedModel& tm);

TrainedModel load_checkpoint(const std::string& path);

}  // namespace oraclead
