#pragma once

#include <map>
#include <string>

#include "comrl/core.hpp"

namespace comrl::core {

// Binary dataset file: a header record (task_id, state_dim, action_dim, count)
// as little-endian int64, followed by fixed-width little-endian float64 rows
// (state, action, reward, next_state, done flag as 0/1). A sidecar
// "<path>.meta" plain-text file carries family name, seed and generation
// config as key=value lines.
void write_dataset(const std::string& path, const OfflineTaskDataset& dataset,
                   const std::map<std::string, std::string>& metadata);

OfflineTaskDataset read_dataset(const std::string& path);

std::map<std::string, std::string> read_dataset_metadata(const std::string& path);

}  // namespace comrl::core
