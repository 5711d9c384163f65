// Copyright Contributors to the streamsplat project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "streamsplat/oracle.hpp"
#include "streamsplat/pipeline.hpp"

namespace streamsplat {

/// Every tunable of the stream generator, pipeline and trainer.
struct RunConfig {
    oracle::StreamConfig stream;
    int context_ratio = 1;
    ExperimentConfig experiment;
};

/// Parses `key = value` lines; `#` starts a comment. Duplicate keys and
/// malformed lines throw ConfigError.
std::map<std::string, std::string> parse_key_values(const std::string &text);

/// Applies key/value pairs on top of `base`. Unknown keys and values that do
/// not parse throw ConfigError.
RunConfig apply_config(const std::map<std::string, std::string> &values, RunConfig base = {});

RunConfig load_config(const std::filesystem::path &path);

/// The full key list with current values, in file syntax.
std::string dump_config(const RunConfig &config);

} // namespace streamsplat
