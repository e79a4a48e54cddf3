#pragma once

#include <string>
#include <utility>

#include "sacvit/params.hpp"

namespace sacvit {

// Checkpoint file layout: UTF-8 JSON header (magic "SACVIT01", config, tensor
// directory with shapes and byte offsets), a "\n\0" separator, then the raw
// little-endian float32 blob. Round-trips are bit-exact.
void save_checkpoint(const Params<float>& params, const ModelConfig& cfg,
                     const std::string& path);

std::pair<Params<float>, ModelConfig> load_checkpoint(const std::string& path);

} // namespace sacvit
