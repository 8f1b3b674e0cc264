#pragma once

#include <string>

#include "regtext/encoders/model.hpp"

namespace regtext::encoders {

// Flat binary checkpoint: magic + JSON header (spec, tensor table) followed
// by raw little-endian float32 data. Enough to resume or evaluate.
void save_checkpoint(const std::string& path, const ModelState<float>& state);
ModelState<float> load_checkpoint(const std::string& path);

}  // namespace regtext::encoders
