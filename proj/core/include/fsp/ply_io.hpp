#pragma once

#include <filesystem>
#include <string>

#include "fsp/gaussian.hpp"

namespace fsp {

// Gaussian cloud interchange as binary little-endian PLY. One vertex per
// Gaussian with double-precision properties
//   x y z rot_0..3 scale_0..2 (log) opacity (logit) f_dc_0..2
// plus f_rest_0..8 for degree-1 clouds (channel-major: f_rest_{3c+k} holds
// band-1 coefficient k of channel c). Double precision keeps save -> load an
// exact identity, so a reloaded cloud renders bit-identically. The schema
// carries geometry and appearance only; training annotations (dynamic flags,
// confidences, generation) live in checkpoints.
std::string encode_cloud(const GaussianCloud& cloud);
GaussianCloud decode_cloud(std::string_view bytes);
void save_cloud(const std::filesystem::path& path, const GaussianCloud& cloud);
GaussianCloud load_cloud(const std::filesystem::path& path);

}  // namespace fsp
