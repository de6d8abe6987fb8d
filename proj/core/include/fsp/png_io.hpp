#pragma once

#include <filesystem>

#include "fsp/image.hpp"

namespace fsp {

// 8-bit RGB PNG. Values are clamped to [0, 1] and rounded to the nearest of
// 256 levels on save; load maps byte b back to b / 255. Saving what load
// produced reproduces the file byte-for-byte (the encoder is deterministic).
void save_png(const std::filesystem::path& path, const Image3d& image);
Image3d load_png(const std::filesystem::path& path);

}  // namespace fsp
