#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fsp/deform.hpp"
#include "fsp/gaussian.hpp"

namespace fsp {

// Full training state snapshot. Clouds are stored with every annotation
// (dynamic flags, confidences, generation); deformation models carry a
// manifest of grid shapes, bounds, and decoder layer widths so a loaded
// model is structurally validated before its weights are trusted. All
// numeric payloads are little-endian doubles, so save -> load -> save is
// byte-identical.
struct Checkpoint {
    std::string config_text;                  // echo of the training config
    GaussianCloud cloud;                      // final (or canonical) state
    std::vector<GaussianCloud> frame_clouds;  // per-frame states, may be empty
    std::optional<DeformModel> deform;        // present for the deformation paradigm
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fsp
