#pragma once

#include <filesystem>
#include <string>

#include "fsp/image.hpp"

namespace fsp {

// Middlebury .flo interchange: 4-byte float magic 202021.25, width and
// height as little-endian int32, then row-major interleaved float32 (u, v).
// Invalid pixels are stored with the conventional sentinel (components
// >= 1e9) and come back with valid = 0. Serialization is to bytes so files
// can be written atomically and golden files compared directly.
std::string encode_flo(const FlowField& flow);
FlowField decode_flo(std::string_view bytes);
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path);

// Depth maps: 16-byte header (magic "DPTH", format version, width, height as
// little-endian uint32/int32) followed by row-major float32 depths.
std::string encode_dpt(const Imaged& depth);
Imaged decode_dpt(std::string_view bytes);
void write_dpt(const std::filesystem::path& path, const Imaged& depth);
Imaged read_dpt(const std::filesystem::path& path);

// Middlebury color coding: hue from flow direction via the standard 55-entry
// color wheel, saturation from magnitude. Zero flow maps to white, magnitudes
// saturate at max_mag, invalid pixels come out black. max_mag <= 0 picks the
// maximum magnitude over valid pixels (1 when the field is all zero).
Image3d flow_to_color(const FlowField& flow, double max_mag = 0.0);

}  // namespace fsp
