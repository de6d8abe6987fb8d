#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fsp/image.hpp"

namespace fsp {

inline constexpr double kPsnrCap = 100.0;  // returned for identical images

// Peak signal-to-noise ratio in dB for images in [0, 1]. Identical images
// yield the cap instead of infinity. Throws std::domain_error on shape
// mismatch.
double psnr(const Imaged& a, const Imaged& b);
double psnr(const Image3d& a, const Image3d& b);

// Structural similarity with the standard 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03 and dynamic range L = 1. Statistics use windows fully
// inside the image; images smaller than the window are a domain error. The
// RGB overload averages the per-channel values.
double ssim(const Imaged& a, const Imaged& b);
double ssim(const Image3d& a, const Image3d& b);

// Mean endpoint error between two flow fields over pixels valid in both.
// Returns nullopt when no pixel qualifies.
std::optional<double> flow_epe(const FlowField& estimate, const FlowField& reference);

// Intersection-over-union of two binary masks (nonzero = set). Returns 1.0
// when both masks are empty.
double mask_iou(const Image<uint8_t>& a, const Image<uint8_t>& b);

struct MetricRow {
    int frame = 0;
    int view = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

// Quality summary for a rendered sequence. LPIPS is deliberately reported as
// "n/a": it would need a pretrained network, and a stand-in value would be
// misleading.
struct MetricReport {
    std::vector<MetricRow> rows;
    std::optional<double> flow_epe;   // px
    std::optional<double> motion_iou;

    double mean_psnr() const;
    double mean_ssim() const;

    // CSV with one row per (frame, view) plus a trailing aggregate row.
    std::string to_csv() const;
};

}  // namespace fsp
