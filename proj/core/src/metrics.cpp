#include "fsp/metrics.hpp"

#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fsp {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;
constexpr double kRange = 1.0;

double psnr_from_mse(double mse) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

std::array<double, kWindow> gaussian_taps() {
    std::array<double, kWindow> taps{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        double d = i - (kWindow - 1) / 2.0;
        taps[i] = std::exp(-0.5 * d * d / (kSigma * kSigma));
        sum += taps[i];
    }
    for (double& t : taps) t /= sum;
    return taps;
}

// Separable valid-region convolution with the normalized Gaussian window.
Imaged blur_valid(const Imaged& img) {
    static const std::array<double, kWindow> taps = gaussian_taps();
    const int w = img.width(), h = img.height();
    const int ow = w - kWindow + 1, oh = h - kWindow + 1;
    Imaged rows(ow, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) acc += taps[i] * img.at(x + i, y);
            rows.at(x, y) = acc;
        }
    Imaged out(ow, oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kWindow; ++i) acc += taps[i] * rows.at(x, y + i);
            out.at(x, y) = acc;
        }
    return out;
}

void require_same_shape(int aw, int ah, int bw, int bh, const char* what) {
    if (aw != bw || ah != bh) throw std::domain_error(std::string(what) + ": shape mismatch");
}

}  // namespace

double psnr(const Imaged& a, const Imaged& b) {
    require_same_shape(a.width(), a.height(), b.width(), b.height(), "psnr");
    if (a.empty()) throw std::domain_error("psnr: empty image");
    double mse = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        mse += d * d;
    }
    return psnr_from_mse(mse / double(a.size()));
}

double psnr(const Image3d& a, const Image3d& b) {
    require_same_shape(a.width(), a.height(), b.width(), b.height(), "psnr");
    if (a.empty()) throw std::domain_error("psnr: empty image");
    double mse = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        Vec3d d = a[i] - b[i];
        mse += d.x * d.x + d.y * d.y + d.z * d.z;
    }
    return psnr_from_mse(mse / double(a.size() * 3));
}

double ssim(const Imaged& a, const Imaged& b) {
    require_same_shape(a.width(), a.height(), b.width(), b.height(), "ssim");
    if (a.width() < kWindow || a.height() < kWindow)
        throw std::domain_error("ssim: image smaller than the 11x11 window");

    Imaged aa(a.width(), a.height()), bb(a.width(), a.height()), ab(a.width(), a.height());
    for (size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    Imaged mu1 = blur_valid(a), mu2 = blur_valid(b);
    Imaged m11 = blur_valid(aa), m22 = blur_valid(bb), m12 = blur_valid(ab);

    const double c1 = (kK1 * kRange) * (kK1 * kRange);
    const double c2 = (kK2 * kRange) * (kK2 * kRange);
    double acc = 0.0;
    for (size_t i = 0; i < mu1.size(); ++i) {
        double u1 = mu1[i], u2 = mu2[i];
        double s11 = m11[i] - u1 * u1;
        double s22 = m22[i] - u2 * u2;
        double s12 = m12[i] - u1 * u2;
        acc += ((2.0 * u1 * u2 + c1) * (2.0 * s12 + c2)) /
               ((u1 * u1 + u2 * u2 + c1) * (s11 + s22 + c2));
    }
    return acc / double(mu1.size());
}

double ssim(const Image3d& a, const Image3d& b) {
    require_same_shape(a.width(), a.height(), b.width(), b.height(), "ssim");
    Imaged ca(a.width(), a.height()), cb(a.width(), a.height());
    double total = 0.0;
    for (int c = 0; c < 3; ++c) {
        for (size_t i = 0; i < a.size(); ++i) {
            ca[i] = c == 0 ? a[i].x : (c == 1 ? a[i].y : a[i].z);
            cb[i] = c == 0 ? b[i].x : (c == 1 ? b[i].y : b[i].z);
        }
        total += ssim(ca, cb);
    }
    return total / 3.0;
}

std::optional<double> flow_epe(const FlowField& estimate, const FlowField& reference) {
    if (!estimate.uv.same_shape(reference.uv)) throw std::domain_error("flow_epe: shape mismatch");
    double acc = 0.0;
    size_t n = 0;
    for (size_t i = 0; i < estimate.uv.size(); ++i) {
        if (!estimate.valid[i] || !reference.valid[i]) continue;
        Vec2d d = estimate.uv[i] - reference.uv[i];
        acc += std::sqrt(d.x * d.x + d.y * d.y);
        ++n;
    }
    if (n == 0) return std::nullopt;
    return acc / double(n);
}

double mask_iou(const Image<uint8_t>& a, const Image<uint8_t>& b) {
    if (!a.same_shape(b)) throw std::domain_error("mask_iou: shape mismatch");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        bool pa = a[i] != 0, pb = b[i] != 0;
        inter += (pa && pb) ? 1 : 0;
        uni += (pa || pb) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

double MetricReport::mean_psnr() const {
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (const MetricRow& r : rows) s += r.psnr;
    return s / double(rows.size());
}

double MetricReport::mean_ssim() const {
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (const MetricRow& r : rows) s += r.ssim;
    return s / double(rows.size());
}

std::string MetricReport::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "frame,view,psnr,ssim,lpips\n";
    for (const MetricRow& r : rows)
        out << r.frame << ',' << r.view << ',' << r.psnr << ',' << r.ssim << ",n/a\n";
    out << "mean,," << mean_psnr() << ',' << mean_ssim() << ",n/a\n";
    if (flow_epe) out << "flow_epe,," << *flow_epe << ",,\n";
    if (motion_iou) out << "motion_iou,," << *motion_iou << ",,\n";
    return out.str();
}

}  // namespace fsp
