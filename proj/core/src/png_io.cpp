#include "fsp/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include "fsp/errors.hpp"

namespace fsp {
namespace {

uint8_t quantize(double v) {
    double c = std::clamp(v, 0.0, 1.0);
    return uint8_t(std::lround(c * 255.0));
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void save_png(const std::filesystem::path& path, const Image3d& image) {
    if (image.empty()) throw FormatError("save_png: empty image");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";

    std::vector<uint8_t> bytes(image.size() * 3);
    std::vector<png_bytep> rows(size_t(image.height()));
    for (int y = 0; y < image.height(); ++y) {
        rows[size_t(y)] = bytes.data() + size_t(y) * size_t(image.width()) * 3;
        for (int x = 0; x < image.width(); ++x) {
            const Vec3d& c = image.at(x, y);
            uint8_t* px = rows[size_t(y)] + size_t(x) * 3;
            px[0] = quantize(c.x);
            px[1] = quantize(c.y);
            px[2] = quantize(c.z);
        }
    }

    FilePtr fp(std::fopen(tmp.string().c_str(), "wb"));
    if (!fp) throw FormatError("save_png: cannot open " + tmp.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("save_png: libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("save_png: encode failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(image.width()), png_uint_32(image.height()), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    fp.reset();

    std::filesystem::rename(tmp, path);
}

Image3d load_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw FormatError("load_png: cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("load_png: libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("load_png: decode failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    // Normalize any colour type / bit depth to 8-bit RGB.
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int w = int(png_get_image_width(png, info));
    const int h = int(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != size_t(w) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("load_png: unsupported layout in " + path.string());
    }
    std::vector<uint8_t> bytes(size_t(w) * size_t(h) * 3);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) rows[size_t(y)] = bytes.data() + size_t(y) * size_t(w) * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image3d out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const uint8_t* px = bytes.data() + (size_t(y) * size_t(w) + size_t(x)) * 3;
            out.at(x, y) = {px[0] / 255.0, px[1] / 255.0, px[2] / 255.0};
        }
    return out;
}

}  // namespace fsp
