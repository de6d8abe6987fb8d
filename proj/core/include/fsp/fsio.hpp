#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include "fsp/errors.hpp"

namespace fsp {

// Reads a whole file as raw bytes. Throws FormatError when the file cannot
// be opened.
std::string read_file_bytes(const std::filesystem::path& path);

// Writes bytes atomically: the data lands in a sibling temp file which is
// renamed over the destination, so readers never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Little-endian append/consume helpers shared by all binary writers. Streams
// are plain byte strings so writers can be composed and hashed directly.
namespace bin {

inline void put_u32(std::string& out, uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                 char((v >> 24) & 0xff)};
    out.append(b, 4);
}

inline void put_u64(std::string& out, uint64_t v) {
    put_u32(out, uint32_t(v & 0xffffffffu));
    put_u32(out, uint32_t(v >> 32));
}

inline void put_i32(std::string& out, int32_t v) { put_u32(out, std::bit_cast<uint32_t>(v)); }
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

// Sequential reader over a byte string; every consume checks bounds and
// throws FormatError on truncation.
class Reader {
public:
    Reader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    size_t remaining() const { return bytes_.size() - pos_; }
    bool done() const { return pos_ == bytes_.size(); }

    uint32_t u32() {
        need(4);
        const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
        pos_ += 4;
        return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
               (uint32_t(p[3]) << 24);
    }
    uint64_t u64() {
        uint64_t lo = u32();
        uint64_t hi = u32();
        return lo | (hi << 32);
    }
    int32_t i32() { return std::bit_cast<int32_t>(u32()); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string_view raw(size_t n) {
        need(n);
        std::string_view v = bytes_.substr(pos_, n);
        pos_ += n;
        return v;
    }

private:
    void need(size_t n) {
        if (bytes_.size() - pos_ < n) throw FormatError(what_ + ": truncated file");
    }

    std::string_view bytes_;
    std::string what_;
    size_t pos_ = 0;
};

}  // namespace bin
}  // namespace fsp
