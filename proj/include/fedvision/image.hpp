#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"

namespace fedvision {

/// Row-major 8-bit raster, 1 (gray) or 3 (RGB, interleaved) channels.
class RasterImage {
public:
    RasterImage() = default;

    RasterImage(int width, int height, int channels, std::uint8_t fill = 0)
        : width_(width), height_(height), channels_(channels) {
        validate_shape(width, height, channels);
        pixels_.assign(static_cast<std::size_t>(width) * height * channels, fill);
    }

    RasterImage(int width, int height, int channels, std::vector<std::uint8_t> pixels)
        : width_(width), height_(height), channels_(channels), pixels_(std::move(pixels)) {
        validate_shape(width, height, channels);
        require(pixels_.size() == static_cast<std::size_t>(width) * height * channels,
                "RasterImage: pixel buffer size does not match width*height*channels");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t area() const { return static_cast<std::size_t>(width_) * height_; }
    bool empty() const { return pixels_.empty(); }

    std::uint8_t& at(int x, int y, int c = 0) { return pixels_[index(x, y, c)]; }
    std::uint8_t at(int x, int y, int c = 0) const { return pixels_[index(x, y, c)]; }

    std::span<const std::uint8_t> pixels() const { return pixels_; }
    std::span<std::uint8_t> pixels() { return pixels_; }

    friend bool operator==(const RasterImage&, const RasterImage&) = default;

private:
    static void validate_shape(int w, int h, int c) {
        require(w > 0 && h > 0, "RasterImage: width and height must be positive");
        require(c == 1 || c == 3, "RasterImage: channels must be 1 or 3");
    }

    std::size_t index(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 1;
    std::vector<std::uint8_t> pixels_;
};

// ---------------------------------------------------------------------------
// Binary netpbm: P5 (gray) and P6 (RGB), maxval 255.

inline std::string encode_pnm(const RasterImage& img) {
    std::string out = (img.channels() == 1 ? "P5\n" : "P6\n") + std::to_string(img.width()) +
                      " " + std::to_string(img.height()) + "\n255\n";
    auto px = img.pixels();
    out.append(reinterpret_cast<const char*>(px.data()), px.size());
    return out;
}

namespace detail {

inline void skip_pnm_space(std::istream& in) {
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string comment;
            std::getline(in, comment);
        } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            in.get();
        } else {
            return;
        }
    }
}

inline int read_pnm_int(std::istream& in) {
    skip_pnm_space(in);
    int v = -1;
    if (!(in >> v) || v < 0) throw RuntimeError("pnm: malformed header");
    return v;
}

}  // namespace detail

inline RasterImage decode_pnm(const std::string& bytes) {
    std::istringstream in(bytes);
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    int channels = 0;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw RuntimeError("pnm: unsupported magic '" + magic + "' (expected P5 or P6)");
    }
    const int w = detail::read_pnm_int(in);
    const int h = detail::read_pnm_int(in);
    const int maxval = detail::read_pnm_int(in);
    if (maxval != 255) throw RuntimeError("pnm: only maxval 255 is supported");
    if (w <= 0 || h <= 0) throw RuntimeError("pnm: non-positive dimensions");
    in.get();  // single whitespace byte before the raster
    std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * channels);
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (static_cast<std::size_t>(in.gcount()) != px.size()) throw RuntimeError("pnm: truncated raster");
    return RasterImage(w, h, channels, std::move(px));
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RuntimeError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeError("write failed for " + path.string());
}

inline RasterImage read_pnm(const std::filesystem::path& path) { return decode_pnm(read_file(path)); }

inline void write_pnm(const std::filesystem::path& path, const RasterImage& img) {
    write_file(path, encode_pnm(img));
}

}  // namespace fedvision
