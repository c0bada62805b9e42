#pragma once

// Binary PPM (P6, maxval 255) reader/writer. Quantization is pinned:
// v = round(p * 255) on write, p = v / 255 on read, so files are bit-exact
// for a given image and images round-trip within 1/510 per value.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "crystal/errors.hpp"
#include "crystal/image.hpp"

namespace crystal {

namespace detail {

class PpmParser {
public:
    explicit PpmParser(std::vector<uint8_t> bytes) : bytes_(std::move(bytes)) {}

    Image parse() {
        expect_literal("P6");
        const int width = next_int("width");
        const int height = next_int("height");
        const int maxval = next_int("maxval");
        if (maxval != 255) fail("maxval must be 255, got " + std::to_string(maxval));
        if (width <= 0 || height <= 0) fail("non-positive image extents");
        // exactly one whitespace byte separates the header from the raster
        if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) fail("expected whitespace before raster");
        ++pos_;
        const size_t need = static_cast<size_t>(width) * height * 3;
        if (bytes_.size() - pos_ < need)
            fail("raster truncated: need " + std::to_string(need) + " bytes, have " +
                 std::to_string(bytes_.size() - pos_));
        Image img(height, width);
        for (size_t i = 0; i < need; ++i) img.pixels[i] = bytes_[pos_ + i] / 255.0;
        return img;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError("ppm parse error at byte " + std::to_string(pos_) + ": " + msg);
    }

    static bool is_space(uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (is_space(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                return;
            }
        }
    }

    void expect_literal(const std::string& lit) {
        for (char c : lit) {
            if (pos_ >= bytes_.size() || bytes_[pos_] != static_cast<uint8_t>(c))
                fail("expected \"" + lit + "\"");
            ++pos_;
        }
    }

    int next_int(const std::string& what) {
        skip_space_and_comments();
        if (pos_ >= bytes_.size() || bytes_[pos_] < '0' || bytes_[pos_] > '9') fail("expected " + what);
        long value = 0;
        while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > 1 << 20) fail(what + " out of range");
            ++pos_;
        }
        return static_cast<int>(value);
    }

    std::vector<uint8_t> bytes_;
    size_t pos_ = 0;
};

}  // namespace detail

inline Image decode_ppm(std::vector<uint8_t> bytes) { return detail::PpmParser(std::move(bytes)).parse(); }

inline std::vector<uint8_t> encode_ppm(const Image& img) {
    std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + img.pixels.size());
    for (double p : img.pixels) {
        const double scaled = std::round(p * 255.0);
        out.push_back(static_cast<uint8_t>(scaled < 0.0 ? 0.0 : (scaled > 255.0 ? 255.0 : scaled)));
    }
    return out;
}

inline Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_ppm(std::move(bytes));
}

inline void write_ppm(const std::string& path, const Image& img) {
    const auto bytes = encode_ppm(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace crystal
