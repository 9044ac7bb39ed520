#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "bsst/tensor.hpp"

namespace bsst::io {

namespace fs = std::filesystem;

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

inline constexpr float kFloMagic = 202021.25f;

inline std::vector<char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string() + ": cannot open for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary and renames it into place.
inline void write_atomic(const fs::path& path, const void* data, std::size_t size) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError(tmp.string() + ": cannot open for writing");
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) throw IoError(tmp.string() + ": write failed");
    }
    fs::rename(tmp, path);
}

inline void write_text(const fs::path& path, const std::string& text) { write_atomic(path, text.data(), text.size()); }

namespace detail {

template <typename T>
T load_le(const std::vector<char>& bytes, std::size_t offset, const fs::path& path, const char* what) {
    if (offset + sizeof(T) > bytes.size())
        throw IoError(path.string() + ": byte offset " + std::to_string(offset) + ": truncated while reading " +
                      what + " (file is " + std::to_string(bytes.size()) + " bytes)");
    T v;
    std::memcpy(&v, bytes.data() + offset, sizeof(T));
    return v;
}

}  // namespace detail

/// Reads a Middlebury .flo file into a [H,W,2] flow.
inline Tensor read_flo(const fs::path& path) {
    const std::vector<char> bytes = read_bytes(path);
    const float magic = detail::load_le<float>(bytes, 0, path, "magic");
    if (magic != kFloMagic)
        throw IoError(path.string() + ": byte offset 0: bad magic (expected 202021.25 / \"PIEH\")");
    const std::int32_t width = detail::load_le<std::int32_t>(bytes, 4, path, "width");
    const std::int32_t height = detail::load_le<std::int32_t>(bytes, 8, path, "height");
    if (width <= 0 || height <= 0 || width > (1 << 20) || height > (1 << 20))
        throw IoError(path.string() + ": byte offset 4: implausible size " + std::to_string(width) + "x" +
                      std::to_string(height));
    const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 2;
    const std::size_t need = 12 + count * sizeof(float);
    if (bytes.size() < need)
        throw IoError(path.string() + ": byte offset " + std::to_string(bytes.size()) + ": truncated flow data (need " +
                      std::to_string(need) + " bytes)");
    if (bytes.size() > need)
        throw IoError(path.string() + ": byte offset " + std::to_string(need) + ": trailing bytes after flow data");
    Tensor flow({static_cast<std::size_t>(height), static_cast<std::size_t>(width), 2});
    std::memcpy(flow.data(), bytes.data() + 12, count * sizeof(float));
    for (std::size_t i = 0; i < count; ++i)
        if (!std::isfinite(flow.data()[i]))
            throw IoError(path.string() + ": byte offset " + std::to_string(12 + i * sizeof(float)) +
                          ": non-finite flow value");
    return flow;
}

inline void write_flo(const fs::path& path, const Tensor& flow) {
    require(flow.rank() == 3 && flow.dim(2) == 2, "write_flo: flow must be [H,W,2]");
    std::vector<char> bytes(12 + flow.size() * sizeof(float));
    const std::int32_t width = static_cast<std::int32_t>(flow.dim(1));
    const std::int32_t height = static_cast<std::int32_t>(flow.dim(0));
    std::memcpy(bytes.data(), &kFloMagic, 4);
    std::memcpy(bytes.data() + 4, &width, 4);
    std::memcpy(bytes.data() + 8, &height, 4);
    std::memcpy(bytes.data() + 12, flow.data(), flow.size() * sizeof(float));
    write_atomic(path, bytes.data(), bytes.size());
}

inline std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// 8-bit binary PGM (P5) from a [H,W] map in [0,1], stored as round(255 v).
inline void write_pgm(const fs::path& path, const Tensor& map) {
    require(map.rank() == 2, "write_pgm: map must be [H,W]");
    std::string data = "P5\n" + std::to_string(map.dim(1)) + " " + std::to_string(map.dim(0)) + "\n255\n";
    for (float v : map.values()) data.push_back(static_cast<char>(to_byte(v)));
    write_text(path, data);
}

/// 8-bit binary PPM (P6) from a [H,W,3] image in [0,1].
inline void write_ppm(const fs::path& path, const Tensor& image) {
    require(image.rank() == 3 && image.dim(2) == 3, "write_ppm: image must be [H,W,3]");
    std::string data = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
    for (float v : image.values()) data.push_back(static_cast<char>(to_byte(v)));
    write_text(path, data);
}

/// Reads a binary P5/P6 image with maxval 255; returns [H,W] for P5 and [H,W,3] for P6, in [0,1].
inline Tensor read_pnm(const fs::path& path) {
    const std::vector<char> bytes = read_bytes(path);
    std::size_t pos = 0;
    auto fail = [&](const std::string& why) -> IoError {
        return IoError(path.string() + ": byte offset " + std::to_string(pos) + ": " + why);
    };
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&] {
        skip_space();
        std::size_t v = 0, digits = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
            if (++digits > 9) throw fail("header number too long");
        }
        if (digits == 0) throw fail("expected a header number");
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw fail("not a binary PGM/PPM (expected P5 or P6)");
    const std::size_t channels = bytes[1] == '5' ? 1 : 3;
    pos = 2;
    const std::size_t width = number(), height = number(), maxval = number();
    if (maxval != 255) throw fail("only maxval 255 is supported");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw fail("missing whitespace after header");
    ++pos;
    const std::size_t count = width * height * channels;
    if (bytes.size() - pos < count) throw fail("truncated pixel data");
    Tensor out = channels == 1 ? Tensor({height, width}) : Tensor({height, width, 3});
    for (std::size_t i = 0; i < count; ++i)
        out.data()[i] = static_cast<float>(static_cast<std::uint8_t>(bytes[pos + i])) / 255.0f;
    return out;
}

}  // namespace bsst::io
