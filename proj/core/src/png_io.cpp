#include "poisonlab/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>

#include "poisonlab/errors.hpp"

namespace poisonlab {

std::string to_string(ImageSource s) {
    switch (s) {
        case ImageSource::procedural: return "procedural";
        case ImageSource::variant_pool: return "variant_pool";
        case ImageSource::generated: return "generated";
    }
    return "procedural";
}

ImageSource image_source_from_string(const std::string& s) {
    if (s == "procedural") return ImageSource::procedural;
    if (s == "variant_pool") return ImageSource::variant_pool;
    if (s == "generated") return ImageSource::generated;
    throw IoError("unknown image source: " + s);
}

namespace {

std::uint32_t crc32_of(const unsigned char* data, std::size_t n, std::uint32_t seed) {
    return static_cast<std::uint32_t>(::crc32(seed, data, static_cast<uInt>(n)));
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    std::uint32_t crc = crc32_of(out.data() + start, out.size() - start, ::crc32(0, nullptr, 0));
    put_u32(out, crc);
}

void write_rgb8_png(const std::string& path, const std::vector<unsigned char>& rgb,
                    int width, int height) {
    // raw scanlines with filter byte 0
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(height) * (1 + 3 * width));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);
        const unsigned char* row = rgb.data() + static_cast<std::size_t>(y) * 3 * width;
        raw.insert(raw.end(), row, row + 3 * width);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("png: deflate failed for " + path);
    compressed.resize(bound);

    std::vector<unsigned char> out;
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    out.insert(out.end(), sig, sig + 8);

    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(width));
    put_u32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", compressed);
    put_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path);
}

unsigned char to_byte(float v) {
    float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<unsigned char>(std::lround(c * 255.0f));
}

}  // namespace

void write_png(const std::string& path, const ImageSample& image) {
    std::vector<unsigned char> rgb(static_cast<std::size_t>(kImageSize) * kImageSize * 3);
    for (int y = 0; y < kImageSize; ++y)
        for (int x = 0; x < kImageSize; ++x)
            for (int c = 0; c < 3; ++c)
                rgb[(static_cast<std::size_t>(y) * kImageSize + x) * 3 + c] = to_byte(image.at(c, y, x));
    write_rgb8_png(path, rgb, kImageSize, kImageSize);
}

void write_png_grid(const std::string& path, const std::vector<ImageSample>& images, int cols) {
    if (images.empty() || cols < 1) throw IoError("png grid: nothing to write");
    int rows = static_cast<int>((images.size() + cols - 1) / cols);
    const int pad = 2;
    int width = cols * (kImageSize + pad) + pad;
    int height = rows * (kImageSize + pad) + pad;
    std::vector<unsigned char> rgb(static_cast<std::size_t>(width) * height * 3, 255);
    for (std::size_t k = 0; k < images.size(); ++k) {
        int gy = static_cast<int>(k) / cols, gx = static_cast<int>(k) % cols;
        int oy = pad + gy * (kImageSize + pad), ox = pad + gx * (kImageSize + pad);
        for (int y = 0; y < kImageSize; ++y)
            for (int x = 0; x < kImageSize; ++x)
                for (int c = 0; c < 3; ++c)
                    rgb[(static_cast<std::size_t>(oy + y) * width + ox + x) * 3 + c] =
                        to_byte(images[k].at(c, y, x));
    }
    write_rgb8_png(path, rgb, width, height);
}

}  // namespace poisonlab
