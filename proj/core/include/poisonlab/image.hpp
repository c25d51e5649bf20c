#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

namespace poisonlab {

inline constexpr int kImageSize = 32;
inline constexpr int kImageChannels = 3;
inline constexpr int kImagePixels = kImageSize * kImageSize * kImageChannels;

enum class ImageSource { procedural, variant_pool, generated };

std::string to_string(ImageSource s);
ImageSource image_source_from_string(const std::string& s);

// Planar CHW float image with values in [0, 1].
struct ImageSample {
    Eigen::VectorXf pixels;  // length kImagePixels
    int concept_id = -1;     // -1 when unlabeled
    ImageSource source = ImageSource::procedural;
    std::uint64_t seed = 0;

    float& at(int c, int y, int x) { return pixels[(c * kImageSize + y) * kImageSize + x]; }
    float at(int c, int y, int x) const { return pixels[(c * kImageSize + y) * kImageSize + x]; }
};

// 8-bit RGB PNG via zlib. `images` laid out row-major on a grid.
void write_png(const std::string& path, const ImageSample& image);
void write_png_grid(const std::string& path, const std::vector<ImageSample>& images, int cols);

}  // namespace poisonlab
