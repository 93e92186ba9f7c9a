#pragma once

#include <filesystem>
#include <vector>

#include "densecount/tensor.hpp"

namespace densecount {

// Planar RGB image with values in [0, 1]; pixels[c * height * width + y * width + x].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(3) * w * h, 0.0f) {}

  float& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
};

// Binary or ASCII PPM/PGM (grayscale is replicated to three channels). Other
// extensions are decoded through OpenCV when the library was built with it.
// Throws DataError on unreadable or malformed files.
Image read_image(const std::filesystem::path& path);

// Binary PPM (P6), 8 bits per channel, values clamped to [0, 1].
void write_ppm(const Image& image, const std::filesystem::path& path);

bool image_codecs_available();

// Zero-pads on the right and bottom to the next multiple of `multiple`.
Image pad_to_multiple(const Image& image, int multiple);

// [1, 3, H, W].
Tensor<float> image_to_tensor(const Image& image);

}  // namespace densecount
