#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "ddunet/tensor.hpp"

namespace ddunet {

/// 8-bit raster, HWC interleaved; channels is 1 (gray) or 3 (RGB).
struct ImageU8 {
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 0;
  std::vector<uint8_t> pixels;

  uint8_t at(int64_t h, int64_t w, int64_t c) const {
    return pixels[static_cast<size_t>((h * width + w) * channels + c)];
  }
  uint8_t& at(int64_t h, int64_t w, int64_t c) {
    return pixels[static_cast<size_t>((h * width + w) * channels + c)];
  }
};

/// Decodes a PNG or TIFF raster. Failure raises std::runtime_error naming
/// the path.
ImageU8 read_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const ImageU8& image);

/// (height, width) without decoding pixel data where the container allows
/// it (PNG IHDR, TIFF IFD); falls back to a full decode otherwise.
std::pair<int64_t, int64_t> probe_image_size(const std::filesystem::path& path);

/// Image tensor (3,H,W) scaled to [0,1]; gray inputs are replicated.
Tensor image_to_tensor(const ImageU8& image);

/// Clamps to [0,1] and quantizes a (3,H,W) or (1,H,W) tensor back to 8 bits.
ImageU8 tensor_to_image(const Tensor& t);

/// Binary mask (1,H,W): 1 where stored intensity > threshold.
Tensor mask_from_image(const ImageU8& image, int threshold);

}  // namespace ddunet
