#include "ddunet/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace ddunet {

namespace {

uint32_t read_be32(const unsigned char* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

bool probe_png(const std::filesystem::path& path, int64_t& height, int64_t& width) {
  std::ifstream in(path, std::ios::binary);
  unsigned char head[24];
  if (!in.read(reinterpret_cast<char*>(head), 24)) return false;
  static const unsigned char sig[8] = {137, 'P', 'N', 'G', 13, 10, 26, 10};
  if (!std::equal(sig, sig + 8, head)) return false;
  if (std::memcmp(head + 12, "IHDR", 4) != 0) return false;
  width = read_be32(head + 16);
  height = read_be32(head + 20);
  return width > 0 && height > 0;
}

bool probe_tiff(const std::filesystem::path& path, int64_t& height, int64_t& width) {
  std::ifstream in(path, std::ios::binary);
  unsigned char head[8];
  if (!in.read(reinterpret_cast<char*>(head), 8)) return false;
  bool little;
  if (head[0] == 'I' && head[1] == 'I')
    little = true;
  else if (head[0] == 'M' && head[1] == 'M')
    little = false;
  else
    return false;
  auto rd16 = [&](const unsigned char* p) -> uint32_t {
    return little ? (p[0] | (p[1] << 8)) : ((p[0] << 8) | p[1]);
  };
  auto rd32 = [&](const unsigned char* p) -> uint32_t {
    return little ? (p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<uint32_t>(p[3]) << 24))
                  : ((static_cast<uint32_t>(p[0]) << 24) | (p[1] << 16) | (p[2] << 8) | p[3]);
  };
  if (rd16(head + 2) != 42) return false;
  const uint32_t ifd_offset = rd32(head + 4);
  in.seekg(ifd_offset);
  unsigned char cnt[2];
  if (!in.read(reinterpret_cast<char*>(cnt), 2)) return false;
  const uint32_t n_tags = rd16(cnt);
  width = height = 0;
  for (uint32_t i = 0; i < n_tags; ++i) {
    unsigned char tag[12];
    if (!in.read(reinterpret_cast<char*>(tag), 12)) return false;
    const uint32_t id = rd16(tag);
    if (id != 256 && id != 257) continue;
    const uint32_t type = rd16(tag + 2);
    const uint32_t value = (type == 3) ? rd16(tag + 8) : rd32(tag + 8);  // SHORT or LONG
    if (id == 256)
      width = value;
    else
      height = value;
  }
  return width > 0 && height > 0;
}

}  // namespace

ImageU8 read_image(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) {
    throw std::runtime_error("cannot decode image: " + path.string());
  }
  if (mat.depth() != CV_8U) {
    cv::Mat converted;
    mat.convertTo(converted, CV_8U);
    mat = converted;
  }
  if (mat.channels() != 1 && mat.channels() != 3 && mat.channels() != 4) {
    throw std::runtime_error("unsupported channel count in image: " + path.string());
  }
  ImageU8 img;
  img.height = mat.rows;
  img.width = mat.cols;
  if (mat.channels() == 1) {
    img.channels = 1;
    img.pixels.resize(static_cast<size_t>(img.height * img.width));
    for (int64_t h = 0; h < img.height; ++h)
      for (int64_t w = 0; w < img.width; ++w)
        img.at(h, w, 0) = mat.at<uint8_t>(static_cast<int>(h), static_cast<int>(w));
  } else {
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(img.height * img.width * 3));
    const bool alpha = mat.channels() == 4;
    for (int64_t h = 0; h < img.height; ++h)
      for (int64_t w = 0; w < img.width; ++w) {
        // OpenCV stores BGR(A)
        const uint8_t* px = mat.ptr<uint8_t>(static_cast<int>(h)) + w * mat.channels();
        (void)alpha;
        img.at(h, w, 0) = px[2];
        img.at(h, w, 1) = px[1];
        img.at(h, w, 2) = px[0];
      }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const ImageU8& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("write_png: channels must be 1 or 3");
  }
  cv::Mat mat(static_cast<int>(image.height), static_cast<int>(image.width),
              image.channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int64_t h = 0; h < image.height; ++h)
    for (int64_t w = 0; w < image.width; ++w) {
      if (image.channels == 1) {
        mat.at<uint8_t>(static_cast<int>(h), static_cast<int>(w)) = image.at(h, w, 0);
      } else {
        mat.at<cv::Vec3b>(static_cast<int>(h), static_cast<int>(w)) =
            cv::Vec3b(image.at(h, w, 2), image.at(h, w, 1), image.at(h, w, 0));
      }
    }
  if (!cv::imwrite(path.string(), mat)) {
    throw std::runtime_error("cannot write PNG: " + path.string());
  }
}

std::pair<int64_t, int64_t> probe_image_size(const std::filesystem::path& path) {
  int64_t h = 0, w = 0;
  if (probe_png(path, h, w)) return {h, w};
  if (probe_tiff(path, h, w)) return {h, w};
  const ImageU8 img = read_image(path);  // slow path; raises on decode failure
  return {img.height, img.width};
}

Tensor image_to_tensor(const ImageU8& image) {
  Tensor t({3, image.height, image.width});
  const int64_t hw = image.height * image.width;
  for (int64_t h = 0; h < image.height; ++h)
    for (int64_t w = 0; w < image.width; ++w)
      for (int64_t c = 0; c < 3; ++c) {
        const uint8_t v = image.at(h, w, image.channels == 1 ? 0 : c);
        t[c * hw + h * image.width + w] = static_cast<double>(v) / 255.0;
      }
  return t;
}

ImageU8 tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw ShapeError("tensor_to_image: expected (1|3,H,W), got " + shape_to_string(t.shape()));
  }
  ImageU8 img;
  img.channels = t.dim(0);
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.pixels.resize(static_cast<size_t>(img.channels * img.height * img.width));
  const int64_t hw = img.height * img.width;
  for (int64_t h = 0; h < img.height; ++h)
    for (int64_t w = 0; w < img.width; ++w)
      for (int64_t c = 0; c < img.channels; ++c) {
        const double v = std::clamp(t[c * hw + h * img.width + w], 0.0, 1.0);
        img.at(h, w, c) = static_cast<uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

Tensor mask_from_image(const ImageU8& image, int threshold) {
  Tensor m({1, image.height, image.width});
  for (int64_t h = 0; h < image.height; ++h)
    for (int64_t w = 0; w < image.width; ++w) {
      // multi-channel masks count as road when any channel clears the bar
      int maxv = 0;
      for (int64_t c = 0; c < image.channels; ++c) maxv = std::max(maxv, int(image.at(h, w, c)));
      m[h * image.width + w] = maxv > threshold ? 1.0 : 0.0;
    }
  return m;
}

}  // namespace ddunet
