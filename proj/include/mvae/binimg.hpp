#pragma once

// Lossless byte <-> gray-scale image conversion. One byte becomes one pixel,
// laid out row-major; the final row is zero padded and the true payload
// length travels with the image so padding is never mistaken for code.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "mvae/error.hpp"

namespace mvae {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline constexpr std::size_t kDefaultImageWidth = 64;

class GrayImage {
 public:
  GrayImage() = default;

  GrayImage(std::size_t width, std::size_t height, Bytes pixels, std::size_t payload_len)
      : width_(width), height_(height), pixels_(std::move(pixels)), payload_len_(payload_len) {
    if (width_ == 0) throw InvalidArgument("image width must be positive");
    if (pixels_.size() != width_ * height_)
      throw InvalidArgument("pixel count does not match width x height");
    if (payload_len_ > pixels_.size() || pixels_.size() - payload_len_ >= width_)
      throw InvalidArgument("padding must be confined to the final row");
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  std::size_t payload_len() const noexcept { return payload_len_; }

  const Bytes& pixels() const noexcept { return pixels_; }
  Bytes& pixels() noexcept { return pixels_; }

  std::uint8_t at(std::size_t row, std::size_t col) const { return pixels_[row * width_ + col]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  Bytes pixels_;
  std::size_t payload_len_ = 0;
};

// Classifier-space image: every value in [-1, 1].
template <typename T>
struct BasicNormalizedImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t payload_len = 0;
  std::vector<T> values;

  std::size_t size() const noexcept { return values.size(); }
};

using NormalizedImage = BasicNormalizedImage<float>;

inline GrayImage bytes_to_image(ByteView data, std::size_t width = kDefaultImageWidth) {
  if (width == 0) throw InvalidArgument("bytes_to_image: width must be >= 1");
  if (data.empty()) throw InvalidArgument("bytes_to_image: empty input");
  const std::size_t height = (data.size() + width - 1) / width;
  Bytes pixels(width * height, 0);
  std::copy(data.begin(), data.end(), pixels.begin());
  return GrayImage(width, height, std::move(pixels), data.size());
}

inline Bytes image_to_bytes(const GrayImage& img) {
  const auto& px = img.pixels();
  return Bytes(px.begin(), px.begin() + static_cast<std::ptrdiff_t>(img.payload_len()));
}

template <typename T = float>
BasicNormalizedImage<T> normalize(const GrayImage& img) {
  BasicNormalizedImage<T> out{img.width(), img.height(), img.payload_len(), {}};
  out.values.reserve(img.size());
  for (std::uint8_t p : img.pixels()) out.values.push_back(static_cast<T>(p / 127.5 - 1.0));
  return out;
}

inline std::uint8_t denormalize_value(double v) {
  const double p = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

template <typename T>
GrayImage denormalize(const BasicNormalizedImage<T>& n) {
  Bytes pixels(n.values.size());
  std::transform(n.values.begin(), n.values.end(), pixels.begin(),
                 [](T v) { return denormalize_value(static_cast<double>(v)); });
  return GrayImage(n.width, n.height, std::move(pixels), n.payload_len);
}

// ---------------------------------------------------------------------------
// File I/O

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return data;
}

inline void write_file(const std::filesystem::path& path, ByteView data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::filesystem::path payload_sidecar_path(const std::filesystem::path& png) {
  return png.string() + ".len";
}

namespace detail {

inline std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

}  // namespace detail

// Reads an 8-bit single-channel PNG. Payload length comes from the `.len`
// sidecar when present, otherwise every pixel is payload.
inline GrayImage read_png(const std::filesystem::path& path) {
  const Bytes file = read_file(path);
  static constexpr std::uint8_t kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (file.size() < 33 || std::memcmp(file.data(), kSig, 8) != 0 ||
      std::memcmp(file.data() + 12, "IHDR", 4) != 0)
    throw FormatError("not a PNG file: " + path.string());
  const std::uint8_t bit_depth = file[24];
  const std::uint8_t color_type = file[25];
  if (bit_depth != 8 || color_type != 0)
    throw UnsupportedFormat(path.string() + ": need 8-bit gray-scale PNG (bit depth " +
                            std::to_string(bit_depth) + ", color type " +
                            std::to_string(color_type) + ")");

  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, file.data(), file.size()))
    throw FormatError(path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  const std::size_t width = image.width;
  const std::size_t height = image.height;
  Bytes pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw FormatError(path.string() + ": " + msg);
  }
  if (width == 0 || height == 0 || detail::be32(file.data() + 16) != width)
    throw FormatError(path.string() + ": bad dimensions");

  std::size_t payload = width * height;
  const auto side = payload_sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    long long n = -1;
    if (!(in >> n) || n < 0) throw FormatError("bad payload sidecar " + side.string());
    payload = static_cast<std::size_t>(n);
    if (payload > width * height || width * height - payload >= width)
      throw FormatError("payload length " + std::to_string(payload) +
                        " inconsistent with image " + side.string());
  }
  return GrayImage(width, height, std::move(pixels), payload);
}

inline void write_png(const GrayImage& img, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels().data(), 0, nullptr))
    throw IoError(path.string() + ": " + image.message);
  std::ofstream side(payload_sidecar_path(path), std::ios::trunc);
  side << img.payload_len() << '\n';
  if (!side) throw IoError("cannot write " + payload_sidecar_path(path).string());
}

}  // namespace mvae
