#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dw {

// Row-major H x W image with interleaved float channels. Color and mask
// images hold values in [0,1]; normal maps hold unit vectors in [-1,1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, float fill = 0.0f);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_); }
  bool empty() const { return data_.empty(); }

  float& at(int x, int y, int c = 0) { return data_[offset(x, y, c)]; }
  float at(int x, int y, int c = 0) const { return data_[offset(x, y, c)]; }
  // Linear pixel index (row-major), channel.
  float& pixel(std::size_t p, int c = 0) { return data_[p * channels_ + static_cast<std::size_t>(c)]; }
  float pixel(std::size_t p, int c = 0) const { return data_[p * channels_ + static_cast<std::size_t>(c)]; }
  // Guard against passing a linear index to at().
  void at(std::size_t, int, int = 0) const = delete;
  void at(std::int64_t, int, int = 0) const = delete;
  void at(std::uint32_t, int, int = 0) const = delete;

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  bool same_shape(const Image& o) const {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t offset(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels_) +
           static_cast<std::size_t>(c);
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

// 8-bit PNG codec. Values are clamped to [0,1] and stored as round(255*v).
// 1 channel -> gray, 3 -> RGB, 4 -> RGBA.
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(std::span<const std::uint8_t> bytes);
void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

// Single-channel float PFM ("Pf", little-endian, bottom row first).
void write_pfm(const Image& image, const std::filesystem::path& path);
Image read_pfm(const std::filesystem::path& path);

// Normal map <-> color encoding: channel = (n + 1) / 2, so that the 8-bit
// PNG value is round(255 * (n + 1) / 2). Decoding renormalizes; vectors
// shorter than 0.5 (the encoded miss value is mid-gray) decode to zero.
Image encode_normals(const Image& normals);
Image decode_normals(const Image& encoded);

}  // namespace dw
