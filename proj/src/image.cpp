#include "dw/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dw/errors.hpp"

namespace dw {

Image::Image(int width, int height, int channels, float fill) : width_(width), height_(height), channels_(channels) {
  if (width < 1 || height < 1 || channels < 1) throw std::invalid_argument("image dimensions must be positive");
  data_.assign(pixel_count() * static_cast<std::size_t>(channels), fill);
}

namespace {

png_uint_32 png_format_for(int channels) {
  switch (channels) {
    case 1:
      return PNG_FORMAT_GRAY;
    case 3:
      return PNG_FORMAT_RGB;
    case 4:
      return PNG_FORMAT_RGBA;
    default:
      throw std::invalid_argument("PNG export supports 1, 3 or 4 channels");
  }
}

std::uint8_t to_byte(float v) {
  const float c = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(255.0f * c));
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
  if (image.empty()) throw std::invalid_argument("cannot encode an empty image");
  std::vector<std::uint8_t> pixels(image.values().size());
  std::transform(image.values().begin(), image.values().end(), pixels.begin(), to_byte);

  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = png_format_for(image.channels());

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw FormatError(std::string("PNG decode failed: ") + img.message);
  }
  int channels = 3;
  if (img.format & PNG_FORMAT_FLAG_ALPHA) {
    img.format = PNG_FORMAT_RGBA;
    channels = 4;
  } else if (!(img.format & PNG_FORMAT_FLAG_COLOR)) {
    img.format = PNG_FORMAT_GRAY;
    channels = 1;
  } else {
    img.format = PNG_FORMAT_RGB;
  }
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw FormatError(std::string("PNG decode failed: ") + img.message);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height), channels);
  auto dst = out.values();
  for (std::size_t i = 0; i < pixels.size(); ++i) dst[i] = static_cast<float>(pixels[i]) / 255.0f;
  return out;
}

void write_png(const Image& image, const std::filesystem::path& path) {
  const auto bytes = encode_png(image);
  write_all(path, bytes.data(), bytes.size());
}

Image read_png(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  return decode_png(bytes);
}

void write_pfm(const Image& image, const std::filesystem::path& path) {
  if (image.channels() != 1) throw std::invalid_argument("PFM export expects a single-channel image");
  std::ostringstream head;
  head << "Pf\n" << image.width() << ' ' << image.height() << "\n-1.0\n";
  std::string out = head.str();
  for (int y = image.height() - 1; y >= 0; --y) {
    for (int x = 0; x < image.width(); ++x) {
      const auto bits = std::bit_cast<std::uint32_t>(image.at(x, y));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
  }
  write_all(path, out.data(), out.size());
}

Image read_pfm(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  if (magic != "Pf" || w < 1 || h < 1 || scale >= 0.0) throw FormatError(path.string() + ": unsupported PFM header");
  in.get();
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (bytes.size() < offset + static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 4) {
    throw FormatError(path.string() + ": truncated PFM payload");
  }
  Image img(w, h, 1);
  const std::uint8_t* p = bytes.data() + offset;
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x, p += 4) {
      const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                                 (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
      img.at(x, y) = std::bit_cast<float>(bits);
    }
  }
  return img;
}

Image encode_normals(const Image& normals) {
  if (normals.channels() != 3) throw std::invalid_argument("normal maps have 3 channels");
  Image out(normals.width(), normals.height(), 3);
  auto src = normals.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = 0.5f * (src[i] + 1.0f);
  return out;
}

Image decode_normals(const Image& encoded) {
  if (encoded.channels() < 3) throw std::invalid_argument("encoded normal maps need 3 channels");
  Image out(encoded.width(), encoded.height(), 3);
  for (std::size_t p = 0; p < encoded.pixel_count(); ++p) {
    double n[3];
    double len2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      n[c] = 2.0 * encoded.pixel(p, c) - 1.0;
      len2 += n[c] * n[c];
    }
    const double len = std::sqrt(len2);
    if (len < 0.5) continue;
    for (int c = 0; c < 3; ++c) out.pixel(p, c) = static_cast<float>(n[c] / len);
  }
  return out;
}

}  // namespace dw
