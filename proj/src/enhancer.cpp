#include "dw/enhancer.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace dw {

using nlohmann::json;

const char* to_string(EnhanceKind kind) {
  return kind == EnhanceKind::NormalEnhance ? "normal_enhance" : "texture_inpaint";
}

EnhanceKind enhance_kind_from_string(const std::string& s) {
  if (s == "normal_enhance") return EnhanceKind::NormalEnhance;
  if (s == "texture_inpaint") return EnhanceKind::TextureInpaint;
  throw GatewayRequestError("unknown enhance kind '" + s + "'");
}

void EnhanceRequest::validate() const {
  auto need = [](const std::optional<Image>& img, const char* name, int channels) {
    if (!img || img->empty()) throw GatewayRequestError(std::string("request is missing the '") + name + "' image");
    if (img->channels() != channels) {
      throw GatewayRequestError(std::string("'") + name + "' must have " + std::to_string(channels) + " channels");
    }
  };
  need(normals, "normals", 3);
  if (kind == EnhanceKind::NormalEnhance) return;
  need(partial_rgb, "partial_rgb", 3);
  need(mask, "mask", 1);
  need(reference, "reference", 3);
  if (partial_rgb->width() != normals->width() || partial_rgb->height() != normals->height() ||
      mask->width() != normals->width() || mask->height() != normals->height()) {
    throw GatewayRequestError("normals, partial_rgb and mask must share one size");
  }
}

const Image& EnhanceRequest::primary() const {
  const auto& img = kind == EnhanceKind::NormalEnhance ? normals : partial_rgb;
  if (!img) throw GatewayRequestError("request has no primary image");
  return *img;
}

Image enhance(const EnhanceRequest& request, EnhancerBackend& backend) {
  request.validate();
  const Image& primary = request.primary();
  Image response = backend.run(request);
  if (response.width() != primary.width() || response.height() != primary.height()) {
    throw MalformedResponseError("response image is " + std::to_string(response.width()) + "x" +
                                 std::to_string(response.height()) + ", expected " + std::to_string(primary.width()) +
                                 "x" + std::to_string(primary.height()));
  }
  if (response.channels() != 3) {
    throw MalformedResponseError("response image has " + std::to_string(response.channels()) +
                                 " channels, expected 3");
  }

  Image out(primary.width(), primary.height(), 3);
  if (request.kind == EnhanceKind::NormalEnhance) {
    for (std::size_t p = 0; p < primary.pixel_count(); ++p) {
      const bool hit = primary.pixel(p, 0) != 0.0f || primary.pixel(p, 1) != 0.0f || primary.pixel(p, 2) != 0.0f;
      if (!hit) continue;
      double n[3];
      double len = 0.0;
      for (int c = 0; c < 3; ++c) {
        n[c] = response.pixel(p, c);
        len += n[c] * n[c];
      }
      len = std::sqrt(len);
      for (int c = 0; c < 3; ++c) {
        // A degenerate response keeps the input normal.
        out.pixel(p, c) = len > 1e-6 && std::isfinite(len) ? static_cast<float>(n[c] / len) : primary.pixel(p, c);
      }
    }
    return out;
  }

  const Image& mask = *request.mask;
  for (std::size_t p = 0; p < primary.pixel_count(); ++p) {
    const float m = mask.pixel(p, 0);
    for (int c = 0; c < 3; ++c) {
      const float partial = primary.pixel(p, c);
      float r = response.pixel(p, c);
      r = std::isfinite(r) ? std::clamp(r, 0.0f, 1.0f) : partial;
      if (!(m > 0.0f)) {
        out.pixel(p, c) = partial;
      } else if (m >= 1.0f) {
        out.pixel(p, c) = r;
      } else {
        out.pixel(p, c) = m * r + (1.0f - m) * partial;
      }
    }
  }
  return out;
}

Image IdentityBackend::run(const EnhanceRequest& request) { return request.primary(); }

Image ConstantFillBackend::run(const EnhanceRequest& request) {
  const Image& p = request.primary();
  Image out(p.width(), p.height(), 3);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) out.pixel(i, c) = value_[static_cast<std::size_t>(c)];
  }
  return out;
}

namespace {

Image unsharp_normals(const Image& normals, double amount, double sigma) {
  const int w = normals.width();
  const int h = normals.height();
  const int r = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  for (int i = -r; i <= r; ++i) k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  auto valid = [&](int x, int y) {
    return normals.at(x, y, 0) != 0.0f || normals.at(x, y, 1) != 0.0f || normals.at(x, y, 2) != 0.0f;
  };
  Image out(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!valid(x, y)) continue;
      // Normalized convolution over valid pixels only.
      double acc[3] = {0, 0, 0};
      double wsum = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= w || yy >= h || !valid(xx, yy)) continue;
          const double kw = k[static_cast<std::size_t>(dx + r)] * k[static_cast<std::size_t>(dy + r)];
          for (int c = 0; c < 3; ++c) acc[c] += kw * normals.at(xx, yy, c);
          wsum += kw;
        }
      }
      double n[3];
      double len = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double v = normals.at(x, y, c);
        n[c] = v + amount * (v - acc[c] / wsum);
        len += n[c] * n[c];
      }
      len = std::sqrt(len);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = len > 1e-9 ? static_cast<float>(n[c] / len) : normals.at(x, y, c);
    }
  }
  return out;
}

}  // namespace

Image UnsharpNormalBackend::run(const EnhanceRequest& request) {
  if (request.kind == EnhanceKind::NormalEnhance) return unsharp_normals(*request.normals, amount_, sigma_);
  return request.primary();
}

Image push_pull_fill(const Image& image, const Image& known) {
  if (image.width() != known.width() || image.height() != known.height()) {
    throw DimensionError("push_pull_fill: image and mask sizes differ");
  }
  const int ch = image.channels();
  struct Level {
    int w, h;
    std::vector<double> color;  // normalized (not premultiplied)
    std::vector<double> weight;
  };
  std::vector<Level> levels;
  {
    Level l0{image.width(), image.height(), {}, {}};
    l0.color.assign(image.values().begin(), image.values().end());
    l0.weight.resize(image.pixel_count());
    for (std::size_t p = 0; p < image.pixel_count(); ++p) l0.weight[p] = known.pixel(p, 0) > 0.5f ? 1.0 : 0.0;
    levels.push_back(std::move(l0));
  }
  // Pull: tent-filtered (1 3 3 1)/8 average of known children.
  constexpr double kTent[4] = {0.125, 0.375, 0.375, 0.125};
  while (levels.back().w > 1 || levels.back().h > 1) {
    const Level& f = levels.back();
    Level c{(f.w + 1) / 2, (f.h + 1) / 2, {}, {}};
    c.color.assign(static_cast<std::size_t>(c.w * c.h * ch), 0.0);
    c.weight.assign(static_cast<std::size_t>(c.w * c.h), 0.0);
    std::vector<double> acc(static_cast<std::size_t>(ch));
    for (int y = 0; y < c.h; ++y) {
      for (int x = 0; x < c.w; ++x) {
        double wsum = 0.0;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int dy = 0; dy < 4; ++dy) {
          const int fy = 2 * y - 1 + dy;
          if (fy < 0 || fy >= f.h) continue;
          for (int dx = 0; dx < 4; ++dx) {
            const int fx = 2 * x - 1 + dx;
            if (fx < 0 || fx >= f.w) continue;
            const std::size_t fi = static_cast<std::size_t>(fy * f.w + fx);
            const double fw = kTent[dy] * kTent[dx] * f.weight[fi];
            wsum += fw;
            for (int k = 0; k < ch; ++k) acc[static_cast<std::size_t>(k)] += fw * f.color[fi * ch + k];
          }
        }
        const std::size_t ci = static_cast<std::size_t>(y * c.w + x);
        // Four fully known children give weight 1, as with a box filter.
        c.weight[ci] = std::min(1.0, 4.0 * wsum);
        if (wsum > 0.0) {
          for (int k = 0; k < ch; ++k) c.color[ci * ch + k] = acc[static_cast<std::size_t>(k)] / wsum;
        }
      }
    }
    levels.push_back(std::move(c));
  }
  // Push: blend each level's missing share from the bilinearly upsampled parent.
  for (std::size_t li = levels.size() - 1; li-- > 0;) {
    Level& f = levels[li];
    const Level& c = levels[li + 1];
    for (int y = 0; y < f.h; ++y) {
      const double gy = std::clamp((y + 0.5) / 2.0 - 0.5, 0.0, c.h - 1.0);
      const int y0 = static_cast<int>(gy);
      const int y1 = std::min(y0 + 1, c.h - 1);
      const double ty = gy - y0;
      for (int x = 0; x < f.w; ++x) {
        const std::size_t fi = static_cast<std::size_t>(y * f.w + x);
        const double fw = f.weight[fi];
        if (fw >= 1.0) continue;
        const double gx = std::clamp((x + 0.5) / 2.0 - 0.5, 0.0, c.w - 1.0);
        const int x0 = static_cast<int>(gx);
        const int x1 = std::min(x0 + 1, c.w - 1);
        const double tx = gx - x0;
        auto at = [&](int cx, int cy, int k) { return c.color[static_cast<std::size_t>(cy * c.w + cx) * ch + k]; };
        for (int k = 0; k < ch; ++k) {
          const double up = (1 - ty) * ((1 - tx) * at(x0, y0, k) + tx * at(x1, y0, k)) +
                            ty * ((1 - tx) * at(x0, y1, k) + tx * at(x1, y1, k));
          f.color[fi * ch + k] = fw * f.color[fi * ch + k] + (1.0 - fw) * up;
        }
        f.weight[fi] = 1.0;
      }
    }
  }
  Image out = image;
  for (std::size_t p = 0; p < out.pixel_count(); ++p) {
    if (known.pixel(p, 0) > 0.5f) continue;
    for (int k = 0; k < ch; ++k) out.pixel(p, k) = static_cast<float>(levels[0].color[p * ch + k]);
  }
  return out;
}

Image PushPullBackend::run(const EnhanceRequest& request) {
  if (request.kind == EnhanceKind::NormalEnhance) return unsharp_normals(*request.normals, 0.5, 1.0);
  const Image& mask = *request.mask;
  Image known(mask.width(), mask.height(), 1);
  for (std::size_t p = 0; p < mask.pixel_count(); ++p) known.pixel(p, 0) = mask.pixel(p, 0) > 0.5f ? 0.0f : 1.0f;
  return push_pull_fill(*request.partial_rgb, known);
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw MalformedResponseError("base64 payload length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw MalformedResponseError("invalid base64 payload");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

namespace {

std::string png_b64(const Image& img) { return base64_encode(encode_png(img)); }

Image image_from_b64(const std::string& b64) {
  const auto bytes = base64_decode(b64);
  try {
    return decode_png(bytes);
  } catch (const FormatError& e) {
    throw MalformedResponseError(e.what());
  }
}

Image drop_to_rgb(const Image& img) {
  if (img.channels() == 3) return img;
  Image out(img.width(), img.height(), 3);
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    for (int c = 0; c < 3; ++c) out.pixel(p, c) = img.pixel(p, img.channels() == 1 ? 0 : c);
  }
  return out;
}

}  // namespace

std::string encode_request_json(const EnhanceRequest& request) {
  json j;
  j["kind"] = to_string(request.kind);
  j["prompt"] = request.prompt;
  j["seed"] = request.seed;
  json images = json::object();
  if (request.normals) images["normals"] = png_b64(encode_normals(*request.normals));
  if (request.partial_rgb) images["partial_rgb"] = png_b64(*request.partial_rgb);
  if (request.mask) images["mask"] = png_b64(*request.mask);
  if (request.reference) images["reference"] = png_b64(*request.reference);
  j["images"] = std::move(images);
  if (!request.metadata.empty()) j["metadata"] = json::parse(request.metadata);
  return j.dump();
}

EnhanceRequest decode_request_json(const std::string& body) {
  EnhanceRequest r;
  try {
    const json j = json::parse(body);
    r.kind = enhance_kind_from_string(j.at("kind").get<std::string>());
    r.prompt = j.value("prompt", "");
    r.seed = j.value("seed", std::uint64_t{0});
    const json& images = j.at("images");
    if (images.contains("normals")) r.normals = decode_normals(image_from_b64(images["normals"].get<std::string>()));
    if (images.contains("partial_rgb")) r.partial_rgb = drop_to_rgb(image_from_b64(images["partial_rgb"].get<std::string>()));
    if (images.contains("mask")) {
      const Image m = image_from_b64(images["mask"].get<std::string>());
      Image one(m.width(), m.height(), 1);
      for (std::size_t p = 0; p < m.pixel_count(); ++p) one.pixel(p, 0) = m.pixel(p, 0);
      r.mask = std::move(one);
    }
    if (images.contains("reference")) r.reference = drop_to_rgb(image_from_b64(images["reference"].get<std::string>()));
    if (j.contains("metadata")) r.metadata = j["metadata"].dump();
  } catch (const json::exception& e) {
    throw GatewayRequestError(std::string("malformed request JSON: ") + e.what());
  }
  return r;
}

std::string encode_response_json(const Image& image, EnhanceKind kind) {
  json j;
  j["image"] = png_b64(kind == EnhanceKind::NormalEnhance ? encode_normals(image) : image);
  return j.dump();
}

Image decode_response_json(const std::string& body, EnhanceKind kind) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw MalformedResponseError(std::string("response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("image") || !j["image"].is_string()) {
    throw MalformedResponseError("response lacks a string 'image' field");
  }
  const Image img = drop_to_rgb(image_from_b64(j["image"].get<std::string>()));
  return kind == EnhanceKind::NormalEnhance ? decode_normals(img) : img;
}

std::unique_ptr<EnhancerBackend> make_backend(const GatewayConfig& config) {
  if (config.backend == "identity") return std::make_unique<IdentityBackend>();
  if (config.backend == "constant") return std::make_unique<ConstantFillBackend>(config.constant);
  if (config.backend == "unsharp") return std::make_unique<UnsharpNormalBackend>();
  if (config.backend == "pushpull") return std::make_unique<PushPullBackend>();
  if (config.backend == "http") {
    if (config.url.empty()) throw ConfigError("backend 'http' needs DW_ENHANCER_URL or --enhancer-url");
    return std::make_unique<HttpBackend>(config.url);
  }
  throw ConfigError("unknown enhancer backend '" + config.backend + "'");
}

}  // namespace dw
