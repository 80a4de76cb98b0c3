#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dw/errors.hpp"
#include "dw/image.hpp"

namespace dw {

enum class EnhanceKind { NormalEnhance, TextureInpaint };

const char* to_string(EnhanceKind kind);
EnhanceKind enhance_kind_from_string(const std::string& s);

// Inputs to an image-to-image service.
//
// normals:     camera-space normal map, 3 channels in [-1,1] (zero = miss)
// partial_rgb: current partial texture, 3 channels in [0,1]
// mask:        1 channel, 1 where the texture is incomplete
// reference:   style reference photo, any size, 3 channels
//
// normal_enhance requires normals; texture_inpaint requires all four.
struct EnhanceRequest {
  EnhanceKind kind = EnhanceKind::NormalEnhance;
  std::optional<Image> normals;
  std::optional<Image> partial_rgb;
  std::optional<Image> mask;
  std::optional<Image> reference;
  std::string prompt;
  std::uint64_t seed = 0;
  std::chrono::milliseconds timeout{60000};
  // Opaque JSON object text forwarded as "metadata" when non-empty.
  std::string metadata;

  // Throws GatewayRequestError when a required image is missing or sizes
  // disagree.
  void validate() const;
  // The image whose size the response must match: normals for
  // normal_enhance, partial_rgb for texture_inpaint.
  const Image& primary() const;
};

class GatewayError : public Error {
 public:
  using Error::Error;
};
class GatewayRequestError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};
class TimeoutError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};
class TransportError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};
class MalformedResponseError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};
class ServiceError : public GatewayError {
 public:
  ServiceError(int status, std::string body)
      : GatewayError("enhancer service returned HTTP " + std::to_string(status) + ": " + body),
        status_(status),
        body_(std::move(body)) {}
  int status() const { return status_; }
  const std::string& body() const { return body_; }

 private:
  int status_;
  std::string body_;
};

// A service answering enhance requests. Implementations return the raw
// response image; enhance() validates and composites it.
class EnhancerBackend {
 public:
  virtual ~EnhancerBackend() = default;
  virtual std::string name() const = 0;
  virtual Image run(const EnhanceRequest& request) = 0;
};

// Calls the backend and enforces the contract: the result has the primary
// image's size, and for texture_inpaint pixels with mask = 0 are exactly
// the partial_rgb values (result = mask*response + (1-mask)*partial_rgb).
// Normal results are renormalized per pixel; misses stay zero.
Image enhance(const EnhanceRequest& request, EnhancerBackend& backend);

// Returns the primary image unchanged.
class IdentityBackend final : public EnhancerBackend {
 public:
  std::string name() const override { return "identity"; }
  Image run(const EnhanceRequest& request) override;
};

// Fills the whole image with one value (rgb for inpainting; for normal
// enhancement the value is taken as a camera-space normal).
class ConstantFillBackend final : public EnhancerBackend {
 public:
  explicit ConstantFillBackend(std::array<float, 3> value) : value_(value) {}
  std::string name() const override { return "constant"; }
  Image run(const EnhanceRequest& request) override;

 private:
  std::array<float, 3> value_;
};

// Normal enhancement by unsharp masking over hit pixels, renormalized.
// Texture requests pass through unchanged.
class UnsharpNormalBackend final : public EnhancerBackend {
 public:
  explicit UnsharpNormalBackend(double amount = 0.5, double sigma = 1.0) : amount_(amount), sigma_(sigma) {}
  std::string name() const override { return "unsharp"; }
  Image run(const EnhanceRequest& request) override;

 private:
  double amount_;
  double sigma_;
};

// Diffusion-free inpainting: push-pull pyramid fill of the masked pixels
// from the unmasked ones. Normal requests use the unsharp sharpener.
class PushPullBackend final : public EnhancerBackend {
 public:
  std::string name() const override { return "pushpull"; }
  Image run(const EnhanceRequest& request) override;
};

// Fills pixels where `known` <= 0.5 by push-pull interpolation of the known
// ones; known pixels are returned unchanged.
Image push_pull_fill(const Image& image, const Image& known);

// POSTs <endpoint>/v1/enhance as JSON {kind, prompt, seed, images{name: base64
// PNG}, metadata?} and expects {image: base64 PNG}. Transport failures and
// HTTP 5xx are retried once with the same seed.
class HttpBackend final : public EnhancerBackend {
 public:
  explicit HttpBackend(std::string endpoint);
  std::string name() const override { return "http"; }
  Image run(const EnhanceRequest& request) override;

  // Number of HTTP attempts made by the last run().
  int last_attempts() const { return last_attempts_; }

 private:
  std::string scheme_host_port_;
  std::string path_prefix_;
  int last_attempts_ = 0;
};

// JSON wire encoding shared by the client and test servers.
std::string encode_request_json(const EnhanceRequest& request);
EnhanceRequest decode_request_json(const std::string& body);
std::string encode_response_json(const Image& image, EnhanceKind kind);
// Throws MalformedResponseError.
Image decode_response_json(const std::string& body, EnhanceKind kind);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

struct GatewayConfig {
  std::string backend = "pushpull";  // identity | constant | unsharp | pushpull | http
  std::string url;                   // required for http
  std::array<float, 3> constant{0.5f, 0.5f, 0.5f};
};

// Throws ConfigError for unknown backends or http without a URL.
std::unique_ptr<EnhancerBackend> make_backend(const GatewayConfig& config);

}  // namespace dw
