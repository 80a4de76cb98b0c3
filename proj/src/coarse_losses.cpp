#include "dw/coarse_losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dw/errors.hpp"

namespace dw {

FeatureMap::FeatureMap(int c, int h, int w, double fill) : channels(c), height(h), width(w) {
  if (c < 1 || h < 1 || w < 1) throw std::invalid_argument("feature map dimensions must be positive");
  values.assign(static_cast<std::size_t>(c) * spatial(), fill);
}

Eigen::MatrixXd gram_matrix(const FeatureMap& f) {
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> F(
      f.values.data(), f.channels, static_cast<Eigen::Index>(f.spatial()));
  Eigen::MatrixXd g = F * F.transpose();
  g /= static_cast<double>(f.channels) * static_cast<double>(f.spatial());
  // Exact symmetry regardless of the product's summation order.
  return 0.5 * (g + g.transpose());
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable blur with clamp-to-edge borders on a single plane.
std::vector<double> blur(const std::vector<double>& src, int w, int h, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * src[static_cast<std::size_t>(y * w + std::clamp(x + i, 0, w - 1))];
      tmp[static_cast<std::size_t>(y * w + x)] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1) * w + x)];
      out[static_cast<std::size_t>(y * w + x)] = s;
    }
  }
  return out;
}

}  // namespace

std::vector<FeatureMap> FilterBankExtractor::extract(const Image& image, std::span<const int> layers) const {
  const int w = image.width();
  const int h = image.height();
  const int ch = image.channels();
  std::vector<FeatureMap> out;
  for (int layer : layers) {
    if (layer < 0 || layer >= kLayers) throw Error("filter bank has no layer " + std::to_string(layer));
    const int stride = 1 << layer;
    const int ow = std::max(1, (w + stride - 1) / stride);
    const int oh = std::max(1, (h + stride - 1) / stride);
    const auto kernel = gaussian_kernel(static_cast<double>(stride));
    FeatureMap f(3 * ch, oh, ow);
    for (int c = 0; c < ch; ++c) {
      std::vector<double> plane(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) plane[static_cast<std::size_t>(y * w + x)] = image.at(x, y, c);
      }
      const auto s = blur(plane, w, h, kernel);
      auto px = [&](int x, int y) { return s[static_cast<std::size_t>(std::clamp(y, 0, h - 1) * w + std::clamp(x, 0, w - 1))]; };
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const int x = ox * stride;
          const int y = oy * stride;
          f.at(3 * c, oy, ox) = px(x, y);
          f.at(3 * c + 1, oy, ox) = 0.5 * (px(x + 1, y) - px(x - 1, y));
          f.at(3 * c + 2, oy, ox) = 0.5 * (px(x, y + 1) - px(x, y - 1));
        }
      }
    }
    out.push_back(std::move(f));
  }
  return out;
}

PerceptualLoss perceptual_loss_from_features(std::span<const FeatureMap> rendered, std::span<const FeatureMap> target,
                                             bool normalize_content) {
  if (rendered.size() != target.size()) throw DimensionError("feature layer counts differ");
  PerceptualLoss loss;
  for (std::size_t l = 0; l < rendered.size(); ++l) {
    const FeatureMap& a = rendered[l];
    const FeatureMap& b = target[l];
    if (a.channels != b.channels || a.height != b.height || a.width != b.width) {
      throw DimensionError("feature layer " + std::to_string(l) + " shapes differ");
    }
    double content = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      const double d = a.values[i] - b.values[i];
      content += d * d;
    }
    if (normalize_content) content /= static_cast<double>(a.values.size());
    loss.content += content;
    loss.style += 2.0 * (gram_matrix(a) - gram_matrix(b)).squaredNorm();
  }
  return loss;
}

PerceptualLoss perceptual_normal_loss(const Image& rendered, const Image& target, const FeatureExtractor& extractor,
                                      const PerceptualLossOptions& options) {
  if (!rendered.same_shape(target)) throw DimensionError("rendered and target normal maps differ in shape");
  const auto fa = extractor.extract(rendered, options.layers);
  const auto fb = extractor.extract(target, options.layers);
  return perceptual_loss_from_features(fa, fb, options.normalize_content);
}

double scale_invariant_depth_loss(const Image& pred, const Image& target, const Image& valid) {
  if (pred.width() != target.width() || pred.height() != target.height() || pred.width() != valid.width() ||
      pred.height() != valid.height()) {
    throw DimensionError("depth maps and mask differ in size");
  }
  double sum = 0.0;
  double sum2 = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < pred.pixel_count(); ++p) {
    if (!(valid.pixel(p, 0) > 0.5f)) continue;
    const double a = pred.pixel(p, 0);
    const double b = target.pixel(p, 0);
    if (!(a > 0.0) || !(b > 0.0)) throw Error("scale_invariant_depth_loss: non-positive depth inside the mask");
    const double d = std::log(a) - std::log(b);
    sum += d;
    sum2 += d * d;
    ++n;
  }
  if (n == 0) throw Error("scale_invariant_depth_loss: no valid pixels");
  const double mean = sum / static_cast<double>(n);
  return sum2 / static_cast<double>(n) - 0.5 * mean * mean;
}

}  // namespace dw
