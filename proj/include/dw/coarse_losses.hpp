#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

#include "dw/image.hpp"

namespace dw {

// c x h x w activations, channel-major.
struct FeatureMap {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w, double fill = 0.0);

  double& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  std::size_t spatial() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
};

// G = F F^T / (c h w) with F the c x (h w) flattening.
Eigen::MatrixXd gram_matrix(const FeatureMap& f);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  // One feature map per requested layer, in request order.
  virtual std::vector<FeatureMap> extract(const Image& image, std::span<const int> layers) const = 0;
};

// Deterministic stand-in for a pretrained backbone: layer l smooths the image
// with a Gaussian of sigma 2^l, takes x/y derivatives of each input channel,
// and subsamples by 2^l. Channels per layer: 3 per input channel (smoothed,
// d/dx, d/dy).
class FilterBankExtractor final : public FeatureExtractor {
 public:
  static constexpr int kLayers = 3;
  std::vector<FeatureMap> extract(const Image& image, std::span<const int> layers) const override;
};

struct PerceptualLoss {
  double content = 0.0;
  double style = 0.0;
  double total() const { return content + style; }
};

struct PerceptualLossOptions {
  std::vector<int> layers{0, 1, 2};
  // Divide each layer's squared feature difference by c*h*w.
  bool normalize_content = false;
};

// content = sum_l |f_l(rendered) - f_l(target)|^2,
// style   = 2 sum_l |G_l(rendered) - G_l(target)|_F^2.
PerceptualLoss perceptual_normal_loss(const Image& rendered, const Image& target, const FeatureExtractor& extractor,
                                      const PerceptualLossOptions& options = {});

// Same terms on precomputed per-layer features.
PerceptualLoss perceptual_loss_from_features(std::span<const FeatureMap> rendered, std::span<const FeatureMap> target,
                                             bool normalize_content = false);

// mean(d^2) - 0.5 mean(d)^2 with d = log(pred) - log(target) over pixels with
// valid > 0.5. Throws Error if no pixel is valid or a valid depth is <= 0.
double scale_invariant_depth_loss(const Image& pred, const Image& target, const Image& valid);

// Two-stage weighting of the depth and normal terms: stage one (the first
// `stage1_iterations` steps) emphasizes depth, stage two normals.
struct StagedLossSchedule {
  int stage1_iterations = 100;
  double stage1_depth = 1.0, stage1_normal = 0.1;
  double stage2_depth = 0.1, stage2_normal = 1.0;

  struct Weights {
    double depth;
    double normal;
  };
  Weights at(int iteration) const {
    return iteration < stage1_iterations ? Weights{stage1_depth, stage1_normal} : Weights{stage2_depth, stage2_normal};
  }
};

}  // namespace dw
