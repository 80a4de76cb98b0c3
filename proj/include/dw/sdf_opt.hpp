#pragma once

#include <span>
#include <vector>

#include "dw/grid.hpp"
#include "dw/image.hpp"
#include "dw/tracer.hpp"

namespace dw {

struct LossWeights {
  double normal = 0.3;
  double mask = 1.0;
  double eikonal = 0.1;

  void validate() const;
};

// A loss value and its gradient with respect to every voxel of phi.
struct LossGradient {
  double value = 0.0;
  std::vector<double> gradient;
  // Number of terms averaged (voxels or pixels).
  std::size_t terms = 0;
};

// Mean over voxels with target weight > 0 of 1 - n(x) . N_target(x), where
// n is the normalized central-difference gradient. Voxels with
// |grad phi| < 1e-8 are skipped. Throws Error if no voxel qualifies.
LossGradient loss_normal(const ScalarGrid3d& phi, const VectorGrid3& target);

// Mean over interior voxels of (|grad phi| - 1)^2. Voxels with
// |grad phi| < 1e-8 count as 1 and contribute no gradient.
LossGradient loss_eikonal(const ScalarGrid3d& phi);

struct MaskLossSettings {
  double tau_voxels = 1.0;  // sigmoid temperature
  // Soft-min temperature. Log-sum-exp undershoots the true minimum by about
  // s*log(number of samples near it), so it is kept well below tau.
  double softmin_tau_voxels = 0.1;
  int samples_per_ray = 128;
  double clamp_eps = 1e-6;
};

// Mean binary cross-entropy between soft occupancy and target masks over
// all views and pixels. Soft occupancy is sigmoid(-softmin(phi)/tau) with
// softmin(phi) = -s log sum_k exp(-phi_k/s) over equidistant trilinear
// samples of the pixel ray inside the grid box; rays that miss the box have
// zero occupancy. Probabilities are clamped to [eps, 1-eps] (zero gradient
// when clamped).
LossGradient loss_mask(const ScalarGrid3d& phi, std::span<const Camera> cameras, std::span<const Image> target_masks,
                       const MaskLossSettings& settings = {});

// Soft occupancy image for one camera, same model as loss_mask.
Image soft_mask(const ScalarGrid3d& phi, const Camera& camera, const MaskLossSettings& settings = {});

class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8);

  void step(std::span<double> params, std::span<const double> gradient);

  long steps() const { return t_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

struct OptimizeSettings {
  LossWeights weights{};
  int iterations = 50;
  double learning_rate = 2e-4;
  MaskLossSettings mask{};
};

struct LossRecord {
  int iteration = 0;
  double normal = 0.0;
  double mask = 0.0;
  double eikonal = 0.0;
  double total = 0.0;
};

struct OptimizeResult {
  ScalarGrid3 sdf;
  // Losses evaluated before each update, plus a final row after the last one
  // (iterations + 1 rows).
  std::vector<LossRecord> history;
};

// Adam on lambda_n L_normal + lambda_m L_mask + lambda_e L_eikonal.
// Throws DivergenceError if the total loss becomes non-finite.
OptimizeResult optimize_sdf(const ScalarGrid3& sdf, const VectorGrid3& target, std::span<const Camera> cameras,
                            std::span<const Image> target_masks, const OptimizeSettings& settings = {});

std::string loss_history_csv(const std::vector<LossRecord>& history);

}  // namespace dw
