#include "dw/sdf_opt.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "dw/parallel.hpp"

namespace dw {

void LossWeights::validate() const {
  for (double w : {normal, mask, eikonal}) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and >= 0");
  }
}

namespace {

constexpr double kMinGradNorm = 1e-8;

// Runs slab_fn(z, partial) over all z-slabs in three phases (z mod 3) so that
// slabs processed concurrently never scatter into the same voxel: each slab
// writes only to slabs z-1..z+1. Per-voxel accumulation order depends only on
// the phase and in-slab order, never on scheduling. Returns the sum of the
// per-slab partials in slab order.
template <typename F>
double scatter_by_slabs(int depth, F&& slab_fn) {
  std::vector<double> partial(static_cast<std::size_t>(depth), 0.0);
  for (int phase = 0; phase < 3; ++phase) {
    const std::int64_t count = (depth - phase + 2) / 3;
    parallel_for(0, count, [&](std::int64_t k) {
      const int z = phase + 3 * static_cast<int>(k);
      partial[static_cast<std::size_t>(z)] = slab_fn(z);
    });
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

// Adds (dL/dg) . dg/dphi for the gradient stencil at (x,y,z).
void scatter_stencil(const GridHeader& h, int x, int y, int z, const Vec3& dl_dg, std::vector<double>& grad) {
  const auto st = gradient_stencil(h, x, y, z);
  for (int a = 0; a < 3; ++a) {
    const double c = dl_dg[a] * st[a].inv_span;
    grad[st[a].plus] += c;
    grad[st[a].minus] -= c;
  }
}

}  // namespace

LossGradient loss_normal(const ScalarGrid3d& phi, const VectorGrid3& target) {
  const GridHeader& h = phi.header();
  if (!h.same_lattice(target.header())) throw DimensionError("normal target lattice differs from the SDF");
  LossGradient out;
  out.gradient.assign(phi.voxel_count(), 0.0);

  // First count the qualifying voxels so contributions can be scaled by 1/|S|
  // while scattering.
  std::vector<std::size_t> slab_count(static_cast<std::size_t>(h.dims[2]), 0);
  parallel_for(0, h.dims[2], [&](std::int64_t zi) {
    const int z = static_cast<int>(zi);
    std::size_t n = 0;
    for (int y = 0; y < h.dims[1]; ++y) {
      for (int x = 0; x < h.dims[0]; ++x) {
        const std::size_t i = h.index(x, y, z);
        if (!(target.at(i, 3) > 0.0f)) continue;
        if (gradient_central(phi, x, y, z).norm() >= kMinGradNorm) ++n;
      }
    }
    slab_count[static_cast<std::size_t>(zi)] = n;
  });
  for (auto n : slab_count) out.terms += n;
  if (out.terms == 0) throw Error("loss_normal: no voxel has a valid target normal");
  const double inv = 1.0 / static_cast<double>(out.terms);

  out.value = inv * scatter_by_slabs(h.dims[2], [&](int z) {
    double sum = 0.0;
    for (int y = 0; y < h.dims[1]; ++y) {
      for (int x = 0; x < h.dims[0]; ++x) {
        const std::size_t i = h.index(x, y, z);
        if (!(target.at(i, 3) > 0.0f)) continue;
        const Vec3 g = gradient_central(phi, x, y, z);
        const double len = g.norm();
        if (len < kMinGradNorm) continue;
        const Vec3 n = g / len;
        const Vec3 nt(target.at(i, 0), target.at(i, 1), target.at(i, 2));
        const double cosine = n.dot(nt);
        sum += 1.0 - cosine;
        // d(1 - n.N)/dg = -(N - (n.N) n) / |g|
        const Vec3 dl_dg = -(nt - cosine * n) / len * inv;
        scatter_stencil(h, x, y, z, dl_dg, out.gradient);
      }
    }
    return sum;
  });
  return out;
}

LossGradient loss_eikonal(const ScalarGrid3d& phi) {
  const GridHeader& h = phi.header();
  LossGradient out;
  out.gradient.assign(phi.voxel_count(), 0.0);
  const int ix = h.dims[0] - 2, iy = h.dims[1] - 2, iz = h.dims[2] - 2;
  if (ix < 1 || iy < 1 || iz < 1) return out;
  out.terms = static_cast<std::size_t>(ix) * static_cast<std::size_t>(iy) * static_cast<std::size_t>(iz);
  const double inv = 1.0 / static_cast<double>(out.terms);

  out.value = inv * scatter_by_slabs(h.dims[2], [&](int z) {
    if (z < 1 || z > h.dims[2] - 2) return 0.0;
    double sum = 0.0;
    for (int y = 1; y < h.dims[1] - 1; ++y) {
      for (int x = 1; x < h.dims[0] - 1; ++x) {
        const Vec3 g = gradient_central(phi, x, y, z);
        const double len = g.norm();
        if (len < kMinGradNorm) {
          sum += 1.0;
          continue;
        }
        sum += (len - 1.0) * (len - 1.0);
        const Vec3 dl_dg = 2.0 * (len - 1.0) / len * g * inv;
        scatter_stencil(h, x, y, z, dl_dg, out.gradient);
      }
    }
    return sum;
  });
  return out;
}

namespace {

struct PixelOccupancy {
  double occupancy = 0.0;  // unclamped sigmoid
  double softmin = std::numeric_limits<double>::infinity();
  bool in_box = false;
};

// Samples one pixel ray. When `stencils` is non-null the trilinear stencils
// and softmax weights of the samples are kept for backpropagation.
PixelOccupancy pixel_occupancy(const ScalarGrid3d& phi, const Vec3& origin, const Vec3& dir,
                               const MaskLossSettings& s, std::vector<TrilinearStencil>* stencils,
                               std::vector<double>* softmax) {
  const GridHeader& h = phi.header();
  PixelOccupancy r;
  const auto span = intersect_box(origin, dir, h.bounds());
  if (!span) return r;
  r.in_box = true;
  const double tau = s.tau_voxels * h.voxel_size;
  const double stau = s.softmin_tau_voxels * h.voxel_size;
  const int k_count = s.samples_per_ray;
  const double t0 = (*span)[0];
  const double dt = ((*span)[1] - t0) / (k_count - 1);

  thread_local std::vector<double> values;
  values.resize(static_cast<std::size_t>(k_count));
  auto sample_point = [&](int k) { return world_to_grid(origin + (t0 + k * dt) * dir, h); };
  double m = std::numeric_limits<double>::infinity();
  for (int k = 0; k < k_count; ++k) {
    const TrilinearStencil st = trilinear_stencil(h, sample_point(k));
    double v = 0.0;
    for (int j = 0; j < 8; ++j) v += st.weight[j] * phi.at(st.voxel[j]);
    values[static_cast<std::size_t>(k)] = v;
    m = std::min(m, v);
  }
  // exp(-x) is exactly 0 beyond x = 746; skipping those terms changes nothing.
  double z = 0.0;
  for (double v : values) {
    const double x = (v - m) / stau;
    if (x < 746.0) z += std::exp(-x);
  }
  r.softmin = m - stau * std::log(z);
  r.occupancy = 1.0 / (1.0 + std::exp(r.softmin / tau));
  if (stencils) {
    // Samples far above the minimum carry no weight next to the dominant
    // one (>= 1/samples); only the rest keep their stencils.
    stencils->clear();
    softmax->clear();
    for (int k = 0; k < k_count; ++k) {
      const double x = (values[static_cast<std::size_t>(k)] - m) / stau;
      if (x > 50.0) continue;  // weight < 2e-22
      const double w = std::exp(-x) / z;
      if (w < 1e-17) continue;
      stencils->push_back(trilinear_stencil(h, sample_point(k)));
      softmax->push_back(w);
    }
  }
  return r;
}

}  // namespace

Image soft_mask(const ScalarGrid3d& phi, const Camera& camera, const MaskLossSettings& settings) {
  camera.validate();
  Image out(camera.width, camera.height, 1);
  parallel_for(0, camera.height, [&](std::int64_t row) {
    const int py = static_cast<int>(row);
    for (int px = 0; px < camera.width; ++px) {
      const auto occ =
          pixel_occupancy(phi, camera.position, camera.ray_direction(px, py), settings, nullptr, nullptr);
      out.at(px, py) = static_cast<float>(occ.occupancy);
    }
  });
  return out;
}

LossGradient loss_mask(const ScalarGrid3d& phi, std::span<const Camera> cameras, std::span<const Image> target_masks,
                       const MaskLossSettings& settings) {
  if (cameras.size() != target_masks.size()) throw DimensionError("one target mask is required per camera");
  if (!(settings.tau_voxels > 0.0) || !(settings.softmin_tau_voxels > 0.0)) {
    throw ConfigError("mask temperatures must be positive");
  }
  if (settings.samples_per_ray < 2) throw ConfigError("mask samples_per_ray must be >= 2");
  LossGradient out;
  out.gradient.assign(phi.voxel_count(), 0.0);
  for (std::size_t v = 0; v < cameras.size(); ++v) {
    const Image& m = target_masks[v];
    if (m.width() != cameras[v].width || m.height() != cameras[v].height || m.channels() != 1) {
      throw DimensionError("target mask " + std::to_string(v) + " does not match its camera");
    }
    out.terms += m.pixel_count();
  }
  if (out.terms == 0) return out;
  const double inv = 1.0 / static_cast<double>(out.terms);
  const double tau = settings.tau_voxels * phi.header().voxel_size;
  const double eps = settings.clamp_eps;

  // Pixels are processed in fixed row blocks; each block records its sparse
  // gradient contributions, which are then merged in block order.
  struct Contribution {
    std::size_t voxel;
    double value;
  };
  double total = 0.0;
  for (std::size_t v = 0; v < cameras.size(); ++v) {
    const Camera& cam = cameras[v];
    const Image& target = target_masks[v];
    std::vector<double> row_loss(static_cast<std::size_t>(cam.height), 0.0);
    std::vector<std::vector<Contribution>> row_contrib(static_cast<std::size_t>(cam.height));
    parallel_for(0, cam.height, [&](std::int64_t row) {
      const int py = static_cast<int>(row);
      std::vector<TrilinearStencil> stencils;
      std::vector<double> softmax;
      double loss = 0.0;
      auto& contrib = row_contrib[static_cast<std::size_t>(py)];
      for (int px = 0; px < cam.width; ++px) {
        const auto occ =
            pixel_occupancy(phi, cam.position, cam.ray_direction(px, py), settings, &stencils, &softmax);
        const double label = target.at(px, py);
        const double p = std::clamp(occ.occupancy, eps, 1.0 - eps);
        loss += -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
        if (!occ.in_box || occ.occupancy <= eps || occ.occupancy >= 1.0 - eps) continue;
        // dBCE/dlogit = p - label, logit = -softmin/tau.
        const double dl_dsoftmin = -(occ.occupancy - label) / tau * inv;
        for (std::size_t k = 0; k < stencils.size(); ++k) {
          const double c = dl_dsoftmin * softmax[k];
          for (int j = 0; j < 8; ++j) {
            if (stencils[k].weight[j] == 0.0) continue;
            contrib.push_back({stencils[k].voxel[j], c * stencils[k].weight[j]});
          }
        }
      }
      row_loss[static_cast<std::size_t>(py)] = loss;
    });
    for (int py = 0; py < cam.height; ++py) {
      total += row_loss[static_cast<std::size_t>(py)];
      for (const auto& c : row_contrib[static_cast<std::size_t>(py)]) out.gradient[c.voxel] += c.value;
    }
  }
  out.value = total * inv;
  return out;
}

AdamOptimizer::AdamOptimizer(std::size_t size, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon), m_(size, 0.0), v_(size, 0.0) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
}

void AdamOptimizer::step(std::span<double> params, std::span<const double> gradient) {
  if (params.size() != m_.size() || gradient.size() != m_.size()) throw DimensionError("Adam parameter size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  parallel_for(0, static_cast<std::int64_t>((params.size() + 4095) / 4096), [&](std::int64_t b) {
    const std::size_t lo = static_cast<std::size_t>(b) * 4096;
    const std::size_t hi = std::min(params.size(), lo + 4096);
    for (std::size_t i = lo; i < hi; ++i) {
      const double g = gradient[i];
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
      const double mh = m_[i] / c1;
      const double vh = v_[i] / c2;
      params[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  });
}

OptimizeResult optimize_sdf(const ScalarGrid3& sdf, const VectorGrid3& target, std::span<const Camera> cameras,
                            std::span<const Image> target_masks, const OptimizeSettings& settings) {
  settings.weights.validate();
  if (settings.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!sdf.header().same_lattice(target.header())) throw DimensionError("normal target lattice differs from the SDF");
  if (cameras.size() != target_masks.size()) throw DimensionError("one target mask is required per camera");

  ScalarGrid3d phi = sdf.cast<double>();
  AdamOptimizer adam(phi.voxel_count(), settings.learning_rate);
  const LossWeights& w = settings.weights;
  OptimizeResult result;
  std::vector<double> grad(phi.voxel_count());

  for (int it = 0; it <= settings.iterations; ++it) {
    const LossGradient ln = loss_normal(phi, target);
    const LossGradient lm = cameras.empty() ? LossGradient{0.0, std::vector<double>(phi.voxel_count(), 0.0), 0}
                                            : loss_mask(phi, cameras, target_masks, settings.mask);
    const LossGradient le = loss_eikonal(phi);
    LossRecord rec{it, ln.value, lm.value, le.value, w.normal * ln.value + w.mask * lm.value + w.eikonal * le.value};
    result.history.push_back(rec);
    if (!std::isfinite(rec.total)) {
      throw DivergenceError("SDF optimization diverged at iteration " + std::to_string(it));
    }
    if (it == settings.iterations) break;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      grad[i] = w.normal * ln.gradient[i] + w.mask * lm.gradient[i] + w.eikonal * le.gradient[i];
    }
    adam.step(phi.values(), grad);
  }
  result.sdf = phi.cast<float>();
  return result;
}

std::string loss_history_csv(const std::vector<LossRecord>& history) {
  std::ostringstream out;
  out << "iteration,l_normal,l_mask,l_eikonal,l_total\n";
  out << std::setprecision(17);
  for (const auto& r : history) {
    out << r.iteration << ',' << r.normal << ',' << r.mask << ',' << r.eikonal << ',' << r.total << '\n';
  }
  return out.str();
}

}  // namespace dw
