#include "dw/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "dw/errors.hpp"
#include "dw/normal_fusion.hpp"
#include "dw/parallel.hpp"
#include "dw/sdf_opt.hpp"
#include "dw/texture_weaver.hpp"
#include "json.hpp"

namespace dw {

std::vector<Camera> ring_cameras(const GridHeader& lattice, int views, double step_deg, double elevation_deg,
                                 double distance, double fov_deg, int width, int height, double start_deg) {
  const Aabb box = lattice.bounds();
  const Vec3 center = 0.5 * (box.lo + box.hi);
  const double half = 0.5 * (box.hi - box.lo).maxCoeff();
  std::vector<Camera> cams;
  for (int k = 0; k < views; ++k) {
    const double az = std::fmod(start_deg + k * step_deg, 360.0);
    cams.push_back(orbit_camera(az, elevation_deg, distance * half, center, width, height, fov_deg));
  }
  return cams;
}

std::vector<Camera> config_cameras(const GridHeader& lattice, const RunConfig& c) {
  return ring_cameras(lattice, c.views, c.view_step, c.elevation, c.camera_distance, c.fov, c.image_size,
                      c.image_size);
}

TriMesh make_icosphere(double radius, int subdivisions, const Vec3& center) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v{{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<std::uint32_t, 3>> f{{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                              {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                              {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                              {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const auto idx = static_cast<std::uint32_t>(v.size() - 1);
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<std::uint32_t, 3>> next;
    for (const auto& tri : f) {
      const auto a = midpoint(tri[0], tri[1]);
      const auto b = midpoint(tri[1], tri[2]);
      const auto c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriMesh m;
  for (const auto& p : v) m.vertices.push_back((center + radius * p).cast<float>());
  for (auto tri : f) {
    const Vec3 n = (v[tri[1]] - v[tri[0]]).cross(v[tri[2]] - v[tri[0]]);
    if (n.dot(v[tri[0]] + v[tri[1]] + v[tri[2]]) < 0.0) std::swap(tri[1], tri[2]);
    m.triangles.push_back(tri);
  }
  return m;
}

ScalarGrid3 analytic_sphere_sdf(const GridHeader& lattice, const Vec3& center, double radius) {
  ScalarGrid3 g(lattice);
  const GridHeader& h = g.header();
  parallel_for(0, h.dims[2], [&](std::int64_t z) {
    for (int y = 0; y < h.dims[1]; ++y) {
      for (int x = 0; x < h.dims[0]; ++x) {
        g(x, y, static_cast<int>(z)) =
            static_cast<float>((h.voxel_center(x, y, static_cast<int>(z)) - center).norm() - radius);
      }
    }
  });
  return g;
}

GridHeader cube_lattice(int res, double lo, double hi) {
  GridHeader h;
  h.dims = {res, res, res};
  h.origin = Eigen::Vector3f::Constant(static_cast<float>(lo));
  h.voxel_size = static_cast<float>((hi - lo) / (res - 1));
  h.channels = 1;
  h.validate();
  return h;
}

Vec3 sample_color(const ColorGrid3& color, const Vec3& world) {
  const TrilinearStencil s = trilinear_stencil(color.header(), world_to_grid(world, color.header()));
  Vec3 c = Vec3::Zero();
  double w = 0.0;
  for (int k = 0; k < 8; ++k) {
    const double wk = s.weight[k] * color.at(s.voxel[k], 3);
    if (!(wk > 0.0)) continue;
    c += wk * Vec3(color.at(s.voxel[k], 0), color.at(s.voxel[k], 1), color.at(s.voxel[k], 2));
    w += wk;
  }
  return w > 0.0 ? Vec3(c / w) : Vec3(0.5, 0.5, 0.5);
}

void color_mesh_vertices(TriMesh& mesh, const ColorGrid3& color) {
  mesh.colors.resize(mesh.vertices.size());
  parallel_for(0, static_cast<std::int64_t>(mesh.vertices.size()), [&](std::int64_t i) {
    const auto k = static_cast<std::size_t>(i);
    mesh.colors[k] = sample_color(color, mesh.vertices[k].cast<double>()).cast<float>();
  });
}

Image render_colored(const ScalarGrid3& sdf, const ColorGrid3& color, const Camera& camera) {
  const ViewRender r = sphere_trace(sdf, camera, TraceSettings{0.5, 0.25, 512});
  Image out(camera.width, camera.height, 3, 1.0f);
  parallel_for(0, camera.height, [&](std::int64_t row) {
    for (int x = 0; x < camera.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(row) * static_cast<std::size_t>(camera.width) +
                            static_cast<std::size_t>(x);
      if (!r.hit(p)) continue;
      const Vec3 hit(r.hits.pixel(p, 0), r.hits.pixel(p, 1), r.hits.pixel(p, 2));
      // Camera-space normals face the viewer along +z.
      const double lambert = std::abs(static_cast<double>(r.normal_cam.pixel(p, 2)));
      const Vec3 c = sample_color(color, hit) * (0.3 + 0.7 * lambert);
      for (int ch = 0; ch < 3; ++ch) out.pixel(p, ch) = static_cast<float>(c[ch]);
    }
  });
  return out;
}

namespace {

std::unique_ptr<EnhancerBackend> backend_named(const std::string& name, const RunConfig& c) {
  GatewayConfig g;
  g.backend = name;
  g.url = c.enhancer_url;
  return make_backend(g);
}

}  // namespace

std::unique_ptr<EnhancerBackend> config_backend(const RunConfig& c) { return backend_named(c.backend, c); }

std::unique_ptr<EnhancerBackend> config_fallback(const RunConfig& c) {
  if (c.fallback.empty()) return nullptr;
  if (c.fallback == "http") throw ConfigError("gateway.fallback must be a local stand-in");
  return backend_named(c.fallback, c);
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

class StageClock {
 public:
  StageClock(PipelineRun& run, std::string name) : run_(run), start_(std::chrono::steady_clock::now()) {
    run_.current_stage = std::move(name);
  }
  void done() {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start_;
    run_.timings.push_back({run_.current_stage, dt.count()});
  }

 private:
  PipelineRun& run_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

void run_pipeline(PipelineRun& run) {
  const RunConfig& cfg = run.config;
  run.current_stage = "config";
  cfg.validate();
  auto gateway = config_backend(cfg);
  auto fallback = config_fallback(cfg);
  set_thread_count(cfg.threads);
  std::filesystem::create_directories(run.out_dir);
  run.timings.clear();
  run.artifacts.clear();
  auto out = [&](const std::string& name) {
    run.artifacts.push_back(name);
    return run.out_dir / name;
  };

  StageClock s1(run, "mesh2sdf");
  const TriMesh mesh = load_mesh(run.mesh);
  MeshToSdfOptions mopt;
  mopt.resolution = cfg.resolution;
  mopt.padding_fraction = cfg.padding;
  const ScalarGrid3 coarse = mesh_to_sdf(mesh, mopt);
  write_grid(coarse, out("coarse_sdf.grid"));
  s1.done();

  StageClock s2(run, "fuse");
  const auto cams = config_cameras(coarse.header(), cfg);
  FusionSettings fs;
  fs.samples_per_ray = cfg.samples_per_ray;
  fs.band_voxels = cfg.band_voxels;
  fs.fill_iterations = cfg.normal_fill_iterations;
  NormalMapHook hook;
  if (cfg.enhance_normals) {
    hook = [&](const Image& normals, std::size_t view) {
      EnhanceRequest req;
      req.kind = EnhanceKind::NormalEnhance;
      req.normals = normals;
      req.prompt = cfg.prompt;
      req.seed = cfg.seed + view;
      req.timeout = std::chrono::milliseconds(cfg.timeout_ms);
      try {
        return enhance(req, *gateway);
      } catch (const GatewayError&) {
        if (!fallback) throw;
        return enhance(req, *fallback);
      }
    };
  }
  const FusedNormals fused = fuse_normal_views(coarse, cams, fs, hook);
  write_grid(fused.field, out("normals.grid"));
  std::vector<Image> masks;
  for (const auto& r : fused.renders) masks.push_back(r.mask);
  for (std::size_t i = 0; i < fused.renders.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "views/normals_%02zu.png", i);
    std::filesystem::create_directories(run.out_dir / "views");
    write_png(encode_normals(fused.renders[i].normal_cam), out(name));
    std::snprintf(name, sizeof name, "views/mask_%02zu.png", i);
    write_png(fused.renders[i].mask, out(name));
  }
  s2.done();

  StageClock s3(run, "optimize");
  OptimizeSettings os;
  os.iterations = cfg.iterations;
  os.learning_rate = cfg.lr;
  os.weights = {cfg.lambda_n, cfg.lambda_m, cfg.lambda_e};
  os.mask.samples_per_ray = cfg.mask_samples;
  const OptimizeResult opt = optimize_sdf(coarse, fused.field, cams, masks, os);
  write_grid(opt.sdf, out("refined_sdf.grid"));
  write_text(out("loss.csv"), loss_history_csv(opt.history));
  s3.done();

  StageClock s4(run, "texture");
  const Image reference = read_png(run.reference);
  auto tex_cams = ring_cameras(opt.sdf.header(), cfg.texture_views, 360.0 / cfg.texture_views, cfg.elevation,
                               cfg.camera_distance, cfg.fov, cfg.image_size, cfg.image_size);
  const Aabb box = opt.sdf.header().bounds();
  tex_cams[0] = orbit_camera(0.0, cfg.elevation, cfg.camera_distance * 0.5 * (box.hi - box.lo).maxCoeff(),
                             0.5 * (box.lo + box.hi), reference.width(), reference.height(), cfg.fov);
  WeaveSettings ws;
  ws.params.radius = cfg.radius;
  ws.params.confidence_threshold = cfg.conf_threshold;
  ws.reference_beta = cfg.reference_beta;
  ws.view_beta = cfg.view_beta;
  ws.fill_iterations = cfg.color_fill_iterations;
  ws.fill_band_voxels = cfg.band_voxels;
  ws.prompt = cfg.prompt;
  ws.seed = cfg.seed;
  ws.timeout = std::chrono::milliseconds(cfg.timeout_ms);
  const WeaveResult woven = weave_texture(opt.sdf, tex_cams, 0, reference, *gateway, ws, fallback.get());
  write_grid(woven.color, out("color.grid"));
  write_text(out("texture_views.csv"), diagnostics_csv(woven.diagnostics));
  s4.done();

  StageClock s5(run, "extract");
  TriMesh surface = marching_cubes(opt.sdf);
  color_mesh_vertices(surface, woven.color);
  save_mesh(surface, out("mesh.ply"));
  s5.done();

  StageClock s6(run, "turntable");
  std::filesystem::create_directories(run.out_dir / "turntable");
  const auto turn = ring_cameras(opt.sdf.header(), cfg.turntable_views, 360.0 / cfg.turntable_views, 15.0,
                                 cfg.camera_distance, cfg.fov, cfg.image_size, cfg.image_size);
  for (std::size_t i = 0; i < turn.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "turntable/view_%02zu.png", i);
    write_png(render_colored(opt.sdf, woven.color, turn[i]), out(name));
  }
  s6.done();

  run.current_stage = "manifest";
  write_text(run.out_dir / "manifest.json", manifest_json(run));
  run.current_stage.clear();
}

std::string manifest_json(const PipelineRun& run) {
  nlohmann::ordered_json j;
  j["format"] = "dwrecon-manifest/1";
  j["inputs"] = {{"mesh", std::filesystem::absolute(run.mesh).string()},
                 {"reference", std::filesystem::absolute(run.reference).string()}};
  j["seed"] = run.config.seed;
  j["config"] = nlohmann::ordered_json::parse(run.config.to_json());
  nlohmann::ordered_json stages = nlohmann::ordered_json::array();
  for (const auto& t : run.timings) stages.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
  j["stages"] = std::move(stages);
  j["artifacts"] = run.artifacts;
  return j.dump(2) + "\n";
}

PipelineRun read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  PipelineRun run;
  try {
    run.mesh = j.at("inputs").at("mesh").get<std::string>();
    run.reference = j.at("inputs").at("reference").get<std::string>();
    run.config = RunConfig::from_json(j.at("config").dump());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path.string() + " lacks inputs or config: " + e.what());
  }
  return run;
}

void write_sphere_fixture(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_mesh(make_icosphere(0.5, 3), dir / "sphere.obj");
  // Smooth two-tone reference photo.
  Image ref(128, 128, 3);
  for (int y = 0; y < 128; ++y) {
    for (int x = 0; x < 128; ++x) {
      const float u = x / 127.0f;
      const float v = y / 127.0f;
      ref.at(x, y, 0) = 0.55f + 0.35f * u;
      ref.at(x, y, 1) = 0.45f + 0.2f * v;
      ref.at(x, y, 2) = 0.25f + 0.15f * (1.0f - u);
    }
  }
  write_png(ref, dir / "reference.png");
}

}  // namespace dw
