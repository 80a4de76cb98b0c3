// dwrecon: command-line front end for the reconstruction stages.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dw/config.hpp"
#include "dw/enhancer.hpp"
#include "dw/errors.hpp"
#include "dw/grid.hpp"
#include "dw/image.hpp"
#include "dw/mesh.hpp"
#include "dw/normal_fusion.hpp"
#include "dw/parallel.hpp"
#include "dw/pipeline.hpp"
#include "dw/sdf_opt.hpp"
#include "dw/texture_weaver.hpp"
#include "dw/tracer.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kDivergence = 4, kGateway = 5 };

struct Options {
  std::string config_file;
  std::map<std::string, std::string> flags;  // dotted key -> value text
};

void key_option(CLI::App* app, const std::string& name, const std::string& key, Options& opts,
                const std::string& help) {
  app->add_option_function<std::string>(
      name, [&opts, key](const std::string& v) { opts.flags[key] = v; }, help);
}

void key_flag(CLI::App* app, const std::string& name, const std::string& key, Options& opts,
              const std::string& help) {
  app->add_flag_callback(name, [&opts, key]() { opts.flags[key] = "true"; }, help);
}

void common_options(CLI::App* app, Options& opts) {
  app->add_option("--config", opts.config_file, "TOML-style config file");
  key_option(app, "--threads", "run.threads", opts, "worker thread cap (0 = all cores)");
  key_option(app, "--seed", "run.seed", opts, "run seed");
}

void camera_options(CLI::App* app, Options& opts) {
  key_option(app, "--views", "cameras.views", opts, "number of ring views");
  key_option(app, "--step", "cameras.step", opts, "azimuth step between views (degrees)");
  key_option(app, "--elevation", "cameras.elevation", opts, "camera elevation (degrees)");
  key_option(app, "--distance", "cameras.distance", opts, "camera distance in grid half-extents");
  key_option(app, "--fov", "cameras.fov", opts, "vertical field of view (degrees)");
  key_option(app, "--image-size", "cameras.image_size", opts, "render width and height (pixels)");
}

void gateway_options(CLI::App* app, Options& opts) {
  key_option(app, "--backend", "gateway.backend", opts, "identity | constant | unsharp | pushpull | http");
  key_option(app, "--enhancer-url", "gateway.url", opts, "enhancer service endpoint (http backend)");
  key_option(app, "--timeout-ms", "gateway.timeout_ms", opts, "enhancer request timeout");
  key_option(app, "--fallback", "gateway.fallback", opts, "local stand-in used when the service fails");
  key_option(app, "--prompt", "texture.prompt", opts, "text passed to the enhancer");
}

dw::RunConfig resolve(const Options& opts) {
  dw::RunConfig cfg;
  if (!opts.config_file.empty()) dw::apply_config_file(cfg, opts.config_file);
  for (const auto& [k, v] : opts.flags) cfg.set(k, v);
  dw::apply_environment(cfg, [](const char* name) { return std::getenv(name); });
  cfg.validate();
  dw::set_thread_count(cfg.threads);
  return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw dw::IoError("cannot write " + path.string());
  out << text;
}

std::string indexed(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%02zu.%s", stem, i, ext);
  return buf;
}

std::vector<dw::Image> render_masks(const dw::ScalarGrid3& sdf, const std::vector<dw::Camera>& cams) {
  std::vector<dw::Image> masks;
  for (const auto& c : cams) masks.push_back(dw::sphere_trace(sdf, c).mask);
  return masks;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric reconstruction: SDF refinement and texture weaving"};
  app.require_subcommand(1);
  Options opts;
  std::string stage;

  // mesh2sdf
  std::string in_path, in_path2, out_path, color_path, dump_dir, manifest_path;
  std::vector<std::string> mask_paths;
  auto* mesh2sdf = app.add_subcommand("mesh2sdf", "mesh -> signed distance grid");
  mesh2sdf->add_option("mesh", in_path, "input .obj or .ply")->required();
  mesh2sdf->add_option("-o,--output", out_path, "output grid")->required();
  key_option(mesh2sdf, "--res", "mesh2sdf.resolution", opts, "voxels per side");
  key_option(mesh2sdf, "--padding", "mesh2sdf.padding", opts, "padding as a fraction of the longest extent");
  common_options(mesh2sdf, opts);

  auto* render = app.add_subcommand("render", "normal, depth and mask renders of a grid");
  render->add_option("grid", in_path, "input SDF grid")->required();
  render->add_option("-o,--output", out_path, "output directory")->required();
  render->add_option("--color", color_path, "color grid for shaded renders");
  camera_options(render, opts);
  common_options(render, opts);

  auto* fuse = app.add_subcommand("fuse", "multi-view normal fusion");
  fuse->add_option("grid", in_path, "input SDF grid")->required();
  fuse->add_option("-o,--output", out_path, "output normal field")->required();
  camera_options(fuse, opts);
  key_flag(fuse, "--enhance", "fuse.enhance", opts, "route each normal map through the enhancer");
  key_option(fuse, "--samples", "fuse.samples_per_ray", opts, "march samples per ray");
  gateway_options(fuse, opts);
  common_options(fuse, opts);

  auto* optimize = app.add_subcommand("optimize", "refine an SDF against a normal field and masks");
  optimize->add_option("grid", in_path, "input SDF grid")->required();
  optimize->add_option("normals", in_path2, "target normal field")->required();
  optimize->add_option("masks", mask_paths, "target mask PNGs, one per view (default: renders of the input)");
  optimize->add_option("-o,--output", out_path, "output SDF grid")->required();
  optimize->add_option("--loss-csv", dump_dir, "write the loss history here");
  key_option(optimize, "--iters", "optimize.iters", opts, "Adam iterations");
  key_option(optimize, "--lr", "optimize.lr", opts, "learning rate");
  key_option(optimize, "--lambda-n", "optimize.lambda_n", opts, "normal loss weight");
  key_option(optimize, "--lambda-m", "optimize.lambda_m", opts, "mask loss weight");
  key_option(optimize, "--lambda-e", "optimize.lambda_e", opts, "eikonal loss weight");
  camera_options(optimize, opts);
  common_options(optimize, opts);

  auto* extract = app.add_subcommand("extract", "marching cubes");
  extract->add_option("grid", in_path, "input SDF grid")->required();
  extract->add_option("-o,--output", out_path, "output .obj or .ply")->required();
  extract->add_option("--color", color_path, "color grid for vertex colors");
  common_options(extract, opts);

  auto* texture = app.add_subcommand("texture", "weave a volumetric color field");
  texture->add_option("grid", in_path, "input SDF grid")->required();
  texture->add_option("reference", in_path2, "reference image (PNG)")->required();
  texture->add_option("-o,--output", out_path, "output color grid")->required();
  texture->add_option("--dump", dump_dir, "directory for per-view partial textures, masks and diagnostics");
  key_option(texture, "--views", "texture.views", opts, "number of views");
  key_option(texture, "--radius", "texture.radius", opts, "projection tube radius (voxels)");
  key_option(texture, "--conf-threshold", "texture.conf_threshold", opts, "overwrite confidence threshold");
  key_option(texture, "--elevation", "cameras.elevation", opts, "camera elevation (degrees)");
  key_option(texture, "--distance", "cameras.distance", opts, "camera distance in grid half-extents");
  key_option(texture, "--fov", "cameras.fov", opts, "vertical field of view (degrees)");
  key_option(texture, "--image-size", "cameras.image_size", opts, "render size of synthesized views");
  gateway_options(texture, opts);
  common_options(texture, opts);

  auto* pipeline = app.add_subcommand("pipeline", "all stages, with a run manifest");
  pipeline->add_option("mesh", in_path, "coarse mesh");
  pipeline->add_option("reference", in_path2, "reference image (PNG)");
  pipeline->add_option("-o,--output", out_path, "output directory")->required();
  pipeline->add_option("--from-manifest", manifest_path, "replay the inputs and config of a previous run");
  key_option(pipeline, "--res", "mesh2sdf.resolution", opts, "voxels per side");
  key_option(pipeline, "--iters", "optimize.iters", opts, "Adam iterations");
  key_option(pipeline, "--lr", "optimize.lr", opts, "learning rate");
  key_option(pipeline, "--views", "cameras.views", opts, "fusion views");
  key_option(pipeline, "--texture-views", "texture.views", opts, "texture views");
  key_option(pipeline, "--image-size", "cameras.image_size", opts, "render size");
  key_flag(pipeline, "--enhance", "fuse.enhance", opts, "route normal maps through the enhancer");
  gateway_options(pipeline, opts);
  common_options(pipeline, opts);

  auto* fixture = app.add_subcommand("fixture", "write the synthetic sphere fixture");
  fixture->add_option("-o,--output", out_path, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (fixture->parsed()) {
      stage = "fixture";
      dw::write_sphere_fixture(out_path);
    } else if (mesh2sdf->parsed()) {
      stage = "config";
      const auto cfg = resolve(opts);
      stage = "mesh2sdf";
      dw::MeshToSdfOptions mo;
      mo.resolution = cfg.resolution;
      mo.padding_fraction = cfg.padding;
      dw::write_grid(dw::mesh_to_sdf(dw::load_mesh(in_path), mo), out_path);
    } else if (render->parsed()) {
      stage = "config";
      const auto cfg = resolve(opts);
      stage = "render";
      const auto sdf = dw::read_grid<dw::ScalarGrid3>(in_path);
      std::optional<dw::ColorGrid3> color;
      if (!color_path.empty()) color = dw::read_grid<dw::ColorGrid3>(color_path);
      std::filesystem::create_directories(out_path);
      const auto cams = dw::config_cameras(sdf.header(), cfg);
      for (std::size_t i = 0; i < cams.size(); ++i) {
        const auto r = dw::sphere_trace(sdf, cams[i]);
        const std::filesystem::path dir(out_path);
        dw::write_png(dw::encode_normals(r.normal_cam), dir / indexed("normals", i, "png"));
        dw::write_pfm(r.depth, dir / indexed("depth", i, "pfm"));
        dw::write_png(r.mask, dir / indexed("mask", i, "png"));
        if (color) dw::write_png(dw::render_colored(sdf, *color, cams[i]), dir / indexed("color", i, "png"));
      }
    } else if (fuse->parsed()) {
      stage = "config";
      const auto cfg = resolve(opts);
      auto gateway = dw::config_backend(cfg);
      auto fallback = dw::config_fallback(cfg);
      stage = "fuse";
      const auto sdf = dw::read_grid<dw::ScalarGrid3>(in_path);
      dw::FusionSettings fs;
      fs.samples_per_ray = cfg.samples_per_ray;
      fs.band_voxels = cfg.band_voxels;
      fs.fill_iterations = cfg.normal_fill_iterations;
      dw::NormalMapHook hook;
      if (cfg.enhance_normals) {
        hook = [&](const dw::Image& normals, std::size_t view) {
          dw::EnhanceRequest req;
          req.kind = dw::EnhanceKind::NormalEnhance;
          req.normals = normals;
          req.prompt = cfg.prompt;
          req.seed = cfg.seed + view;
          req.timeout = std::chrono::milliseconds(cfg.timeout_ms);
          try {
            return dw::enhance(req, *gateway);
          } catch (const dw::GatewayError&) {
            if (!fallback) throw;
            return dw::enhance(req, *fallback);
          }
        };
      }
      const auto cams = dw::config_cameras(sdf.header(), cfg);
      dw::write_grid(dw::fuse_normal_views(sdf, cams, fs, hook).field, out_path);
    } else if (optimize->parsed()) {
      stage = "config";
      const auto cfg = resolve(opts);
      stage = "optimize";
      const auto sdf = dw::read_grid<dw::ScalarGrid3>(in_path);
      const auto target = dw::read_grid<dw::VectorGrid3>(in_path2);
      const auto cams = dw::config_cameras(sdf.header(), cfg);
      std::vector<dw::Image> masks;
      if (mask_paths.empty()) {
        masks = render_masks(sdf, cams);
      } else {
        if (mask_paths.size() != cams.size()) {
          throw dw::ConfigError(std::to_string(mask_paths.size()) + " masks given for " +
                                std::to_string(cams.size()) + " views");
        }
        for (const auto& p : mask_paths) {
          dw::Image m = dw::read_png(p);
          dw::Image one(m.width(), m.height(), 1);
          for (std::size_t i = 0; i < m.pixel_count(); ++i) one.pixel(i) = m.pixel(i, 0);
          masks.push_back(std::move(one));
        }
      }
      dw::OptimizeSettings os;
      os.iterations = cfg.iterations;
      os.learning_rate = cfg.lr;
      os.weights = {cfg.lambda_n, cfg.lambda_m, cfg.lambda_e};
      os.mask.samples_per_ray = cfg.mask_samples;
      const auto res = dw::optimize_sdf(sdf, target, cams, masks, os);
      dw::write_grid(res.sdf, out_path);
      if (!dump_dir.empty()) write_text(dump_dir, dw::loss_history_csv(res.history));
    } else if (extract->parsed()) {
      stage = "config";
      resolve(opts);
      stage = "extract";
      const auto sdf = dw::read_grid<dw::ScalarGrid3>(in_path);
      dw::TriMesh mesh = dw::marching_cubes(sdf);
      if (!color_path.empty()) dw::color_mesh_vertices(mesh, dw::read_grid<dw::ColorGrid3>(color_path));
      dw::save_mesh(mesh, out_path);
    } else if (texture->parsed()) {
      stage = "config";
      const auto cfg = resolve(opts);
      auto gateway = dw::config_backend(cfg);
      auto fallback = dw::config_fallback(cfg);
      stage = "texture";
      const auto sdf = dw::read_grid<dw::ScalarGrid3>(in_path);
      const dw::Image reference = dw::read_png(in_path2);
      auto cams = dw::ring_cameras(sdf.header(), cfg.texture_views, 360.0 / cfg.texture_views, cfg.elevation,
                                   cfg.camera_distance, cfg.fov, cfg.image_size, cfg.image_size);
      cams[0] = dw::ring_cameras(sdf.header(), 1, 0.0, cfg.elevation, cfg.camera_distance, cfg.fov,
                                 reference.width(), reference.height())[0];
      dw::WeaveSettings ws;
      ws.params.radius = cfg.radius;
      ws.params.confidence_threshold = cfg.conf_threshold;
      ws.reference_beta = cfg.reference_beta;
      ws.view_beta = cfg.view_beta;
      ws.fill_iterations = cfg.color_fill_iterations;
      ws.fill_band_voxels = cfg.band_voxels;
      ws.prompt = cfg.prompt;
      ws.seed = cfg.seed;
      ws.timeout = std::chrono::milliseconds(cfg.timeout_ms);
      dw::WeaveViewHook hook;
      if (!dump_dir.empty()) {
        std::filesystem::create_directories(dump_dir);
        hook = [&](const dw::WeaveStep& step) {
          if (!step.partial) return;
          const std::filesystem::path dir(dump_dir);
          dw::write_png(step.partial->rgb, dir / indexed("partial", step.view, "png"));
          dw::write_png(step.partial->mask, dir / indexed("mask", step.view, "png"));
          dw::write_png(*step.completed, dir / indexed("completed", step.view, "png"));
        };
      }
      const auto res = dw::weave_texture(sdf, cams, 0, reference, *gateway, ws, fallback.get(), hook);
      dw::write_grid(res.color, out_path);
      if (!dump_dir.empty()) {
        write_text(std::filesystem::path(dump_dir) / "texture_views.csv", dw::diagnostics_csv(res.diagnostics));
      }
    } else if (pipeline->parsed()) {
      stage = "config";
      dw::PipelineRun run;
      if (!manifest_path.empty()) {
        run = dw::read_manifest(manifest_path);
        if (!opts.flags.empty() || !opts.config_file.empty()) {
          throw dw::ConfigError("--from-manifest replays a recorded config; drop the other settings");
        }
      } else {
        if (in_path.empty() || in_path2.empty()) throw dw::ConfigError("pipeline needs <mesh> and <reference.png>");
        run.mesh = in_path;
        run.reference = in_path2;
        run.config = resolve(opts);
      }
      run.out_dir = out_path;
      try {
        dw::run_pipeline(run);
      } catch (...) {
        stage = run.current_stage.empty() ? "pipeline" : run.current_stage;
        throw;
      }
    }
  } catch (const dw::ConfigError& e) {
    std::cerr << "dwrecon: configuration error (" << stage << "): " << e.what() << "\n";
    return kConfig;
  } catch (const dw::IoError& e) {
    std::cerr << "dwrecon: stage '" << stage << "' failed: I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const dw::DivergenceError& e) {
    std::cerr << "dwrecon: stage '" << stage << "' failed: " << e.what() << "\n";
    return kDivergence;
  } catch (const dw::GatewayError& e) {
    std::cerr << "dwrecon: stage '" << stage << "' failed: enhancer: " << e.what() << "\n";
    return kGateway;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "dwrecon: stage '" << stage << "' failed: I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "dwrecon: stage '" << stage << "' failed: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
