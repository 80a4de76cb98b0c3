#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace dw {

// Fully resolved run configuration. Every field has a dotted key
// ("optimize.lr") used by config files, the manifest and set().
struct RunConfig {
  // mesh2sdf
  int resolution = 256;
  double padding = 0.15;
  // cameras shared by render, fuse and texture
  int views = 8;
  double view_step = 45.0;
  double elevation = 0.0;
  double camera_distance = 2.5;  // multiples of the grid's half extent
  double fov = 40.0;
  int image_size = 256;
  // fuse
  int samples_per_ray = 256;
  double band_voxels = 1.5;
  int normal_fill_iterations = 5;
  bool enhance_normals = false;
  // optimize
  int iterations = 50;
  double lr = 2e-4;
  double lambda_n = 0.3;
  double lambda_m = 1.0;
  double lambda_e = 0.1;
  int mask_samples = 128;
  // texture
  int texture_views = 8;
  int radius = 1;
  double conf_threshold = 0.03;
  double reference_beta = 2.0;
  double view_beta = 1.0;
  int color_fill_iterations = 5;
  std::string prompt;
  // gateway
  std::string backend = "pushpull";
  std::string enhancer_url;
  int timeout_ms = 60000;
  std::string fallback;  // stand-in used when the gateway fails; empty: abort
  // run
  std::uint64_t seed = 0;
  int threads = 0;
  int turntable_views = 8;

  // Parses `value` for `key`. Throws ConfigError for unknown keys or values
  // of the wrong type.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  // Throws ConfigError on out-of-range values.
  void validate() const;

  // JSON object keyed by dotted names.
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
};

// Key-value subset of TOML: comments, [section] headers, and
// key = integer | float | true | false | "string". Section names prefix the
// keys ("[optimize]" + "lr" -> "optimize.lr"). Throws ConfigError citing the
// line on malformed input.
std::map<std::string, std::string> parse_config_text(const std::string& text);

// Applies a config file on top of `config`.
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

using EnvLookup = std::function<const char*(const char*)>;

// Environment overrides: DW_ENHANCER_URL, DW_ENHANCER_BACKEND,
// DW_ENHANCER_TIMEOUT_MS, DW_SEED, DW_THREADS.
void apply_environment(RunConfig& config, const EnvLookup& lookup);

}  // namespace dw
