#include "dw/config.hpp"

#include <cctype>
#include <cerrno>
#include <climits>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <variant>

#include "dw/errors.hpp"
#include "json.hpp"

namespace dw {

namespace {

using Member = std::variant<int RunConfig::*, double RunConfig::*, bool RunConfig::*, std::string RunConfig::*,
                            std::uint64_t RunConfig::*>;

struct Field {
  const char* key;
  Member member;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      {"mesh2sdf.resolution", &RunConfig::resolution},
      {"mesh2sdf.padding", &RunConfig::padding},
      {"cameras.views", &RunConfig::views},
      {"cameras.step", &RunConfig::view_step},
      {"cameras.elevation", &RunConfig::elevation},
      {"cameras.distance", &RunConfig::camera_distance},
      {"cameras.fov", &RunConfig::fov},
      {"cameras.image_size", &RunConfig::image_size},
      {"fuse.samples_per_ray", &RunConfig::samples_per_ray},
      {"fuse.band_voxels", &RunConfig::band_voxels},
      {"fuse.fill_iterations", &RunConfig::normal_fill_iterations},
      {"fuse.enhance", &RunConfig::enhance_normals},
      {"optimize.iters", &RunConfig::iterations},
      {"optimize.lr", &RunConfig::lr},
      {"optimize.lambda_n", &RunConfig::lambda_n},
      {"optimize.lambda_m", &RunConfig::lambda_m},
      {"optimize.lambda_e", &RunConfig::lambda_e},
      {"optimize.mask_samples", &RunConfig::mask_samples},
      {"texture.views", &RunConfig::texture_views},
      {"texture.radius", &RunConfig::radius},
      {"texture.conf_threshold", &RunConfig::conf_threshold},
      {"texture.reference_beta", &RunConfig::reference_beta},
      {"texture.view_beta", &RunConfig::view_beta},
      {"texture.fill_iterations", &RunConfig::color_fill_iterations},
      {"texture.prompt", &RunConfig::prompt},
      {"gateway.backend", &RunConfig::backend},
      {"gateway.url", &RunConfig::enhancer_url},
      {"gateway.timeout_ms", &RunConfig::timeout_ms},
      {"gateway.fallback", &RunConfig::fallback},
      {"run.seed", &RunConfig::seed},
      {"run.threads", &RunConfig::threads},
      {"run.turntable_views", &RunConfig::turntable_views},
  };
  return table;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno != 0) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return x;
}

double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno != 0 || !std::isfinite(x)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return x;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const Field& f = find_field(key);
  std::visit(
      [&](auto m) {
        using T = std::remove_reference_t<decltype(this->*m)>;
        if constexpr (std::is_same_v<T, int>) {
          const auto x = parse_int(key, value);
          if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(key + ": value out of range");
          this->*m = static_cast<int>(x);
        } else if constexpr (std::is_same_v<T, double>) {
          this->*m = parse_double(key, value);
        } else if constexpr (std::is_same_v<T, bool>) {
          if (value == "true" || value == "1") {
            this->*m = true;
          } else if (value == "false" || value == "0") {
            this->*m = false;
          } else {
            throw ConfigError(key + ": expected true or false, got '" + value + "'");
          }
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          errno = 0;
          char* end = nullptr;
          const unsigned long long x = std::strtoull(value.c_str(), &end, 10);
          if (value.empty() || value[0] == '-' || *end != '\0' || errno != 0) {
            throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
          }
          this->*m = x;
        } else {
          this->*m = value;
        }
      },
      f.member);
}

std::string RunConfig::get(const std::string& key) const {
  const Field& f = find_field(key);
  return std::visit(
      [&](auto m) -> std::string {
        using T = std::remove_cvref_t<decltype(this->*m)>;
        if constexpr (std::is_same_v<T, double>) {
          return format_double(this->*m);
        } else if constexpr (std::is_same_v<T, bool>) {
          return this->*m ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
          return this->*m;
        } else {
          return std::to_string(this->*m);
        }
      },
      f.member);
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(resolution >= 2, "mesh2sdf.resolution must be >= 2");
  require(padding >= 0.0, "mesh2sdf.padding must be >= 0");
  require(views >= 1, "cameras.views must be >= 1");
  require(camera_distance > 1.0, "cameras.distance must exceed 1 (cameras outside the grid)");
  require(fov > 0.0 && fov < 180.0, "cameras.fov must be in (0, 180)");
  require(image_size >= 1, "cameras.image_size must be >= 1");
  require(samples_per_ray >= 2, "fuse.samples_per_ray must be >= 2");
  require(band_voxels > 0.0, "fuse.band_voxels must be > 0");
  require(normal_fill_iterations >= 0, "fuse.fill_iterations must be >= 0");
  require(iterations >= 0, "optimize.iters must be >= 0");
  require(lr > 0.0, "optimize.lr must be > 0");
  require(lambda_n >= 0.0 && lambda_m >= 0.0 && lambda_e >= 0.0, "loss weights must be >= 0");
  require(mask_samples >= 2, "optimize.mask_samples must be >= 2");
  require(texture_views >= 1, "texture.views must be >= 1");
  require(radius >= 0, "texture.radius must be >= 0");
  require(conf_threshold >= 0.0, "texture.conf_threshold must be >= 0");
  require(reference_beta >= 0.0 && view_beta >= 0.0, "texture betas must be >= 0");
  require(color_fill_iterations >= 0, "texture.fill_iterations must be >= 0");
  require(timeout_ms > 0, "gateway.timeout_ms must be > 0");
  require(threads >= 0, "run.threads must be >= 0");
  require(turntable_views >= 1, "run.turntable_views must be >= 1");
  if (backend == "http" && enhancer_url.empty()) {
    throw ConfigError("gateway backend 'http' needs an endpoint: set DW_ENHANCER_URL or gateway.url");
  }
}

std::string RunConfig::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& f : fields()) {
    std::visit([&](auto m) { j[f.key] = this->*m; }, f.member);
  }
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  RunConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config snapshot is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config snapshot must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const Field& f = find_field(key);
    try {
      std::visit([&](auto m) { value.get_to(c.*m); }, f.member);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config snapshot: bad value for '" + key + "'");
    }
  }
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  }
  return true;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  auto fail = [&](const std::string& what) { throw ConfigError("config line " + std::to_string(lineno) + ": " + what); };
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s[0] == '[') {
      const auto close = s.find(']');
      if (close == std::string::npos) fail("unterminated section header");
      const std::string rest = trim(s.substr(close + 1));
      if (!rest.empty() && rest[0] != '#') fail("text after section header");
      section = trim(s.substr(1, close - 1));
      if (!valid_key(section)) fail("bad section name '" + section + "'");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(s.substr(0, eq));
    if (!valid_key(key)) fail("bad key '" + key + "'");
    std::string v = trim(s.substr(eq + 1));
    std::string value;
    if (!v.empty() && v[0] == '"') {
      std::size_t i = 1;
      bool closed = false;
      for (; i < v.size(); ++i) {
        const char c = v[i];
        if (c == '"') {
          closed = true;
          break;
        }
        if (c == '\\') {
          if (++i >= v.size()) fail("dangling escape");
          switch (v[i]) {
            case 'n': value += '\n'; break;
            case 't': value += '\t'; break;
            case '"': value += '"'; break;
            case '\\': value += '\\'; break;
            default: fail(std::string("unsupported escape \\") + v[i]);
          }
        } else {
          value += c;
        }
      }
      if (!closed) fail("unterminated string");
      const std::string rest = trim(v.substr(i + 1));
      if (!rest.empty() && rest[0] != '#') fail("text after value");
    } else {
      const auto hash = v.find('#');
      value = trim(hash == std::string::npos ? v : v.substr(0, hash));
      if (value.empty()) fail("missing value for '" + key + "'");
      // TOML allows 1_000 style digit separators.
      if (std::isdigit(static_cast<unsigned char>(value[0])) || value[0] == '-' || value[0] == '+') {
        std::erase(value, '_');
      }
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.count(full)) fail("duplicate key '" + full + "'");
    out[full] = value;
  }
  return out;
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  for (const auto& [k, v] : parse_config_text(ss.str())) config.set(k, v);
}

void apply_environment(RunConfig& config, const EnvLookup& lookup) {
  static const std::pair<const char*, const char*> vars[] = {
      {"DW_ENHANCER_URL", "gateway.url"},
      {"DW_ENHANCER_BACKEND", "gateway.backend"},
      {"DW_ENHANCER_TIMEOUT_MS", "gateway.timeout_ms"},
      {"DW_SEED", "run.seed"},
      {"DW_THREADS", "run.threads"},
  };
  for (const auto& [env, key] : vars) {
    const char* v = lookup(env);
    if (v && *v) config.set(key, v);
  }
}

}  // namespace dw
