#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cstring>
#include <random>
#include <thread>

#include "dw/enhancer.hpp"
#include "dw/grid.hpp"
#include "json.hpp"
#include "mock_server.hpp"

using namespace dw;
using nlohmann::json;

namespace {

void reply_image(httplib::Response& res, const Image& img, EnhanceKind kind) {
  res.set_content(encode_response_json(img, kind), "application/json");
}

// Values on the 8-bit grid survive the PNG wire format exactly.
Image quantized(int w, int h, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, 255);
  Image img(w, h, c);
  for (float& v : img.values()) v = static_cast<float>(d(rng)) / 255.0f;
  return img;
}

Image normals_fixture(int w, int h) {
  Image n(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if ((x + y) % 5 == 0) continue;  // misses
      const Vec3 v = Vec3(x - w / 2.0, y - h / 2.0, 4.0).normalized();
      for (int c = 0; c < 3; ++c) n.at(x, y, c) = static_cast<float>(v[c]);
    }
  }
  return n;
}

EnhanceRequest inpaint_request(int w, int h, std::uint64_t seed = 1) {
  EnhanceRequest r;
  r.kind = EnhanceKind::TextureInpaint;
  r.normals = normals_fixture(w, h);
  r.partial_rgb = quantized(w, h, 3, seed);
  Image mask(w, h, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) mask.at(x, y) = x >= w / 2 ? 1.0f : 0.0f;
  r.mask = mask;
  r.reference = quantized(7, 5, 3, seed + 1);
  r.prompt = "a corgi";
  r.seed = seed;
  r.timeout = std::chrono::milliseconds(5000);
  return r;
}

std::vector<float> vals(const Image& img) { return {img.values().begin(), img.values().end()}; }

bool bit_equal(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("base64 known vectors and round trip") {
  auto enc = [](const std::string& s) {
    return base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  };
  CHECK(enc("") == "");
  CHECK(enc("f") == "Zg==");
  CHECK(enc("fo") == "Zm8=");
  CHECK(enc("foo") == "Zm9v");
  CHECK(enc("foobar") == "Zm9vYmFy");
  std::mt19937_64 rng(9);
  for (std::size_t n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> bytes(n);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
  }
  CHECK_THROWS_AS(base64_decode("abc"), MalformedResponseError);
  CHECK_THROWS_AS(base64_decode("ab!d"), MalformedResponseError);
}

TEST_CASE("request JSON round trip") {
  EnhanceRequest r = inpaint_request(9, 6, 4);
  r.metadata = R"({"camera":{"azimuth":45}})";
  const std::string body = encode_request_json(r);
  const json j = json::parse(body);
  CHECK(j["kind"] == "texture_inpaint");
  CHECK(j["prompt"] == "a corgi");
  CHECK(j["seed"] == 4);
  CHECK(j["metadata"]["camera"]["azimuth"] == 45);
  for (const char* name : {"normals", "partial_rgb", "mask", "reference"}) CHECK(j["images"].contains(name));

  const EnhanceRequest d = decode_request_json(body);
  CHECK(d.kind == r.kind);
  CHECK(d.seed == r.seed);
  CHECK(d.prompt == r.prompt);
  CHECK(json::parse(d.metadata) == json::parse(r.metadata));
  REQUIRE(d.partial_rgb);
  CHECK(vals(*d.partial_rgb) == vals(*r.partial_rgb));
  CHECK(vals(*d.mask) == vals(*r.mask));
  CHECK(d.reference->width() == 7);
  // 8-bit quantization, then renormalization.
  for (std::size_t i = 0; i < r.normals->values().size(); ++i) {
    CHECK(std::abs(d.normals->values()[i] - r.normals->values()[i]) <= 2.0f / 255.0f);
  }
  // No metadata field when unset.
  EnhanceRequest plain = inpaint_request(4, 4);
  CHECK_FALSE(json::parse(encode_request_json(plain)).contains("metadata"));
  CHECK_THROWS_AS(decode_request_json("{\"kind\":\"paint\",\"images\":{}}"), GatewayRequestError);
  CHECK_THROWS_AS(decode_request_json("not json"), GatewayRequestError);
}

TEST_CASE("response decoding errors") {
  CHECK_THROWS_AS(decode_response_json("[]", EnhanceKind::TextureInpaint), MalformedResponseError);
  CHECK_THROWS_AS(decode_response_json("{\"image\":3}", EnhanceKind::TextureInpaint), MalformedResponseError);
  CHECK_THROWS_AS(decode_response_json("{\"image\":\"Zm9v\"}", EnhanceKind::TextureInpaint), MalformedResponseError);
  CHECK_THROWS_AS(decode_response_json("<html>", EnhanceKind::TextureInpaint), MalformedResponseError);
}

TEST_CASE("request validation") {
  EnhanceRequest r = inpaint_request(8, 8);
  CHECK_NOTHROW(r.validate());
  EnhanceRequest no_mask = r;
  no_mask.mask.reset();
  CHECK_THROWS_AS(no_mask.validate(), GatewayRequestError);
  EnhanceRequest small_mask = r;
  small_mask.mask = Image(4, 8, 1);
  CHECK_THROWS_AS(small_mask.validate(), GatewayRequestError);
  EnhanceRequest grey_ref = r;
  grey_ref.reference = Image(4, 4, 1);
  CHECK_THROWS_AS(grey_ref.validate(), GatewayRequestError);
  EnhanceRequest normals_only;
  normals_only.normals = normals_fixture(8, 8);
  CHECK_NOTHROW(normals_only.validate());
  CHECK_THROWS_AS(EnhanceRequest{}.validate(), GatewayRequestError);
  IdentityBackend id;
  CHECK_THROWS_AS(enhance(no_mask, id), GatewayRequestError);
}

TEST_CASE("stand-ins") {
  const EnhanceRequest r = inpaint_request(12, 10);
  IdentityBackend id;
  CHECK(vals(enhance(r, id)) == vals(*r.partial_rgb));

  EnhanceRequest full = r;
  full.mask = Image(12, 10, 1, 1.0f);
  ConstantFillBackend cf({0.1f, 0.2f, 0.3f});
  const Image c = enhance(full, cf);
  for (std::size_t p = 0; p < c.pixel_count(); ++p) {
    CHECK(c.pixel(p, 0) == 0.1f);
    CHECK(c.pixel(p, 2) == 0.3f);
  }

  // Normal requests: unit length on hits, zero on misses.
  EnhanceRequest nr;
  nr.normals = normals_fixture(12, 10);
  for (EnhancerBackend* b : std::initializer_list<EnhancerBackend*>{&id, &cf}) {
    const Image out = enhance(nr, *b);
    for (std::size_t p = 0; p < out.pixel_count(); ++p) {
      const bool hit = nr.normals->pixel(p, 2) != 0.0f;
      const double len = Vec3(out.pixel(p, 0), out.pixel(p, 1), out.pixel(p, 2)).norm();
      CHECK(len == doctest::Approx(hit ? 1.0 : 0.0).epsilon(1e-6));
    }
  }
  UnsharpNormalBackend us;
  PushPullBackend pp;
  const Image a = enhance(nr, us);
  const Image b = enhance(nr, pp);
  CHECK(vals(a) == vals(b));
  for (std::size_t p = 0; p < a.pixel_count(); ++p) {
    if (nr.normals->pixel(p, 2) == 0.0f) continue;
    CHECK(Vec3(a.pixel(p, 0), a.pixel(p, 1), a.pixel(p, 2)).norm() == doctest::Approx(1.0).epsilon(1e-5));
  }
  // Texture requests pass through the sharpener unchanged.
  CHECK(vals(enhance(r, us)) == vals(*r.partial_rgb));
}

TEST_CASE("push-pull fills a half-masked bicolor image") {
  // Top rows red, bottom rows blue; the right half is masked.
  EnhanceRequest r;
  r.kind = EnhanceKind::TextureInpaint;
  r.normals = normals_fixture(16, 16);
  Image img(16, 16, 3), mask(16, 16, 1);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      img.at(x, y, y < 8 ? 0 : 2) = 1.0f;
      if (x >= 8) {
        mask.at(x, y) = 1.0f;
        img.at(x, y, 0) = img.at(x, y, 1) = img.at(x, y, 2) = 0.5f;
      }
    }
  }
  r.partial_rgb = img;
  r.mask = mask;
  r.reference = img;
  PushPullBackend pp;
  const Image out = enhance(r, pp);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      if (x < 8) {
        for (int c = 0; c < 3; ++c) CHECK(bit_equal(out.at(x, y, c), img.at(x, y, c)));
        continue;
      }
      // Filled from known colors only: convex combination of red and blue.
      CHECK(out.at(x, y, 1) == 0.0f);
      CHECK(out.at(x, y, 0) + out.at(x, y, 2) == doctest::Approx(1.0f));
      if (y < 4) CHECK(out.at(x, y, 0) > out.at(x, y, 2));
      if (y >= 12) CHECK(out.at(x, y, 2) > out.at(x, y, 0));
    }
  }
  // Deterministic: identical requests give identical bytes.
  CHECK(encode_png(enhance(r, pp)) == encode_png(out));
  CHECK_THROWS_AS(push_pull_fill(img, Image(4, 4, 1)), DimensionError);
}

TEST_CASE("make_backend") {
  CHECK(make_backend({"identity", "", {}})->name() == "identity");
  CHECK(make_backend({"constant", "", {}})->name() == "constant");
  CHECK(make_backend({"unsharp", "", {}})->name() == "unsharp");
  CHECK(make_backend({"pushpull", "", {}})->name() == "pushpull");
  CHECK(make_backend({"http", "http://127.0.0.1:9", {}})->name() == "http");
  CHECK_THROWS_AS(make_backend({"diffusion", "", {}}), ConfigError);
  CHECK_THROWS_AS(make_backend({"http", "", {}}), ConfigError);
  CHECK_THROWS_AS(HttpBackend("127.0.0.1:80"), ConfigError);
  CHECK_THROWS_AS(HttpBackend("ftp://host"), ConfigError);
  CHECK_THROWS_AS(HttpBackend("http://"), ConfigError);
}

TEST_CASE("http backend against a mock server") {
  SUBCASE("echo equals the identity stand-in") {
    testutil::MockServer mock([](const httplib::Request& req, httplib::Response& res) {
      const EnhanceRequest r = decode_request_json(req.body);
      reply_image(res, r.primary(), r.kind);
    });
    HttpBackend http(mock.url());
    IdentityBackend id;
    EnhanceRequest r = inpaint_request(10, 8);
    r.metadata = R"({"k":1})";
    const Image a = enhance(r, http);
    const Image b = enhance(r, id);
    for (std::size_t i = 0; i < a.values().size(); ++i) CHECK(std::abs(a.values()[i] - b.values()[i]) <= 1e-6f);
    CHECK(http.last_attempts() == 1);
    const json sent = json::parse(mock.last_body);
    CHECK(sent["prompt"] == "a corgi");
    CHECK(sent["metadata"]["k"] == 1);

    EnhanceRequest nr;
    nr.normals = normals_fixture(10, 8);
    const Image na = enhance(nr, http);
    const Image nb = enhance(nr, id);
    for (std::size_t i = 0; i < na.values().size(); ++i) CHECK(std::abs(na.values()[i] - nb.values()[i]) <= 0.01f);
  }

  SUBCASE("path prefix") {
    testutil::MockServer mock(
        [](const httplib::Request& req, httplib::Response& res) {
          const EnhanceRequest r = decode_request_json(req.body);
          reply_image(res, r.primary(), r.kind);
        },
        "/api");
    HttpBackend http(mock.url() + "/api/");
    CHECK_NOTHROW(enhance(inpaint_request(4, 4), http));
    CHECK(mock.hits == 1);
  }

  SUBCASE("503 is a service error after one retry") {
    testutil::MockServer mock([](const httplib::Request&, httplib::Response& res) {
      res.status = 503;
      res.set_content("busy", "text/plain");
    });
    HttpBackend http(mock.url());
    try {
      enhance(inpaint_request(4, 4), http);
      FAIL("expected a service error");
    } catch (const ServiceError& e) {
      CHECK(e.status() == 503);
      CHECK(e.body() == "busy");
    }
    CHECK(mock.hits == 2);
    CHECK(http.last_attempts() == 2);
  }

  SUBCASE("a retry with the same seed can succeed") {
    std::vector<std::uint64_t> seeds;
    testutil::MockServer mock([&](const httplib::Request& req, httplib::Response& res) {
      const EnhanceRequest r = decode_request_json(req.body);
      seeds.push_back(r.seed);
      if (seeds.size() == 1) {
        res.status = 502;
        return;
      }
      reply_image(res, r.primary(), r.kind);
    });
    HttpBackend http(mock.url());
    CHECK_NOTHROW(enhance(inpaint_request(4, 4, 77), http));
    CHECK(seeds == std::vector<std::uint64_t>{77, 77});
  }

  SUBCASE("4xx is not retried") {
    testutil::MockServer mock([](const httplib::Request&, httplib::Response& res) {
      res.status = 400;
      res.set_content("bad prompt", "text/plain");
    });
    HttpBackend http(mock.url());
    CHECK_THROWS_AS(enhance(inpaint_request(4, 4), http), ServiceError);
    CHECK(mock.hits == 1);
  }

  SUBCASE("wrong image size") {
    testutil::MockServer mock([](const httplib::Request&, httplib::Response& res) {
      reply_image(res, Image(5, 3, 3), EnhanceKind::TextureInpaint);
    });
    HttpBackend http(mock.url());
    try {
      enhance(inpaint_request(10, 8), http);
      FAIL("expected a malformed response");
    } catch (const MalformedResponseError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("5x3") != std::string::npos);
      CHECK(msg.find("10x8") != std::string::npos);
    }
  }

  SUBCASE("garbage body") {
    testutil::MockServer mock([](const httplib::Request&, httplib::Response& res) {
      res.set_content("{\"image\":\"!!!!\"}", "application/json");
    });
    HttpBackend http(mock.url());
    CHECK_THROWS_AS(enhance(inpaint_request(4, 4), http), MalformedResponseError);
  }

  SUBCASE("timeout") {
    testutil::MockServer mock([](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(std::chrono::milliseconds(600));
      res.status = 500;
    });
    HttpBackend http(mock.url());
    EnhanceRequest r = inpaint_request(4, 4);
    r.timeout = std::chrono::milliseconds(150);
    CHECK_THROWS_AS(enhance(r, http), TimeoutError);
  }

  SUBCASE("connection refused") {
    HttpBackend http("http://127.0.0.1:" + std::to_string(testutil::closed_port()));
    CHECK_THROWS_AS(enhance(inpaint_request(4, 4), http), TransportError);
    CHECK(http.last_attempts() == 2);
  }
}

TEST_CASE("misbehaving server cannot touch unmasked pixels") {
  std::mt19937_64 rng(123);
  testutil::MockServer mock([&](const httplib::Request& req, httplib::Response& res) {
    const EnhanceRequest r = decode_request_json(req.body);
    reply_image(res, quantized(r.partial_rgb->width(), r.partial_rgb->height(), 3, rng()), r.kind);
  });
  HttpBackend http(mock.url());
  for (int trial = 0; trial < 5; ++trial) {
    EnhanceRequest r = inpaint_request(16, 12, static_cast<std::uint64_t>(trial));
    // Unquantized partial values, including ones PNG cannot carry.
    std::uniform_real_distribution<float> u(0, 1);
    for (float& v : r.partial_rgb->values()) v = u(rng);
    r.partial_rgb->pixel(0, 0) = 1e-30f;
    r.partial_rgb->pixel(1, 1) = -0.0f;
    const Image out = enhance(r, http);
    REQUIRE(out.width() == 16);
    REQUIRE(out.height() == 12);
    std::size_t masked_differs = 0;
    for (std::size_t p = 0; p < out.pixel_count(); ++p) {
      for (int c = 0; c < 3; ++c) {
        if (r.mask->pixel(p, 0) == 0.0f) {
          CHECK(bit_equal(out.pixel(p, c), r.partial_rgb->pixel(p, c)));
        } else {
          masked_differs += out.pixel(p, c) != r.partial_rgb->pixel(p, c);
        }
      }
    }
    CHECK(masked_differs > 0);
  }
}
