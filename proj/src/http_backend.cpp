#include <chrono>

#include "dw/enhancer.hpp"
#include "httplib.h"

namespace dw {

HttpBackend::HttpBackend(std::string endpoint) {
  while (!endpoint.empty() && endpoint.back() == '/') endpoint.pop_back();
  const auto scheme = endpoint.find("://");
  if (scheme == std::string::npos) throw ConfigError("enhancer URL '" + endpoint + "' lacks a scheme");
  if (endpoint.compare(0, scheme, "http") != 0) {
    throw ConfigError("enhancer URL '" + endpoint + "': only http:// is supported");
  }
  const auto slash = endpoint.find('/', scheme + 3);
  if (slash == std::string::npos) {
    scheme_host_port_ = endpoint;
  } else {
    scheme_host_port_ = endpoint.substr(0, slash);
    path_prefix_ = endpoint.substr(slash);
  }
  if (scheme_host_port_.size() <= scheme + 3) throw ConfigError("enhancer URL '" + endpoint + "' has no host");
}

Image HttpBackend::run(const EnhanceRequest& request) {
  const std::string body = encode_request_json(request);
  const std::string path = path_prefix_ + "/v1/enhance";
  const auto timeout = request.timeout;

  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  last_attempts_ = 0;
  constexpr int kMaxAttempts = 2;
  for (;;) {
    ++last_attempts_;
    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(path, body, "application/json");
    const auto elapsed = std::chrono::steady_clock::now() - start;
    const bool last = last_attempts_ >= kMaxAttempts;
    if (!res) {
      const auto err = res.error();
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             (err == httplib::Error::Read && elapsed >= timeout);
      if (!last) continue;
      if (timed_out) {
        throw TimeoutError("enhancer request to " + scheme_host_port_ + path + " timed out after " +
                           std::to_string(timeout.count()) + " ms");
      }
      throw TransportError("enhancer request to " + scheme_host_port_ + path + " failed: " + httplib::to_string(err));
    }
    if (res->status >= 500 && !last) continue;
    if (res->status >= 400) throw ServiceError(res->status, res->body);
    return decode_response_json(res->body, request.kind);
  }
}

}  // namespace dw
