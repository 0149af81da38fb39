#pragma once
// HttpTransport over cpp-httplib, plus the default backend factory.

#include <memory>
#include <string>

#include <httplib.h>

#include "tsp/llm/backend.hpp"

namespace tsp {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline UrlParts split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error("endpoint '" + url + "' has no scheme");
  auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

class HttplibTransport : public HttpTransport {
 public:
  HttpResponse post(const HttpRequest& request) override {
    UrlParts parts;
    try {
      parts = split_url(request.url);
    } catch (const Error& e) {
      return {0, {}, e.what()};
    }
    httplib::Client client(parts.origin);
    client.set_connection_timeout(request.timeout);
    client.set_read_timeout(request.timeout);
    client.set_write_timeout(request.timeout);
    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [k, v] : request.headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        headers.emplace(k, v);
      }
    }
    auto res = client.Post(parts.path, headers, request.body, content_type);
    if (!res) return {0, {}, "transport error: " + httplib::to_string(res.error())};
    return {res->status, res->body, {}};
  }
};

// Replay and stub need no network; http gets the httplib transport and, with
// record_dir set, writes every response as a fixture.
inline std::unique_ptr<CompletionBackend> make_backend(const BackendConfig& config) {
  config.validate();
  switch (config.mode) {
    case BackendMode::Replay: return std::make_unique<ReplayBackend>(config.fixture_dir);
    case BackendMode::Stub: return std::make_unique<StubBackend>(std::string("NO PREDICTION\n"));
    case BackendMode::Http: {
      std::unique_ptr<CompletionBackend> http =
          std::make_unique<HttpBackend>(config, std::make_shared<HttplibTransport>());
      if (config.record_dir.empty()) return http;
      return std::make_unique<RecordingBackend>(std::move(http), config.record_dir, config.model);
    }
  }
  throw Error("unhandled backend mode");
}

}  // namespace tsp
