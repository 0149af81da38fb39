#pragma once
// Completion backends: live HTTP (chat-completion style), replay from
// recorded fixtures, and a scripted stub for tests.
//
// All backends must tolerate concurrent complete() calls.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsp/error.hpp"
#include "tsp/llm/prompt.hpp"

namespace tsp {

enum class BackendMode { Http, Replay, Stub };

inline BackendMode parse_backend_mode(std::string_view s) {
  if (s == "http") return BackendMode::Http;
  if (s == "replay") return BackendMode::Replay;
  if (s == "stub") return BackendMode::Stub;
  throw Error("unknown backend '" + std::string(s) + "' (expected http, replay or stub)");
}

inline const char* to_string(BackendMode m) {
  switch (m) {
    case BackendMode::Http: return "http";
    case BackendMode::Replay: return "replay";
    case BackendMode::Stub: return "stub";
  }
  return "?";
}

struct BackendConfig {
  BackendMode mode = BackendMode::Replay;
  std::string endpoint;  // e.g. https://host/v1/chat/completions
  std::string model;
  double temperature = 0.0;
  int max_tokens = 2048;
  std::chrono::milliseconds timeout{60'000};
  int max_retries = 3;
  std::chrono::milliseconds backoff{500};  // doubled per retry
  std::filesystem::path fixture_dir;
  std::string api_key_env = "TSP_API_KEY";
  std::size_t max_in_flight = 4;
  double requests_per_second = 0.0;  // 0 = unlimited
  bool verbose = false;
  // When set with mode http, live responses are also written as fixtures.
  std::filesystem::path record_dir;

  void validate() const {
    if (temperature < 0.0) throw Error("temperature must be >= 0");
    if (max_retries < 0) throw Error("max_retries must be >= 0");
    if (max_in_flight == 0) throw Error("max_in_flight must be >= 1");
    if (mode == BackendMode::Replay && fixture_dir.empty()) throw Error("replay backend needs a fixture directory");
    if (mode == BackendMode::Http && (endpoint.empty() || model.empty())) {
      throw Error("http backend needs an endpoint and a model name");
    }
  }
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string complete(const PromptDoc& prompt) = 0;
  // Short provenance tag recorded with every prediction.
  virtual std::string describe() const = 0;
};

using BackendFactory = std::function<std::unique_ptr<CompletionBackend>(const BackendConfig&)>;

// Scripted responses: by fingerprint first, then the responder, then the
// default text.
class StubBackend : public CompletionBackend {
 public:
  StubBackend() = default;
  explicit StubBackend(std::string default_text) : default_(std::move(default_text)) {}
  explicit StubBackend(std::function<std::string(const PromptDoc&)> responder) : responder_(std::move(responder)) {}

  StubBackend& script(std::string fingerprint, std::string text) {
    scripted_[std::move(fingerprint)] = std::move(text);
    return *this;
  }

  std::string complete(const PromptDoc& prompt) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    if (auto it = scripted_.find(prompt.fingerprint); it != scripted_.end()) return it->second;
    if (responder_) return responder_(prompt);
    if (default_) return *default_;
    throw BackendError("stub backend has no script for prompt " + prompt.fingerprint);
  }

  std::string describe() const override { return "stub"; }
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::map<std::string, std::string> scripted_;
  std::function<std::string(const PromptDoc&)> responder_;
  std::optional<std::string> default_;
  std::atomic<std::size_t> calls_{0};
};

// Fixture file: one metadata line, then the raw response text.
struct Fixture {
  std::string metadata;
  std::string text;
};

inline std::filesystem::path fixture_path(const std::filesystem::path& dir, const std::string& fingerprint) {
  return dir / (fingerprint + ".txt");
}

inline std::optional<Fixture> read_fixture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Fixture f;
  auto nl = all.find('\n');
  if (nl == std::string::npos) {
    f.metadata = all;
  } else {
    f.metadata = all.substr(0, nl);
    f.text = all.substr(nl + 1);
  }
  return f;
}

inline void write_fixture(const std::filesystem::path& path, const Fixture& f) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write fixture " + path.string());
  out << f.metadata << '\n' << f.text;
}

class ReplayBackend : public CompletionBackend {
 public:
  explicit ReplayBackend(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::string complete(const PromptDoc& prompt) override {
    auto f = read_fixture(fixture_path(dir_, prompt.fingerprint));
    if (!f) throw FixtureMissing(prompt.fingerprint);
    return f->text;
  }

  std::string describe() const override { return "replay"; }

 private:
  std::filesystem::path dir_;
};

// Writes every response of the wrapped backend as a fixture. Single writer.
class RecordingBackend : public CompletionBackend {
 public:
  RecordingBackend(std::unique_ptr<CompletionBackend> inner, std::filesystem::path dir, std::string model)
      : inner_(std::move(inner)), dir_(std::move(dir)), model_(std::move(model)) {}

  std::string complete(const PromptDoc& prompt) override {
    std::string text = inner_->complete(prompt);
    std::lock_guard lock(mutex_);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    write_fixture(fixture_path(dir_, prompt.fingerprint), {"# model=" + model_ + " timestamp=" + stamp, text});
    return text;
  }

  std::string describe() const override { return inner_->describe(); }

 private:
  std::unique_ptr<CompletionBackend> inner_;
  std::filesystem::path dir_;
  std::string model_;
  std::mutex mutex_;
};

struct HttpRequest {
  std::string url;
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
  std::chrono::milliseconds timeout{60'000};
};

struct HttpResponse {
  int status = 0;  // 0: transport failure, see error
  std::string body;
  std::string error;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const HttpRequest& request) = 0;
};

inline bool is_transient(const HttpResponse& r) {
  return r.status == 0 || r.status == 408 || r.status == 409 || r.status == 429 || r.status >= 500;
}

inline std::string redact_headers(const std::vector<std::pair<std::string, std::string>>& headers) {
  std::string out;
  for (const auto& [k, v] : headers) {
    const bool secret = k == "Authorization" || k == "api-key" || k == "x-api-key";
    out += k + ": " + (secret ? std::string("<redacted>") : v) + "\n";
  }
  return out;
}

// Chat-completion client: POSTs {model, temperature, max_tokens, messages}
// and returns choices[0].message.content.
class HttpBackend : public CompletionBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  HttpBackend(BackendConfig config, std::shared_ptr<HttpTransport> transport, Sleeper sleeper = {})
      : config_(std::move(config)), transport_(std::move(transport)), sleep_(std::move(sleeper)) {
    if (!transport_) throw Error("http backend needs a transport");
    if (!sleep_) sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }

  std::string complete(const PromptDoc& prompt) override {
    HttpRequest req;
    req.url = config_.endpoint;
    req.timeout = config_.timeout;
    req.headers.emplace_back("Content-Type", "application/json");
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
      req.headers.emplace_back("Authorization", std::string("Bearer ") + key);
    }
    nlohmann::json body{{"model", config_.model},
                        {"temperature", config_.temperature},
                        {"max_tokens", config_.max_tokens},
                        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt.rendered}}})}};
    req.body = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) sleep_(config_.backoff * (1LL << (attempt - 1)));
      throttle();
      if (config_.verbose) {
        std::clog << "POST " << req.url << "\n" << redact_headers(req.headers) << req.body << "\n";
      }
      HttpResponse resp = transport_->post(req);
      if (config_.verbose) std::clog << "<- " << resp.status << "\n" << resp.body << "\n";
      if (resp.status == 200) return extract_content(resp.body);
      last_error = resp.status == 0 ? resp.error : "HTTP " + std::to_string(resp.status) + ": " + resp.body.substr(0, 200);
      if (!is_transient(resp)) break;
    }
    throw BackendError("completion failed for prompt " + prompt.fingerprint + ": " + last_error);
  }

  std::string describe() const override { return "http:" + config_.model; }

  static std::string extract_content(const std::string& body) {
    auto doc = nlohmann::json::parse(body, nullptr, false);
    if (doc.is_discarded()) throw BackendError("completion response is not JSON");
    const auto* choices = doc.contains("choices") ? &doc["choices"] : nullptr;
    if (!choices || !choices->is_array() || choices->empty()) throw BackendError("completion response has no choices");
    const auto& first = (*choices)[0];
    if (first.contains("message") && first["message"].contains("content") && first["message"]["content"].is_string()) {
      return first["message"]["content"].get<std::string>();
    }
    if (first.contains("text") && first["text"].is_string()) return first["text"].get<std::string>();
    throw BackendError("completion response has no message content");
  }

 private:
  void throttle() {
    if (config_.requests_per_second <= 0.0) return;
    const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / config_.requests_per_second));
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(rate_mutex_);
      const auto now = std::chrono::steady_clock::now();
      slot = std::max(now, next_slot_);
      next_slot_ = slot + interval;
    }
    std::this_thread::sleep_until(slot);
  }

  BackendConfig config_;
  std::shared_ptr<HttpTransport> transport_;
  Sleeper sleep_;
  std::mutex rate_mutex_;
  std::chrono::steady_clock::time_point next_slot_{};
};

struct Completion {
  std::string text;
  std::string error;  // non-empty on failure
  bool ok() const noexcept { return error.empty(); }
};

// Completes every prompt with at most `max_in_flight` concurrent calls.
// Results are positional; failures are captured per prompt.
inline std::vector<Completion> complete_all(CompletionBackend& backend, const std::vector<PromptDoc>& prompts,
                                            std::size_t max_in_flight) {
  std::vector<Completion> out(prompts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < prompts.size(); i = next++) {
      try {
        out[i].text = backend.complete(prompts[i]);
      } catch (const std::exception& e) {
        out[i].error = e.what();
        if (out[i].error.empty()) out[i].error = "unknown backend failure";
      }
    }
  };
  const std::size_t n = std::min(std::max<std::size_t>(max_in_flight, 1), prompts.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
  }
  return out;
}

}  // namespace tsp
