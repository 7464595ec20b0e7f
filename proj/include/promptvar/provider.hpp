#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "promptvar/error.hpp"
#include "promptvar/hash.hpp"
#include "promptvar/meta_prompts.hpp"
#include "promptvar/text.hpp"

namespace promptvar {

// ---------------------------------------------------------------------------
// Requests and responses
// ---------------------------------------------------------------------------

struct ProviderConfig {
  std::string platform = "stub";
  std::string model_name = "stub-model";
  double temperature = 0.0;
  int max_tokens = 512;
  // Environment variable holding the API key. Empty: platform default.
  std::string credential_ref;
  // Overrides the platform's default endpoint base, e.g. for a proxy.
  std::string base_url;
};

inline bool is_stub(const ProviderConfig& c) { return text::lower(c.platform) == "stub"; }

struct CompletionRequest {
  ProviderConfig config;
  std::string prompt;
  std::string request_tag;
};

struct Usage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
  bool operator==(const Usage&) const = default;
};

struct CompletionResponse {
  std::string text;
  std::string finish_reason;
  Usage usage;
  bool cache_hit = false;
  int attempts = 1;

  bool operator==(const CompletionResponse&) const = default;
};

enum class ProviderErrorKind { auth, retries_exhausted, malformed_response, permanent, invalid_request };

class ProviderError : public Error {
 public:
  ProviderError(ProviderErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
  ProviderErrorKind kind() const noexcept { return kind_; }

 private:
  ProviderErrorKind kind_;
};

inline std::string to_string(ProviderErrorKind k) {
  switch (k) {
    case ProviderErrorKind::auth: return "auth";
    case ProviderErrorKind::retries_exhausted: return "retries_exhausted";
    case ProviderErrorKind::malformed_response: return "malformed_response";
    case ProviderErrorKind::permanent: return "permanent";
    case ProviderErrorKind::invalid_request: return "invalid_request";
  }
  return {};
}

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

struct HttpRequest {
  std::string base_url;  // scheme://host[:port]
  std::string path;
  std::map<std::string, std::string> headers;
  std::string body;
};

struct HttpResponse {
  // 0 when no response arrived (connection failure, timeout).
  int status = 0;
  std::string body;
  std::string error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const HttpRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Platform adapters
// ---------------------------------------------------------------------------

class PlatformAdapter {
 public:
  virtual ~PlatformAdapter() = default;
  virtual std::string default_credential_ref() const = 0;
  virtual HttpRequest build(const CompletionRequest& req, const std::string& api_key) const = 0;
  virtual CompletionResponse parse(const std::string& body) const = 0;
};

// Chat-completions wire format shared by OpenAI and OpenAI-compatible hosts.
class ChatCompletionsAdapter : public PlatformAdapter {
 public:
  ChatCompletionsAdapter(std::string base_url, std::string credential_ref)
      : base_url_(std::move(base_url)), credential_ref_(std::move(credential_ref)) {}

  std::string default_credential_ref() const override { return credential_ref_; }

  HttpRequest build(const CompletionRequest& req, const std::string& api_key) const override {
    HttpRequest http;
    http.base_url = req.config.base_url.empty() ? base_url_ : req.config.base_url;
    http.path = "/v1/chat/completions";
    http.headers["Authorization"] = "Bearer " + api_key;
    http.headers["Content-Type"] = "application/json";
    nlohmann::json body = {{"model", req.config.model_name},
                           {"messages", {{{"role", "user"}, {"content", req.prompt}}}},
                           {"temperature", req.config.temperature},
                           {"max_tokens", req.config.max_tokens}};
    http.body = body.dump();
    return http;
  }

  CompletionResponse parse(const std::string& body) const override {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(ProviderErrorKind::malformed_response, std::string("malformed provider response: ") + e.what());
    }
    try {
      const auto& choice = j.at("choices").at(0);
      CompletionResponse r;
      const auto& content = choice.at("message").at("content");
      r.text = content.is_null() ? "" : content.get<std::string>();
      if (choice.contains("finish_reason") && choice["finish_reason"].is_string())
        r.finish_reason = choice["finish_reason"].get<std::string>();
      if (j.contains("usage") && j["usage"].is_object()) {
        r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
        r.usage.completion_tokens = j["usage"].value("completion_tokens", 0L);
      }
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(ProviderErrorKind::malformed_response, std::string("malformed provider response: ") + e.what());
    }
  }

 private:
  std::string base_url_;
  std::string credential_ref_;
};

// Registry of named platforms; lookups are case-insensitive.
class PlatformRegistry {
 public:
  using Factory = std::function<std::unique_ptr<PlatformAdapter>()>;

  static PlatformRegistry& instance() {
    static PlatformRegistry registry;
    return registry;
  }

  void add(const std::string& name, Factory factory) {
    std::lock_guard lock(mu_);
    factories_[text::lower(name)] = std::move(factory);
  }

  std::unique_ptr<PlatformAdapter> create(const std::string& name) const {
    std::lock_guard lock(mu_);
    const auto it = factories_.find(text::lower(name));
    if (it == factories_.end())
      throw ProviderError(ProviderErrorKind::invalid_request, "unknown provider platform '" + name + "'");
    return it->second();
  }

  std::vector<std::string> names() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [k, _] : factories_) out.push_back(k);
    return out;
  }

 private:
  PlatformRegistry() {
    factories_["openai"] = [] {
      return std::make_unique<ChatCompletionsAdapter>("https://api.openai.com", "OPENAI_API_KEY");
    };
    factories_["together"] = [] {
      return std::make_unique<ChatCompletionsAdapter>("https://api.together.xyz", "TOGETHER_API_KEY");
    };
  }

  mutable std::mutex mu_;
  std::map<std::string, Factory> factories_;
};

// ---------------------------------------------------------------------------
// Offline stub
// ---------------------------------------------------------------------------

inline long rough_token_count(std::string_view s) {
  long n = 0;
  bool in = false;
  for (char c : s) {
    const bool sp = text::is_space(c);
    if (!sp && !in) ++n;
    in = !sp;
  }
  return n;
}

// Deterministic offline stand-in for a completion API.
//
// Resolution order for a prompt: custom responder, scripted rules (first rule
// whose substring occurs in the prompt), then built-in behaviour: paraphrase
// meta-prompts get "<instruction> [vK]" items, context meta-prompts get a
// fixed background sentence, anything else gets a digest of (model, prompt).
class StubBackend {
 public:
  using Responder = std::function<std::optional<std::string>(const CompletionRequest&)>;

  struct Rule {
    std::string contains;
    std::vector<std::string> responses;  // served in order; the last one repeats
  };

  void set_responder(Responder r) {
    std::lock_guard lock(mu_);
    responder_ = std::move(r);
  }

  void add_rule(std::string contains, std::vector<std::string> responses) {
    if (responses.empty()) throw ConfigError("stub rule needs at least one response");
    std::lock_guard lock(mu_);
    rules_.push_back({std::move(contains), std::move(responses)});
    served_.push_back(0);
  }

  void set_fallback(std::string text) {
    std::lock_guard lock(mu_);
    fallback_ = std::move(text);
  }

  // {"script": [{"contains": "...", "responses": [...]}, ...], "fallback": "..."}
  static std::shared_ptr<StubBackend> from_json(const nlohmann::json& j) {
    auto stub = std::make_shared<StubBackend>();
    if (!j.is_object()) return stub;
    if (j.contains("script")) {
      for (const auto& r : j.at("script")) {
        std::vector<std::string> responses;
        if (r.contains("responses")) responses = r.at("responses").get<std::vector<std::string>>();
        else responses.push_back(r.at("response").get<std::string>());
        stub->add_rule(r.at("contains").get<std::string>(), std::move(responses));
      }
    }
    if (j.contains("fallback")) stub->set_fallback(j.at("fallback").get<std::string>());
    return stub;
  }

  static std::string digest_text(const std::string& model, const std::string& prompt) {
    return "stub-" + sha256_hex(model + '\x1f' + prompt).substr(0, 16);
  }

  CompletionResponse complete(const CompletionRequest& req) {
    CompletionResponse resp;
    resp.text = respond(req);
    resp.finish_reason = "stop";
    resp.usage.prompt_tokens = rough_token_count(req.prompt);
    resp.usage.completion_tokens = rough_token_count(resp.text);
    return resp;
  }

 private:
  std::string respond(const CompletionRequest& req) {
    Responder responder;
    {
      std::lock_guard lock(mu_);
      responder = responder_;
    }
    if (responder)
      if (auto r = responder(req)) return *r;
    {
      std::lock_guard lock(mu_);
      for (std::size_t i = 0; i < rules_.size(); ++i) {
        if (req.prompt.find(rules_[i].contains) == std::string::npos) continue;
        const auto k = std::min(served_[i], rules_[i].responses.size() - 1);
        ++served_[i];
        return rules_[i].responses[k];
      }
      if (fallback_) return *fallback_;
    }
    if (auto p = meta_prompts::parse_paraphrase_prompt(req.prompt)) {
      std::string out;
      const auto offset = (p->attempt - 1) * p->n;
      for (std::size_t k = 1; k <= p->n; ++k)
        out += std::to_string(k) + ". " + p->instruction + " [v" + std::to_string(offset + k) + "]\n";
      return out;
    }
    if (auto c = meta_prompts::parse_context_prompt(req.prompt)) {
      if (c->variation == 1 && c->attempt == 1) return "Background: this topic is widely studied.";
      return "Background note " + std::to_string(c->variation) + (c->attempt > 1 ? "." + std::to_string(c->attempt) : "") +
             ": this topic is widely studied.";
    }
    return digest_text(req.config.model_name, req.prompt);
  }

  std::mutex mu_;
  Responder responder_;
  std::vector<Rule> rules_;
  std::vector<std::size_t> served_;
  std::optional<std::string> fallback_;
};

// ---------------------------------------------------------------------------
// Response cache
// ---------------------------------------------------------------------------

inline std::string cache_key(const CompletionRequest& req) {
  const nlohmann::json k = {text::lower(req.config.platform), req.config.model_name, req.config.temperature,
                            req.config.max_tokens, req.prompt};
  return sha256_hex(k.dump());
}

inline nlohmann::json to_json(const CompletionResponse& r) {
  return {{"text", r.text},
          {"finish_reason", r.finish_reason},
          {"usage", {{"prompt_tokens", r.usage.prompt_tokens}, {"completion_tokens", r.usage.completion_tokens}}}};
}

inline CompletionResponse response_from_json(const nlohmann::json& j) {
  CompletionResponse r;
  r.text = j.at("text").get<std::string>();
  r.finish_reason = j.at("finish_reason").get<std::string>();
  r.usage.prompt_tokens = j.at("usage").at("prompt_tokens").get<long>();
  r.usage.completion_tokens = j.at("usage").at("completion_tokens").get<long>();
  return r;
}

// Content-addressed store: one JSON file per key under <dir>/<k[0:2]>/<k>.json.
// An empty directory keeps entries in memory only.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir = {}) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

  std::filesystem::path path_for(const std::string& key) const { return dir_ / key.substr(0, 2) / (key + ".json"); }

  // Unreadable or corrupt entries count as misses.
  std::optional<CompletionResponse> load(const std::string& key) const {
    std::lock_guard lock(mu_);
    if (dir_.empty()) {
      const auto it = memory_.find(key);
      if (it == memory_.end()) return std::nullopt;
      return it->second;
    }
    std::ifstream in(path_for(key), std::ios::binary);
    if (!in) return std::nullopt;
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      const auto j = nlohmann::json::parse(ss.str());
      if (j.at("key").get<std::string>() != key) return std::nullopt;
      return response_from_json(j.at("response"));
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;
    }
  }

  void store(const std::string& key, const CompletionRequest& req, const CompletionResponse& resp) {
    std::lock_guard lock(mu_);
    if (dir_.empty()) {
      memory_[key] = resp;
      return;
    }
    const nlohmann::json doc = {{"key", key},
                                {"request",
                                 {{"platform", req.config.platform},
                                  {"model_name", req.config.model_name},
                                  {"temperature", req.config.temperature},
                                  {"max_tokens", req.config.max_tokens},
                                  {"prompt", req.prompt}}},
                                {"response", to_json(resp)}};
    const auto final_path = path_for(key);
    std::filesystem::create_directories(final_path.parent_path());
    auto tmp = final_path;
    tmp += ".tmp" + std::to_string(++tmp_counter_);
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write cache entry '" + tmp.string() + "'");
      out << doc.dump(2);
    }
    std::filesystem::rename(tmp, final_path);
  }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
  std::map<std::string, CompletionResponse> memory_;
  std::uint64_t tmp_counter_ = 0;
};

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

struct RetryPolicy {
  std::chrono::milliseconds base_delay{1000};
  double factor = 2.0;
  int max_attempts = 5;
  // Each delay is scaled by a uniform factor in [0.5, 1.0].
  bool jitter = true;
};

// Caps the number of concurrent requests.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(std::size_t limit) : limit_(limit == 0 ? 1 : limit) {}

  class Slot {
   public:
    explicit Slot(InFlightLimiter& l) : l_(l) { l_.acquire(); }
    ~Slot() { l_.release(); }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    InFlightLimiter& l_;
  };

  std::size_t limit() const noexcept { return limit_; }

 private:
  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return active_ < limit_; });
    ++active_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      --active_;
    }
    cv_.notify_one();
  }

  std::size_t limit_;
  std::size_t active_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
};

struct ClientOptions {
  std::shared_ptr<Transport> transport;  // required for non-stub platforms
  std::shared_ptr<StubBackend> stub;     // created on demand when absent
  std::shared_ptr<ResponseCache> cache;  // in-memory cache when absent
  RetryPolicy retry;
  std::size_t max_in_flight = 4;
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
  std::function<void(const std::string&)> log;
  std::function<const char*(const char*)> getenv = [](const char* name) { return std::getenv(name); };
};

// Thread-safe completion client: retries transient failures with exponential
// backoff, bounds concurrent requests and caches responses by content.
class ProviderClient {
 public:
  explicit ProviderClient(ProviderConfig config, ClientOptions options = {})
      : config_(std::move(config)), opts_(std::move(options)), limiter_(opts_.max_in_flight) {
    if (!opts_.stub) opts_.stub = std::make_shared<StubBackend>();
    if (!opts_.cache) opts_.cache = std::make_shared<ResponseCache>();
    if (config_.temperature < 0) throw ConfigError("temperature must be >= 0");
    if (config_.max_tokens <= 0) throw ConfigError("max_tokens must be positive");
  }

  const ProviderConfig& config() const noexcept { return config_; }
  StubBackend& stub() { return *opts_.stub; }
  ResponseCache& cache() { return *opts_.cache; }
  std::size_t max_in_flight() const noexcept { return limiter_.limit(); }

  std::string model_id() const { return text::lower(config_.platform) + "/" + config_.model_name; }

  // Requests that reached the backend (stub call or HTTP exchange series).
  std::size_t provider_calls() const noexcept { return provider_calls_.load(); }
  std::size_t http_attempts() const noexcept { return http_attempts_.load(); }

  CompletionRequest request(std::string prompt, std::string tag = {}) const {
    return CompletionRequest{config_, std::move(prompt), std::move(tag)};
  }

  CompletionResponse complete(const CompletionRequest& req) {
    if (req.prompt.empty()) throw ProviderError(ProviderErrorKind::invalid_request, "prompt must be non-empty");
    InFlightLimiter::Slot slot(limiter_);
    ++provider_calls_;
    if (is_stub(req.config)) return opts_.stub->complete(req);
    return complete_http(req);
  }

  CompletionResponse complete(std::string prompt, std::string tag = {}) { return complete(request(std::move(prompt), std::move(tag))); }

  CompletionResponse cached_complete(const CompletionRequest& req) {
    const auto key = cache_key(req);
    if (auto hit = opts_.cache->load(key)) {
      hit->cache_hit = true;
      hit->attempts = 0;
      return *hit;
    }
    auto resp = complete(req);
    resp.cache_hit = false;
    opts_.cache->store(key, req, resp);
    return resp;
  }

  CompletionResponse cached_complete(std::string prompt, std::string tag = {}) {
    return cached_complete(request(std::move(prompt), std::move(tag)));
  }

 private:
  static bool transient(int status) { return status == 0 || status == 408 || status == 425 || status == 429 || status >= 500; }

  void log(const std::string& msg) const {
    if (opts_.log) opts_.log(msg);
  }

  std::chrono::milliseconds backoff(int attempt) {
    double ms = static_cast<double>(opts_.retry.base_delay.count());
    for (int i = 1; i < attempt; ++i) ms *= opts_.retry.factor;
    if (opts_.retry.jitter) {
      std::lock_guard lock(jitter_mu_);
      ms *= 0.5 + 0.5 * std::uniform_real_distribution<double>(0.0, 1.0)(jitter_rng_);
    }
    return std::chrono::milliseconds(static_cast<long long>(ms));
  }

  CompletionResponse complete_http(const CompletionRequest& req) {
    const auto adapter = PlatformRegistry::instance().create(req.config.platform);
    const auto var = req.config.credential_ref.empty() ? adapter->default_credential_ref() : req.config.credential_ref;
    const char* key = opts_.getenv(var.c_str());
    if (key == nullptr || *key == '\0')
      throw ProviderError(ProviderErrorKind::auth,
                          "missing credentials: environment variable " + var + " is not set");
    if (!opts_.transport)
      throw ProviderError(ProviderErrorKind::invalid_request, "no HTTP transport configured for platform '" +
                                                                  req.config.platform + "'");
    const auto http = adapter->build(req, key);
    std::string last_error;
    for (int attempt = 1; attempt <= opts_.retry.max_attempts; ++attempt) {
      ++http_attempts_;
      HttpResponse resp;
      try {
        resp = opts_.transport->post(http);
      } catch (const std::exception& e) {
        resp.status = 0;
        resp.error = e.what();
      }
      if (resp.status >= 200 && resp.status < 300) {
        auto out = adapter->parse(resp.body);
        out.attempts = attempt;
        log("request " + req.request_tag + " succeeded after " + std::to_string(attempt) + " attempt(s)");
        return out;
      }
      if (resp.status == 401 || resp.status == 403)
        throw ProviderError(ProviderErrorKind::auth, "authentication failed (HTTP " + std::to_string(resp.status) +
                                                         ") using " + var);
      last_error = resp.status == 0 ? "transport error: " + resp.error
                                    : "HTTP " + std::to_string(resp.status) + ": " + resp.body.substr(0, 200);
      if (!transient(resp.status))
        throw ProviderError(ProviderErrorKind::permanent, "provider rejected the request: " + last_error);
      log("attempt " + std::to_string(attempt) + " failed (" + last_error + ")");
      if (attempt < opts_.retry.max_attempts) opts_.sleep(backoff(attempt));
    }
    throw ProviderError(ProviderErrorKind::retries_exhausted, "retries exhausted after " +
                                                                   std::to_string(opts_.retry.max_attempts) +
                                                                   " attempts: " + last_error);
  }

  ProviderConfig config_;
  ClientOptions opts_;
  InFlightLimiter limiter_;
  std::atomic<std::size_t> provider_calls_{0};
  std::atomic<std::size_t> http_attempts_{0};
  std::mutex jitter_mu_;
  std::mt19937_64 jitter_rng_{std::random_device{}()};
};

inline ProviderConfig provider_config_from_json(const nlohmann::json& j, ProviderConfig base = {}) {
  if (j.is_null()) return base;
  if (!j.is_object()) throw ConfigError("provider configuration must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    if (k == "platform" || k == "api_platform") base.platform = it.value().get<std::string>();
    else if (k == "model_name" || k == "model") base.model_name = it.value().get<std::string>();
    else if (k == "temperature") base.temperature = it.value().get<double>();
    else if (k == "max_tokens") base.max_tokens = it.value().get<int>();
    else if (k == "credential_ref") base.credential_ref = it.value().get<std::string>();
    else if (k == "base_url") base.base_url = it.value().get<std::string>();
    else if (k == "script" || k == "fallback" || k == "cache_dir" || k == "max_in_flight") continue;
    else throw ConfigError("unknown provider key '" + k + "'");
  }
  if (base.temperature < 0) throw ConfigError("temperature must be >= 0");
  return base;
}

// Applies the client-side keys of a provider section (stub script,
// cache_dir, max_in_flight) on top of `base`.
inline ClientOptions client_options_from_json(const nlohmann::json& j, ClientOptions base = {}) {
  if (!j.is_object()) return base;
  if (j.contains("script") || j.contains("fallback")) base.stub = StubBackend::from_json(j);
  if (j.contains("cache_dir") && !j.at("cache_dir").is_null())
    base.cache = std::make_shared<ResponseCache>(j.at("cache_dir").get<std::string>());
  if (j.contains("max_in_flight")) {
    const auto n = j.at("max_in_flight").get<long long>();
    if (n < 1) throw ConfigError("max_in_flight must be >= 1");
    base.max_in_flight = static_cast<std::size_t>(n);
  }
  return base;
}

}  // namespace promptvar
