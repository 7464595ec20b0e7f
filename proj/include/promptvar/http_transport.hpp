#pragma once

#include <chrono>
#include <string>

#include <httplib.h>

#include "promptvar/provider.hpp"

namespace promptvar {

// HTTPS transport backed by cpp-httplib.
class HttplibTransport : public Transport {
 public:
  explicit HttplibTransport(std::chrono::seconds timeout = std::chrono::seconds(60)) : timeout_(timeout) {}

  HttpResponse post(const HttpRequest& request) override {
    httplib::Client client(request.base_url);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [k, v] : request.headers) {
      if (k == "Content-Type") content_type = v;
      else headers.emplace(k, v);
    }
    HttpResponse out;
    auto res = client.Post(request.path, headers, request.body, content_type);
    if (!res) {
      out.status = 0;
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  }

 private:
  std::chrono::seconds timeout_;
};

inline std::shared_ptr<Transport> default_transport() { return std::make_shared<HttplibTransport>(); }

}  // namespace promptvar
