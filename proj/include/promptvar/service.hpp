#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "promptvar/evaluator.hpp"
#include "promptvar/http_transport.hpp"
#include "promptvar/presets.hpp"

namespace promptvar {

struct ServiceOptions {
  std::filesystem::path workspace = "workspace";
  std::size_t max_upload_bytes = 10u * 1024 * 1024;
  std::size_t max_page = 200;
  std::size_t default_page = 50;
  // Job worker threads; 0 leaves jobs queued.
  std::size_t workers = 1;
  // Base for every provider client the service creates.
  ClientOptions client;
  std::function<void(const std::string&)> log;
};

// HTTP error with a {code, message, details} body.
struct ApiError : Error {
  int status;
  std::string code;
  nlohmann::ordered_json details;
  ApiError(int s, std::string c, const std::string& message, nlohmann::ordered_json d = nlohmann::ordered_json::object())
      : Error(message), status(s), code(std::move(c)), details(std::move(d)) {}
};

struct FieldError {
  std::string field;
  std::string message;
};

// Sorted, merged spans per component for one record.
inline nlohmann::ordered_json diff_spans(const VariationRecord& r) {
  using oj = nlohmann::ordered_json;
  std::map<std::string, std::vector<TaggedSpan>> by_component;
  if (r.provenance.is_object() && r.provenance.contains("prompt_spans")) {
    for (const auto& s : r.provenance["prompt_spans"]) {
      TaggedSpan t{s.at("component").get<std::string>(), s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>(),
                   s.at("op").get<std::string>()};
      by_component[t.axis].push_back(std::move(t));
    }
  }
  oj out = oj::array();
  for (auto& [component, spans] : by_component) {
    std::sort(spans.begin(), spans.end(), [](const auto& a, const auto& b) {
      return std::tie(a.begin, a.end) < std::tie(b.begin, b.end);
    });
    std::vector<TaggedSpan> merged;
    for (auto& s : spans) {
      if (!merged.empty() && s.begin < merged.back().end) {
        auto& m = merged.back();
        m.end = std::max(m.end, s.end);
        if (m.op != s.op) m.op += "+" + s.op;
      } else {
        merged.push_back(s);
      }
    }
    oj view = {{"component", component}, {"spans", oj::array()}};
    for (const auto& s : merged) view["spans"].push_back({{"start", s.begin}, {"end", s.end}, {"op", s.op}});
    out.push_back(view);
  }
  return out;
}

namespace detail {

inline void write_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, content);
  std::filesystem::rename(tmp, path);
}

inline nlohmann::ordered_json read_json_file(const std::filesystem::path& path) {
  return nlohmann::ordered_json::parse(read_file(path));
}

inline nlohmann::json plain(const nlohmann::ordered_json& j) { return nlohmann::json::parse(j.dump()); }

inline DataFormat format_from_name(const std::string& name) {
  const auto n = text::lower(name);
  if (text::ends_with(n, ".csv")) return DataFormat::csv;
  if (text::ends_with(n, ".jsonl")) return DataFormat::jsonl;
  if (text::ends_with(n, ".json")) return DataFormat::json;
  throw ConfigError("dataset format is required (csv, json or jsonl)");
}

}  // namespace detail

// Loaded and checked inputs of a generation request.
struct GenerationInputs {
  PromptTemplate template_;
  GenerationConfig config;
  ProviderConfig provider;
};

class Service {
 public:
  explicit Service(ServiceOptions opts) : opts_(std::move(opts)) {
    std::filesystem::create_directories(datasets_dir());
    std::filesystem::create_directories(jobs_dir());
    cache_ = std::make_shared<ResponseCache>(opts_.workspace / "cache");
    recover();
    routes();
    for (std::size_t i = 0; i < opts_.workers; ++i) workers_.emplace_back([this] { work(); });
  }

  ~Service() { stop(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  httplib::Server& server() { return server_; }

  // Binds to `port` (0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  // Blocks until stop() is called from another thread.
  void listen(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    if (server_.is_running()) server_.stop();
    if (listener_.joinable()) listener_.join();
    {
      std::lock_guard<std::mutex> lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_)
      if (w.joinable()) w.join();
    workers_.clear();
  }

  std::optional<nlohmann::ordered_json> job(const std::string& id) const {
    std::lock_guard<std::mutex> lock(mu_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
  }

  // Waits until the job is done or failed.
  bool wait_for(const std::string& id, std::chrono::milliseconds timeout) {
    std::unique_lock<std::mutex> lock(mu_);
    return done_cv_.wait_for(lock, timeout, [&] {
      const auto it = jobs_.find(id);
      if (it == jobs_.end()) return false;
      const auto s = it->second["status"].get<std::string>();
      return s == "done" || s == "failed";
    });
  }

  // --- request handling, also callable without HTTP ----------------------

  nlohmann::ordered_json upload_dataset(const std::string& content, const std::string& format_name,
                                        const std::string& name) {
    if (content.size() > opts_.max_upload_bytes)
      throw ApiError(413, "payload_too_large",
                     "dataset exceeds the upload limit of " + std::to_string(opts_.max_upload_bytes) + " bytes",
                     {{"limit", opts_.max_upload_bytes}, {"size", content.size()}});
    DataFormat format;
    try {
      format = format_name.empty() ? detail::format_from_name(name) : parse_data_format(format_name);
    } catch (const ConfigError& e) {
      throw ApiError(400, "bad_request", e.what());
    }
    const auto id = new_id("ds");
    DatasetTable table;
    try {
      LoadOptions lo;
      lo.id = id;
      lo.max_bytes = opts_.max_upload_bytes;
      table = parse_table(content, format, lo);
    } catch (const ParseError& e) {
      throw ApiError(422, "parse_error", e.what());
    }
    const auto dir = datasets_dir() / id;
    std::filesystem::create_directories(dir);
    write_file(dir / ("data." + to_string(format)), content);
    nlohmann::ordered_json meta = {{"id", id},
                                   {"name", name},
                                   {"format", to_string(format)},
                                   {"columns", table.column_names()},
                                   {"rows", table.size()}};
    detail::write_atomic(dir / "meta.json", meta.dump(2));
    return dataset_view(meta, table);
  }

  nlohmann::ordered_json get_dataset(const std::string& id) const {
    const auto meta = dataset_meta(id);
    return dataset_view(meta, load_dataset(meta));
  }

  nlohmann::ordered_json validate(const nlohmann::ordered_json& body) const {
    std::vector<FieldError> errors;
    std::optional<DatasetTable> table;
    if (body.contains("dataset_id") && !body["dataset_id"].is_null())
      table = load_dataset(dataset_meta(body["dataset_id"].get<std::string>()));
    const auto inputs = check_inputs(body, table ? &*table : nullptr, errors);
    nlohmann::ordered_json out = {{"valid", errors.empty()}, {"errors", errors_json(errors)}};
    if (inputs) {
      out["placeholders"] = unique_placeholders(inputs->template_);
      if (table) {
        const auto p = predict_count(inputs->template_, table->size(), inputs->config);
        out["predicted"] = {{"per_row", p.per_row}, {"rows", p.rows}, {"baseline_per_row", p.baseline_per_row},
                            {"total", p.total}};
      }
    }
    return out;
  }

  nlohmann::ordered_json submit_generation(const nlohmann::ordered_json& body) {
    if (!body.contains("dataset_id") || !body["dataset_id"].is_string())
      throw ApiError(422, "invalid", "request is invalid", {{"errors", {{{"field", "dataset_id"}, {"message", "required"}}}}});
    const auto table = load_dataset(dataset_meta(body["dataset_id"].get<std::string>()));
    std::vector<FieldError> errors;
    check_inputs(body, &table, errors);
    if (!errors.empty()) throw ApiError(422, "invalid", "request is invalid", {{"errors", errors_json(errors)}});
    nlohmann::ordered_json request = {{"dataset_id", body["dataset_id"]},
                                      {"template", body.value("template", nlohmann::ordered_json::object())},
                                      {"generation", body.value("generation", nlohmann::ordered_json::object())},
                                      {"provider", body.value("provider", nlohmann::ordered_json::object())}};
    return enqueue("generate", std::move(request));
  }

  nlohmann::ordered_json submit_evaluation(const std::string& job_id, const nlohmann::ordered_json& body) {
    const auto src = require_done_generation(job_id);
    nlohmann::ordered_json request = {{"source_job", src["id"]},
                                      {"provider", body.value("provider", nlohmann::ordered_json::object())},
                                      {"metric", body.value("metric", std::string("automatic"))}};
    try {
      parse_metric(request["metric"].get<std::string>());
      provider_config_from_json(detail::plain(request["provider"]));
    } catch (const std::exception& e) {
      throw ApiError(422, "invalid", e.what());
    }
    auto view = enqueue("evaluate", std::move(request));
    update(job_id, [&](nlohmann::ordered_json& j) { j["evaluation_job"] = view["id"]; });
    return view;
  }

  nlohmann::ordered_json job_view(const std::string& id) const {
    auto j = job(id);
    if (!j) throw ApiError(404, "not_found", "unknown job '" + id + "'");
    j->erase("request");
    return *j;
  }

  nlohmann::ordered_json list_variations(const std::string& id, std::size_t offset, std::size_t limit) const {
    if (limit == 0 || limit > opts_.max_page)
      throw ApiError(422, "invalid", "limit must be between 1 and " + std::to_string(opts_.max_page),
                     {{"limit", limit}});
    const auto src = require_done_generation(id);
    const auto records = parse_records_json(read_file(result_path(id)));
    nlohmann::ordered_json out = {{"job_id", id}, {"total", records.size()}, {"offset", offset}, {"limit", limit},
                                  {"records", nlohmann::ordered_json::array()}};
    for (std::size_t i = offset; i < records.size() && i < offset + limit; ++i) {
      auto r = to_json(records[i]);
      r["diff"] = diff_spans(records[i]);
      out["records"].push_back(std::move(r));
    }
    return out;
  }

  std::string export_job(const std::string& id, ExportFormat format) const {
    require_done_generation(id);
    const auto json = read_file(result_path(id));
    if (format == ExportFormat::json) return json;
    return serialize_records(parse_records_json(json), ExportFormat::csv);
  }

  nlohmann::ordered_json report(const std::string& id) const {
    auto j = job(id);
    if (!j) throw ApiError(404, "not_found", "unknown job '" + id + "'");
    std::string eval_id = id;
    if ((*j)["kind"] == "generate") {
      if (!j->contains("evaluation_job"))
        throw ApiError(404, "not_found", "job '" + id + "' has not been evaluated");
      eval_id = (*j)["evaluation_job"].get<std::string>();
      j = job(eval_id);
      if (!j) throw ApiError(404, "not_found", "unknown job '" + eval_id + "'");
    }
    if ((*j)["status"] == "failed")
      throw ApiError(409, "job_failed", "evaluation failed", {{"job_id", eval_id}, {"error", (*j)["error"]}});
    if ((*j)["status"] != "done")
      throw ApiError(409, "not_ready", "evaluation is not finished", {{"job_id", eval_id}, {"status", (*j)["status"]}});
    return detail::read_json_file(jobs_dir() / eval_id / "report.json");
  }

 private:
  std::filesystem::path datasets_dir() const { return opts_.workspace / "datasets"; }
  std::filesystem::path jobs_dir() const { return opts_.workspace / "jobs"; }
  std::filesystem::path result_path(const std::string& id) const { return jobs_dir() / id / "result.json"; }

  void log(const std::string& m) const {
    if (opts_.log) opts_.log(m);
  }

  std::string new_id(const std::string& prefix) {
    std::lock_guard<std::mutex> lock(id_mu_);
    static const char* hex = "0123456789abcdef";
    for (;;) {
      std::string id = prefix + "-";
      auto v = rng_();
      for (int i = 0; i < 12; ++i, v >>= 4) id += hex[v & 0xf];
      if (!std::filesystem::exists(datasets_dir() / id) && !std::filesystem::exists(jobs_dir() / id)) return id;
    }
  }

  nlohmann::ordered_json dataset_meta(const std::string& id) const {
    const auto path = datasets_dir() / id / "meta.json";
    if (id.find('/') != std::string::npos || !std::filesystem::exists(path))
      throw ApiError(404, "not_found", "unknown dataset '" + id + "'");
    return detail::read_json_file(path);
  }

  DatasetTable load_dataset(const nlohmann::ordered_json& meta) const {
    const auto id = meta["id"].get<std::string>();
    const auto format = parse_data_format(meta["format"].get<std::string>());
    LoadOptions lo;
    lo.id = id;
    return load_table(datasets_dir() / id / ("data." + to_string(format)), format, lo);
  }

  static nlohmann::ordered_json dataset_view(const nlohmann::ordered_json& meta, const DatasetTable& table) {
    nlohmann::ordered_json out = meta;
    nlohmann::ordered_json preview = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < table.size() && i < 5; ++i) {
      nlohmann::ordered_json row = nlohmann::ordered_json::object();
      for (const auto& c : table.columns()) row[c.name] = table.row(i).at(c.name);
      preview.push_back(std::move(row));
    }
    out["preview"] = std::move(preview);
    return out;
  }

  static nlohmann::ordered_json errors_json(const std::vector<FieldError>& errors) {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& e : errors) out.push_back({{"field", e.field}, {"message", e.message}});
    return out;
  }

  static std::optional<GenerationInputs> check_inputs(const nlohmann::ordered_json& body, const DatasetTable* table,
                                                      std::vector<FieldError>& errors) {
    GenerationInputs in;
    bool ok = true;
    try {
      in.template_ = parse_template(detail::plain(body.value("template", nlohmann::ordered_json())));
    } catch (const std::exception& e) {
      errors.push_back({"template", e.what()});
      ok = false;
    }
    try {
      in.config = generation_config_from_json(detail::plain(body.value("generation", nlohmann::ordered_json::object())));
    } catch (const std::exception& e) {
      errors.push_back({"generation", e.what()});
      ok = false;
    }
    try {
      in.provider = provider_config_from_json(detail::plain(body.value("provider", nlohmann::ordered_json::object())));
    } catch (const std::exception& e) {
      errors.push_back({"provider", e.what()});
      ok = false;
    }
    if (ok && table) {
      const auto report = validate_template(in.template_, *table);
      for (const auto& m : report.missing)
        errors.push_back({"template.prompt format", "column '" + m + "' is not in the dataset"});
      if (report.ok) {
        try {
          check_generation_inputs(in.template_, *table);
        } catch (const ConfigError& e) {
          errors.push_back({"template.gold", e.what()});
        }
      }
    }
    if (!ok) return std::nullopt;
    return in;
  }

  nlohmann::ordered_json require_done_generation(const std::string& id) const {
    const auto j = job(id);
    if (!j) throw ApiError(404, "not_found", "unknown job '" + id + "'");
    if ((*j)["kind"] != "generate") throw ApiError(422, "invalid", "job '" + id + "' is not a generation job");
    if ((*j)["status"] != "done")
      throw ApiError(409, "not_ready", "job '" + id + "' is not done", {{"status", (*j)["status"]}});
    return *j;
  }

  // --- jobs -----------------------------------------------------------------

  void persist(const nlohmann::ordered_json& j) const {
    const auto dir = jobs_dir() / j["id"].get<std::string>();
    std::filesystem::create_directories(dir);
    detail::write_atomic(dir / "job.json", j.dump(2));
  }

  template <typename F>
  void update(const std::string& id, F&& f, bool write = true) {
    std::lock_guard<std::mutex> lock(mu_);
    auto& j = jobs_.at(id);
    f(j);
    if (write) persist(j);
  }

  nlohmann::ordered_json enqueue(const std::string& kind, nlohmann::ordered_json request) {
    const auto id = new_id("job");
    nlohmann::ordered_json j = {{"id", id},
                                {"kind", kind},
                                {"status", "pending"},
                                {"sequence", 0},
                                {"progress", {{"rows_done", 0}, {"rows_total", 0}}},
                                {"error", nullptr},
                                {"warnings", nlohmann::ordered_json::array()},
                                {"request", std::move(request)}};
    {
      std::lock_guard<std::mutex> lock(mu_);
      j["sequence"] = next_sequence_++;
      jobs_[id] = j;
      persist(j);
      queue_.push_back(id);
    }
    cv_.notify_one();
    j.erase("request");
    return j;
  }

  void recover() {
    std::vector<std::pair<std::uint64_t, std::string>> unfinished;
    for (const auto& entry : std::filesystem::directory_iterator(jobs_dir())) {
      const auto path = entry.path() / "job.json";
      if (!std::filesystem::exists(path)) continue;
      nlohmann::ordered_json j;
      try {
        j = detail::read_json_file(path);
      } catch (const std::exception& e) {
        log("skipping unreadable job " + entry.path().string() + ": " + e.what());
        continue;
      }
      const auto id = j["id"].get<std::string>();
      const auto seq = j["sequence"].get<std::uint64_t>();
      next_sequence_ = std::max(next_sequence_, seq + 1);
      const auto status = j["status"].get<std::string>();
      if (status == "pending" || status == "running") unfinished.emplace_back(seq, id);
      jobs_[id] = std::move(j);
    }
    std::sort(unfinished.begin(), unfinished.end());
    for (const auto& [_, id] : unfinished) queue_.push_back(id);
    if (!unfinished.empty()) log("resuming " + std::to_string(unfinished.size()) + " unfinished job(s)");
  }

  void work() {
    for (;;) {
      std::string id;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        id = queue_.front();
        queue_.pop_front();
      }
      run(id);
      done_cv_.notify_all();
    }
  }

  std::shared_ptr<ProviderClient> make_client(const nlohmann::ordered_json& provider_json) const {
    const auto pj = detail::plain(provider_json);
    auto co = opts_.client;
    co.cache = cache_;
    co = client_options_from_json(pj, co);
    const auto cfg = provider_config_from_json(pj);
    if (!is_stub(cfg) && !co.transport) co.transport = default_transport();
    return std::make_shared<ProviderClient>(cfg, co);
  }

  void run(const std::string& id) {
    nlohmann::ordered_json request;
    std::string kind;
    update(id, [&](nlohmann::ordered_json& j) {
      j["status"] = "running";
      j["progress"] = {{"rows_done", 0}, {"rows_total", 0}};
      request = j["request"];
      kind = j["kind"].get<std::string>();
    });
    nlohmann::ordered_json error;
    std::vector<std::string> warnings;
    std::size_t count = 0;
    const auto progress = [this, id](std::size_t done, std::size_t total) {
      update(id, [&](nlohmann::ordered_json& j) { j["progress"] = {{"rows_done", done}, {"rows_total", total}}; }, false);
    };
    try {
      if (kind == "generate") {
        const auto table = load_dataset(dataset_meta(request["dataset_id"].get<std::string>()));
        const auto t = parse_template(detail::plain(request["template"]));
        const auto cfg = generation_config_from_json(detail::plain(request["generation"]));
        const auto client = make_client(request["provider"]);
        EngineOptions eo;
        eo.provider = client.get();
        eo.progress = progress;
        eo.log = opts_.log;
        const auto result = generate(t, table, cfg, eo);
        detail::write_atomic(result_path(id), serialize_records(result.records, ExportFormat::json));
        warnings = result.warnings;
        count = result.records.size();
      } else {
        const auto src = request["source_job"].get<std::string>();
        const auto records = parse_records_json(read_file(result_path(src)));
        const auto client = make_client(request["provider"]);
        EvaluationOptions eo;
        eo.metric = parse_metric(request["metric"].get<std::string>());
        eo.progress = progress;
        const auto rep = run_evaluation(records, *client, eo);
        detail::write_atomic(jobs_dir() / id / "report.json", to_json(rep).dump(2) + "\n");
        warnings = rep.warnings;
        count = rep.scored;
      }
    } catch (const ProviderError& e) {
      error = {{"code", "provider_" + to_string(e.kind())}, {"message", e.what()}};
    } catch (const ConfigError& e) {
      error = {{"code", "invalid"}, {"message", e.what()}};
    } catch (const std::exception& e) {
      error = {{"code", "internal"}, {"message", e.what()}};
    }
    update(id, [&](nlohmann::ordered_json& j) {
      j["status"] = error.is_null() ? "done" : "failed";
      j["error"] = error;
      j["warnings"] = warnings;
      if (error.is_null()) j[kind == "generate" ? "record_count" : "scored"] = count;
    });
    log("job " + id + (error.is_null() ? " done" : " failed: " + error["message"].get<std::string>()));
  }

  // --- HTTP -----------------------------------------------------------------

  static void send_json(httplib::Response& res, const nlohmann::ordered_json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                         const nlohmann::ordered_json& details = nlohmann::ordered_json::object()) {
    send_json(res, {{"code", code}, {"message", message}, {"details", details}}, status);
  }

  template <typename F>
  static httplib::Server::Handler guarded(F&& f) {
    return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const ApiError& e) {
        send_error(res, e.status, e.code, e.what(), e.details);
      } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, "bad_request", std::string("invalid JSON: ") + e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  static nlohmann::ordered_json body_json(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::ordered_json::object();
    auto j = nlohmann::ordered_json::parse(req.body);
    if (!j.is_object()) throw ApiError(400, "bad_request", "request body must be a JSON object");
    return j;
  }

  static std::size_t query_size(const httplib::Request& req, const std::string& key, std::size_t fallback) {
    if (!req.has_param(key)) return fallback;
    const auto v = req.get_param_value(key);
    if (v.empty() || v.size() > 12 || !std::all_of(v.begin(), v.end(), text::is_digit))
      throw ApiError(422, "invalid", "'" + key + "' must be a non-negative integer", {{key, v}});
    return std::stoull(v);
  }

  void routes() {
    // Room for JSON-escaped uploads; the dataset itself is checked separately.
    server_.set_payload_max_length(opts_.max_upload_bytes * 2 + 65536);
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      if (res.status == 413) send_error(res, 413, "payload_too_large", "request body exceeds the upload limit");
      else if (res.status == 404) send_error(res, 404, "not_found", "no such endpoint");
      else send_error(res, res.status, "error", httplib::status_message(res.status));
    });

    server_.Post("/api/datasets", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::string content, format, name;
      if (req.is_multipart_form_data()) {
        if (!req.has_file("file")) throw ApiError(400, "bad_request", "multipart upload needs a 'file' part");
        const auto f = req.get_file_value("file");
        content = f.content;
        name = f.filename;
        if (req.has_file("format")) format = req.get_file_value("format").content;
      } else if (req.get_header_value("Content-Type").rfind("application/json", 0) == 0) {
        const auto j = body_json(req);
        if (!j.contains("content") || !j["content"].is_string())
          throw ApiError(400, "bad_request", "JSON upload needs a 'content' string");
        content = j["content"].get<std::string>();
        format = j.value("format", std::string());
        name = j.value("name", std::string());
      } else {
        content = req.body;
        format = req.get_param_value("format");
        name = req.get_param_value("name");
      }
      if (req.has_param("format")) format = req.get_param_value("format");
      send_json(res, upload_dataset(content, format, name), 201);
    }));

    server_.Get(R"(/api/datasets/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, get_dataset(req.matches[1]));
    }));

    server_.Post("/api/templates/validate", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, validate(body_json(req)));
    }));

    server_.Get("/api/presets", guarded([](const httplib::Request&, httplib::Response& res) {
      nlohmann::ordered_json out = nlohmann::ordered_json::array();
      for (const auto& p : list_presets()) out.push_back(to_json(p));
      send_json(res, out);
    }));

    server_.Post("/api/generate", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, submit_generation(body_json(req)), 202);
    }));

    server_.Get(R"(/api/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, job_view(req.matches[1]));
    }));

    server_.Get(R"(/api/jobs/([^/]+)/variations)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, list_variations(req.matches[1], query_size(req, "offset", 0),
                                     query_size(req, "limit", opts_.default_page)));
    }));

    server_.Get(R"(/api/jobs/([^/]+)/export)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      ExportFormat fmt;
      try {
        fmt = parse_export_format(req.has_param("format") ? req.get_param_value("format") : "json");
      } catch (const ConfigError& e) {
        throw ApiError(422, "invalid", e.what());
      }
      const std::string id = req.matches[1];
      const auto ext = fmt == ExportFormat::json ? "json" : "csv";
      res.set_content(export_job(id, fmt), fmt == ExportFormat::json ? "application/json" : "text/csv");
      res.set_header("Content-Disposition", "attachment; filename=\"" + id + "." + ext + "\"");
    }));

    server_.Post(R"(/api/jobs/([^/]+)/evaluate)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, submit_evaluation(req.matches[1], body_json(req)), 202);
    }));

    server_.Get(R"(/api/jobs/([^/]+)/report)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, report(req.matches[1]));
    }));
  }

  ServiceOptions opts_;
  std::shared_ptr<ResponseCache> cache_;
  httplib::Server server_;
  std::thread listener_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::map<std::string, nlohmann::ordered_json> jobs_;
  std::deque<std::string> queue_;
  std::uint64_t next_sequence_ = 1;
  bool stopping_ = false;
  std::vector<std::thread> workers_;

  std::mutex id_mu_;
  std::mt19937_64 rng_{std::random_device{}()};
};

}  // namespace promptvar
