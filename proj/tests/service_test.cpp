#include <gtest/gtest.h>

#include <filesystem>

#include "promptvar/service.hpp"

using namespace promptvar;
using oj = nlohmann::ordered_json;

namespace {

const std::string kData = PROMPTVAR_TEST_DATA;

oj qa_request(const std::string& dataset_id) {
  return {{"dataset_id", dataset_id},
          {"template",
           {{"instruction", "Please answer the following questions."},
            {"prompt format", "Q: {question}\nA: {answer}"},
            {"gold", "answer"},
            {"instruction variations", {"paraphrase"}},
            {"prompt format variations", {"formatting"}}}},
          {"generation", {{"variations_per_field", 3}, {"seed", 7}}},
          {"provider", {{"platform", "stub"}}}};
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("promptvar_service_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir_);
    start();
  }

  void TearDown() override {
    client_.reset();
    service_.reset();
    std::filesystem::remove_all(dir_);
  }

  void start(std::size_t workers = 1, std::size_t max_upload = 1 << 20) {
    client_.reset();
    service_.reset();
    ServiceOptions o;
    o.workspace = dir_;
    o.workers = workers;
    o.max_upload_bytes = max_upload;
    o.client.getenv = [](const char*) -> const char* { return nullptr; };
    service_ = std::make_unique<Service>(o);
    port_ = service_->start();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  oj post(const std::string& path, const oj& body, int expect) {
    auto res = client_->Post(path, body.dump(), "application/json");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, expect) << res->body;
    return oj::parse(res->body);
  }

  oj get(const std::string& path, int expect = 200) {
    auto res = client_->Get(path);
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, expect) << res->body;
    return oj::parse(res->body);
  }

  std::string upload_csv(const std::string& content) {
    auto res = client_->Post("/api/datasets?format=csv&name=d.csv", content, "text/csv");
    EXPECT_EQ(res->status, 201) << res->body;
    return oj::parse(res->body)["id"].get<std::string>();
  }

  std::string run_job(const oj& body) {
    const auto id = post("/api/generate", body, 202)["id"].get<std::string>();
    EXPECT_TRUE(service_->wait_for(id, std::chrono::seconds(30)));
    return id;
  }

  static void expect_error_shape(const oj& j) {
    EXPECT_TRUE(j.contains("code"));
    EXPECT_TRUE(j.contains("message"));
    EXPECT_TRUE(j.contains("details"));
  }

  std::filesystem::path dir_;
  std::unique_ptr<Service> service_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

}  // namespace

TEST_F(ServiceTest, UploadCsvReturnsColumnsAndPreview) {
  auto res = client_->Post("/api/datasets?format=csv", read_file(kData + "/qa_small.csv"), "text/csv");
  ASSERT_EQ(res->status, 201);
  const auto j = oj::parse(res->body);
  EXPECT_EQ(j["columns"], oj({"question", "answer"}));
  EXPECT_LE(j["preview"].size(), 5u);
  EXPECT_EQ(j["preview"][0]["answer"], "Shakespeare");
  const auto again = get("/api/datasets/" + j["id"].get<std::string>());
  EXPECT_EQ(again["columns"], j["columns"]);
}

TEST_F(ServiceTest, UploadVariants) {
  const auto jsonl = read_file(kData + "/mcq.jsonl");
  const auto j = post("/api/datasets", {{"content", jsonl}, {"format", "jsonl"}, {"name", "mcq.jsonl"}}, 201);
  EXPECT_EQ(j["columns"].size(), 3u);
  httplib::MultipartFormDataItems items = {{"file", read_file(kData + "/qa_small.csv"), "qa.csv", "text/csv"}};
  auto res = client_->Post("/api/datasets", items);
  ASSERT_EQ(res->status, 201) << res->body;
  EXPECT_EQ(oj::parse(res->body)["format"], "csv");
}

TEST_F(ServiceTest, ReuploadGivesNewId) {
  const auto csv = read_file(kData + "/qa_small.csv");
  EXPECT_NE(upload_csv(csv), upload_csv(csv));
}

TEST_F(ServiceTest, MalformedJsonlIs422NamingLine) {
  auto res = client_->Post("/api/datasets?format=jsonl", "{\"a\": 1}\n{\"a\": 2\n", "application/x-ndjson");
  ASSERT_EQ(res->status, 422);
  const auto j = oj::parse(res->body);
  expect_error_shape(j);
  EXPECT_NE(j["message"].get<std::string>().find("line 2"), std::string::npos) << j["message"];
}

TEST_F(ServiceTest, OversizeIs413) {
  start(1, 64);
  auto res = client_->Post("/api/datasets?format=csv", std::string(200, 'x'), "text/csv");
  ASSERT_EQ(res->status, 413);
  expect_error_shape(oj::parse(res->body));
  // Beyond the transport limit as well.
  res = client_->Post("/api/datasets?format=csv", std::string(1 << 18, 'x'), "text/csv");
  ASSERT_EQ(res->status, 413);
  expect_error_shape(oj::parse(res->body));
}

TEST_F(ServiceTest, UnknownDatasetAndJobAre404) {
  expect_error_shape(get("/api/datasets/ds-nope", 404));
  expect_error_shape(get("/api/jobs/job-nope", 404));
  expect_error_shape(get("/api/jobs/job-nope/variations", 404));
  expect_error_shape(post("/api/generate", qa_request("ds-nope"), 404));
}

TEST_F(ServiceTest, InvalidTemplateIs422WithFields) {
  const auto ds = upload_csv("question,answer\nWho wrote Hamlet?,Shakespeare\n");
  auto body = qa_request(ds);
  body["template"]["prompt format"] = "Q: {query}\nA: {answer}";
  auto j = post("/api/generate", body, 422);
  expect_error_shape(j);
  ASSERT_FALSE(j["details"]["errors"].empty());
  EXPECT_NE(j["details"]["errors"][0]["message"].get<std::string>().find("query"), std::string::npos);
  body = qa_request(ds);
  body["template"].erase("instruction");
  j = post("/api/generate", body, 422);
  EXPECT_EQ(j["details"]["errors"][0]["field"], "template");
}

TEST_F(ServiceTest, ValidateReportsPrediction) {
  const auto ds = upload_csv("question,answer\nWho wrote Hamlet?,Shakespeare\n");
  auto j = post("/api/templates/validate", qa_request(ds), 200);
  EXPECT_TRUE(j["valid"].get<bool>());
  EXPECT_EQ(j["predicted"]["per_row"], 9);
  auto body = qa_request(ds);
  body["template"]["prompt format"] = "Q: {query}\nA: {answer}";
  j = post("/api/templates/validate", body, 200);
  EXPECT_FALSE(j["valid"].get<bool>());
}

TEST_F(ServiceTest, PresetsEndpoint) {
  const auto j = get("/api/presets");
  ASSERT_GE(j.size(), 4u);
  std::set<std::string> names;
  for (const auto& p : j) names.insert(p["name"].get<std::string>());
  EXPECT_TRUE(names.count("multiple-choice QA"));
  EXPECT_TRUE(names.count("text classification"));
}

TEST_F(ServiceTest, QaJobGivesNineVariations) {
  const auto ds = upload_csv("question,answer\nWho wrote Hamlet?,Shakespeare\n");
  const auto id = run_job(qa_request(ds));
  const auto status = get("/api/jobs/" + id);
  EXPECT_EQ(status["status"], "done");
  EXPECT_EQ(status["progress"]["rows_done"], 1);
  const auto page = get("/api/jobs/" + id + "/variations?offset=0&limit=10");
  EXPECT_EQ(page["total"], 10);
  std::size_t variants = 0;
  for (const auto& r : page["records"]) {
    if (r["baseline"].get<bool>()) {
      EXPECT_TRUE(r["diff"].empty());
    } else {
      ++variants;
      EXPECT_FALSE(r["diff"].empty());
    }
  }
  EXPECT_EQ(variants, 9u);
}

TEST_F(ServiceTest, DiffSpansMatchProvenanceAndAreSorted) {
  const auto ds = upload_csv(read_file(kData + "/qa_small.csv"));
  auto body = qa_request(ds);
  body["template"]["instruction variations"] = {{{"kind", "formatting"}, {"casing", {"upper", "title"}}}};
  const auto id = run_job(body);
  const auto page = get("/api/jobs/" + id + "/variations?limit=200");
  for (const auto& r : page["records"]) {
    std::size_t logged = 0;
    for (const auto& s : r["provenance"]["prompt_spans"]) logged += s["end"].get<std::size_t>() - s["start"].get<std::size_t>();
    std::size_t shown = 0;
    for (const auto& view : r["diff"]) {
      std::size_t prev_end = 0;
      for (const auto& s : view["spans"]) {
        EXPECT_GE(s["start"].get<std::size_t>(), prev_end);
        prev_end = s["end"].get<std::size_t>();
        EXPECT_LE(prev_end, r["prompt"].get<std::string>().size());
        shown += prev_end - s["start"].get<std::size_t>();
      }
    }
    EXPECT_LE(shown, logged);
  }
}

TEST_F(ServiceTest, PaginationUnionEqualsExport) {
  const auto ds = upload_csv(read_file(kData + "/qa_small.csv"));
  const auto id = run_job(qa_request(ds));
  auto res = client_->Get("/api/jobs/" + id + "/export?format=json");
  ASSERT_EQ(res->status, 200);
  const auto exported = oj::parse(res->body);
  oj all = oj::array();
  for (std::size_t offset = 0;; offset += 7) {
    const auto page = get("/api/jobs/" + id + "/variations?offset=" + std::to_string(offset) + "&limit=7");
    if (page["records"].empty()) break;
    for (auto r : page["records"]) {
      r.erase("diff");
      all.push_back(r);
    }
  }
  EXPECT_EQ(all, exported);
  const auto csv = client_->Get("/api/jobs/" + id + "/export?format=csv");
  ASSERT_EQ(csv->status, 200);
  EXPECT_EQ(parse_records_csv(csv->body).size(), exported.size());
  expect_error_shape(get("/api/jobs/" + id + "/export?format=xml", 422));
  expect_error_shape(get("/api/jobs/" + id + "/variations?limit=201", 422));
  expect_error_shape(get("/api/jobs/" + id + "/variations?limit=abc", 422));
}

TEST_F(ServiceTest, ExportMatchesLibrary) {
  const auto csv = read_file(kData + "/qa_small.csv");
  const auto ds = upload_csv(csv);
  const auto req = qa_request(ds);
  const auto id = run_job(req);
  auto res = client_->Get("/api/jobs/" + id + "/export");
  ProviderClient c(ProviderConfig{});
  EngineOptions o;
  o.provider = &c;
  const auto lib = generate(parse_template(nlohmann::json::parse(req["template"].dump())),
                            parse_table(csv, DataFormat::csv),
                            generation_config_from_json(nlohmann::json::parse(req["generation"].dump())), o);
  EXPECT_EQ(res->body, serialize_records(lib.records, ExportFormat::json));
}

TEST_F(ServiceTest, NotDoneIs409) {
  start(0);
  const auto ds = upload_csv("question,answer\nWho wrote Hamlet?,Shakespeare\n");
  const auto id = post("/api/generate", qa_request(ds), 202)["id"].get<std::string>();
  EXPECT_EQ(get("/api/jobs/" + id)["status"], "pending");
  expect_error_shape(get("/api/jobs/" + id + "/variations", 409));
  expect_error_shape(get("/api/jobs/" + id + "/export", 409));
  expect_error_shape(post("/api/jobs/" + id + "/evaluate", oj::object(), 409));
}

TEST_F(ServiceTest, JobsSurviveRestart) {
  start(0);
  const auto ds = upload_csv("question,answer\nWho wrote Hamlet?,Shakespeare\n");
  const auto id = post("/api/generate", qa_request(ds), 202)["id"].get<std::string>();
  start(1);
  ASSERT_TRUE(service_->wait_for(id, std::chrono::seconds(30)));
  EXPECT_EQ(get("/api/jobs/" + id)["status"], "done");
  EXPECT_EQ(get("/api/datasets/" + ds)["rows"], 1);
  start(1);
  EXPECT_EQ(get("/api/jobs/" + id + "/variations")["total"], 10);
}

TEST_F(ServiceTest, MissingCredentialsFailJobWithAuthError) {
  const auto ds = upload_csv("question,answer\nWho wrote Hamlet?,Shakespeare\n");
  auto body = qa_request(ds);
  body["provider"] = {{"platform", "together"}, {"model_name", "some-model"}};
  const auto id = run_job(body);
  const auto status = get("/api/jobs/" + id);
  EXPECT_EQ(status["status"], "failed");
  EXPECT_EQ(status["error"]["code"], "provider_auth");
  EXPECT_NE(status["error"]["message"].get<std::string>().find("TOGETHER_API_KEY"), std::string::npos);
}

TEST_F(ServiceTest, SecondIdenticalRequestIsIndependentJob) {
  const auto ds = upload_csv("question,answer\nWho wrote Hamlet?,Shakespeare\n");
  const auto a = run_job(qa_request(ds));
  const auto b = run_job(qa_request(ds));
  EXPECT_NE(a, b);
  EXPECT_EQ(client_->Get("/api/jobs/" + a + "/export")->body, client_->Get("/api/jobs/" + b + "/export")->body);
}

TEST_F(ServiceTest, EvaluateAndReport) {
  const auto ds = upload_csv(read_file(kData + "/qa_small.csv"));
  const auto id = run_job(qa_request(ds));
  expect_error_shape(get("/api/jobs/" + id + "/report", 404));
  const auto ev = post("/api/jobs/" + id + "/evaluate", {{"provider", {{"platform", "stub"}, {"fallback", "Paris"}}}}, 202);
  const auto eval_id = ev["id"].get<std::string>();
  ASSERT_TRUE(service_->wait_for(eval_id, std::chrono::seconds(30)));
  const auto rep = get("/api/jobs/" + id + "/report");
  EXPECT_TRUE(rep.contains("distribution"));
  EXPECT_EQ(rep["per_record"].size(), get("/api/jobs/" + id + "/variations?limit=200")["total"].get<std::size_t>());
  EXPECT_EQ(get("/api/jobs/" + eval_id + "/report"), rep);
}
