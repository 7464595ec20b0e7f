// Acceptance checks: prints one PASS/FAIL line per criterion and exits
// non-zero when any fails.
#include <sys/wait.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "noise_oracles.hpp"
#include "promptvar/cli.hpp"

using namespace promptvar;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

const std::string kData = PROMPTVAR_TEST_DATA;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

bool all_lowercase(const std::string& s) {
  return std::none_of(s.begin(), s.end(), [](unsigned char c) { return std::isupper(c); });
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("promptvar_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Outcome single_row_qa() {
  const auto start = Clock::now();
  const auto table = table_from_rows({{{"question", "Who wrote Romeo and Juliet?"}, {"answer", "Shakespeare"}}});
  const auto t = parse_template(nlohmann::json{{"instruction", "Please answer the following questions."},
                                               {"prompt format", "Q: {question}\nA: {answer}"},
                                               {"gold", "answer"},
                                               {"instruction variations", {"paraphrase_with_llm"}},
                                               {"prompt format variations", {"format structure"}}});
  ProviderClient client(ProviderConfig{});
  EngineOptions o;
  o.provider = &client;
  GenerationConfig cfg;
  cfg.variations_per_field = 3;
  const auto r = generate(t, table, cfg, o);
  const double secs = seconds_since(start);
  std::set<std::string> prompts;
  for (const auto& rec : r.records)
    if (!rec.baseline) prompts.insert(rec.prompt);
  Outcome out;
  out.pass = r.non_baseline_count() == 9 && prompts.size() == 9 && secs < 5.0;
  out.detail = std::to_string(r.non_baseline_count()) + " variations (" + std::to_string(prompts.size()) +
               " distinct), " + std::to_string(secs) + " s";
  return out;
}

Outcome scale_law() {
  const auto start = Clock::now();
  const auto table = load_table(kData + "/qa50.csv", DataFormat::csv);
  const auto t = parse_template(nlohmann::json{
      {"instruction", "Please answer the following question."},
      {"prompt format", "Question: {question}\nAnswer: {answer}"},
      {"gold", "answer"},
      {"instruction variations", {{{"kind", "formatting"}, {"casing", {"upper", "lower", "title", "random-token"}}}}},
      {"prompt format variations", {"formatting"}},
      {"question variations", {"formatting"}}});
  GenerationConfig cfg;
  cfg.variations_per_field = 5;
  cfg.sampling = SamplingMode::random_combinations;
  cfg.max_variations_per_row = 25;
  cfg.include_baseline = false;
  const auto r = generate(t, table, cfg);
  const double secs = seconds_since(start);
  std::map<std::size_t, std::size_t> per_row;
  for (const auto& rec : r.records) ++per_row[rec.row_index];
  const bool even = per_row.size() == 50 &&
                    std::all_of(per_row.begin(), per_row.end(), [](const auto& kv) { return kv.second == 25; });
  Outcome out;
  out.pass = table.size() == 50 && r.records.size() == 1250 && even && secs < 30.0;
  out.detail = std::to_string(r.records.size()) + " records over " + std::to_string(per_row.size()) + " rows, " +
               std::to_string(secs) + " s";
  return out;
}

Outcome shuffle_remap() {
  std::size_t cases = 0, failures = 0;
  for (std::size_t n = 2; n <= 6; ++n) {
    std::vector<std::string> items;
    for (std::size_t i = 0; i < n; ++i) items.push_back("item-" + std::to_string(i));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
      for (std::size_t g = 0; g < n; ++g) {
        const std::vector<std::pair<std::string, GoldMode>> golds = {{items[g], GoldMode::value},
                                                                     {std::to_string(g), GoldMode::index},
                                                                     {std::string(1, static_cast<char>('A' + g)), GoldMode::index}};
        for (const auto& [gold, mode] : golds) {
          ++cases;
          const auto r = apply_permutation(items, gold, mode, perm);
          // Position the exported gold points at, decoded without the library.
          std::size_t new_gold = 0;
          if (mode == GoldMode::value)
            new_gold = static_cast<std::size_t>(std::find(r.items.begin(), r.items.end(), r.gold) - r.items.begin());
          else if (std::isdigit(static_cast<unsigned char>(r.gold[0]))) new_gold = std::stoul(r.gold);
          else new_gold = static_cast<std::size_t>(r.gold[0] - 'A');
          if (new_gold >= n || r.items[new_gold] != items[g]) ++failures;
        }
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  return {failures == 0, std::to_string(cases - failures) + "/" + std::to_string(cases) + " remapped correctly"};
}

Outcome surface_noise_suite() {
  const auto start = Clock::now();
  std::size_t checks = 0, failures = 0;
  const auto& corpus = oracle::corpus();
  auto check = [&](bool ok) {
    ++checks;
    if (!ok) ++failures;
  };
  NoiseConfig quiet;
  quiet.p_space = 0;
  quiet.p_typo = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto spacing = quiet;
    spacing.p_space = 0.5;
    auto typos = quiet;
    typos.p_typo = 1.0;
    typos.typo_ops = {TypoOp::adjacent_swap, TypoOp::char_drop, TypoOp::char_double};
    auto punct = quiet;
    punct.punctuation = static_cast<PunctuationMode>(seed % 3);
    punct.p_label_separator = 0.5;
    for (const auto& s : corpus) {
      Rng r1(seed), r2(seed), r3(seed), r4(seed);
      check(oracle::collapse_space_runs(perturb_spacing(s, spacing, r1).text) == oracle::collapse_space_runs(s));
      const auto typo = perturb_typos(s, typos, r2).text;
      const auto before = oracle::letter_runs(s), after = oracle::letter_runs(typo);
      bool ok = before.size() == after.size();
      for (std::size_t w = 0; ok && w < before.size(); ++w)
        if (before[w] != after[w]) ok = oracle::damerau_levenshtein(before[w], after[w]) == 1;
      check(ok);
      check(oracle::casefold(perturb_casing(s, CasingMode::random_token, r3).text) == oracle::casefold(s));
      check(oracle::alnum_subsequence(perturb_punctuation(s, punct, r4).text) == oracle::alnum_subsequence(s));
      NoiseConfig all;
      all.seed = seed;
      all.p_space = 0.5;
      all.p_typo = 0.5;
      all.typo_ops = typos.typo_ops;
      all.casing = static_cast<CasingMode>(seed % 4);
      all.punctuation = punct.punctuation;
      all.p_label_separator = 0.5;
      check(oracle::brace_names(apply_surface_noise(s, all).text) == oracle::brace_names(s));
    }
  }
  auto forced = quiet;
  forced.p_typo = 1.0;
  Rng rng(0);
  const auto apple = perturb_typos("apple", forced, rng).text;
  check(apple == "aplpe");
  const double secs = seconds_since(start);
  return {failures == 0 && secs < 10.0, std::to_string(checks - failures) + "/" + std::to_string(checks) +
                                            " invariant checks, apple -> " + apple + ", " + std::to_string(secs) + " s"};
}

int run_binary(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  const auto dir = scratch("determinism");
  write_file(dir / "data.csv", read_file(kData + "/qa_small.csv"));
  const nlohmann::json config = {
      {"dataset", {{"path", "data.csv"}}},
      {"template",
       {{"instruction", "Please answer the following questions."},
        {"prompt format", "Q: {question}\nA: {answer}"},
        {"gold", "answer"},
        {"few shot", 1},
        {"instruction variations", {"paraphrase", "formatting"}},
        {"prompt format variations", {"formatting"}},
        {"question variations", {"context addition"}},
        {"demonstrations variations", {"demonstration editing"}}}},
      {"generation", {{"variations_per_field", 2}, {"seed", 11}}},
      {"provider", {{"platform", "stub"}}}};
  write_file(dir / "config.json", config.dump(2));

  auto library_run = [&] {
    ProviderClient client(ProviderConfig{});
    EngineOptions o;
    o.provider = &client;
    const auto r = generate(parse_template(config["template"]), load_table(dir / "data.csv", DataFormat::csv),
                            generation_config_from_json(config["generation"]), o);
    return serialize_records(r.records, ExportFormat::json);
  };
  const auto a = library_run();
  const auto b = library_run();

  const auto cfg_path = (dir / "config.json").string();
  const auto out_path = (dir / "cli.json").string();
  std::vector<const char*> argv = {"promptvar", "generate", "--config", cfg_path.c_str(), "-o", out_path.c_str()};
  std::ostringstream sink;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), sink, sink);
  const auto cli = code == 0 ? read_file(out_path) : std::string();
  const auto bin_path = (dir / "bin.json").string();
  const int bin_code = run_binary(std::string(PROMPTVAR_CLI) + " generate --config " + cfg_path + " -o " + bin_path);
  const auto bin = bin_code == 0 ? read_file(bin_path) : std::string();
  fs::remove_all(dir);
  Outcome out;
  out.pass = !a.empty() && a == b && a == cli && a == bin;
  out.detail = std::to_string(a.size()) + " bytes; library x2 " + (a == b ? "identical" : "DIFFER") + ", cli " +
               (a == cli ? "identical" : "DIFFERS") + ", binary " + (a == bin ? "identical" : "DIFFERS");
  return out;
}

Outcome demonstration_editing() {
  const std::size_t target = 4;
  const std::vector<std::size_t> triple = {1, 6, 8};
  std::size_t target_hits = 0, valid = 0;
  std::set<std::vector<std::size_t>> orderings;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto sel = edit_demonstrations(10, target, 3, DemoOrdering::shuffled, seed).demo_row_indices;
    if (std::find(sel.begin(), sel.end(), target) != sel.end()) ++target_hits;
    if (sel.size() == 3 && std::set<std::size_t>(sel.begin(), sel.end()).size() == 3) ++valid;
    auto sorted = sel;
    std::sort(sorted.begin(), sorted.end());
    if (sorted == triple) orderings.insert(sel);
  }
  return {target_hits == 0 && valid == 10000 && orderings.size() == 6,
          "target selected " + std::to_string(target_hits) + " times; " + std::to_string(orderings.size()) +
              "/6 orderings of {1,6,8} observed"};
}

GenerationResult casing_variations() {
  std::vector<InlineRow> rows;
  const std::vector<std::pair<std::string, std::string>> qa = {
      {"what is the capital of france?", "Paris"}, {"what is two plus two?", "4"},
      {"what color is the sky?", "blue"},          {"who wrote hamlet?", "Shakespeare"},
      {"what is frozen water called?", "ice"},     {"how many legs does a spider have?", "8"}};
  for (const auto& [q, a] : qa) rows.push_back({{"question", q}, {"answer", a}});
  const auto t = parse_template(nlohmann::json{
      {"instruction", "Answer the question."},
      {"prompt format", "q: {question}\na: {answer}"},
      {"gold", "answer"},
      {"instruction variations", {{{"kind", "formatting"}, {"casing", {"lower", "upper", "title"}}, {"p_space", 0}, {"p_typo", 0}}}}});
  GenerationConfig cfg;
  cfg.variations_per_field = 3;
  return generate(t, table_from_rows(rows), cfg);
}

Outcome sensitivity() {
  const auto gen = casing_variations();
  std::map<std::string, std::string> gold;
  for (const auto& r : gen.records) gold[r.prompt] = r.gold;
  ProviderClient sensitive(ProviderConfig{});
  sensitive.stub().set_responder([&gold](const CompletionRequest& req) -> std::optional<std::string> {
    return all_lowercase(req.prompt) ? gold.at(req.prompt) : std::string("not sure");
  });
  const auto a = run_evaluation(gen.records, sensitive);
  ProviderClient insensitive(ProviderConfig{});
  insensitive.stub().set_fallback("Paris");
  const auto b = run_evaluation(gen.records, insensitive);
  const double range = a.distribution->max - a.distribution->min;
  std::ostringstream d;
  d << "sensitive range " << range << " over " << a.per_variation.size() << " variations; insensitive std "
    << b.distribution->std;
  return {range >= 0.5 && b.distribution->std == 0.0, d.str()};
}

Outcome ablation_arithmetic() {
  const auto table = load_table(kData + "/qa50.csv", DataFormat::csv);
  const auto t = parse_template(nlohmann::json{{"instruction", "Answer the following question."},
                                               {"prompt format", "Question: {question}\nAnswer: {answer}"},
                                               {"gold", "answer"},
                                               {"few shot", 2},
                                               {"instruction variations", {"paraphrase"}},
                                               {"prompt format variations", {"formatting"}},
                                               {"demonstrations variations", {"demonstration editing"}}});
  ProviderClient client(ProviderConfig{});
  EngineOptions o;
  o.provider = &client;
  bool ok = table.size() == 50;
  std::string detail;
  for (const auto* name : {"instruction", "prompt format", "demonstrations", "instance content"}) {
    const auto plan = ablation_plan(t, *parse_component(name), 20, 9);
    const auto n = generate(plan.template_, table, plan.config, o).records.size();
    ok = ok && n == 1000;
    detail += std::string(detail.empty() ? "" : ", ") + name + "=" + std::to_string(n);
  }
  return {ok, detail};
}

class CountingTransport : public Transport {
 public:
  HttpResponse post(const HttpRequest& request) override {
    ++calls;
    const auto body = nlohmann::json::parse(request.body);
    const auto prompt = body["messages"].back()["content"].get<std::string>();
    return {200, nlohmann::json{{"choices", {{{"message", {{"content", "echo " + std::to_string(prompt.size())}}},
                                              {"finish_reason", "stop"}}}}}.dump(),
            ""};
  }
  std::atomic<std::size_t> calls{0};
};

Outcome cache_idempotence() {
  const auto dir = scratch("cache");
  const auto records = casing_variations().records;
  auto transport = std::make_shared<CountingTransport>();
  auto run = [&] {
    ClientOptions co;
    co.transport = transport;
    co.cache = std::make_shared<ResponseCache>(dir);
    co.getenv = [](const char*) -> const char* { return "test-key"; };
    ProviderConfig cfg;
    cfg.platform = "openai";
    cfg.model_name = "counting-model";
    ProviderClient client(cfg, co);
    const auto before = transport->calls.load();
    auto rep = to_json(run_evaluation(records, client));
    rep["counts"].erase("cache_hits");
    return std::make_pair(transport->calls.load() - before, rep.dump());
  };
  const auto [first_calls, first] = run();
  const auto [second_calls, second] = run();
  fs::remove_all(dir);
  return {first_calls == records.size() && second_calls == 0 && first == second,
          "cold run " + std::to_string(first_calls) + " calls, warm run " + std::to_string(second_calls) +
              " calls, reports " + (first == second ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1 single-row QA (9 variations per sample)", single_row_qa},
      {"AC2 scale law (50 rows x 25 = 1250 records)", scale_law},
      {"AC3 shuffle remap oracle (n = 2..6, all permutations)", shuffle_remap},
      {"AC4 surface-noise invariants (1000 seeds per class)", surface_noise_suite},
      {"AC5 determinism (library, CLI, binary)", determinism},
      {"AC6 demonstration editing (10000 seeds)", demonstration_editing},
      {"AC7 sensitivity detection", sensitivity},
      {"AC8 ablation arithmetic (50 x 20 = 1000)", ablation_arithmetic},
      {"AC9 cache idempotence", cache_idempotence},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " -- " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
