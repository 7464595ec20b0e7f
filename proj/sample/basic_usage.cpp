// Generates casing variations of a small QA set and scores a scripted model
// that only answers all-lowercase prompts.
#include <algorithm>
#include <cctype>
#include <iostream>
#include <map>

#include "promptvar/evaluator.hpp"

int main() {
  using namespace promptvar;

  const auto table = table_from_rows({{{"question", "what is the capital of france?"}, {"answer", "Paris"}},
                                      {{"question", "who wrote hamlet?"}, {"answer", "Shakespeare"}},
                                      {{"question", "what color is the sky?"}, {"answer", "blue"}}});
  const auto tmpl = parse_template(nlohmann::json{
      {"instruction", "Answer the question."},
      {"prompt format", "q: {question}\na: {answer}"},
      {"gold", "answer"},
      {"instruction variations", {{{"kind", "formatting"}, {"casing", {"lower", "upper", "title"}}}}}});

  GenerationConfig cfg;
  cfg.variations_per_field = 3;
  const auto result = generate(tmpl, table, cfg);
  std::cout << result.records.size() << " records\n";

  std::map<std::string, std::string> gold;
  for (const auto& r : result.records) gold[r.prompt] = r.gold;
  ProviderClient client(ProviderConfig{});
  client.stub().set_responder([&gold](const CompletionRequest& req) -> std::optional<std::string> {
    const bool lower = std::none_of(req.prompt.begin(), req.prompt.end(), [](unsigned char c) { return std::isupper(c); });
    return lower ? gold.at(req.prompt) : std::string("no idea");
  });

  const auto report = run_evaluation(result.records, client);
  for (const auto& v : report.per_variation)
    std::cout << coords_key(v.variant_coords) << "  accuracy " << v.mean << "\n";
  std::cout << to_json(*report.distribution).dump() << "\n";
}
