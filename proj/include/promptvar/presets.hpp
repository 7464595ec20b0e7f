#pragma once

#include <string>
#include <vector>

#include "promptvar/evaluator.hpp"
#include "promptvar/template.hpp"

namespace promptvar {

struct Preset {
  std::string name;
  std::string description;
  nlohmann::ordered_json config;
  Metric metric = Metric::exact_match;

  PromptTemplate parsed() const { return parse_template(nlohmann::json::parse(config.dump())); }
};

inline std::vector<Preset> list_presets() {
  using oj = nlohmann::ordered_json;
  std::vector<Preset> out;

  out.push_back(
      {"multiple-choice QA",
       "Question with a list of options; the gold is the option label.",
       oj{{"instruction", "The following are multiple choice questions. Answer with the letter of the correct option."},
          {"prompt format", "Question: {question}\nOptions:\n{options}\nAnswer: {answer}"},
          {"gold", {{"field", "answer"}, {"mode", "index"}, {"options field", "options"}}},
          {"list fields", {{"options", {{"delimiter", "|"}, {"join", "\n"}, {"enumerate", "A"}}}}},
          {"instruction variations", oj::array({"paraphrase"})},
          {"prompt format variations", oj::array({"formatting"})},
          {"options variations", oj::array({"enumerate", "shuffle"})}},
       Metric::choice_letter});

  out.push_back({"sentiment analysis",
                 "Classify the sentiment of a text.",
                 oj{{"instruction", "Classify the sentiment of the following text as positive or negative."},
                    {"prompt format", "Text: {text}\nSentiment: {label}"},
                    {"gold", "label"},
                    {"few shot", {{"count", 2}, {"ordering", "shuffled"}}},
                    {"instruction variations", oj::array({"paraphrase"})},
                    {"text variations", oj::array({"formatting"})},
                    {"demonstrations variations", oj::array({"demonstration editing"})}},
                 Metric::exact_match});

  out.push_back({"open-ended QA",
                 "Free-form question answering.",
                 oj{{"instruction", "Please answer the following questions."},
                    {"prompt format", "Q: {question}\nA: {answer}"},
                    {"gold", "answer"},
                    {"instruction variations", oj::array({"paraphrase"})},
                    {"prompt format variations", oj::array({"formatting"})},
                    {"question variations", oj::array({"context addition"})}},
                 Metric::exact_match});

  out.push_back({"text classification",
                 "Assign one of a fixed set of categories to a text.",
                 oj{{"instruction", "Classify the following text into one of the given categories."},
                    {"prompt format", "Text: {text}\nCategory: {label}"},
                    {"gold", "label"},
                    {"few shot", {{"count", 3}, {"ordering", "as-sampled"}}},
                    {"instruction variations", oj::array({"paraphrase"})},
                    {"prompt format variations", oj::array({"formatting"})},
                    {"text variations", oj::array({"formatting"})}},
                 Metric::exact_match});
  return out;
}

inline const Preset* find_preset(const std::vector<Preset>& presets, std::string_view name) {
  for (const auto& p : presets)
    if (p.name == name) return &p;
  return nullptr;
}

inline nlohmann::ordered_json to_json(const Preset& p) {
  return {{"name", p.name}, {"description", p.description}, {"metric", to_string(p.metric)}, {"template", p.config}};
}

}  // namespace promptvar
