#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

// Meta-prompts sent to the model for LLM-backed perturbations. The same text
// ships as plain files under resources/meta_prompts/.
namespace promptvar::meta_prompts {

inline constexpr std::string_view kParaphraseId = "paraphrase-v1";
inline constexpr std::string_view kParaphraseTemplate =
    "Rewrite the following task instruction in {n} different ways, preserving its meaning and required output "
    "format; respond as a numbered list.\n\nInstruction:\n{instruction}";

inline constexpr std::string_view kContextId = "context-v1";
inline constexpr std::string_view kContextTemplate =
    "Write one or two sentences of background information related to the text below. Do not answer any question "
    "it contains and do not mention its answer. Respond with the sentences only.\n\nText:\n{text}";

inline constexpr std::string_view kRetryMarker = "\n\n(Request ";
inline constexpr std::string_view kVariationMarker = "\n\n(Variation ";

namespace detail {
inline std::string substitute(std::string_view tmpl, std::string_view key, std::string_view value) {
  std::string out(tmpl);
  const auto pos = out.find(key);
  if (pos != std::string::npos) out.replace(pos, key.size(), value);
  return out;
}
}  // namespace detail

inline std::string paraphrase_prompt(std::string_view instruction, std::size_t n, std::size_t attempt = 1) {
  auto p = detail::substitute(detail::substitute(kParaphraseTemplate, "{n}", std::to_string(n)), "{instruction}",
                              instruction);
  if (attempt > 1) p += std::string(kRetryMarker) + std::to_string(attempt) + ": give rewrites not listed before.)";
  return p;
}

inline std::string context_prompt(std::string_view text, std::size_t variation = 1, std::size_t attempt = 1) {
  auto p = detail::substitute(kContextTemplate, "{text}", text);
  if (variation > 1) p += std::string(kVariationMarker) + std::to_string(variation) + ")";
  if (attempt > 1) p += std::string(kRetryMarker) + std::to_string(attempt) + ": try a different sentence.)";
  return p;
}

struct ParsedParaphrasePrompt {
  std::string instruction;
  std::size_t n = 0;
  std::size_t attempt = 1;
};

// Recognizes a prompt built by paraphrase_prompt (used by the offline stub).
inline std::optional<ParsedParaphrasePrompt> parse_paraphrase_prompt(std::string_view prompt) {
  constexpr std::string_view head = "Rewrite the following task instruction in ";
  if (prompt.substr(0, head.size()) != head) return std::nullopt;
  ParsedParaphrasePrompt out;
  std::size_t i = head.size();
  while (i < prompt.size() && prompt[i] >= '0' && prompt[i] <= '9') out.n = out.n * 10 + static_cast<std::size_t>(prompt[i++] - '0');
  constexpr std::string_view body = "\n\nInstruction:\n";
  const auto b = prompt.find(body);
  if (b == std::string_view::npos || out.n == 0) return std::nullopt;
  auto rest = prompt.substr(b + body.size());
  const auto r = rest.rfind(kRetryMarker);
  if (r != std::string_view::npos) {
    std::size_t k = r + kRetryMarker.size();
    std::size_t a = 0;
    while (k < rest.size() && rest[k] >= '0' && rest[k] <= '9') a = a * 10 + static_cast<std::size_t>(rest[k++] - '0');
    if (a > 0) out.attempt = a;
    rest = rest.substr(0, r);
  }
  out.instruction = std::string(rest);
  return out;
}

struct ParsedContextPrompt {
  std::string text;
  std::size_t variation = 1;
  std::size_t attempt = 1;
};

inline std::optional<ParsedContextPrompt> parse_context_prompt(std::string_view prompt) {
  const auto head = kContextTemplate.substr(0, kContextTemplate.find("{text}"));
  if (prompt.substr(0, head.size()) != head) return std::nullopt;
  ParsedContextPrompt out;
  auto rest = prompt.substr(head.size());
  auto read_marker = [&](std::string_view marker, std::size_t& value) {
    const auto r = rest.rfind(marker);
    if (r == std::string_view::npos) return;
    std::size_t k = r + marker.size();
    std::size_t v = 0;
    while (k < rest.size() && rest[k] >= '0' && rest[k] <= '9') v = v * 10 + static_cast<std::size_t>(rest[k++] - '0');
    if (v > 0) value = v;
    rest = rest.substr(0, r);
  };
  read_marker(kRetryMarker, out.attempt);
  read_marker(kVariationMarker, out.variation);
  out.text = std::string(rest);
  return out;
}

}  // namespace promptvar::meta_prompts
