#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "promptvar/error.hpp"
#include "promptvar/meta_prompts.hpp"
#include "promptvar/provider.hpp"
#include "promptvar/text.hpp"

namespace promptvar {

// Items of lines starting with "<k>." or "<k>)", k strictly ascending.
// Other lines are ignored.
inline std::vector<std::string> parse_numbered_list(std::string_view response) {
  std::vector<std::string> items;
  long last = 0;
  for (auto line : text::lines(response)) {
    line = text::trim(line);
    std::size_t i = 0;
    long k = 0;
    while (i < line.size() && text::is_digit(line[i]) && i < 9) k = k * 10 + (line[i++] - '0');
    if (i == 0 || i >= line.size() || (line[i] != '.' && line[i] != ')')) continue;
    if (k <= last) continue;
    const auto item = text::trim(line.substr(i + 1));
    if (item.empty()) continue;
    items.emplace_back(item);
    last = k;
  }
  if (items.empty()) throw ParseError("no numbered items found in model response");
  return items;
}

inline std::string normalize_for_comparison(std::string_view s) { return text::collapse_whitespace(text::trim(s)); }

// ---------------------------------------------------------------------------
// Paraphrase
// ---------------------------------------------------------------------------

struct ParaphraseOptions {
  // Total requests, including the first one.
  int max_attempts = 3;
  double temperature = 1.0;
};

struct ParaphraseSet {
  std::string original;
  std::vector<std::string> variants;
  std::string model_id;
  bool partial = false;
  std::string warning;
  std::vector<std::string> meta_prompts;
  int attempts = 0;
};

inline CompletionRequest perturbation_request(const ProviderClient& client, std::string prompt, double temperature,
                                              std::string tag) {
  auto req = client.request(std::move(prompt), std::move(tag));
  req.config.temperature = temperature;
  return req;
}

inline ParaphraseSet paraphrase_instruction(const std::string& instruction, std::size_t n, ProviderClient& client,
                                            const ParaphraseOptions& opts = {}) {
  if (n == 0) throw ConfigError("paraphrase count must be >= 1");
  if (text::trim(instruction).empty()) throw ConfigError("cannot paraphrase an empty instruction");
  ParaphraseSet out;
  out.original = instruction;
  out.model_id = client.model_id();
  std::set<std::string> seen{normalize_for_comparison(instruction)};
  for (int attempt = 1; attempt <= opts.max_attempts && out.variants.size() < n; ++attempt) {
    const auto want = n - out.variants.size();
    auto prompt = meta_prompts::paraphrase_prompt(instruction, want, static_cast<std::size_t>(attempt));
    out.meta_prompts.push_back(prompt);
    out.attempts = attempt;
    const auto resp = client.cached_complete(
        perturbation_request(client, std::move(prompt), opts.temperature, "paraphrase#" + std::to_string(attempt)));
    std::vector<std::string> items;
    try {
      items = parse_numbered_list(resp.text);
    } catch (const ParseError&) {
      continue;
    }
    for (auto& item : items) {
      if (out.variants.size() >= n) break;
      if (!seen.insert(normalize_for_comparison(item)).second) continue;
      out.variants.push_back(std::move(item));
    }
  }
  if (out.variants.size() < n) {
    out.partial = true;
    out.warning = "paraphrase: obtained " + std::to_string(out.variants.size()) + " of " + std::to_string(n) +
                  " distinct variants after " + std::to_string(out.attempts) + " request(s)";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Context addition
// ---------------------------------------------------------------------------

enum class ContextPosition { before, after };

inline ContextPosition parse_context_position(std::string_view s) {
  if (text::iequals(s, "before")) return ContextPosition::before;
  if (text::iequals(s, "after")) return ContextPosition::after;
  throw ConfigError("context position must be 'before' or 'after', got '" + std::string(s) + "'");
}

inline std::string to_string(ContextPosition p) { return p == ContextPosition::before ? "before" : "after"; }

struct ContextOptions {
  int max_retries = 3;
  ContextPosition position = ContextPosition::before;
  double temperature = 1.0;
  // Distinguishes several context variants of the same text.
  std::size_t variation = 1;
};

struct ContextAugmentation {
  std::string original;
  std::string augmented;
  std::size_t span_begin = 0;
  std::size_t span_end = 0;
  std::string meta_prompt;

  std::string inserted() const { return augmented.substr(span_begin, span_end - span_begin); }
  std::string remove_inserted() const {
    return augmented.substr(0, span_begin) + augmented.substr(span_end);
  }
};

struct ContextOutcome {
  std::optional<ContextAugmentation> augmentation;
  std::string warning;
  int attempts = 0;
  std::vector<std::string> rejected;
};

// True when the inserted text would reveal the gold answer.
inline bool leaks_answer(std::string_view inserted, std::string_view instance_text, std::string_view gold) {
  const auto g = text::trim(gold);
  if (g.empty()) return false;
  if (text::icontains(instance_text, g)) return false;
  return text::icontains(inserted, g);
}

inline ContextOutcome add_context(const std::string& instance_text, const std::string& gold_answer,
                                  ProviderClient& client, const ContextOptions& opts = {}) {
  if (instance_text.empty()) throw ConfigError("context addition needs non-empty instance text");
  if (opts.max_retries < 0) throw ConfigError("max_retries must be >= 0");
  ContextOutcome out;
  for (int attempt = 1; attempt <= opts.max_retries + 1; ++attempt) {
    out.attempts = attempt;
    auto prompt = meta_prompts::context_prompt(instance_text, opts.variation, static_cast<std::size_t>(attempt));
    const auto resp = client.cached_complete(
        perturbation_request(client, prompt, opts.temperature, "context#" + std::to_string(attempt)));
    const auto filler = text::collapse_whitespace(text::trim(resp.text));
    if (filler.empty() || leaks_answer(filler, instance_text, gold_answer)) {
      out.rejected.push_back(filler);
      continue;
    }
    ContextAugmentation aug;
    aug.original = instance_text;
    aug.meta_prompt = std::move(prompt);
    if (opts.position == ContextPosition::before) {
      aug.augmented = filler + "\n" + instance_text;
      aug.span_begin = 0;
      aug.span_end = filler.size() + 1;
    } else {
      aug.augmented = instance_text + "\n" + filler;
      aug.span_begin = instance_text.size();
      aug.span_end = aug.augmented.size();
    }
    out.augmentation = std::move(aug);
    return out;
  }
  out.warning = "context addition skipped: no acceptable insertion after " + std::to_string(out.attempts) +
                " attempt(s)";
  return out;
}

}  // namespace promptvar
