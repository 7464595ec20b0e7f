#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "promptvar/dataset.hpp"
#include "promptvar/error.hpp"
#include "promptvar/text.hpp"

namespace promptvar {

// ---------------------------------------------------------------------------
// Components and perturbation kinds
// ---------------------------------------------------------------------------

enum class ComponentKind { instruction, prompt_format, demonstrations, instance_content, column };

struct Component {
  ComponentKind kind = ComponentKind::instruction;
  std::string column;  // only for ComponentKind::column

  static Component of(ComponentKind k) { return Component{k, {}}; }
  static Component of_column(std::string name) { return Component{ComponentKind::column, std::move(name)}; }

  std::string str() const {
    switch (kind) {
      case ComponentKind::instruction: return "instruction";
      case ComponentKind::prompt_format: return "prompt-format";
      case ComponentKind::demonstrations: return "demonstrations";
      case ComponentKind::instance_content: return "instance-content";
      case ComponentKind::column: return "column:" + column;
    }
    return {};
  }

  auto operator<=>(const Component&) const = default;
};

namespace detail {
// Lowercases and maps '_' and '-' to ' ', trimming the ends.
inline std::string normalize_name(std::string_view s) {
  std::string out;
  for (char c : text::trim(s)) out.push_back(c == '_' || c == '-' ? ' ' : text::to_lower(c));
  return text::collapse_whitespace(out);
}
}  // namespace detail

inline std::optional<Component> parse_component(std::string_view name) {
  if (text::lower(name).rfind("column:", 0) == 0) {
    auto col = std::string(name.substr(7));
    if (col.empty()) return std::nullopt;
    return Component::of_column(col);
  }
  const auto n = detail::normalize_name(name);
  if (n == "instruction") return Component::of(ComponentKind::instruction);
  if (n == "prompt format") return Component::of(ComponentKind::prompt_format);
  if (n == "demonstrations" || n == "demonstration" || n == "few shot") return Component::of(ComponentKind::demonstrations);
  if (n == "instance content" || n == "instance") return Component::of(ComponentKind::instance_content);
  return std::nullopt;
}

enum class PerturbationKind { formatting, paraphrase, context_addition, demonstration_editing, enumerate, shuffle };

inline std::string to_string(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::formatting: return "formatting";
    case PerturbationKind::paraphrase: return "paraphrase";
    case PerturbationKind::context_addition: return "context-addition";
    case PerturbationKind::demonstration_editing: return "demonstration-editing";
    case PerturbationKind::enumerate: return "enumerate";
    case PerturbationKind::shuffle: return "shuffle";
  }
  return {};
}

// Resolves a perturbation name case-insensitively. Accepts the canonical kind
// names plus the long-form names used in configuration files, e.g.
// "paraphrase_with_llm" and "format structure".
inline std::optional<PerturbationKind> resolve_perturbation(std::string_view name) {
  static const std::map<std::string, PerturbationKind> kAliases = {
      {"formatting", PerturbationKind::formatting},
      {"format structure", PerturbationKind::formatting},
      {"format", PerturbationKind::formatting},
      {"surface noise", PerturbationKind::formatting},
      {"typos and noise", PerturbationKind::formatting},
      {"paraphrase", PerturbationKind::paraphrase},
      {"paraphrase with llm", PerturbationKind::paraphrase},
      {"context addition", PerturbationKind::context_addition},
      {"context", PerturbationKind::context_addition},
      {"demonstration editing", PerturbationKind::demonstration_editing},
      {"demonstrations editing", PerturbationKind::demonstration_editing},
      {"demo editing", PerturbationKind::demonstration_editing},
      {"enumerate", PerturbationKind::enumerate},
      {"shuffle", PerturbationKind::shuffle},
  };
  const auto it = kAliases.find(detail::normalize_name(name));
  if (it == kAliases.end()) return std::nullopt;
  return it->second;
}

// Table of which kinds may target which components.
inline bool is_applicable(PerturbationKind kind, const Component& c) {
  switch (kind) {
    case PerturbationKind::formatting: return true;
    case PerturbationKind::paraphrase: return c.kind == ComponentKind::instruction;
    case PerturbationKind::context_addition:
      return c.kind == ComponentKind::instance_content || c.kind == ComponentKind::column;
    case PerturbationKind::demonstration_editing: return c.kind == ComponentKind::demonstrations;
    case PerturbationKind::enumerate:
    case PerturbationKind::shuffle: return c.kind == ComponentKind::column;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Template types
// ---------------------------------------------------------------------------

enum class GoldMode { value, index };

struct GoldSpec {
  std::string field;
  GoldMode mode = GoldMode::value;
  // List column the gold designates an item of; empty when not applicable.
  std::string options_field;
};

enum class DemoOrdering { as_sampled, shuffled };

struct FewShotConfig {
  std::size_t count = 0;
  DemoOrdering ordering = DemoOrdering::as_sampled;
  std::uint64_t seed = 0;
};

enum class EnumerationStyle { decimal, upper_alpha, lower_alpha };

inline std::string to_string(EnumerationStyle s) {
  switch (s) {
    case EnumerationStyle::decimal: return "decimal";
    case EnumerationStyle::upper_alpha: return "upper-alpha";
    case EnumerationStyle::lower_alpha: return "lower-alpha";
  }
  return {};
}

// Accepts the style names plus the label forms "1", "A" and "a" (case matters
// for the single-letter forms).
inline EnumerationStyle parse_enumeration_style(std::string_view s) {
  if (s == "1" || s == "1234") return EnumerationStyle::decimal;
  if (s == "A" || s == "ABCD") return EnumerationStyle::upper_alpha;
  if (s == "a" || s == "abcd") return EnumerationStyle::lower_alpha;
  const auto n = detail::normalize_name(s);
  if (n == "decimal" || n == "numbers") return EnumerationStyle::decimal;
  if (n == "upper alpha" || n == "upper") return EnumerationStyle::upper_alpha;
  if (n == "lower alpha" || n == "lower") return EnumerationStyle::lower_alpha;
  throw ConfigError("unknown enumeration style '" + std::string(s) + "'");
}

struct ListFieldConfig {
  std::string delimiter = ",";
  // Joiner used when a perturbed list is written back into the prompt.
  std::string join = ", ";
  // Enumeration applied to every rendering of the list, baseline included.
  std::optional<EnumerationStyle> enumerate;
  std::string label_separator = ". ";
};

struct PerturbationSpec {
  Component component;
  PerturbationKind kind = PerturbationKind::formatting;
  nlohmann::json params = nlohmann::json::object();
  // Requested number of variants; capped by variations_per_field at generation.
  std::optional<std::size_t> count;

  std::string axis() const { return component.str() + "/" + to_string(kind); }
};

struct PromptTemplate {
  std::string instruction;
  std::string prompt_format;
  std::optional<GoldSpec> gold;
  std::optional<FewShotConfig> few_shot;
  std::vector<PerturbationSpec> perturbations;
  std::map<std::string, ListFieldConfig> list_fields;
  std::string separator = "\n\n";
};

// ---------------------------------------------------------------------------
// Placeholder syntax
// ---------------------------------------------------------------------------

struct FormatToken {
  enum class Kind { literal, escaped_brace, placeholder };
  Kind kind = Kind::literal;
  // Literal text (escaped braces already resolved) or placeholder name.
  std::string text;
  // Byte range in the source format text, braces included.
  std::size_t src_begin = 0;
  std::size_t src_end = 0;
};

// Splits format text into literal runs, escaped braces ({{ / }}) and
// {name} placeholders.
inline std::vector<FormatToken> tokenize_format(std::string_view fmt) {
  std::vector<FormatToken> tokens;
  std::size_t lit_begin = 0;
  auto flush = [&](std::size_t end) {
    if (end > lit_begin)
      tokens.push_back({FormatToken::Kind::literal, std::string(fmt.substr(lit_begin, end - lit_begin)), lit_begin, end});
  };
  std::size_t i = 0;
  while (i < fmt.size()) {
    const char c = fmt[i];
    if (c == '{' || c == '}') {
      if (i + 1 < fmt.size() && fmt[i + 1] == c) {
        flush(i);
        tokens.push_back({FormatToken::Kind::escaped_brace, std::string(1, c), i, i + 2});
        i += 2;
        lit_begin = i;
        continue;
      }
      if (c == '}') throw ParseError("unbalanced braces: unmatched '}' at offset " + std::to_string(i));
      const auto close = fmt.find_first_of("{}", i + 1);
      if (close == std::string_view::npos || fmt[close] == '{')
        throw ParseError("unbalanced braces: unclosed '{' at offset " + std::to_string(i));
      const auto name = fmt.substr(i + 1, close - i - 1);
      if (text::trim(name).empty()) throw ParseError("empty placeholder name at offset " + std::to_string(i));
      flush(i);
      tokens.push_back({FormatToken::Kind::placeholder, std::string(name), i, close + 1});
      i = close + 1;
      lit_begin = i;
      continue;
    }
    ++i;
  }
  flush(fmt.size());
  return tokens;
}

// Placeholder names in first-occurrence order, duplicates preserved.
inline std::vector<std::string> extract_placeholders(std::string_view format_text) {
  std::vector<std::string> names;
  for (auto& t : tokenize_format(format_text))
    if (t.kind == FormatToken::Kind::placeholder) names.push_back(std::move(t.text));
  return names;
}

// Source byte ranges of every placeholder, braces included.
inline std::vector<std::pair<std::size_t, std::size_t>> placeholder_spans(std::string_view format_text) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::vector<FormatToken> tokens;
  try {
    tokens = tokenize_format(format_text);
  } catch (const ParseError&) {
    return spans;
  }
  for (const auto& t : tokens)
    if (t.kind == FormatToken::Kind::placeholder) spans.emplace_back(t.src_begin, t.src_end);
  return spans;
}

inline std::vector<std::string> unique_placeholders(const PromptTemplate& t) {
  std::vector<std::string> out;
  for (auto& n : extract_placeholders(t.prompt_format))
    if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(std::move(n));
  return out;
}

// ---------------------------------------------------------------------------
// parse_template
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t json_count(const nlohmann::json& v, const std::string& what) {
  if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(what + " must be a non-negative integer");
  return v.get<std::size_t>();
}

inline GoldSpec parse_gold(const nlohmann::json& v) {
  GoldSpec g;
  if (v.is_string()) {
    g.field = v.get<std::string>();
    return g;
  }
  if (!v.is_object()) throw ConfigError("'gold' must be a column name or an object");
  for (auto it = v.begin(); it != v.end(); ++it) {
    const auto key = normalize_name(it.key());
    if (key == "field") {
      g.field = it.value().get<std::string>();
    } else if (key == "mode" || key == "type") {
      const auto mode = normalize_name(it.value().get<std::string>());
      if (mode == "value") g.mode = GoldMode::value;
      else if (mode == "index") g.mode = GoldMode::index;
      else throw ConfigError("gold mode must be 'value' or 'index'");
    } else if (key == "options field") {
      g.options_field = it.value().get<std::string>();
    } else {
      throw ConfigError("unknown key in 'gold': '" + it.key() + "'");
    }
  }
  if (g.field.empty()) throw ConfigError("'gold' requires a 'field'");
  return g;
}

inline FewShotConfig parse_few_shot(const nlohmann::json& v) {
  FewShotConfig f;
  if (v.is_number_integer()) {
    f.count = json_count(v, "'few shot'");
    return f;
  }
  if (!v.is_object()) throw ConfigError("'few shot' must be a count or an object");
  for (auto it = v.begin(); it != v.end(); ++it) {
    const auto key = normalize_name(it.key());
    if (key == "count") {
      f.count = json_count(it.value(), "few shot count");
    } else if (key == "ordering" || key == "order") {
      const auto o = normalize_name(it.value().get<std::string>());
      if (o == "as sampled" || o == "fixed") f.ordering = DemoOrdering::as_sampled;
      else if (o == "shuffled" || o == "shuffle" || o == "random") f.ordering = DemoOrdering::shuffled;
      else throw ConfigError("few shot ordering must be 'as-sampled' or 'shuffled'");
    } else if (key == "seed") {
      f.seed = it.value().get<std::uint64_t>();
    } else if (key == "pool") {
      if (normalize_name(it.value().get<std::string>()) != "same table")
        throw ConfigError("few shot pool must be 'same-table'");
    } else {
      throw ConfigError("unknown key in 'few shot': '" + it.key() + "'");
    }
  }
  return f;
}

inline ListFieldConfig parse_list_field(const nlohmann::json& v, const std::string& name) {
  ListFieldConfig cfg;
  if (v.is_string()) {
    cfg.delimiter = v.get<std::string>();
  } else if (v.is_object()) {
    for (auto it = v.begin(); it != v.end(); ++it) {
      const auto key = normalize_name(it.key());
      if (key == "delimiter") cfg.delimiter = it.value().get<std::string>();
      else if (key == "join") cfg.join = it.value().get<std::string>();
      else if (key == "enumerate") cfg.enumerate = parse_enumeration_style(it.value().get<std::string>());
      else if (key == "label separator" || key == "separator") cfg.label_separator = it.value().get<std::string>();
      else throw ConfigError("unknown key in list field '" + name + "': '" + it.key() + "'");
    }
  } else {
    throw ConfigError("list field '" + name + "' must be a delimiter string or an object");
  }
  if (cfg.delimiter.empty()) throw ConfigError("list field '" + name + "' has an empty delimiter");
  return cfg;
}

inline PerturbationSpec parse_variation_entry(const nlohmann::json& entry, const Component& component) {
  PerturbationSpec spec;
  spec.component = component;
  std::string name;
  if (entry.is_string()) {
    name = entry.get<std::string>();
  } else if (entry.is_object()) {
    for (auto it = entry.begin(); it != entry.end(); ++it) {
      const auto key = normalize_name(it.key());
      if (key == "kind" || key == "type" || key == "name") name = it.value().get<std::string>();
      else if (key == "count") spec.count = json_count(it.value(), "variation count");
      else if (key == "params" && it.value().is_object()) spec.params.update(it.value());
      else spec.params[it.key()] = it.value();
    }
  } else {
    throw ConfigError("variation entries must be names or objects");
  }
  const auto kind = resolve_perturbation(name);
  if (!kind) throw ConfigError("unknown perturbation kind '" + name + "'");
  spec.kind = *kind;
  if (spec.count && *spec.count == 0) throw ConfigError("variation count must be positive");
  if (!is_applicable(spec.kind, component))
    throw ConfigError("perturbation '" + to_string(spec.kind) + "' is not applicable to component '" +
                      component.str() + "'");
  return spec;
}

}  // namespace detail

// Parses and validates a template configuration. Keys follow the
// space-separated vocabulary ("prompt format", "instruction variations");
// underscore and hyphen spellings are accepted as aliases.
inline PromptTemplate parse_template(const nlohmann::json& raw) {
  if (!raw.is_object()) throw ConfigError("template configuration must be a JSON object");
  PromptTemplate t;
  bool have_instruction = false;
  bool have_format = false;
  std::vector<std::pair<std::string, nlohmann::json>> variation_keys;

  for (auto it = raw.begin(); it != raw.end(); ++it) {
    const auto key = detail::normalize_name(it.key());
    const auto& v = it.value();
    if (key == "instruction") {
      if (!v.is_string()) throw ConfigError("'instruction' must be text");
      t.instruction = v.get<std::string>();
      have_instruction = true;
    } else if (key == "prompt format") {
      if (!v.is_string()) throw ConfigError("'prompt format' must be text");
      t.prompt_format = v.get<std::string>();
      have_format = true;
    } else if (key == "gold") {
      t.gold = detail::parse_gold(v);
    } else if (key == "few shot") {
      t.few_shot = detail::parse_few_shot(v);
    } else if (key == "list fields") {
      if (!v.is_object()) throw ConfigError("'list fields' must be an object");
      for (auto f = v.begin(); f != v.end(); ++f) t.list_fields[f.key()] = detail::parse_list_field(f.value(), f.key());
    } else if (key == "separator") {
      t.separator = v.get<std::string>();
    } else if (text::ends_with(key, " variations")) {
      // Keep the original spelling of the prefix: it may be a column name.
      const std::string& k = it.key();
      variation_keys.emplace_back(k.substr(0, k.size() - std::string_view(" variations").size()), v);
    } else {
      throw ConfigError("unknown template key '" + it.key() + "'");
    }
  }

  if (!have_format) throw ConfigError("missing mandatory key 'prompt format'");
  const auto placeholders = extract_placeholders(t.prompt_format);  // throws on bad syntax
  if (!have_instruction) throw ConfigError("missing mandatory key 'instruction'");
  if (placeholders.empty()) throw ConfigError("'prompt format' must contain at least one placeholder");
  const std::set<std::string> names(placeholders.begin(), placeholders.end());

  if (t.gold) {
    if (!names.count(t.gold->field))
      throw ConfigError("gold field '" + t.gold->field + "' is not a placeholder in the prompt format");
    if (t.gold->options_field.empty() && t.list_fields.size() == 1) t.gold->options_field = t.list_fields.begin()->first;
    if (!t.gold->options_field.empty() && !t.list_fields.count(t.gold->options_field))
      throw ConfigError("gold options field '" + t.gold->options_field + "' is not declared in 'list fields'");
  }
  for (const auto& [name, _] : t.list_fields)
    if (!names.count(name)) throw ConfigError("list field '" + name + "' is not a placeholder in the prompt format");

  for (const auto& [prefix, value] : variation_keys) {
    std::optional<Component> component = parse_component(prefix);
    if (!component) {
      const std::string col = std::string(text::trim(prefix));
      if (!names.count(col)) throw ConfigError("unknown template key '" + prefix + " variations'");
      component = Component::of_column(col);
    }
    if (component->kind == ComponentKind::column && !names.count(component->column))
      throw ConfigError("column '" + component->column + "' is not a placeholder in the prompt format");
    const auto entries = value.is_array() ? value : nlohmann::json::array({value});
    for (const auto& e : entries) {
      auto spec = detail::parse_variation_entry(e, *component);
      const bool list_kind = spec.kind == PerturbationKind::enumerate || spec.kind == PerturbationKind::shuffle;
      if (list_kind && !t.list_fields.count(spec.component.column))
        throw ConfigError("perturbation '" + to_string(spec.kind) + "' requires '" + spec.component.column +
                          "' to be declared in 'list fields'");
      if (spec.component.kind == ComponentKind::column && t.gold && spec.component.column == t.gold->field)
        throw ConfigError("the gold field '" + t.gold->field + "' cannot be perturbed");
      if (spec.kind == PerturbationKind::demonstration_editing && !t.few_shot)
        throw ConfigError("demonstration editing requires a 'few shot' configuration");
      for (const auto& existing : t.perturbations)
        if (existing.component == spec.component && existing.kind == spec.kind)
          throw ConfigError("duplicate perturbation '" + to_string(spec.kind) + "' on component '" +
                            spec.component.str() + "'");
      t.perturbations.push_back(std::move(spec));
    }
  }

  if (t.gold) {
    // Truncation at the gold slot must not orphan later placeholders.
    const auto first = std::find(placeholders.begin(), placeholders.end(), t.gold->field);
    for (auto it = first + 1; it != placeholders.end(); ++it)
      if (*it != t.gold->field)
        throw ConfigError("placeholder '" + *it + "' follows the gold placeholder and would be dropped from the target");
  }
  return t;
}

// Serializes a template back into its configuration form.
inline nlohmann::ordered_json template_to_json(const PromptTemplate& t) {
  nlohmann::ordered_json j;
  j["instruction"] = t.instruction;
  j["prompt format"] = t.prompt_format;
  if (t.separator != "\n\n") j["separator"] = t.separator;
  if (t.gold) {
    j["gold"] = {{"field", t.gold->field}, {"mode", t.gold->mode == GoldMode::index ? "index" : "value"}};
    if (!t.gold->options_field.empty()) j["gold"]["options field"] = t.gold->options_field;
  }
  if (t.few_shot) {
    j["few shot"] = {{"count", t.few_shot->count},
                     {"ordering", t.few_shot->ordering == DemoOrdering::shuffled ? "shuffled" : "as-sampled"},
                     {"seed", t.few_shot->seed}};
  }
  if (!t.list_fields.empty()) {
    nlohmann::ordered_json lf = nlohmann::ordered_json::object();
    for (const auto& [name, cfg] : t.list_fields) {
      nlohmann::ordered_json c = {{"delimiter", cfg.delimiter}, {"join", cfg.join}};
      if (cfg.enumerate) c["enumerate"] = to_string(*cfg.enumerate);
      c["label separator"] = cfg.label_separator;
      lf[name] = c;
    }
    j["list fields"] = lf;
  }
  std::map<std::string, nlohmann::ordered_json> by_component;
  std::vector<std::string> order;
  for (const auto& p : t.perturbations) {
    const auto key = p.component.kind == ComponentKind::column ? p.component.column : p.component.str();
    if (!by_component.count(key)) order.push_back(key);
    nlohmann::ordered_json e = {{"kind", to_string(p.kind)}};
    if (p.count) e["count"] = *p.count;
    for (auto it = p.params.begin(); it != p.params.end(); ++it) e[it.key()] = it.value();
    by_component[key].push_back(e);
  }
  for (const auto& k : order) j[k + " variations"] = by_component[k];
  return j;
}

// Checks every placeholder against a table's columns.
inline ValidationReport validate_template(const PromptTemplate& t, const DatasetTable& table) {
  return validate_columns(table, unique_placeholders(t));
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

// One contiguous piece of a rendered prompt and where it came from.
struct RenderSegment {
  enum class Role { instruction, separator, format_literal, value };
  Role role = Role::format_literal;
  std::size_t out_begin = 0;
  std::size_t out_end = 0;
  // instruction: offset into the instruction text; format_literal: offset
  // into the format text (escaped braces are not mapped).
  std::size_t src_begin = 0;
  // Block index: 0..demos-1 for demonstrations, demos for the target.
  std::size_t block = 0;
  std::string field;
};

struct RenderTrace {
  std::string prompt;
  std::string gold;
  std::vector<RenderSegment> segments;
  // [begin, end) of each demonstration block, then the target block.
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
};

struct RenderedPrompt {
  std::string prompt;
  std::string gold;
};

// Renders instruction, demonstrations (format filled completely) and the
// target (format truncated right before the gold placeholder), joined by the
// template's separator. Pure function of its arguments.
inline RenderTrace render_traced(const PromptTemplate& t, std::string_view instruction_variant,
                                 std::string_view format_variant, const std::vector<Record>& demos,
                                 const Record& target) {
  using Role = RenderSegment::Role;
  const auto tokens = tokenize_format(format_variant);
  const std::string* gold_field = t.gold ? &t.gold->field : nullptr;
  if (gold_field) {
    const bool present = std::any_of(tokens.begin(), tokens.end(), [&](const FormatToken& tok) {
      return tok.kind == FormatToken::Kind::placeholder && tok.text == *gold_field;
    });
    if (!present) throw ConfigError("gold placeholder '{" + *gold_field + "}' is missing from the prompt format");
  }

  RenderTrace trace;
  auto append = [&](std::string_view s, Role role, std::size_t src, std::size_t block, const std::string& field) {
    if (s.empty()) return;
    RenderSegment seg;
    seg.role = role;
    seg.out_begin = trace.prompt.size();
    trace.prompt += s;
    seg.out_end = trace.prompt.size();
    seg.src_begin = src;
    seg.block = block;
    seg.field = field;
    trace.segments.push_back(std::move(seg));
  };

  auto render_block = [&](const Record& rec, std::size_t block, bool is_target) {
    const auto begin = trace.prompt.size();
    for (const auto& tok : tokens) {
      if (tok.kind == FormatToken::Kind::placeholder) {
        if (is_target && gold_field && tok.text == *gold_field) break;
        const auto it = rec.values.find(tok.text);
        if (it == rec.values.end())
          throw ConfigError("placeholder '{" + tok.text + "}' cannot be bound from row " + std::to_string(rec.row_index));
        append(it->second, Role::value, 0, block, tok.text);
      } else if (tok.kind == FormatToken::Kind::escaped_brace) {
        append(tok.text, Role::separator, 0, block, {});
      } else {
        append(tok.text, Role::format_literal, tok.src_begin, block, {});
      }
    }
    trace.blocks.emplace_back(begin, trace.prompt.size());
  };

  if (!instruction_variant.empty()) append(instruction_variant, Role::instruction, 0, 0, {});
  for (std::size_t d = 0; d < demos.size(); ++d) {
    if (!trace.prompt.empty()) append(t.separator, Role::separator, 0, d, {});
    render_block(demos[d], d, false);
  }
  if (!trace.prompt.empty()) append(t.separator, Role::separator, 0, demos.size(), {});
  render_block(target, demos.size(), true);
  if (gold_field) trace.gold = target.at(*gold_field);
  return trace;
}

inline RenderedPrompt render_prompt(const PromptTemplate& t, std::string_view instruction_variant,
                                    std::string_view format_variant, const std::vector<Record>& demos,
                                    const Record& target) {
  auto trace = render_traced(t, instruction_variant, format_variant, demos, target);
  return {std::move(trace.prompt), std::move(trace.gold)};
}

}  // namespace promptvar
