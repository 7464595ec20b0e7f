#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <tuple>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "promptvar/dataset.hpp"
#include "promptvar/error.hpp"
#include "promptvar/llm_perturb.hpp"
#include "promptvar/meta_prompts.hpp"
#include "promptvar/provider.hpp"
#include "promptvar/random.hpp"
#include "promptvar/structural.hpp"
#include "promptvar/surface_noise.hpp"
#include "promptvar/template.hpp"
#include "promptvar/text.hpp"

namespace promptvar {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class SamplingMode { full_product, random_combinations };

inline std::string to_string(SamplingMode m) {
  return m == SamplingMode::full_product ? "full-product" : "random-combinations";
}

inline SamplingMode parse_sampling_mode(std::string_view s) {
  const auto n = detail::normalize_name(s);
  if (n == "full product" || n == "product" || n == "all") return SamplingMode::full_product;
  if (n == "random combinations" || n == "random" || n == "sample") return SamplingMode::random_combinations;
  throw ConfigError("unknown sampling mode '" + std::string(s) + "'");
}

struct GenerationConfig {
  std::size_t variations_per_field = 3;
  // Caps the number of records; whole row groups only.
  std::optional<std::size_t> max_rows;
  std::optional<std::size_t> max_variations_per_row;
  std::uint64_t seed = 0;
  SamplingMode sampling = SamplingMode::full_product;
  bool include_baseline = true;
  // Draw an independent tuple set for every row instead of one shared set.
  bool per_row_sampling = false;
  // Provider failures degrade the affected axis instead of aborting.
  bool skip_on_error = false;
};

inline void validate(const GenerationConfig& c) {
  if (c.variations_per_field == 0) throw ConfigError("variations_per_field must be >= 1");
  if (c.max_rows && *c.max_rows == 0) throw ConfigError("max_rows must be >= 1");
  if (c.max_variations_per_row && *c.max_variations_per_row == 0)
    throw ConfigError("max_variations_per_row must be >= 1");
  if (c.sampling == SamplingMode::random_combinations && !c.max_variations_per_row)
    throw ConfigError("random-combinations sampling requires max_variations_per_row");
}

inline GenerationConfig generation_config_from_json(const nlohmann::json& j, GenerationConfig base = {}) {
  if (j.is_null()) return base;
  if (!j.is_object()) throw ConfigError("generation configuration must be an object");
  auto positive = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_number_integer() || v.get<long long>() <= 0) throw ConfigError(key + " must be a positive integer");
    return static_cast<std::size_t>(v.get<long long>());
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto k = detail::normalize_name(it.key());
    const auto& v = it.value();
    if (k == "variations per field") base.variations_per_field = positive(v, it.key());
    else if (k == "max rows") base.max_rows = v.is_null() ? std::nullopt : std::optional(positive(v, it.key()));
    else if (k == "max variations per row")
      base.max_variations_per_row = v.is_null() ? std::nullopt : std::optional(positive(v, it.key()));
    else if (k == "seed" || k == "random seed") {
      if (!v.is_number_integer()) throw ConfigError("seed must be an integer");
      base.seed = v.is_number_unsigned() ? v.get<std::uint64_t>() : static_cast<std::uint64_t>(v.get<long long>());
    } else if (k == "sampling" || k == "mode") base.sampling = parse_sampling_mode(v.get<std::string>());
    else if (k == "include baseline") base.include_baseline = v.get<bool>();
    else if (k == "per row sampling") base.per_row_sampling = v.get<bool>();
    else if (k == "skip on error") base.skip_on_error = v.get<bool>();
    else throw ConfigError("unknown generation key '" + it.key() + "'");
  }
  validate(base);
  return base;
}

inline nlohmann::ordered_json to_json(const GenerationConfig& c) {
  nlohmann::ordered_json j;
  j["variations_per_field"] = c.variations_per_field;
  j["max_rows"] = c.max_rows ? nlohmann::ordered_json(*c.max_rows) : nlohmann::ordered_json();
  j["max_variations_per_row"] =
      c.max_variations_per_row ? nlohmann::ordered_json(*c.max_variations_per_row) : nlohmann::ordered_json();
  j["seed"] = c.seed;
  j["sampling"] = to_string(c.sampling);
  j["include_baseline"] = c.include_baseline;
  j["per_row_sampling"] = c.per_row_sampling;
  j["skip_on_error"] = c.skip_on_error;
  return j;
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

using VariantCoords = std::map<std::string, std::size_t>;

struct VariationRecord {
  std::size_t row_index = 0;
  VariantCoords variant_coords;
  std::string prompt;
  std::string gold;
  bool baseline = false;
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();

  bool operator==(const VariationRecord&) const = default;
};

struct GenerationResult {
  std::vector<VariationRecord> records;
  std::vector<std::string> warnings;
  nlohmann::ordered_json stats = nlohmann::ordered_json::object();

  std::size_t non_baseline_count() const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [](const VariationRecord& r) { return !r.baseline; }));
  }
};

inline bool coords_less(const VariantCoords& a, const VariantCoords& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first < y.first;
    return x.second < y.second;
  });
}

inline bool record_less(const VariationRecord& a, const VariationRecord& b) {
  if (a.row_index != b.row_index) return a.row_index < b.row_index;
  return coords_less(a.variant_coords, b.variant_coords);
}

inline nlohmann::ordered_json coords_to_json(const VariantCoords& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : c) j[k] = v;
  return j;
}

inline std::string coords_key(const VariantCoords& c) { return coords_to_json(c).dump(); }

inline nlohmann::ordered_json to_json(const VariationRecord& r) {
  nlohmann::ordered_json j;
  j["row_index"] = r.row_index;
  j["variant_coords"] = coords_to_json(r.variant_coords);
  j["prompt"] = r.prompt;
  j["gold"] = r.gold;
  j["baseline"] = r.baseline;
  j["provenance"] = r.provenance;
  return j;
}

inline VariationRecord record_from_json(const nlohmann::ordered_json& j) {
  try {
    VariationRecord r;
    r.row_index = j.at("row_index").get<std::size_t>();
    for (auto it = j.at("variant_coords").begin(); it != j.at("variant_coords").end(); ++it)
      r.variant_coords[it.key()] = it.value().get<std::size_t>();
    r.prompt = j.at("prompt").get<std::string>();
    r.gold = j.at("gold").get<std::string>();
    r.baseline = j.at("baseline").get<bool>();
    r.provenance = j.at("provenance");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed variation record: ") + e.what());
  }
}

enum class ExportFormat { json, csv };

inline ExportFormat parse_export_format(std::string_view s) {
  if (text::iequals(s, "json")) return ExportFormat::json;
  if (text::iequals(s, "csv")) return ExportFormat::csv;
  throw ConfigError("unknown export format '" + std::string(s) + "' (expected json or csv)");
}

inline std::string serialize_records(const std::vector<VariationRecord>& records, ExportFormat format) {
  if (format == ExportFormat::json) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : records) arr.push_back(to_json(r));
    return arr.dump(2) + "\n";
  }
  std::string out = "row_index,variant_coords,prompt,gold,baseline,provenance\n";
  for (const auto& r : records) {
    out += std::to_string(r.row_index) + ",";
    out += detail::csv_escape(coords_to_json(r.variant_coords).dump()) + ",";
    out += detail::csv_escape(r.prompt) + ",";
    out += detail::csv_escape(r.gold) + ",";
    out += std::string(r.baseline ? "true" : "false") + ",";
    out += detail::csv_escape(r.provenance.dump()) + "\n";
  }
  return out;
}

inline void export_records(const GenerationResult& result, ExportFormat format, const std::filesystem::path& dest) {
  write_file(dest, serialize_records(result.records, format));
}

inline std::vector<VariationRecord> parse_records_json(std::string_view content) {
  nlohmann::ordered_json arr;
  try {
    arr = nlohmann::ordered_json::parse(content);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid records JSON: ") + e.what());
  }
  if (!arr.is_array()) throw ParseError("records JSON must be an array");
  std::vector<VariationRecord> out;
  out.reserve(arr.size());
  for (const auto& j : arr) out.push_back(record_from_json(j));
  return out;
}

inline std::vector<VariationRecord> parse_records_csv(std::string_view content) {
  std::vector<std::size_t> lines;
  const auto rows = detail::parse_csv_records(content, lines);
  if (rows.empty()) throw ParseError("records CSV is empty");
  const std::vector<std::string> header = {"row_index", "variant_coords", "prompt", "gold", "baseline", "provenance"};
  if (rows[0] != header) throw ParseError("records CSV header does not match the export schema");
  std::vector<VariationRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& c = rows[i];
    if (c.size() != header.size()) throw ParseError("records CSV line " + std::to_string(lines[i]) + ": wrong field count");
    nlohmann::ordered_json j;
    try {
      j["row_index"] = std::stoull(c[0]);
      j["variant_coords"] = nlohmann::ordered_json::parse(c[1]);
      j["prompt"] = c[2];
      j["gold"] = c[3];
      j["baseline"] = c[4] == "true";
      j["provenance"] = nlohmann::ordered_json::parse(c[5]);
    } catch (const std::exception& e) {
      throw ParseError("records CSV line " + std::to_string(lines[i]) + ": " + e.what());
    }
    out.push_back(record_from_json(j));
  }
  return out;
}

inline std::vector<VariationRecord> load_records(const std::filesystem::path& path) {
  const auto content = read_file(path);
  const auto ext = text::lower(path.extension().string());
  if (ext == ".csv") return parse_records_csv(content);
  return parse_records_json(content);
}

// ---------------------------------------------------------------------------
// Span bookkeeping
// ---------------------------------------------------------------------------

struct TaggedSpan {
  std::string axis;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string op;
};

namespace detail {

// Maps an input position through an edit log to the output text. Spans
// expand to cover insertions at their boundaries.
inline std::size_t map_through(const EditLog& log, std::size_t pos, bool is_end) {
  std::ptrdiff_t delta = 0;
  for (const auto& e : log) {
    const auto growth =
        static_cast<std::ptrdiff_t>(e.replacement.size()) - static_cast<std::ptrdiff_t>(e.end - e.begin);
    if (e.begin < pos && pos < e.end)
      return static_cast<std::size_t>(static_cast<std::ptrdiff_t>(is_end ? e.end : e.begin) + delta +
                                      (is_end ? growth : 0));
    const bool before = is_end ? e.end <= pos : (e.begin < pos && e.end <= pos);
    if (!before) break;
    delta += growth;
  }
  return static_cast<std::size_t>(static_cast<std::ptrdiff_t>(pos) + delta);
}

// A piece of text together with the perturbation spans it carries.
struct TextUnit {
  std::string text;
  std::vector<TaggedSpan> spans;

  void replace(std::string next, const std::string& axis, const std::string& op) {
    text = std::move(next);
    for (auto& s : spans) s.begin = 0, s.end = text.size();
    if (!axis.empty()) spans.push_back({axis, 0, text.size(), op});
  }

  void noise(const NoiseResult& r, const std::string& axis) {
    for (auto& s : spans) {
      s.begin = map_through(r.log, s.begin, false);
      s.end = map_through(r.log, s.end, true);
    }
    text = r.text;
    for (const auto& [span, op] : output_spans(r.log)) spans.push_back({axis, span.begin, span.end, op});
  }

  void insert(std::size_t pos, const std::string& s, const std::string& axis, const std::string& op) {
    for (auto& sp : spans) {
      if (sp.begin >= pos) sp.begin += s.size();
      if (sp.end > pos || (sp.end == pos && sp.begin > pos)) sp.end += s.size();
    }
    text.insert(pos, s);
    spans.push_back({axis, pos, pos + s.size(), op});
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Component variants
// ---------------------------------------------------------------------------

// One non-identity choice on an axis. Row-independent axes fill the text
// fields; row-dependent ones are resolved per row at composition time.
struct AxisVariant {
  std::size_t index = 0;
  std::string text;  // paraphrase
  std::optional<std::uint64_t> noise_seed;
  std::optional<EnumerationStyle> style;
  std::string label_separator;
  std::size_t demo_count = 0;
};

struct Axis {
  PerturbationSpec spec;
  std::string name;
  std::vector<AxisVariant> variants;  // non-identity, index 1..k
  bool row_dependent = false;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

struct ComponentVariants {
  std::vector<Axis> axes;  // sorted by name
  std::vector<std::string> warnings;

  const Axis* find(const std::string& name) const {
    for (const auto& a : axes)
      if (a.name == name) return &a;
    return nullptr;
  }
};

inline NoiseConfig noise_config_from_params(const nlohmann::json& params, std::size_t variant, std::uint64_t seed) {
  NoiseConfig cfg;
  cfg.seed = seed;
  auto pick = [&](const nlohmann::json& v) -> std::string {
    if (v.is_array()) {
      if (v.empty()) throw ConfigError("formatting parameter lists must not be empty");
      return v.at((variant - 1) % v.size()).get<std::string>();
    }
    return v.get<std::string>();
  };
  for (auto it = params.begin(); it != params.end(); ++it) {
    const auto k = detail::normalize_name(it.key());
    const auto& v = it.value();
    try {
      if (k == "p space") cfg.p_space = v.get<double>();
      else if (k == "p typo") cfg.p_typo = v.get<double>();
      else if (k == "typo ops") {
        cfg.typo_ops.clear();
        if (v.is_string()) cfg.typo_ops.push_back(parse_typo_op(v.get<std::string>()));
        else
          for (const auto& o : v) cfg.typo_ops.push_back(parse_typo_op(o.get<std::string>()));
      } else if (k == "casing") {
        const auto s = pick(v);
        if (!s.empty() && !text::iequals(s, "none")) cfg.casing = parse_casing_mode(s);
      } else if (k == "punctuation") {
        const auto s = pick(v);
        if (!s.empty() && !text::iequals(s, "none")) cfg.punctuation = parse_punctuation_mode(s);
      } else if (k == "p label separator") cfg.p_label_separator = v.get<double>();
      else throw ConfigError("unknown formatting parameter '" + it.key() + "'");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("formatting parameter '" + it.key() + "' has the wrong type");
    }
  }
  validate(cfg);
  return cfg;
}

namespace detail {

inline constexpr int kSeedSearch = 64;

inline const std::vector<std::pair<EnumerationStyle, std::string>>& default_enumerations() {
  static const std::vector<std::pair<EnumerationStyle, std::string>> v = {
      {EnumerationStyle::upper_alpha, ". "}, {EnumerationStyle::decimal, ". "}, {EnumerationStyle::lower_alpha, ". "},
      {EnumerationStyle::upper_alpha, ") "}, {EnumerationStyle::decimal, ") "}, {EnumerationStyle::lower_alpha, ") "}};
  return v;
}

inline int kind_rank(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::paraphrase: return 0;
    case PerturbationKind::shuffle: return 1;
    case PerturbationKind::enumerate: return 2;
    case PerturbationKind::formatting: return 3;
    case PerturbationKind::context_addition: return 4;
    case PerturbationKind::demonstration_editing: return 5;
  }
  return 6;
}

inline std::size_t axis_count(const PerturbationSpec& spec, const GenerationConfig& cfg) {
  return std::min(spec.count.value_or(cfg.variations_per_field), cfg.variations_per_field);
}

// Finds seeds whose noise output differs from the input and from each other.
inline std::vector<std::uint64_t> distinct_noise_seeds(const std::string& base, const nlohmann::json& params,
                                                       std::size_t k, std::uint64_t root, const std::string& axis,
                                                       std::vector<std::string>& warnings) {
  std::vector<std::uint64_t> seeds;
  std::set<std::string> seen{base};
  for (std::size_t j = 1; j <= k; ++j) {
    std::optional<std::uint64_t> chosen;
    for (int attempt = 0; attempt < kSeedSearch && !chosen; ++attempt) {
      const auto s = derive_seed(root, axis, j, attempt);
      const auto out = apply_surface_noise(base, noise_config_from_params(params, j, s));
      if (seen.insert(out.text).second) chosen = s;
    }
    if (!chosen) {
      warnings.push_back(axis + ": variant " + std::to_string(j) + " could not be made distinct");
      chosen = derive_seed(root, axis, j, 0);
    }
    seeds.push_back(*chosen);
  }
  return seeds;
}

}  // namespace detail

struct EngineOptions {
  ProviderClient* provider = nullptr;
  std::function<void(std::size_t, std::size_t)> progress;
  std::function<void(const std::string&)> log;
};

// Builds the variant list of every perturbation axis. Index 0 (identity) is
// implicit; the returned lists hold the generated variants 1..k.
inline ComponentVariants generate_component_variants(const PromptTemplate& t, const DatasetTable& table,
                                                     const GenerationConfig& cfg, const EngineOptions& opts = {}) {
  validate(cfg);
  (void)table;
  ComponentVariants out;
  for (const auto& spec : t.perturbations) {
    Axis axis;
    axis.spec = spec;
    axis.name = spec.axis();
    const auto k = detail::axis_count(spec, cfg);
    const auto& params = spec.params.is_object() ? spec.params : nlohmann::json::object();
    switch (spec.kind) {
      case PerturbationKind::formatting: {
        const auto kind = spec.component.kind;
        if (kind == ComponentKind::instruction || kind == ComponentKind::prompt_format) {
          const auto& base = kind == ComponentKind::instruction ? t.instruction : t.prompt_format;
          const auto seeds = detail::distinct_noise_seeds(base, params, k, cfg.seed, axis.name, out.warnings);
          for (std::size_t j = 1; j <= k; ++j) {
            AxisVariant v;
            v.index = j;
            v.noise_seed = seeds[j - 1];
            axis.variants.push_back(v);
          }
        } else {
          noise_config_from_params(params, 1, 0);  // validates params up front
          axis.row_dependent = true;
          for (std::size_t j = 1; j <= k; ++j) axis.variants.push_back(AxisVariant{.index = j});
        }
        break;
      }
      case PerturbationKind::paraphrase: {
        if (!opts.provider) throw ConfigError("paraphrase requires a provider");
        ParaphraseOptions po;
        po.temperature = params.value("temperature", po.temperature);
        po.max_attempts = params.value("max_attempts", po.max_attempts);
        try {
          const auto set = paraphrase_instruction(t.instruction, k, *opts.provider, po);
          if (set.partial) out.warnings.push_back(axis.name + ": " + set.warning);
          for (std::size_t j = 0; j < set.variants.size(); ++j) {
            AxisVariant v;
            v.index = j + 1;
            v.text = set.variants[j];
            axis.variants.push_back(v);
          }
          axis.meta["model_id"] = set.model_id;
          axis.meta["meta_prompt_id"] = std::string(meta_prompts::kParaphraseId);
          axis.meta["meta_prompts"] = set.meta_prompts;
        } catch (const ProviderError& e) {
          if (!cfg.skip_on_error) throw;
          out.warnings.push_back(axis.name + ": provider failure, axis skipped: " + e.what());
        }
        break;
      }
      case PerturbationKind::context_addition: {
        if (!opts.provider) throw ConfigError("context addition requires a provider");
        axis.row_dependent = true;
        parse_context_position(params.value("position", std::string("before")));
        for (std::size_t j = 1; j <= k; ++j) axis.variants.push_back(AxisVariant{.index = j});
        axis.meta["meta_prompt_id"] = std::string(meta_prompts::kContextId);
        if (opts.provider) axis.meta["model_id"] = opts.provider->model_id();
        break;
      }
      case PerturbationKind::demonstration_editing: {
        if (!t.few_shot) throw ConfigError("demonstration editing requires a few-shot configuration");
        axis.row_dependent = true;
        std::vector<std::size_t> counts;
        if (params.contains("counts"))
          for (const auto& c : params.at("counts")) counts.push_back(c.get<std::size_t>());
        for (std::size_t j = 1; j <= k; ++j) {
          AxisVariant v;
          v.index = j;
          v.demo_count = counts.empty() ? t.few_shot->count : counts[(j - 1) % counts.size()];
          if (v.demo_count + 1 > table.size())
            throw ConfigError("demonstration editing needs " + std::to_string(v.demo_count) +
                              " demonstrations but the dataset has only " + std::to_string(table.size()) + " rows");
          axis.variants.push_back(v);
        }
        break;
      }
      case PerturbationKind::enumerate: {
        std::vector<std::pair<EnumerationStyle, std::string>> combos;
        if (params.contains("styles")) {
          std::vector<std::string> seps = {". "};
          if (params.contains("separators")) seps = params.at("separators").get<std::vector<std::string>>();
          for (const auto& sep : seps)
            for (const auto& s : params.at("styles")) combos.emplace_back(parse_enumeration_style(s.get<std::string>()), sep);
        } else {
          combos = detail::default_enumerations();
        }
        const auto& lf = t.list_fields.at(spec.component.column);
        if (lf.enumerate) {
          const std::pair<EnumerationStyle, std::string> fixed{*lf.enumerate, lf.label_separator};
          combos.erase(std::remove(combos.begin(), combos.end(), fixed), combos.end());
        }
        if (combos.empty()) throw ConfigError(axis.name + ": no enumeration styles available");
        if (k > combos.size())
          out.warnings.push_back(axis.name + ": only " + std::to_string(combos.size()) +
                                 " distinct enumeration styles; styles repeat");
        for (std::size_t j = 1; j <= k; ++j) {
          AxisVariant v;
          v.index = j;
          v.style = combos[(j - 1) % combos.size()].first;
          v.label_separator = combos[(j - 1) % combos.size()].second;
          axis.variants.push_back(v);
        }
        break;
      }
      case PerturbationKind::shuffle: {
        axis.row_dependent = true;
        for (std::size_t j = 1; j <= k; ++j) axis.variants.push_back(AxisVariant{.index = j});
        break;
      }
    }
    if (axis.variants.empty()) {
      out.warnings.push_back(axis.name + ": no variants produced; axis dropped");
      continue;
    }
    out.axes.push_back(std::move(axis));
  }
  std::sort(out.axes.begin(), out.axes.end(), [](const Axis& a, const Axis& b) { return a.name < b.name; });
  return out;
}

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

// Non-identity coordinate tuples for one row, sorted.
inline std::vector<std::vector<std::size_t>> choose_tuples(const std::vector<std::size_t>& sizes,
                                                           const GenerationConfig& cfg, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> tuples;
  if (sizes.empty()) return tuples;
  // Product size, saturating.
  unsigned long long total = 1;
  bool overflow = false;
  for (auto s : sizes) {
    if (s == 0) return tuples;
    if (total > (1ull << 62) / s) overflow = true;
    else total *= s;
  }
  auto decode = [&](unsigned long long idx) {
    std::vector<std::size_t> t(sizes.size());
    for (std::size_t i = sizes.size(); i-- > 0;) {
      t[i] = static_cast<std::size_t>(idx % sizes[i]) + 1;
      idx /= sizes[i];
    }
    return t;
  };
  if (cfg.sampling == SamplingMode::full_product) {
    if (overflow || total > 10'000'000ull)
      throw ConfigError("full product of " + (overflow ? std::string("> 2^62") : std::to_string(total)) +
                        " variations per row is too large; use random-combinations");
    for (unsigned long long i = 0; i < total; ++i) tuples.push_back(decode(i));
    return tuples;
  }
  const auto m = static_cast<unsigned long long>(*cfg.max_variations_per_row);
  if (!overflow && m > total)
    throw ConfigError("max_variations_per_row=" + std::to_string(m) + " exceeds the " + std::to_string(total) +
                      " available combinations");
  Rng rng(seed);
  std::vector<unsigned long long> picked;
  if (!overflow && total <= 1'000'000ull) {
    std::vector<unsigned long long> pool(total);
    for (unsigned long long i = 0; i < total; ++i) pool[i] = i;
    for (unsigned long long i = 0; i < m; ++i) {
      const auto j = i + rng.below(total - i);
      std::swap(pool[i], pool[j]);
    }
    picked.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
  } else {
    std::set<std::vector<std::size_t>> seen;
    while (seen.size() < m) {
      std::vector<std::size_t> t(sizes.size());
      for (std::size_t i = 0; i < sizes.size(); ++i) t[i] = static_cast<std::size_t>(rng.below(sizes[i])) + 1;
      seen.insert(std::move(t));
    }
    return {seen.begin(), seen.end()};
  }
  for (auto p : picked) tuples.push_back(decode(p));
  std::sort(tuples.begin(), tuples.end());
  return tuples;
}

struct CountPrediction {
  std::size_t per_row = 0;        // non-baseline records per row
  std::size_t rows = 0;           // dataset rows that fit under max_rows
  std::size_t baseline_per_row = 0;
  std::size_t total = 0;
};

inline CountPrediction predict_count_from_sizes(const std::vector<std::size_t>& sizes, std::size_t table_rows,
                                                const GenerationConfig& cfg) {
  CountPrediction p;
  std::size_t product = sizes.empty() ? 0 : 1;
  for (auto s : sizes) product *= s;
  p.per_row = cfg.sampling == SamplingMode::full_product ? product
                                                         : std::min(product, *cfg.max_variations_per_row);
  p.baseline_per_row = (cfg.include_baseline || p.per_row == 0) ? 1 : 0;
  const auto group = p.per_row + p.baseline_per_row;
  p.rows = cfg.max_rows ? std::min(table_rows, *cfg.max_rows / group) : table_rows;
  p.total = p.rows * group;
  return p;
}

// Expected output size without contacting any provider (assumes every axis
// yields its full variant count).
inline CountPrediction predict_count(const PromptTemplate& t, std::size_t table_rows, const GenerationConfig& cfg) {
  validate(cfg);
  std::vector<std::size_t> sizes;
  for (const auto& spec : t.perturbations) sizes.push_back(detail::axis_count(spec, cfg));
  return predict_count_from_sizes(sizes, table_rows, cfg);
}

namespace detail {

struct BlockState {
  Record record;                           // values after transformation
  std::map<std::string, TextUnit> fields;  // per placeholder
  std::optional<std::vector<std::size_t>> permutation;
  std::string gold_item;
  std::size_t n_options = 0;
};

struct ContextEntry {
  std::optional<ContextAugmentation> aug;
  std::string warning;
};

class Composer {
 public:
  Composer(const PromptTemplate& t, const DatasetTable& table, const GenerationConfig& cfg,
           const ComponentVariants& variants, const EngineOptions& opts)
      : t_(t), table_(table), cfg_(cfg), vars_(variants), opts_(opts) {
    for (const auto& name : unique_placeholders(t)) placeholders_.push_back(name);
    for (std::size_t i = 0; i < table.size(); ++i) position_[table.row(i).row_index] = i;
  }

  GenerationResult run() {
    GenerationResult result;
    result.warnings = vars_.warnings;
    std::vector<std::size_t> sizes;
    for (const auto& a : vars_.axes) sizes.push_back(a.variants.size());
    const auto prediction = predict_count_from_sizes(sizes, table_.size(), cfg_);
    if (cfg_.max_rows && prediction.rows < table_.size()) {
      if (prediction.rows == 0)
        result.warnings.push_back("max_rows=" + std::to_string(*cfg_.max_rows) + " is smaller than one row group of " +
                                  std::to_string(prediction.per_row + prediction.baseline_per_row) +
                                  " records; nothing generated");
      else
        result.warnings.push_back("max_rows keeps " + std::to_string(prediction.rows) + " of " +
                                  std::to_string(table_.size()) + " dataset rows");
    }
    const auto shared_tuples = choose_tuples(sizes, cfg_, derive_seed(cfg_.seed, "combinations"));
    prepare_contexts(prediction.rows, result.warnings);

    for (std::size_t r = 0; r < prediction.rows; ++r) {
      const auto& target = table_.row(r);
      const auto tuples = cfg_.per_row_sampling && cfg_.sampling == SamplingMode::random_combinations
                              ? choose_tuples(sizes, cfg_, derive_seed(cfg_.seed, "combinations", target.row_index))
                              : shared_tuples;
      if (prediction.baseline_per_row) result.records.push_back(render(r, std::vector<std::size_t>(sizes.size(), 0)));
      for (const auto& tuple : tuples) result.records.push_back(render(r, tuple));
      if (opts_.progress) opts_.progress(r + 1, prediction.rows);
    }
    std::stable_sort(result.records.begin(), result.records.end(), record_less);
    for (auto& [row, msgs] : context_warnings_)
      for (auto& m : msgs) result.warnings.push_back(m);

    auto& stats = result.stats;
    stats["rows"] = prediction.rows;
    stats["records"] = result.records.size();
    stats["baseline_records"] = result.records.size() - result.non_baseline_count();
    stats["non_baseline_records"] = result.non_baseline_count();
    stats["variations_per_row"] = prediction.per_row;
    nlohmann::ordered_json axes = nlohmann::ordered_json::object();
    for (const auto& a : vars_.axes)
      axes[a.name] = {{"component", a.spec.component.str()},
                      {"kind", to_string(a.spec.kind)},
                      {"variants", a.variants.size()}};
    stats["axes"] = axes;
    return result;
  }

 private:
  const Axis* axis_for(const Component& c, PerturbationKind k) const {
    for (const auto& a : vars_.axes)
      if (a.spec.component == c && a.spec.kind == k) return &a;
    return nullptr;
  }

  std::size_t coord_of(const std::vector<std::size_t>& tuple, const Axis* a) const {
    if (!a) return 0;
    return tuple[static_cast<std::size_t>(a - vars_.axes.data())];
  }

  const nlohmann::json& params(const Axis& a) const {
    static const nlohmann::json empty = nlohmann::json::object();
    return a.spec.params.is_object() ? a.spec.params : empty;
  }

  // Baseline target block text, the input for instance-content context.
  std::string target_block_text(std::size_t r) {
    const auto& rec = table_.row(r);
    const auto trace = render_traced(t_, "", t_.prompt_format, {}, base_block(rec).record);
    return trace.prompt;
  }

  std::string gold_for_leak_check(const Record& rec) const {
    if (!t_.gold) return {};
    const auto& g = rec.at(t_.gold->field);
    if (t_.gold->mode == GoldMode::index && !t_.gold->options_field.empty()) {
      try {
        const auto& lf = t_.list_fields.at(t_.gold->options_field);
        const auto items = split_list_cell(rec.at(t_.gold->options_field), lf.delimiter);
        return items.at(locate_gold(items, g, GoldMode::index));
      } catch (const std::exception&) {
        return g;
      }
    }
    return g;
  }

  void prepare_contexts(std::size_t rows, std::vector<std::string>& warnings) {
    std::vector<const Axis*> ctx_axes;
    for (const auto& a : vars_.axes)
      if (a.spec.kind == PerturbationKind::context_addition) ctx_axes.push_back(&a);
    if (ctx_axes.empty() || rows == 0) return;
    struct Job {
      const Axis* axis;
      std::size_t row;
      std::size_t variant;
    };
    std::vector<Job> jobs;
    for (const auto* a : ctx_axes)
      for (std::size_t r = 0; r < rows; ++r)
        for (const auto& v : a->variants) jobs.push_back({a, r, v.index});
    std::vector<ContextEntry> results(jobs.size());
    std::vector<std::string> errors(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) {
        const auto& job = jobs[i];
        const auto& rec = table_.row(job.row);
        const auto& p = params(*job.axis);
        ContextOptions co;
        co.position = parse_context_position(p.value("position", std::string("before")));
        co.max_retries = p.value("max_retries", co.max_retries);
        co.temperature = p.value("temperature", co.temperature);
        co.variation = job.variant;
        const auto input = job.axis->spec.component.kind == ComponentKind::column
                               ? rec.at(job.axis->spec.component.column)
                               : target_block_text(job.row);
        try {
          auto outcome = add_context(input, gold_for_leak_check(rec), *opts_.provider, co);
          results[i].aug = std::move(outcome.augmentation);
          if (!results[i].aug)
            results[i].warning = job.axis->name + " row " + std::to_string(rec.row_index) + " variant " +
                                 std::to_string(job.variant) + ": " + outcome.warning;
        } catch (const ProviderError& e) {
          errors[i] = e.what();
        } catch (const Error& e) {
          errors[i] = e.what();
        }
      }
    };
    const auto n_threads = std::max<std::size_t>(1, std::min(jobs.size(), opts_.provider->max_in_flight()));
    std::vector<std::thread> threads;
    for (std::size_t i = 1; i < n_threads; ++i) threads.emplace_back(worker);
    worker();
    for (auto& th : threads) th.join();
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const auto& job = jobs[i];
      if (!errors[i].empty()) {
        if (!cfg_.skip_on_error) throw ProviderError(ProviderErrorKind::permanent, job.axis->name + ": " + errors[i]);
        results[i].warning = job.axis->name + " row " + std::to_string(table_.row(job.row).row_index) +
                             " variant " + std::to_string(job.variant) + ": provider failure: " + errors[i];
      }
      if (!results[i].warning.empty()) context_warnings_[job.row].push_back(results[i].warning);
      contexts_[{job.axis->name, job.row, job.variant}] = std::move(results[i]);
    }
    (void)warnings;
  }

  // Unperturbed block: only the template's fixed list settings apply.
  BlockState base_block(const Record& rec) const { return transform(rec, {}, false, 0, 0); }

  // Applies list transforms, value noise and column context to one row.
  // `tuple` empty means baseline; `target_pos` is the target's table position.
  BlockState transform(const Record& rec, const std::vector<std::size_t>& tuple, bool is_target,
                       std::size_t target_pos, std::size_t demo_slot) const {
    BlockState st;
    st.record = rec;
    auto coord = [&](const Axis* a) { return tuple.empty() ? std::size_t{0} : coord_of(tuple, a); };
    std::optional<EnumerationStyle> gold_style;
    const std::string* options_field = t_.gold && !t_.gold->options_field.empty() ? &t_.gold->options_field : nullptr;

    for (const auto& field : placeholders_) {
      if (t_.gold && field == t_.gold->field) continue;
      TextUnit unit{rec.at(field), {}};
      const Component col{ComponentKind::column, field};
      const auto lf_it = t_.list_fields.find(field);
      if (lf_it != t_.list_fields.end()) {
        const auto& lf = lf_it->second;
        const auto* sh = axis_for(col, PerturbationKind::shuffle);
        const auto* en = axis_for(col, PerturbationKind::enumerate);
        const auto js = coord(sh), je = coord(en);
        std::optional<EnumerationStyle> style = lf.enumerate;
        std::string sep = lf.label_separator;
        if (je) {
          style = en->variants[je - 1].style;
          sep = en->variants[je - 1].label_separator;
        }
        if (js || style) {
          auto items = split_list_cell(unit.text, lf.delimiter);
          if (js) {
            const auto perm = shuffle_permutation(items.size(), rec.row_index, js, *sh);
            std::vector<std::string> reordered;
            for (auto p : perm) reordered.push_back(items[p]);
            items = std::move(reordered);
            st.permutation = perm;
          }
          if (style) items = enumerate_list(items, *style, sep);
          unit.replace(text::join(items, lf.join), {}, {});
          if (js) unit.spans.push_back({sh->name, 0, unit.text.size(), "shuffle"});
          if (je) unit.spans.push_back({en->name, 0, unit.text.size(), "enumerate"});
        }
        if (options_field && field == *options_field) gold_style = style;
      }
      if (const auto* fa = axis_for(col, PerturbationKind::formatting); fa && coord(fa)) {
        const auto j = coord(fa);
        apply_value_noise(unit, *fa, j, derive_seed(cfg_.seed, fa->name, rec.row_index, field, j));
      }
      if (is_target && !(options_field && field == *options_field) && lf_it == t_.list_fields.end()) {
        const Component ic{ComponentKind::instance_content, {}};
        if (const auto* fa = axis_for(ic, PerturbationKind::formatting); fa && coord(fa)) {
          const auto j = coord(fa);
          apply_value_noise(unit, *fa, j, derive_seed(cfg_.seed, fa->name, rec.row_index, field, j));
        }
      }
      if (!is_target) {
        const Component dc{ComponentKind::demonstrations, {}};
        if (const auto* fa = axis_for(dc, PerturbationKind::formatting); fa && coord(fa)) {
          const auto j = coord(fa);
          apply_value_noise(unit, *fa, j,
                            derive_seed(cfg_.seed, fa->name, table_.row(target_pos).row_index, demo_slot, field, j));
        }
      }
      if (is_target) {
        if (const auto* ca = axis_for(col, PerturbationKind::context_addition); ca && coord(ca)) {
          const auto& entry = contexts_.at({ca->name, target_pos, coord(ca)});
          if (entry.aug) {
            const auto& aug = *entry.aug;
            if (aug.span_begin == 0) unit.insert(0, aug.inserted(), ca->name, "context-addition");
            else unit.insert(unit.text.size(), aug.inserted(), ca->name, "context-addition");
          }
        }
      }
      st.record.values[field] = unit.text;
      st.fields.emplace(field, std::move(unit));
    }

    if (t_.gold) {
      const auto& g = rec.at(t_.gold->field);
      std::string exported = g;
      if (options_field && t_.list_fields.count(*options_field)) {
        const auto& lf = t_.list_fields.at(*options_field);
        const auto items = split_list_cell(rec.at(*options_field), lf.delimiter);
        st.n_options = items.size();
        if (st.permutation || gold_style) {
          const auto pos = locate_gold(items, g, t_.gold->mode);
          std::size_t new_pos = pos;
          if (st.permutation)
            for (std::size_t k = 0; k < st.permutation->size(); ++k)
              if ((*st.permutation)[k] == pos) new_pos = k;
          st.gold_item = items[pos];
          if (gold_style) exported = enumeration_label(new_pos, *gold_style);
          else if (t_.gold->mode == GoldMode::index)
            exported = write_gold_index(new_pos, resolve_gold_index(g, items.size()).notation);
        }
      }
      st.record.values[t_.gold->field] = exported;
    }
    return st;
  }

  void apply_value_noise(TextUnit& unit, const Axis& a, std::size_t j, std::uint64_t seed_root) const {
    // Small search so the variant differs from its input when possible.
    NoiseResult best;
    bool found = false;
    for (int attempt = 0; attempt < 16 && !found; ++attempt) {
      best = apply_surface_noise(unit.text, noise_config_from_params(params(a), j, derive_seed(seed_root, attempt)));
      found = best.text != unit.text;
    }
    unit.noise(best, a.name);
  }

  std::vector<std::size_t> shuffle_permutation(std::size_t n, std::size_t row_index, std::size_t j,
                                               const Axis& a) const {
    std::vector<std::vector<std::size_t>> prior;
    std::vector<std::size_t> identity(n);
    std::iota(identity.begin(), identity.end(), std::size_t{0});
    // Variants of one row are pairwise distinct and non-identity when n allows.
    for (std::size_t v = 1; v <= j; ++v) {
      std::vector<std::size_t> chosen;
      for (int attempt = 0; attempt < kSeedSearch; ++attempt) {
        auto p = seeded_permutation(n, derive_seed(cfg_.seed, a.name, row_index, v, attempt));
        chosen = p;
        if (n < 2) break;
        if (p == identity) continue;
        if (std::find(prior.begin(), prior.end(), p) != prior.end()) continue;
        break;
      }
      prior.push_back(std::move(chosen));
    }
    return prior.back();
  }

  std::vector<std::size_t> demo_rows(std::size_t target_pos, std::size_t jd, const Axis* da) const {
    if (!t_.few_shot || (t_.few_shot->count == 0 && jd == 0)) return {};
    const auto& fs = *t_.few_shot;
    const auto row_index = table_.row(target_pos).row_index;
    const auto baseline =
        edit_demonstrations(table_.size(), target_pos, fs.count, fs.ordering,
                            derive_seed(cfg_.seed, "few-shot", fs.seed, row_index))
            .demo_row_indices;
    if (jd == 0) return baseline;
    const auto count = da->variants[jd - 1].demo_count;
    const auto ordering = params(*da).contains("ordering")
                              ? (detail::normalize_name(params(*da).at("ordering").get<std::string>()) == "shuffled"
                                     ? DemoOrdering::shuffled
                                     : DemoOrdering::as_sampled)
                              : fs.ordering;
    std::vector<std::size_t> sel;
    for (int attempt = 0; attempt < kSeedSearch; ++attempt) {
      sel = edit_demonstrations(table_.size(), target_pos, count, ordering,
                                derive_seed(cfg_.seed, da->name, row_index, jd, attempt))
                .demo_row_indices;
      if (sel != baseline || table_.size() <= count + 1) break;
    }
    return sel;
  }

  VariationRecord render(std::size_t target_pos, const std::vector<std::size_t>& tuple) {
    const bool baseline = std::all_of(tuple.begin(), tuple.end(), [](std::size_t c) { return c == 0; });
    const auto& target_rec = table_.row(target_pos);
    VariationRecord out;
    out.row_index = target_rec.row_index;
    out.baseline = baseline;
    for (std::size_t i = 0; i < vars_.axes.size(); ++i) out.variant_coords[vars_.axes[i].name] = tuple[i];

    nlohmann::ordered_json axes_prov = nlohmann::ordered_json::object();

    // Instruction.
    TextUnit instr{t_.instruction, {}};
    const Component ci{ComponentKind::instruction, {}};
    if (const auto* pa = axis_for(ci, PerturbationKind::paraphrase); pa && coord_of(tuple, pa)) {
      const auto& v = pa->variants[coord_of(tuple, pa) - 1];
      instr.replace(v.text, pa->name, "paraphrase");
      axes_prov[pa->name] = {{"text", v.text}};
    }
    if (const auto* fa = axis_for(ci, PerturbationKind::formatting); fa && coord_of(tuple, fa)) {
      const auto& v = fa->variants[coord_of(tuple, fa) - 1];
      const auto r = apply_surface_noise(instr.text, noise_config_from_params(params(*fa), v.index, *v.noise_seed));
      instr.noise(r, fa->name);
      axes_prov[fa->name] = {{"seed", *v.noise_seed}, {"edits", to_json(r.log)}};
    }

    // Prompt format.
    TextUnit fmt{t_.prompt_format, {}};
    const Component cf{ComponentKind::prompt_format, {}};
    if (const auto* fa = axis_for(cf, PerturbationKind::formatting); fa && coord_of(tuple, fa)) {
      const auto& v = fa->variants[coord_of(tuple, fa) - 1];
      const auto r = apply_surface_noise(fmt.text, noise_config_from_params(params(*fa), v.index, *v.noise_seed));
      fmt.noise(r, fa->name);
      axes_prov[fa->name] = {{"seed", *v.noise_seed}, {"edits", to_json(r.log)}};
    }

    // Demonstrations.
    const Component cd{ComponentKind::demonstrations, {}};
    const auto* da = axis_for(cd, PerturbationKind::demonstration_editing);
    const auto demo_positions = demo_rows(target_pos, coord_of(tuple, da), da);
    std::vector<BlockState> demos;
    std::vector<Record> demo_records;
    for (std::size_t k = 0; k < demo_positions.size(); ++k) {
      demos.push_back(transform(table_.row(demo_positions[k]), tuple, false, target_pos, k));
      demo_records.push_back(demos.back().record);
    }
    auto target = transform(target_rec, tuple, true, target_pos, 0);

    auto trace = render_traced(t_, instr.text, fmt.text, demo_records, target.record);

    // Map unit spans into prompt coordinates.
    std::vector<TaggedSpan> spans;
    for (const auto& seg : trace.segments) {
      using Role = RenderSegment::Role;
      if (seg.role == Role::instruction) {
        for (const auto& s : instr.spans) spans.push_back({s.axis, seg.out_begin + s.begin, seg.out_begin + s.end, s.op});
      } else if (seg.role == Role::format_literal) {
        const auto len = seg.out_end - seg.out_begin;
        for (const auto& s : fmt.spans) {
          const auto b = std::max(s.begin, seg.src_begin);
          const auto e = std::min(s.end, seg.src_begin + len);
          if (b < e) spans.push_back({s.axis, seg.out_begin + b - seg.src_begin, seg.out_begin + e - seg.src_begin, s.op});
        }
      } else if (seg.role == Role::value) {
        const auto& st = seg.block < demos.size() ? demos[seg.block] : target;
        const auto it = st.fields.find(seg.field);
        if (it == st.fields.end()) continue;
        for (const auto& s : it->second.spans)
          spans.push_back({s.axis, seg.out_begin + s.begin, seg.out_begin + s.end, s.op});
      }
    }

    // Whole demonstration blocks changed by demonstration editing.
    if (da && coord_of(tuple, da)) {
      for (std::size_t k = 0; k < demos.size(); ++k)
        spans.push_back({da->name, trace.blocks[k].first, trace.blocks[k].second, "demonstration-editing"});
      axes_prov[da->name] = {{"demo_rows", nlohmann::ordered_json::array()}};
    }

    // Instance-content context goes around the target block.
    const Component ic{ComponentKind::instance_content, {}};
    if (const auto* ca = axis_for(ic, PerturbationKind::context_addition); ca && coord_of(tuple, ca)) {
      const auto& entry = contexts_.at({ca->name, target_pos, coord_of(tuple, ca)});
      nlohmann::ordered_json cp;
      if (entry.aug) {
        const auto& aug = *entry.aug;
        const auto ins = aug.inserted();
        const auto block = trace.blocks.back();
        const auto pos = aug.span_begin == 0 ? block.first : block.second;
        trace.prompt.insert(pos, ins);
        for (auto& s : spans) {
          if (s.begin >= pos) s.begin += ins.size();
          if (s.end > pos || (s.end == pos && s.begin > pos)) s.end += ins.size();
        }
        spans.push_back({ca->name, pos, pos + ins.size(), "context-addition"});
        cp["inserted"] = ins;
        cp["position"] = aug.span_begin == 0 ? "before" : "after";
        cp["meta_prompt"] = aug.meta_prompt;
        cp["skipped"] = false;
      } else {
        cp["skipped"] = true;
        cp["warning"] = entry.warning;
      }
      axes_prov[ca->name] = cp;
    }
    for (const auto& a : vars_.axes) {
      if (a.spec.component.kind != ComponentKind::column || a.spec.kind != PerturbationKind::context_addition) continue;
      const auto j = coord_of(tuple, &a);
      if (!j) continue;
      const auto& entry = contexts_.at({a.name, target_pos, j});
      nlohmann::ordered_json cp;
      cp["skipped"] = !entry.aug.has_value();
      if (entry.aug) {
        cp["inserted"] = entry.aug->inserted();
        cp["meta_prompt"] = entry.aug->meta_prompt;
      } else {
        cp["warning"] = entry.warning;
      }
      axes_prov[a.name] = cp;
    }

    std::sort(spans.begin(), spans.end(), [](const TaggedSpan& a, const TaggedSpan& b) {
      return std::tie(a.begin, a.end, a.axis, a.op) < std::tie(b.begin, b.end, b.axis, b.op);
    });

    out.prompt = std::move(trace.prompt);
    out.gold = std::move(trace.gold);

    // Provenance.
    std::vector<std::size_t> demo_row_indices;
    for (auto p : demo_positions) demo_row_indices.push_back(table_.row(p).row_index);
    nlohmann::ordered_json prov;
    prov["seed"] = cfg_.seed;
    nlohmann::ordered_json axes_json = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < vars_.axes.size(); ++i) {
      const auto& a = vars_.axes[i];
      if (!tuple[i]) continue;
      nlohmann::ordered_json entry;
      entry["component"] = a.spec.component.str();
      entry["kind"] = to_string(a.spec.kind);
      entry["variant"] = tuple[i];
      entry["params"] = nlohmann::ordered_json::parse(params(a).dump());
      const auto& v = a.variants[tuple[i] - 1];
      if (a.spec.kind == PerturbationKind::enumerate) {
        entry["style"] = to_string(*v.style);
        entry["label_separator"] = v.label_separator;
      }
      if (a.spec.kind == PerturbationKind::shuffle && target.permutation) entry["permutation"] = *target.permutation;
      if (a.spec.kind == PerturbationKind::demonstration_editing) entry["demo_rows"] = demo_row_indices;
      if (a.spec.kind == PerturbationKind::paraphrase || a.spec.kind == PerturbationKind::context_addition)
        for (auto it = a.meta.begin(); it != a.meta.end(); ++it) entry[it.key()] = it.value();
      if (axes_prov.contains(a.name))
        for (auto it = axes_prov[a.name].begin(); it != axes_prov[a.name].end(); ++it)
          if (it.key() != "demo_rows") entry[it.key()] = it.value();
      axes_json[a.name] = entry;
    }
    prov["axes"] = axes_json;
    prov["demo_rows"] = demo_row_indices;
    if (target.n_options) {
      prov["n_options"] = target.n_options;
      if (!target.gold_item.empty()) prov["gold_item"] = target.gold_item;
    }
    nlohmann::ordered_json span_json = nlohmann::ordered_json::array();
    for (const auto& s : spans)
      span_json.push_back({{"component", s.axis}, {"start", s.begin}, {"end", s.end}, {"op", s.op}});
    prov["prompt_spans"] = span_json;
    out.provenance = std::move(prov);
    return out;
  }

  const PromptTemplate& t_;
  const DatasetTable& table_;
  const GenerationConfig& cfg_;
  const ComponentVariants& vars_;
  const EngineOptions& opts_;
  std::vector<std::string> placeholders_;
  std::map<std::size_t, std::size_t> position_;
  std::map<std::tuple<std::string, std::size_t, std::size_t>, ContextEntry> contexts_;
  std::map<std::size_t, std::vector<std::string>> context_warnings_;
};

}  // namespace detail

inline GenerationResult compose_variations(const ComponentVariants& variants, const DatasetTable& table,
                                           const PromptTemplate& t, const GenerationConfig& cfg,
                                           const EngineOptions& opts = {}) {
  validate(cfg);
  return detail::Composer(t, table, cfg, variants, opts).run();
}

// Checks the template against the table (columns, list items, gold) before
// any generation work starts.
inline void check_generation_inputs(const PromptTemplate& t, const DatasetTable& table) {
  const auto report = validate_template(t, table);
  if (!report.ok) throw ConfigError("template references missing column(s): " + text::join(report.missing, ", "));
  if (t.gold && !t.gold->options_field.empty() && t.list_fields.count(t.gold->options_field)) {
    const auto& lf = t.list_fields.at(t.gold->options_field);
    for (const auto& rec : table.rows()) {
      const auto items = split_list_cell(rec.at(t.gold->options_field), lf.delimiter);
      try {
        locate_gold(items, rec.at(t.gold->field), t.gold->mode);
      } catch (const ConfigError& e) {
        throw ConfigError("row " + std::to_string(rec.row_index) + ": " + e.what());
      }
    }
  }
}

inline GenerationResult generate(const PromptTemplate& t, const DatasetTable& table, const GenerationConfig& cfg,
                                 const EngineOptions& opts = {}) {
  check_generation_inputs(t, table);
  const auto variants = generate_component_variants(t, table, cfg, opts);
  return compose_variations(variants, table, t, cfg, opts);
}

}  // namespace promptvar
