#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "promptvar/error.hpp"
#include "promptvar/provider.hpp"
#include "promptvar/template.hpp"
#include "promptvar/text.hpp"
#include "promptvar/variation_engine.hpp"

namespace promptvar {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Trim, case-fold, collapse whitespace, strip trailing punctuation.
inline std::string normalize_answer(std::string_view s) {
  auto out = text::lower(text::collapse_whitespace(text::trim(s)));
  while (!out.empty() && std::string_view(".,;:!?").find(out.back()) != std::string_view::npos) {
    out.pop_back();
    while (!out.empty() && text::is_space(out.back())) out.pop_back();
  }
  return out;
}

inline int score_exact_match(std::string_view response, std::string_view gold) {
  const auto r = normalize_answer(response);
  return !r.empty() && r == normalize_answer(gold) ? 1 : 0;
}

namespace detail {

// "B", "B.", "B)", "(B)", "B:" -> 'B'; uppercase letters only.
inline std::optional<char> letter_token(std::string_view tok, std::size_t n_options) {
  if (!tok.empty() && tok.front() == '(') {
    if (tok.size() < 3 || tok[2] != ')') return std::nullopt;
    tok = tok.substr(1, 1);
  } else if (tok.size() == 2 && (tok[1] == '.' || tok[1] == ')' || tok[1] == ':' || tok[1] == ',')) {
    tok = tok.substr(0, 1);
  }
  if (tok.size() != 1 || !text::is_upper(tok[0])) return std::nullopt;
  if (static_cast<std::size_t>(tok[0] - 'A') >= n_options) return std::nullopt;
  return tok[0];
}

inline std::vector<std::string_view> tokens(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && text::is_space(s[i])) ++i;
    const auto b = i;
    while (i < s.size() && !text::is_space(s[i])) ++i;
    if (b < i) out.push_back(s.substr(b, i - b));
  }
  return out;
}

}  // namespace detail

// First option letter in the response: the leading token, then "answer is
// <L>", then any standalone in-range capital letter.
inline std::optional<char> extract_choice_letter(std::string_view response, std::size_t n_options) {
  if (n_options < 2 || n_options > 26) throw ConfigError("n_options must be between 2 and 26");
  const auto toks = detail::tokens(response);
  if (toks.empty()) return std::nullopt;
  if (auto c = detail::letter_token(toks.front(), n_options)) return c;
  for (std::size_t i = 0; i + 2 < toks.size(); ++i) {
    if (!text::iequals(toks[i], "answer") || !text::iequals(toks[i + 1], "is")) continue;
    auto t = toks[i + 2];
    if (t.size() >= 1 && text::is_lower(t[0]) && (t.size() == 1 || !text::is_alpha(t[1]))) {
      std::string up(t);
      up[0] = text::to_upper(up[0]);
      if (auto c = detail::letter_token(up, n_options)) return c;
    }
    if (auto c = detail::letter_token(t, n_options)) return c;
  }
  for (const auto& t : toks)
    if (auto c = detail::letter_token(t, n_options)) return c;
  return std::nullopt;
}

enum class Metric { automatic, exact_match, choice_letter };

inline Metric parse_metric(std::string_view s) {
  const auto n = detail::normalize_name(s);
  if (n == "auto" || n == "automatic") return Metric::automatic;
  if (n == "exact match" || n == "exact") return Metric::exact_match;
  if (n == "choice letter" || n == "choice" || n == "multiple choice") return Metric::choice_letter;
  throw ConfigError("unknown metric '" + std::string(s) + "'");
}

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::automatic: return "auto";
    case Metric::exact_match: return "exact-match";
    case Metric::choice_letter: return "choice-letter";
  }
  return {};
}

inline bool is_choice_gold(std::string_view gold) {
  const auto g = text::trim(gold);
  return g.size() == 1 && text::is_upper(g[0]);
}

// Scores one response. Choice scoring applies when the gold is a single
// capital letter; other golds fall back to exact match.
inline int score_response(std::string_view response, std::string_view gold, Metric metric, std::size_t n_options) {
  if (metric != Metric::exact_match && is_choice_gold(gold)) {
    const auto g = text::trim(gold)[0];
    const auto need = static_cast<std::size_t>(g - 'A' + 1);
    const auto n = std::max<std::size_t>({n_options ? n_options : 4, need, 2});
    const auto c = extract_choice_letter(response, n);
    return c && *c == g ? 1 : 0;
  }
  return score_exact_match(response, gold);
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct Distribution {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0, std = 0;
  std::size_t n = 0;
};

// Quartiles by linear interpolation between closest ranks; population std.
inline Distribution aggregate_distribution(std::vector<double> values) {
  if (values.empty()) throw ConfigError("cannot aggregate an empty list");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  auto quantile = [&](double p) {
    const double h = (static_cast<double>(n) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, n - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  Distribution d;
  d.n = n;
  d.min = values.front();
  d.max = values.back();
  d.q1 = quantile(0.25);
  d.median = quantile(0.5);
  d.q3 = quantile(0.75);
  double sum = 0;
  for (auto v : values) sum += v;
  d.mean = sum / static_cast<double>(n);
  double ss = 0;
  for (auto v : values) ss += (v - d.mean) * (v - d.mean);
  d.std = std::sqrt(ss / static_cast<double>(n));
  return d;
}

inline nlohmann::ordered_json to_json(const Distribution& d) {
  nlohmann::ordered_json j;
  j["n"] = d.n;
  j["min"] = d.min;
  j["q1"] = d.q1;
  j["median"] = d.median;
  j["q3"] = d.q3;
  j["max"] = d.max;
  j["mean"] = d.mean;
  j["std"] = d.std;
  return j;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct RecordScore {
  std::size_t row_index = 0;
  VariantCoords variant_coords;
  bool baseline = false;
  std::string response;
  std::optional<int> score;  // empty when the provider failed
  std::string error;
  bool cache_hit = false;
};

struct VariationScore {
  VariantCoords variant_coords;
  double mean = 0;
  std::size_t n = 0;
};

struct RowScore {
  std::size_t row_index = 0;
  double mean = 0;
  std::size_t n = 0;
};

struct ScoreReport {
  std::string model_id;
  Metric metric = Metric::automatic;
  std::vector<RecordScore> per_record;
  std::vector<VariationScore> per_variation;
  std::vector<RowScore> per_row;
  std::optional<Distribution> distribution;
  std::vector<std::string> warnings;
  std::size_t scored = 0;
  std::size_t failed = 0;
  std::size_t cache_hits = 0;
};

struct EvaluationOptions {
  Metric metric = Metric::automatic;
  // Worker threads; 0 means the client's in-flight limit.
  std::size_t threads = 0;
  std::function<void(std::size_t, std::size_t)> progress;
};

inline std::size_t n_options_of(const VariationRecord& r) {
  if (r.provenance.is_object() && r.provenance.contains("n_options") && r.provenance["n_options"].is_number_unsigned())
    return r.provenance["n_options"].get<std::size_t>();
  return 0;
}

inline ScoreReport aggregate_scores(std::vector<RecordScore> per_record, std::string model_id, Metric metric) {
  ScoreReport rep;
  rep.model_id = std::move(model_id);
  rep.metric = metric;
  std::map<std::string, std::pair<VariantCoords, std::vector<double>>> by_var;
  std::map<std::size_t, std::vector<double>> by_row;
  for (const auto& s : per_record) {
    if (s.cache_hit) ++rep.cache_hits;
    if (!s.score) {
      ++rep.failed;
      continue;
    }
    ++rep.scored;
    auto& slot = by_var[coords_key(s.variant_coords)];
    slot.first = s.variant_coords;
    slot.second.push_back(*s.score);
    by_row[s.row_index].push_back(*s.score);
  }
  auto mean = [](const std::vector<double>& v) {
    double sum = 0;
    for (auto x : v) sum += x;
    return sum / static_cast<double>(v.size());
  };
  std::vector<double> var_means;
  for (auto& [k, slot] : by_var) {
    rep.per_variation.push_back({slot.first, mean(slot.second), slot.second.size()});
  }
  std::sort(rep.per_variation.begin(), rep.per_variation.end(),
            [](const VariationScore& a, const VariationScore& b) { return coords_less(a.variant_coords, b.variant_coords); });
  for (const auto& v : rep.per_variation) var_means.push_back(v.mean);
  for (auto& [row, v] : by_row) rep.per_row.push_back({row, mean(v), v.size()});
  if (!var_means.empty()) rep.distribution = aggregate_distribution(var_means);
  if (rep.failed)
    rep.warnings.push_back(std::to_string(rep.failed) + " record(s) could not be scored and were excluded");
  rep.per_record = std::move(per_record);
  return rep;
}

// Queries the provider once per record (through the cache), scores and
// aggregates. Provider failures leave the record unscored.
inline ScoreReport run_evaluation(const std::vector<VariationRecord>& records, ProviderClient& client,
                                  const EvaluationOptions& opts = {}) {
  if (records.empty()) throw ConfigError("no records to evaluate");
  std::vector<RecordScore> scores(records.size());
  std::atomic<std::size_t> next{0}, done{0};
  std::mutex progress_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      const auto& r = records[i];
      auto& s = scores[i];
      s.row_index = r.row_index;
      s.variant_coords = r.variant_coords;
      s.baseline = r.baseline;
      try {
        const auto resp = client.cached_complete(r.prompt, "eval:" + std::to_string(r.row_index) + ":" +
                                                               coords_key(r.variant_coords));
        s.response = resp.text;
        s.cache_hit = resp.cache_hit;
        s.score = score_response(resp.text, r.gold, opts.metric, n_options_of(r));
      } catch (const Error& e) {
        s.error = e.what();
      }
      const auto d = ++done;
      if (opts.progress) {
        std::lock_guard lock(progress_mu);
        opts.progress(d, records.size());
      }
    }
  };
  const auto n_threads = std::max<std::size_t>(
      1, std::min(records.size(), opts.threads ? opts.threads : client.max_in_flight()));
  std::vector<std::thread> threads;
  for (std::size_t i = 1; i < n_threads; ++i) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  auto report = aggregate_scores(std::move(scores), client.model_id(), opts.metric);
  for (const auto& s : report.per_record)
    if (!s.score) {
      report.warnings.push_back("row " + std::to_string(s.row_index) + " " + coords_key(s.variant_coords) + ": " +
                                s.error);
    }
  return report;
}

inline nlohmann::ordered_json to_json(const ScoreReport& r) {
  nlohmann::ordered_json j;
  j["model_id"] = r.model_id;
  j["metric"] = to_string(r.metric);
  j["counts"] = {{"records", r.per_record.size()}, {"scored", r.scored}, {"failed", r.failed}, {"cache_hits", r.cache_hits}};
  j["distribution"] = r.distribution ? to_json(*r.distribution) : nlohmann::ordered_json();
  auto pv = nlohmann::ordered_json::array();
  for (const auto& v : r.per_variation)
    pv.push_back({{"variant_coords", coords_to_json(v.variant_coords)}, {"mean", v.mean}, {"n", v.n}});
  j["per_variation"] = pv;
  auto pr = nlohmann::ordered_json::array();
  for (const auto& v : r.per_row) pr.push_back({{"row_index", v.row_index}, {"mean", v.mean}, {"n", v.n}});
  j["per_row"] = pr;
  auto rec = nlohmann::ordered_json::array();
  for (const auto& s : r.per_record) {
    nlohmann::ordered_json e;
    e["row_index"] = s.row_index;
    e["variant_coords"] = coords_to_json(s.variant_coords);
    e["baseline"] = s.baseline;
    e["response"] = s.response;
    e["score"] = s.score ? nlohmann::ordered_json(*s.score) : nlohmann::ordered_json();
    if (!s.error.empty()) e["error"] = s.error;
    rec.push_back(e);
  }
  j["per_record"] = rec;
  j["warnings"] = r.warnings;
  return j;
}

// One line per variation, for external plotting tools.
inline std::string per_variation_csv(const ScoreReport& r) {
  std::string out = "variant_coords,mean,n\n";
  for (const auto& v : r.per_variation) {
    std::ostringstream mean;
    mean.precision(17);
    mean << v.mean;
    out += detail::csv_escape(coords_to_json(v.variant_coords).dump()) + "," + mean.str() + "," +
           std::to_string(v.n) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

struct AblationPlan {
  PromptTemplate template_;
  GenerationConfig config;
};

inline PerturbationKind default_kind(const Component& c) {
  switch (c.kind) {
    case ComponentKind::instruction: return PerturbationKind::paraphrase;
    case ComponentKind::prompt_format: return PerturbationKind::formatting;
    case ComponentKind::demonstrations: return PerturbationKind::demonstration_editing;
    case ComponentKind::instance_content: return PerturbationKind::formatting;
    case ComponentKind::column: return PerturbationKind::formatting;
  }
  return PerturbationKind::formatting;
}

// Keeps only the perturbations of `component` so its effect can be measured
// alone, with `n_variations` prompts per example. When the template has none
// for the component, its default kind is used.
inline AblationPlan ablation_plan(const PromptTemplate& t, const Component& component, std::size_t n_variations,
                                  std::uint64_t seed) {
  if (n_variations == 0) throw ConfigError("ablation needs at least one variation");
  AblationPlan plan;
  plan.template_ = t;
  plan.template_.perturbations.clear();
  for (const auto& p : t.perturbations)
    if (p.component == component) plan.template_.perturbations.push_back(p);
  if (plan.template_.perturbations.empty()) {
    PerturbationSpec spec;
    spec.component = component;
    spec.kind = default_kind(component);
    if (!is_applicable(spec.kind, component))
      throw ConfigError("component '" + component.str() + "' has no applicable perturbation");
    if (spec.kind == PerturbationKind::demonstration_editing && !t.few_shot)
      throw ConfigError("component 'demonstrations' has no applicable perturbation without a few-shot configuration");
    if (component.kind == ComponentKind::column && t.gold && component.column == t.gold->field)
      throw ConfigError("the gold column cannot be perturbed");
    plan.template_.perturbations.push_back(spec);
  }
  for (auto& p : plan.template_.perturbations) p.count = n_variations;
  plan.config.seed = seed;
  plan.config.variations_per_field = n_variations;
  plan.config.include_baseline = false;
  if (plan.template_.perturbations.size() == 1) {
    plan.config.sampling = SamplingMode::full_product;
  } else {
    plan.config.sampling = SamplingMode::random_combinations;
    plan.config.max_variations_per_row = n_variations;
  }
  return plan;
}

}  // namespace promptvar
