#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "promptvar/error.hpp"
#include "promptvar/random.hpp"
#include "promptvar/template.hpp"
#include "promptvar/text.hpp"

namespace promptvar {

enum class TypoOp { adjacent_swap, char_drop, char_double };
enum class CasingMode { lower, upper, title, random_token };
enum class PunctuationMode { strip_terminal, add_terminal, swap_terminal };

struct NoiseConfig {
  std::uint64_t seed = 0;
  // Probability per space boundary of inserting 1-3 extra spaces.
  double p_space = 0.1;
  // Probability per word (letter run of length >= 3) of one typo.
  double p_typo = 0.05;
  std::vector<TypoOp> typo_ops = {TypoOp::adjacent_swap};
  std::optional<CasingMode> casing;
  std::optional<PunctuationMode> punctuation;
  // Probability per field label ("Q:") of rewriting its ':' separator.
  double p_label_separator = 0.0;
};

inline void validate(const NoiseConfig& cfg) {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must be within [0, 1]");
  };
  prob(cfg.p_space, "p_space");
  prob(cfg.p_typo, "p_typo");
  prob(cfg.p_label_separator, "p_label_separator");
  if (cfg.typo_ops.empty() && cfg.p_typo > 0) throw ConfigError("typo_ops must not be empty");
}

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

// One replacement of input[begin, end) by `replacement`. Pure insertions have
// begin == end.
struct Edit {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string op;
  std::string replacement;
  bool operator==(const Edit&) const = default;
};

// Sorted, non-overlapping edits relative to one input text.
using EditLog = std::vector<Edit>;

struct NoiseResult {
  std::string text;
  EditLog log;
};

// Replays a log against the text it was produced from.
inline std::string apply_edits(std::string_view input, const EditLog& log) {
  std::string out;
  std::size_t pos = 0;
  for (const auto& e : log) {
    if (e.begin < pos || e.end < e.begin || e.end > input.size()) throw Error("edit log is not sorted or out of range");
    out.append(input.substr(pos, e.begin - pos));
    out += e.replacement;
    pos = e.end;
  }
  out.append(input.substr(pos));
  return out;
}

// Output-side ranges of each edit: where its replacement lands in the result.
inline std::vector<std::pair<Span, std::string>> output_spans(const EditLog& log) {
  std::vector<std::pair<Span, std::string>> out;
  std::ptrdiff_t delta = 0;
  for (const auto& e : log) {
    const auto b = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(e.begin) + delta);
    out.push_back({Span{b, b + e.replacement.size()}, e.op});
    delta += static_cast<std::ptrdiff_t>(e.replacement.size()) - static_cast<std::ptrdiff_t>(e.end - e.begin);
  }
  return out;
}

inline nlohmann::json to_json(const EditLog& log) {
  auto arr = nlohmann::json::array();
  for (const auto& e : log)
    arr.push_back({{"start", e.begin}, {"end", e.end}, {"op", e.op}, {"replacement", e.replacement}});
  return arr;
}

namespace detail {

inline bool overlaps_protected(std::size_t b, std::size_t e, const std::vector<Span>& prot) {
  for (const auto& p : prot)
    if (b < p.end && p.begin < e) return true;
  return false;
}

inline bool strictly_inside_protected(std::size_t pos, const std::vector<Span>& prot) {
  for (const auto& p : prot)
    if (p.begin < pos && pos < p.end) return true;
  return false;
}

inline bool is_protected(std::size_t pos, const std::vector<Span>& prot) {
  for (const auto& p : prot)
    if (p.begin <= pos && pos < p.end) return true;
  return false;
}

inline std::vector<Span> auto_protected(std::string_view text) {
  std::vector<Span> out;
  for (auto [b, e] : placeholder_spans(text)) out.push_back(Span{b, e});
  return out;
}

// Emits minimal edits for a same-length rewrite of `before` into `after`.
inline void diff_same_length(std::string_view before, std::string_view after, std::size_t offset, const char* op,
                             EditLog& log) {
  std::size_t i = 0;
  while (i < before.size()) {
    if (before[i] == after[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < before.size() && before[j] != after[j]) ++j;
    log.push_back(Edit{offset + i, offset + j, op, std::string(after.substr(i, j - i))});
    i = j;
  }
}

}  // namespace detail

// Inserts 1-3 extra spaces after existing runs of ' ' with probability
// p_space each. Collapsing runs of spaces in the output gives the collapsed input.
inline NoiseResult perturb_spacing(std::string_view text, const NoiseConfig& cfg, Rng& rng,
                                   const std::vector<Span>& protected_spans = {}) {
  NoiseResult res;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != ' ') continue;
    if (i + 1 < text.size() && text[i + 1] == ' ') continue;  // not the end of the run
    const std::size_t pos = i + 1;
    if (detail::is_protected(i, protected_spans) || detail::strictly_inside_protected(pos, protected_spans)) continue;
    if (!rng.bernoulli(cfg.p_space)) continue;
    const auto n = 1 + static_cast<std::size_t>(rng.below(3));
    res.log.push_back(Edit{pos, pos, "space", std::string(n, ' ')});
  }
  res.text = apply_edits(text, res.log);
  return res;
}

// Applies one typo of the given kind to a word, or returns nullopt when the
// word admits none. Positions are chosen away from the first and last letter
// when possible.
inline std::optional<Edit> make_typo(std::string_view word, TypoOp op, Rng& rng) {
  const std::size_t n = word.size();
  if (n < 3) return std::nullopt;
  switch (op) {
    case TypoOp::adjacent_swap: {
      std::vector<std::size_t> cands;
      for (std::size_t i = 1; i + 2 < n; ++i)
        if (word[i] != word[i + 1]) cands.push_back(i);
      if (cands.empty())
        for (std::size_t i = 0; i + 1 < n; ++i)
          if (word[i] != word[i + 1]) cands.push_back(i);
      if (cands.empty()) return std::nullopt;
      const auto i = cands[rng.below(cands.size())];
      return Edit{i, i + 2, "typo", std::string{word[i + 1], word[i]}};
    }
    case TypoOp::char_drop: {
      const auto i = 1 + static_cast<std::size_t>(rng.below(n - 2));
      return Edit{i, i + 1, "typo", ""};
    }
    case TypoOp::char_double: {
      const auto i = 1 + static_cast<std::size_t>(rng.below(n - 2));
      return Edit{i + 1, i + 1, "typo", std::string(1, word[i])};
    }
  }
  return std::nullopt;
}

// Introduces at most one typo per word (maximal ASCII letter run, length >= 3)
// with probability p_typo. Words touching a protected span are skipped.
inline NoiseResult perturb_typos(std::string_view text, const NoiseConfig& cfg, Rng& rng,
                                 const std::vector<Span>& protected_spans = {}) {
  NoiseResult res;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!text::is_alpha(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && text::is_alpha(text[j])) ++j;
    const auto word = text.substr(i, j - i);
    if (word.size() >= 3 && !detail::overlaps_protected(i, j, protected_spans) && rng.bernoulli(cfg.p_typo)) {
      const auto op = cfg.typo_ops[rng.below(cfg.typo_ops.size())];
      if (auto e = make_typo(word, op, rng)) {
        e->begin += i;
        e->end += i;
        res.log.push_back(std::move(*e));
      }
    }
    i = j;
  }
  res.text = apply_edits(text, res.log);
  return res;
}

// Re-cases whitespace-separated tokens. Only ASCII letters outside protected
// spans change, so the output is equal to the input under case folding.
inline NoiseResult perturb_casing(std::string_view text, CasingMode mode, Rng& rng,
                                  const std::vector<Span>& protected_spans = {}) {
  NoiseResult res;
  std::string out(text);
  std::size_t i = 0;
  while (i < text.size()) {
    if (text::is_space(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !text::is_space(text[j])) ++j;
    CasingMode m = mode;
    if (mode == CasingMode::random_token) {
      static constexpr CasingMode kChoices[] = {CasingMode::lower, CasingMode::upper, CasingMode::title};
      m = kChoices[rng.below(3)];
    }
    bool first_letter = true;
    for (std::size_t k = i; k < j; ++k) {
      if (!text::is_alpha(text[k])) continue;
      const bool prot = detail::is_protected(k, protected_spans);
      char c = text[k];
      switch (m) {
        case CasingMode::lower: c = text::to_lower(c); break;
        case CasingMode::upper: c = text::to_upper(c); break;
        case CasingMode::title: c = first_letter ? text::to_upper(c) : text::to_lower(c); break;
        case CasingMode::random_token: break;
      }
      first_letter = false;
      if (!prot) out[k] = c;
    }
    i = j;
  }
  detail::diff_same_length(text, out, 0, "casing", res.log);
  res.text = std::move(out);
  return res;
}

// Edits terminal punctuation and, with probability p_label_separator, the ':'
// after field labels. Letters and digits are never touched.
inline NoiseResult perturb_punctuation(std::string_view text, const NoiseConfig& cfg, Rng& rng,
                                       const std::vector<Span>& protected_spans = {}) {
  NoiseResult res;
  auto is_terminal = [](char c) { return c == '.' || c == '!' || c == '?' || c == ';'; };

  // Label separators: "<alnum>:" followed by whitespace, '{' or end of text.
  if (cfg.p_label_separator > 0) {
    static constexpr const char* kReplacements[] = {"", " -", " ="};
    for (std::size_t i = 1; i < text.size(); ++i) {
      if (text[i] != ':' || !text::is_alnum(text[i - 1])) continue;
      const bool followed = i + 1 == text.size() || text::is_space(text[i + 1]) || text[i + 1] == '{';
      if (!followed || detail::is_protected(i, protected_spans)) continue;
      if (!rng.bernoulli(cfg.p_label_separator)) continue;
      res.log.push_back(Edit{i, i + 1, "punctuation", kReplacements[rng.below(3)]});
    }
  }

  if (cfg.punctuation) {
    std::size_t e = text.size();
    while (e > 0 && text::is_space(text[e - 1])) --e;
    if (e > 0 && !detail::is_protected(e - 1, protected_spans)) {
      const std::size_t last = e - 1;
      std::optional<Edit> terminal;
      switch (*cfg.punctuation) {
        case PunctuationMode::strip_terminal: {
          std::size_t s = e;
          while (s > 0 && is_terminal(text[s - 1]) && !detail::is_protected(s - 1, protected_spans)) --s;
          if (s < e) terminal = Edit{s, e, "punctuation", ""};
          break;
        }
        case PunctuationMode::add_terminal:
          if (!is_terminal(text[last]) && text[last] != ':') terminal = Edit{e, e, "punctuation", "."};
          break;
        case PunctuationMode::swap_terminal: {
          static constexpr char kSwaps[] = {'.', '!', ';'};
          const char c = text[last];
          if (c == '.' || c == '!' || c == ';') {
            char r = c;
            while (r == c) r = kSwaps[rng.below(3)];
            terminal = Edit{last, e, "punctuation", std::string(1, r)};
          }
          break;
        }
      }
      if (terminal) {
        const bool clash = std::any_of(res.log.begin(), res.log.end(), [&](const Edit& x) {
          return x.begin < terminal->end && terminal->begin < x.end;
        });
        if (!clash) res.log.push_back(*terminal);
      }
    }
  }
  std::sort(res.log.begin(), res.log.end(), [](const Edit& a, const Edit& b) { return a.begin < b.begin; });
  res.text = apply_edits(text, res.log);
  return res;
}

namespace detail {

// Tracks a text through successive edit stages and produces one log relative
// to the original input.
class EditComposer {
 public:
  explicit EditComposer(std::string_view original) : original_(original), orig_ops_(original.size(), 0) {
    cells_.reserve(original.size());
    for (std::size_t i = 0; i < original.size(); ++i) cells_.push_back(Cell{original[i], static_cast<long>(i), 0});
  }

  std::string text() const {
    std::string s;
    s.reserve(cells_.size());
    for (const auto& c : cells_) s.push_back(c.ch);
    return s;
  }

  // Maps spans over untouched original characters into current coordinates.
  std::vector<Span> map_spans(const std::vector<Span>& spans) const {
    std::vector<long> where(original_.size() + 1, -1);
    for (std::size_t k = 0; k < cells_.size(); ++k)
      if (cells_[k].src >= 0) where[static_cast<std::size_t>(cells_[k].src)] = static_cast<long>(k);
    std::vector<Span> out;
    for (const auto& s : spans) {
      if (s.begin >= s.end) continue;
      const long b = where[s.begin];
      const long e = where[s.end - 1];
      if (b < 0 || e < 0) continue;
      out.push_back(Span{static_cast<std::size_t>(b), static_cast<std::size_t>(e) + 1});
    }
    return out;
  }

  void apply(const EditLog& log, std::uint8_t op_bit) {
    std::vector<Cell> next;
    next.reserve(cells_.size());
    std::size_t pos = 0;
    for (const auto& e : log) {
      for (; pos < e.begin; ++pos) next.push_back(cells_[pos]);
      std::uint8_t ops = op_bit;
      for (std::size_t k = e.begin; k < e.end; ++k) {
        ops |= cells_[k].ops;
        if (cells_[k].src >= 0) orig_ops_[static_cast<std::size_t>(cells_[k].src)] |= op_bit;
      }
      for (char c : e.replacement) next.push_back(Cell{c, -1, ops});
      pos = e.end;
    }
    for (; pos < cells_.size(); ++pos) next.push_back(cells_[pos]);
    cells_ = std::move(next);
  }

  EditLog log() const {
    EditLog out;
    std::size_t o = 0;
    std::size_t k = 0;
    while (k < cells_.size() || o < original_.size()) {
      if (k < cells_.size() && cells_[k].src == static_cast<long>(o)) {
        ++k;
        ++o;
        continue;
      }
      std::string repl;
      std::uint8_t ops = 0;
      while (k < cells_.size() && cells_[k].src < 0) {
        repl.push_back(cells_[k].ch);
        ops |= cells_[k].ops;
        ++k;
      }
      const std::size_t o2 = k < cells_.size() ? static_cast<std::size_t>(cells_[k].src) : original_.size();
      for (std::size_t x = o; x < o2; ++x) ops |= orig_ops_[x];
      if (original_.substr(o, o2 - o) != repl) out.push_back(Edit{o, o2, op_names(ops), std::move(repl)});
      o = o2;
    }
    return out;
  }

  static constexpr std::uint8_t kCasing = 1, kTypo = 2, kPunctuation = 4, kSpace = 8;

 private:
  struct Cell {
    char ch;
    long src;  // original index, or -1 when produced by an edit
    std::uint8_t ops;
  };

  static std::string op_names(std::uint8_t ops) {
    std::vector<std::string> names;
    if (ops & kCasing) names.emplace_back("casing");
    if (ops & kTypo) names.emplace_back("typo");
    if (ops & kPunctuation) names.emplace_back("punctuation");
    if (ops & kSpace) names.emplace_back("space");
    return text::join(names, "+");
  }

  std::string_view original_;
  std::vector<std::uint8_t> orig_ops_;
  std::vector<Cell> cells_;
};

}  // namespace detail

// Applies casing, typos, punctuation and spacing in that order, each driven by
// a generator derived from cfg.seed. Brace placeholders are detected and never
// altered; `extra_protected` adds caller-chosen spans of the input.
inline NoiseResult apply_surface_noise(std::string_view text, const NoiseConfig& cfg,
                                       const std::vector<Span>& extra_protected = {}) {
  validate(cfg);
  auto prot = detail::auto_protected(text);
  prot.insert(prot.end(), extra_protected.begin(), extra_protected.end());

  detail::EditComposer comp(text);
  if (cfg.casing) {
    Rng rng(derive_seed(cfg.seed, "casing"));
    const auto cur = comp.text();
    comp.apply(perturb_casing(cur, *cfg.casing, rng, comp.map_spans(prot)).log, detail::EditComposer::kCasing);
  }
  if (cfg.p_typo > 0) {
    Rng rng(derive_seed(cfg.seed, "typo"));
    const auto cur = comp.text();
    comp.apply(perturb_typos(cur, cfg, rng, comp.map_spans(prot)).log, detail::EditComposer::kTypo);
  }
  if (cfg.punctuation || cfg.p_label_separator > 0) {
    Rng rng(derive_seed(cfg.seed, "punctuation"));
    const auto cur = comp.text();
    comp.apply(perturb_punctuation(cur, cfg, rng, comp.map_spans(prot)).log, detail::EditComposer::kPunctuation);
  }
  if (cfg.p_space > 0) {
    Rng rng(derive_seed(cfg.seed, "space"));
    const auto cur = comp.text();
    comp.apply(perturb_spacing(cur, cfg, rng, comp.map_spans(prot)).log, detail::EditComposer::kSpace);
  }
  return NoiseResult{comp.text(), comp.log()};
}

// ---------------------------------------------------------------------------
// Configuration parsing
// ---------------------------------------------------------------------------

inline CasingMode parse_casing_mode(std::string_view s) {
  const auto n = detail::normalize_name(s);
  if (n == "lower") return CasingMode::lower;
  if (n == "upper") return CasingMode::upper;
  if (n == "title") return CasingMode::title;
  if (n == "random token" || n == "random") return CasingMode::random_token;
  throw ConfigError("unknown casing mode '" + std::string(s) + "'");
}

inline std::string to_string(CasingMode m) {
  switch (m) {
    case CasingMode::lower: return "lower";
    case CasingMode::upper: return "upper";
    case CasingMode::title: return "title";
    case CasingMode::random_token: return "random-token";
  }
  return {};
}

inline PunctuationMode parse_punctuation_mode(std::string_view s) {
  const auto n = detail::normalize_name(s);
  if (n == "strip terminal") return PunctuationMode::strip_terminal;
  if (n == "add terminal") return PunctuationMode::add_terminal;
  if (n == "swap terminal") return PunctuationMode::swap_terminal;
  throw ConfigError("unknown punctuation mode '" + std::string(s) + "'");
}

inline std::string to_string(PunctuationMode m) {
  switch (m) {
    case PunctuationMode::strip_terminal: return "strip-terminal";
    case PunctuationMode::add_terminal: return "add-terminal";
    case PunctuationMode::swap_terminal: return "swap-terminal";
  }
  return {};
}

inline TypoOp parse_typo_op(std::string_view s) {
  const auto n = detail::normalize_name(s);
  if (n == "adjacent swap" || n == "swap") return TypoOp::adjacent_swap;
  if (n == "char drop" || n == "drop") return TypoOp::char_drop;
  if (n == "char double" || n == "double") return TypoOp::char_double;
  throw ConfigError("unknown typo op '" + std::string(s) + "'");
}

inline std::string to_string(TypoOp op) {
  switch (op) {
    case TypoOp::adjacent_swap: return "adjacent-swap";
    case TypoOp::char_drop: return "char-drop";
    case TypoOp::char_double: return "char-double";
  }
  return {};
}

inline nlohmann::json to_json(const NoiseConfig& cfg) {
  nlohmann::json j = {{"seed", cfg.seed}, {"p_space", cfg.p_space}, {"p_typo", cfg.p_typo}};
  auto ops = nlohmann::json::array();
  for (auto op : cfg.typo_ops) ops.push_back(to_string(op));
  j["typo_ops"] = ops;
  j["casing"] = cfg.casing ? nlohmann::json(to_string(*cfg.casing)) : nlohmann::json(nullptr);
  j["punctuation"] = cfg.punctuation ? nlohmann::json(to_string(*cfg.punctuation)) : nlohmann::json(nullptr);
  j["p_label_separator"] = cfg.p_label_separator;
  return j;
}

}  // namespace promptvar
