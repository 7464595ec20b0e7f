#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "promptvar/error.hpp"
#include "promptvar/random.hpp"
#include "promptvar/template.hpp"
#include "promptvar/text.hpp"

namespace promptvar {

// ---------------------------------------------------------------------------
// Demonstration editing
// ---------------------------------------------------------------------------

struct DemoSelection {
  std::vector<std::size_t> demo_row_indices;
  std::uint64_t seed = 0;
};

// Samples `count` distinct rows uniformly from [0, pool_size) minus
// `excluded`. as_sampled keeps table order; shuffled applies a seeded
// permutation to the selection.
inline DemoSelection edit_demonstrations(std::size_t pool_size, std::optional<std::size_t> excluded, std::size_t count,
                                         DemoOrdering ordering, std::uint64_t seed) {
  const std::size_t available = pool_size - (excluded && *excluded < pool_size ? 1 : 0);
  if (count > available)
    throw ConfigError("cannot select " + std::to_string(count) + " demonstrations from a pool of " +
                      std::to_string(available) + " eligible rows");
  DemoSelection sel;
  sel.seed = seed;
  if (count == 0) return sel;

  std::vector<std::size_t> pool;
  pool.reserve(available);
  for (std::size_t i = 0; i < pool_size; ++i)
    if (!excluded || i != *excluded) pool.push_back(i);

  Rng rng(derive_seed(seed, "demo-sample"));
  // Partial Fisher-Yates: the first `count` slots are a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  sel.demo_row_indices.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(sel.demo_row_indices.begin(), sel.demo_row_indices.end());
  if (ordering == DemoOrdering::shuffled) {
    Rng order(derive_seed(seed, "demo-order"));
    order.shuffle(sel.demo_row_indices);
  }
  return sel;
}

// ---------------------------------------------------------------------------
// Enumeration
// ---------------------------------------------------------------------------

inline std::string enumeration_label(std::size_t i, EnumerationStyle style) {
  switch (style) {
    case EnumerationStyle::decimal: return std::to_string(i + 1);
    case EnumerationStyle::upper_alpha:
      if (i >= 26) throw ConfigError("alphabetic enumeration supports at most 26 items");
      return std::string(1, static_cast<char>('A' + i));
    case EnumerationStyle::lower_alpha:
      if (i >= 26) throw ConfigError("alphabetic enumeration supports at most 26 items");
      return std::string(1, static_cast<char>('a' + i));
  }
  return {};
}

inline std::vector<std::string> enumerate_list(const std::vector<std::string>& items, EnumerationStyle style,
                                               std::string_view separator = ". ") {
  if (style != EnumerationStyle::decimal && items.size() > 26)
    throw ConfigError("alphabetic enumeration supports at most 26 items, got " + std::to_string(items.size()));
  std::vector<std::string> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) out.push_back(enumeration_label(i, style) + std::string(separator) + items[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Shuffling with gold remapping
// ---------------------------------------------------------------------------

// How an index-mode gold value was written, so a remapped index is written
// back the same way.
enum class IndexNotation { number, upper_letter, lower_letter };

struct ResolvedIndex {
  std::size_t index = 0;
  IndexNotation notation = IndexNotation::number;
};

// Resolves "2" -> 2, "B"/"b" -> 1 (also "B." and "(B)").
inline ResolvedIndex resolve_gold_index(std::string_view gold, std::size_t n) {
  auto g = text::trim(gold);
  if (g.size() >= 2 && g.front() == '(' && g.back() == ')') g = g.substr(1, g.size() - 2);
  if (!g.empty() && (g.back() == '.' || g.back() == ')')) g.remove_suffix(1);
  ResolvedIndex r;
  if (g.size() == 1 && text::is_alpha(g[0])) {
    r.notation = text::is_upper(g[0]) ? IndexNotation::upper_letter : IndexNotation::lower_letter;
    r.index = static_cast<std::size_t>(text::to_upper(g[0]) - 'A');
  } else if (!g.empty() && std::all_of(g.begin(), g.end(), text::is_digit) && g.size() < 10) {
    r.index = std::stoul(std::string(g));
  } else {
    throw ConfigError("gold '" + std::string(gold) + "' is not an index or option letter");
  }
  if (r.index >= n)
    throw ConfigError("gold index '" + std::string(gold) + "' is out of range for " + std::to_string(n) + " items");
  return r;
}

inline std::string write_gold_index(std::size_t index, IndexNotation notation) {
  switch (notation) {
    case IndexNotation::number: return std::to_string(index);
    case IndexNotation::upper_letter: return std::string(1, static_cast<char>('A' + index));
    case IndexNotation::lower_letter: return std::string(1, static_cast<char>('a' + index));
  }
  return {};
}

// Position of the gold item in `items`.
inline std::size_t locate_gold(const std::vector<std::string>& items, std::string_view gold, GoldMode mode) {
  if (mode == GoldMode::index) return resolve_gold_index(gold, items.size()).index;
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i] != gold) continue;
    if (found) throw ConfigError("gold value '" + std::string(gold) + "' appears more than once in the list");
    found = i;
  }
  if (!found) throw ConfigError("gold value '" + std::string(gold) + "' is not one of the list items");
  return *found;
}

struct ShuffleResult {
  std::vector<std::string> items;
  // Gold in the notation it came in: same text for value mode, remapped
  // index/letter for index mode.
  std::string gold;
  std::size_t gold_position = 0;
  // permutation[new_position] = old_position.
  std::vector<std::size_t> permutation;
};

inline bool is_permutation_of_range(const std::vector<std::size_t>& p) {
  std::vector<bool> seen(p.size(), false);
  for (auto v : p) {
    if (v >= p.size() || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

// Reorders items by `permutation` and remaps the gold to follow its item.
inline ShuffleResult apply_permutation(const std::vector<std::string>& items, std::string_view gold, GoldMode mode,
                                       const std::vector<std::size_t>& permutation) {
  if (permutation.size() != items.size() || !is_permutation_of_range(permutation))
    throw ConfigError("permutation is not a bijection over the list positions");
  const auto old_pos = locate_gold(items, gold, mode);
  ShuffleResult r;
  r.permutation = permutation;
  r.items.reserve(items.size());
  for (std::size_t k = 0; k < permutation.size(); ++k) {
    r.items.push_back(items[permutation[k]]);
    if (permutation[k] == old_pos) r.gold_position = k;
  }
  if (mode == GoldMode::index) r.gold = write_gold_index(r.gold_position, resolve_gold_index(gold, items.size()).notation);
  else r.gold = std::string(gold);
  return r;
}

inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "list-shuffle"));
  rng.shuffle(p);
  return p;
}

// Uniform seeded shuffle; the identity permutation is a legal outcome.
inline ShuffleResult shuffle_list(const std::vector<std::string>& items, std::string_view gold, GoldMode mode,
                                  std::uint64_t seed) {
  return apply_permutation(items, gold, mode, seeded_permutation(items.size(), seed));
}

}  // namespace promptvar
