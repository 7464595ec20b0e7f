#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "promptvar/structural.hpp"

namespace pv = promptvar;

TEST(EditDemonstrations, ZeroCountIsZeroShot) {
  EXPECT_TRUE(pv::edit_demonstrations(5, 0, 0, pv::DemoOrdering::shuffled, 1).demo_row_indices.empty());
}

TEST(EditDemonstrations, FullPoolIsPermutationOfRemainingRows) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto sel = pv::edit_demonstrations(4, 0, 3, pv::DemoOrdering::shuffled, seed).demo_row_indices;
    std::sort(sel.begin(), sel.end());
    EXPECT_EQ(sel, (std::vector<std::size_t>{1, 2, 3}));
  }
}

TEST(EditDemonstrations, CountTooLarge) {
  EXPECT_THROW(pv::edit_demonstrations(4, 0, 4, pv::DemoOrdering::as_sampled, 0), pv::ConfigError);
  EXPECT_NO_THROW(pv::edit_demonstrations(4, std::nullopt, 4, pv::DemoOrdering::as_sampled, 0));
}

TEST(EditDemonstrations, AsSampledKeepsTableOrderAndIsDeterministic) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto a = pv::edit_demonstrations(10, 4, 3, pv::DemoOrdering::as_sampled, seed).demo_row_indices;
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
    EXPECT_EQ(a, pv::edit_demonstrations(10, 4, 3, pv::DemoOrdering::as_sampled, seed).demo_row_indices);
  }
}

// Sampling is uniform over the eligible rows: each of the 9 rows should be
// picked about 3/9 of the time.
TEST(EditDemonstrations, MarginalsRoughlyUniform) {
  std::map<std::size_t, int> hits;
  const int trials = 9000;
  for (int seed = 0; seed < trials; ++seed)
    for (auto r : pv::edit_demonstrations(10, 0, 3, pv::DemoOrdering::as_sampled, seed).demo_row_indices) ++hits[r];
  EXPECT_EQ(hits.count(0), 0u);
  for (std::size_t r = 1; r < 10; ++r) EXPECT_NEAR(hits[r] / double(trials), 1.0 / 3.0, 0.03) << r;
}

TEST(EnumerateList, Styles) {
  EXPECT_EQ(pv::enumerate_list({"Paris", "Rome"}, pv::EnumerationStyle::upper_alpha),
            (std::vector<std::string>{"A. Paris", "B. Rome"}));
  EXPECT_EQ(pv::enumerate_list({"x"}, pv::EnumerationStyle::decimal), std::vector<std::string>{"1. x"});
  EXPECT_EQ(pv::enumerate_list({"x", "y"}, pv::EnumerationStyle::lower_alpha, ") "),
            (std::vector<std::string>{"a) x", "b) y"}));
}

TEST(EnumerateList, TwentySixLowerAlphaAndLimit) {
  std::vector<std::string> items;
  for (int i = 0; i < 26; ++i) items.push_back("item" + std::to_string(i));
  const auto out = pv::enumerate_list(items, pv::EnumerationStyle::lower_alpha);
  for (std::size_t i = 0; i < 26; ++i) {
    EXPECT_EQ(out[i][0], static_cast<char>('a' + i));
    EXPECT_TRUE(out[i].ends_with(items[i]));
  }
  items.push_back("one more");
  EXPECT_THROW(pv::enumerate_list(items, pv::EnumerationStyle::upper_alpha), pv::ConfigError);
  EXPECT_NO_THROW(pv::enumerate_list(items, pv::EnumerationStyle::decimal));
}

TEST(ShuffleList, GoldMovedFromBToC) {
  // Item at B (index 1) moved to C (index 2).
  const std::vector<std::string> items = {"w", "x", "y", "z"};
  const auto r = pv::apply_permutation(items, "B", pv::GoldMode::index, {0, 2, 1, 3});
  EXPECT_EQ(r.items, (std::vector<std::string>{"w", "y", "x", "z"}));
  EXPECT_EQ(r.gold, "C");
}

TEST(ShuffleList, IdentityKeepsGold) {
  EXPECT_EQ(pv::shuffle_list({"only"}, "0", pv::GoldMode::index, 5).gold, "0");
  const std::vector<std::string> items = {"a", "b", "c"};
  EXPECT_EQ(pv::apply_permutation(items, "b", pv::GoldMode::value, {0, 1, 2}).gold, "b");
  EXPECT_EQ(pv::apply_permutation(items, "c", pv::GoldMode::index, {0, 1, 2}).gold, "c");
}

TEST(ShuffleList, Errors) {
  const std::vector<std::string> items = {"a", "b", "a"};
  EXPECT_THROW(pv::shuffle_list(items, "a", pv::GoldMode::value, 0), pv::ConfigError);
  EXPECT_THROW(pv::shuffle_list(items, "z", pv::GoldMode::value, 0), pv::ConfigError);
  EXPECT_THROW(pv::shuffle_list(items, "3", pv::GoldMode::index, 0), pv::ConfigError);
  EXPECT_THROW(pv::shuffle_list(items, "D", pv::GoldMode::index, 0), pv::ConfigError);
  EXPECT_THROW(pv::apply_permutation(items, "0", pv::GoldMode::index, {0, 0, 1}), pv::ConfigError);
}

// Brute force over every permutation of 2..6 items, both gold modes and
// every gold position.
TEST(ShuffleList, ExhaustiveRemapPreservesGoldItem) {
  for (std::size_t n = 2; n <= 6; ++n) {
    std::vector<std::string> items;
    for (std::size_t i = 0; i < n; ++i) items.push_back("opt" + std::to_string(i));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
      for (std::size_t g = 0; g < n; ++g) {
        const auto v = pv::apply_permutation(items, items[g], pv::GoldMode::value, perm);
        ASSERT_EQ(v.items[v.gold_position], items[g]);
        ASSERT_EQ(v.gold, items[g]);
        const auto letter = std::string(1, static_cast<char>('A' + g));
        const auto x = pv::apply_permutation(items, letter, pv::GoldMode::index, perm);
        ASSERT_EQ(x.items[static_cast<std::size_t>(x.gold[0] - 'A')], items[g]);
        const auto y = pv::apply_permutation(items, std::to_string(g), pv::GoldMode::index, perm);
        ASSERT_EQ(y.items[std::stoul(y.gold)], items[g]);
        std::multiset<std::string> a(items.begin(), items.end()), b(x.items.begin(), x.items.end());
        ASSERT_EQ(a, b);
        // Enumerating after shuffling labels the gold item at the remapped index.
        const auto labeled = pv::enumerate_list(x.items, pv::EnumerationStyle::upper_alpha);
        ASSERT_EQ(labeled[x.gold_position], x.gold + ". " + items[g]);
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
}

TEST(ShuffleList, SeededIsDeterministicAndCoversAllOrders) {
  const std::vector<std::string> items = {"a", "b", "c"};
  std::set<std::vector<std::size_t>> seen;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto r = pv::shuffle_list(items, "A", pv::GoldMode::index, seed);
    EXPECT_EQ(r.permutation, pv::shuffle_list(items, "A", pv::GoldMode::index, seed).permutation);
    EXPECT_EQ(r.items[r.gold_position], "a");
    seen.insert(r.permutation);
  }
  EXPECT_EQ(seen.size(), 6u);
}
