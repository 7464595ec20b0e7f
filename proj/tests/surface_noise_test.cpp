#include <gtest/gtest.h>

#include <string>

#include "noise_oracles.hpp"
#include "promptvar/surface_noise.hpp"

namespace pv = promptvar;

namespace {

pv::NoiseConfig quiet(std::uint64_t seed = 0) {
  pv::NoiseConfig cfg;
  cfg.seed = seed;
  cfg.p_space = 0;
  cfg.p_typo = 0;
  return cfg;
}

void expect_well_formed(const pv::EditLog& log, std::size_t input_size) {
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_LE(log[i].begin, log[i].end);
    EXPECT_LE(log[i].end, input_size);
    if (i > 0) {
      EXPECT_LE(log[i - 1].end, log[i].begin);
      EXPECT_TRUE(log[i - 1].end < log[i].begin || log[i - 1].begin < log[i].begin);
    }
  }
}

}  // namespace

TEST(Spacing, ZeroProbabilityIsIdentity) {
  auto cfg = quiet();
  pv::Rng rng(1);
  const auto r = pv::perturb_spacing("Q: text and more", cfg, rng);
  EXPECT_EQ(r.text, "Q: text and more");
  EXPECT_TRUE(r.log.empty());
}

TEST(Spacing, ForcedBoundaryInsertsSpaces) {
  auto cfg = quiet();
  cfg.p_space = 1.0;
  pv::Rng rng(3);
  const auto r = pv::perturb_spacing("Q: text", cfg, rng);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.log[0].begin, 3u);
  EXPECT_GE(r.log[0].replacement.size(), 1u);
  EXPECT_LE(r.log[0].replacement.size(), 3u);
  EXPECT_EQ(r.text, "Q: " + r.log[0].replacement + "text");
  EXPECT_EQ(oracle::collapse_space_runs(r.text), "Q: text");
}

TEST(Spacing, CollapseEqualityOverSeeds) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto cfg = quiet(seed);
    cfg.p_space = 0.5;
    pv::Rng rng(seed);
    for (const auto& s : oracle::corpus()) {
      const auto r = pv::perturb_spacing(s, cfg, rng);
      ASSERT_EQ(oracle::collapse_space_runs(r.text), oracle::collapse_space_runs(s)) << s;
      for (const auto& e : r.log) ASSERT_EQ(e.replacement.find_first_not_of(' '), std::string::npos);
    }
  }
}

TEST(Typos, AppleBecomesAplpe) {
  auto cfg = quiet();
  cfg.p_typo = 1.0;
  pv::Rng rng(0);
  EXPECT_EQ(pv::perturb_typos("apple", cfg, rng).text, "aplpe");
  EXPECT_EQ(pv::make_typo("apple", pv::TypoOp::adjacent_swap, rng)->replacement, "lp");
}

TEST(Typos, ZeroProbabilityIsIdentity) {
  auto cfg = quiet();
  pv::Rng rng(9);
  EXPECT_EQ(pv::perturb_typos("The quick brown fox", cfg, rng).text, "The quick brown fox");
}

TEST(Typos, ShortWordsAndProtectedSpansUntouched) {
  auto cfg = quiet();
  cfg.p_typo = 1.0;
  cfg.typo_ops = {pv::TypoOp::adjacent_swap, pv::TypoOp::char_drop, pv::TypoOp::char_double};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    pv::Rng rng(seed);
    const std::string s = "an ox is at {question} now";
    const auto r = pv::perturb_typos(s, cfg, rng, {{12, 22}});
    EXPECT_NE(r.text.find("{question}"), std::string::npos);
    EXPECT_EQ(r.text.substr(0, 12), "an ox is at ");
  }
}

TEST(Typos, EveryChangedWordAtDistanceOne) {
  auto cfg = quiet();
  cfg.p_typo = 0.5;
  cfg.typo_ops = {pv::TypoOp::adjacent_swap, pv::TypoOp::char_drop, pv::TypoOp::char_double};
  std::size_t changed = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    pv::Rng rng(seed);
    for (const auto& s : oracle::corpus()) {
      const auto r = pv::perturb_typos(s, cfg, rng);
      const auto before = oracle::letter_runs(s);
      const auto after = oracle::letter_runs(r.text);
      ASSERT_EQ(before.size(), after.size()) << s << " -> " << r.text;
      for (std::size_t w = 0; w < before.size(); ++w) {
        if (before[w] == after[w]) continue;
        ++changed;
        ASSERT_EQ(oracle::damerau_levenshtein(before[w], after[w]), 1u) << before[w] << " -> " << after[w];
        ASSERT_GE(before[w].size(), 3u);
      }
    }
  }
  EXPECT_GT(changed, 1000u);
}

TEST(Casing, Modes) {
  pv::Rng rng(0);
  EXPECT_EQ(pv::perturb_casing("Answer:", pv::CasingMode::upper, rng).text, "ANSWER:");
  EXPECT_EQ(pv::perturb_casing("all lower here", pv::CasingMode::lower, rng).text, "all lower here");
  EXPECT_TRUE(pv::perturb_casing("all lower here", pv::CasingMode::lower, rng).log.empty());
  EXPECT_EQ(pv::perturb_casing("hello WORLD 3x", pv::CasingMode::title, rng).text, "Hello World 3X");
  const auto r = pv::perturb_casing("Answer:", pv::CasingMode::lower, rng);
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.log[0], (pv::Edit{0, 1, "casing", "a"}));
}

TEST(Casing, RandomTokenCaseFoldEquality) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    pv::Rng rng(seed);
    for (const auto& s : oracle::corpus()) {
      const auto r = pv::perturb_casing(s, pv::CasingMode::random_token, rng);
      ASSERT_EQ(oracle::casefold(r.text), oracle::casefold(s));
      ASSERT_EQ(pv::apply_edits(s, r.log), r.text);
    }
  }
}

TEST(Punctuation, TerminalModes) {
  pv::Rng rng(0);
  auto cfg = quiet();
  cfg.punctuation = pv::PunctuationMode::strip_terminal;
  EXPECT_EQ(pv::perturb_punctuation("Answer the question.", cfg, rng).text, "Answer the question");
  cfg.punctuation = pv::PunctuationMode::add_terminal;
  EXPECT_EQ(pv::perturb_punctuation("Answer the question.", cfg, rng).text, "Answer the question.");
  EXPECT_EQ(pv::perturb_punctuation("Answer the question", cfg, rng).text, "Answer the question.");
  // Never appended after a trailing placeholder.
  EXPECT_EQ(pv::perturb_punctuation("A: {answer}", cfg, rng, {{3, 11}}).text, "A: {answer}");
  cfg.punctuation = pv::PunctuationMode::swap_terminal;
  const auto swapped = pv::perturb_punctuation("Go now.", cfg, rng).text;
  EXPECT_TRUE(swapped == "Go now!" || swapped == "Go now;") << swapped;
}

TEST(Punctuation, LabelSeparator) {
  pv::Rng rng(0);
  auto cfg = quiet();
  cfg.p_label_separator = 1.0;
  const auto r = pv::perturb_punctuation("Q: {question}\nA: {answer}", cfg, rng);
  EXPECT_EQ(r.log.size(), 2u);
  EXPECT_EQ(oracle::alnum_subsequence(r.text), oracle::alnum_subsequence("Q: {question}\nA: {answer}"));
}

TEST(Punctuation, LetterDigitSubsequencePreserved) {
  const pv::PunctuationMode modes[] = {pv::PunctuationMode::strip_terminal, pv::PunctuationMode::add_terminal,
                                       pv::PunctuationMode::swap_terminal};
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto cfg = quiet(seed);
    cfg.punctuation = modes[seed % 3];
    cfg.p_label_separator = 0.5;
    pv::Rng rng(seed);
    for (const auto& s : oracle::corpus()) {
      const auto r = pv::perturb_punctuation(s, cfg, rng);
      ASSERT_EQ(oracle::alnum_subsequence(r.text), oracle::alnum_subsequence(s)) << s << " -> " << r.text;
    }
  }
}

TEST(SurfaceNoise, IdentityWhenEverythingOff) {
  for (const auto& s : oracle::corpus()) {
    const auto r = pv::apply_surface_noise(s, quiet(5));
    EXPECT_EQ(r.text, s);
    EXPECT_TRUE(r.log.empty());
  }
}

TEST(SurfaceNoise, QaFormatPlaceholdersIntact) {
  const std::string fmt = "Q: {question}\nA: {answer}";
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    pv::NoiseConfig cfg;
    cfg.seed = seed;
    cfg.p_space = 0.9;
    cfg.p_typo = 1.0;
    cfg.typo_ops = {pv::TypoOp::adjacent_swap, pv::TypoOp::char_drop, pv::TypoOp::char_double};
    cfg.casing = pv::CasingMode::random_token;
    cfg.punctuation = pv::PunctuationMode::add_terminal;
    cfg.p_label_separator = 0.5;
    const auto r = pv::apply_surface_noise(fmt, cfg);
    ASSERT_NE(r.text.find("{question}"), std::string::npos) << r.text;
    ASSERT_NE(r.text.find("{answer}"), std::string::npos) << r.text;
    ASSERT_EQ(pv::extract_placeholders(r.text), pv::extract_placeholders(fmt));
  }
}

TEST(SurfaceNoise, DeterministicAndReplayable) {
  const pv::CasingMode casings[] = {pv::CasingMode::lower, pv::CasingMode::upper, pv::CasingMode::title,
                                    pv::CasingMode::random_token};
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    pv::NoiseConfig cfg;
    cfg.seed = seed;
    cfg.p_space = 0.4;
    cfg.p_typo = 0.4;
    cfg.typo_ops = {pv::TypoOp::adjacent_swap, pv::TypoOp::char_drop, pv::TypoOp::char_double};
    cfg.casing = casings[seed % 4];
    cfg.punctuation = static_cast<pv::PunctuationMode>(seed % 3);
    cfg.p_label_separator = 0.3;
    for (const auto& s : oracle::corpus()) {
      const auto a = pv::apply_surface_noise(s, cfg);
      const auto b = pv::apply_surface_noise(s, cfg);
      ASSERT_EQ(a.text, b.text);
      ASSERT_EQ(a.log, b.log);
      ASSERT_EQ(pv::apply_edits(s, a.log), a.text) << s;
      expect_well_formed(a.log, s.size());
      ASSERT_EQ(oracle::brace_names(a.text), oracle::brace_names(s)) << s << " -> " << a.text;
      ASSERT_EQ(oracle::casefold(oracle::alnum_subsequence(a.text)).size() > 0,
                oracle::alnum_subsequence(s).size() > 0);
    }
  }
}

TEST(SurfaceNoise, ExtraProtectedSpans) {
  pv::NoiseConfig cfg;
  cfg.p_typo = 1.0;
  cfg.casing = pv::CasingMode::upper;
  const std::string s = "Q: capital of France\nA: Paris";
  const auto r = pv::apply_surface_noise(s, cfg, {{24, 29}});
  EXPECT_TRUE(r.text.ends_with("Paris")) << r.text;
}

TEST(SurfaceNoise, RejectsBadProbabilities) {
  pv::NoiseConfig cfg;
  cfg.p_space = 1.5;
  EXPECT_THROW(pv::apply_surface_noise("x", cfg), pv::ConfigError);
}
