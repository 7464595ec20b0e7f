#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "promptvar/dataset.hpp"

namespace pv = promptvar;

namespace {

std::filesystem::path data(const std::string& name) { return std::filesystem::path(PROMPTVAR_TEST_DATA) / name; }

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST(LoadTable, CsvWithHeaderAndTwoRows) {
  const auto t = pv::parse_table("question,answer\nWho?,Me\nWhat?,That\n", pv::DataFormat::csv);
  ASSERT_EQ(t.columns().size(), 2u);
  EXPECT_EQ(t.columns()[0].name, "question");
  EXPECT_EQ(t.columns()[1].name, "answer");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.row(1).at("answer"), "That");
  for (const auto& c : t.columns()) EXPECT_EQ(c.kind, pv::ColumnKind::text);
}

TEST(LoadTable, FiftyRowFileIndexedByLineCount) {
  const auto path = data("qa50.csv");
  const auto expected = count_lines(path) - 1;  // header
  const auto t = pv::load_table(path, pv::DataFormat::csv);
  ASSERT_EQ(t.size(), expected);
  ASSERT_EQ(expected, 50u);
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t.row(i).row_index, i);
}

TEST(LoadTable, HeterogeneousJsonlNamesFirstDivergentRecord) {
  try {
    pv::load_table(data("heterogeneous.jsonl"), pv::DataFormat::jsonl);
    FAIL() << "expected ParseError";
  } catch (const pv::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(LoadTable, MalformedJsonlReportsLine) {
  try {
    pv::parse_table("{\"a\": \"1\"}\n{\"a\": \n", pv::DataFormat::jsonl);
    FAIL();
  } catch (const pv::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(LoadTable, CsvFieldCountMismatchReportsLine) {
  try {
    pv::parse_table("a,b\n1,2\n3\n", pv::DataFormat::csv);
    FAIL();
  } catch (const pv::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(LoadTable, RejectsDuplicateColumnsAndZeroRows) {
  EXPECT_THROW(pv::parse_table("a,a\n1,2\n", pv::DataFormat::csv), pv::ParseError);
  EXPECT_THROW(pv::parse_table("a,b\n", pv::DataFormat::csv), pv::ParseError);
  EXPECT_THROW(pv::parse_table("[]", pv::DataFormat::json), pv::ParseError);
  EXPECT_THROW(pv::parse_table("[{\"a\":\"1\",\"a\":\"2\"}]", pv::DataFormat::json), pv::ParseError);
  EXPECT_THROW(pv::parse_table(",b\n1,2\n", pv::DataFormat::csv), pv::ParseError);
}

TEST(LoadTable, UnreadableSource) {
  EXPECT_THROW(pv::load_table("/nonexistent/file.csv", pv::DataFormat::csv), pv::IoError);
}

TEST(LoadTable, SizeLimit) {
  pv::LoadOptions opts;
  opts.max_bytes = 4;
  EXPECT_THROW(pv::parse_table("a,b\n1,2\n", pv::DataFormat::csv, opts), pv::ParseError);
}

TEST(LoadTable, QuotedFieldsAndCellsPreservedVerbatim) {
  const std::string csv = "q,a\r\n\"  padded , \"\"quoted\"\"\nline\",  Mixed CASE \r\n\"\",x\r\n";
  const auto t = pv::parse_table(csv, pv::DataFormat::csv);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.row(0).at("q"), "  padded , \"quoted\"\nline");
  EXPECT_EQ(t.row(0).at("a"), "  Mixed CASE ");
  EXPECT_EQ(t.row(1).at("q"), "");
}

TEST(LoadTable, JsonScalarsKeepSourceSpelling) {
  const auto t = pv::parse_table(R"([{"x": 1.50, "y": 7, "z": true, "w": null, "u": "Café"}])", pv::DataFormat::json);
  EXPECT_EQ(t.row(0).at("x"), "1.50");
  EXPECT_EQ(t.row(0).at("y"), "7");
  EXPECT_EQ(t.row(0).at("z"), "true");
  EXPECT_EQ(t.row(0).at("w"), "");
  EXPECT_EQ(t.row(0).at("u"), "Caf\xC3\xA9");
  EXPECT_EQ(t.columns()[0].name, "x");
  EXPECT_EQ(t.columns()[4].name, "u");
}

TEST(LoadTable, NestedRecordsRejected) {
  EXPECT_THROW(pv::parse_table(R"([{"x": [1, 2]}])", pv::DataFormat::json), pv::ParseError);
  EXPECT_THROW(pv::parse_table(R"({"x": {"y": 1}})", pv::DataFormat::jsonl), pv::ParseError);
}

TEST(LoadTable, InlineRows) {
  const auto t = pv::table_from_rows({{{"q", "1"}, {"a", ""}}, {{"a", "x"}, {"q", "2"}}});
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.row(0).at("a"), "");
  EXPECT_THROW(pv::table_from_rows({{{"q", "1"}}, {{"z", "2"}}}), pv::ParseError);
  EXPECT_THROW(pv::table_from_rows({}), pv::ParseError);
}

TEST(ListColumns, DeclaredAfterLoad) {
  const auto t = pv::load_table(data("mcq.jsonl"), pv::DataFormat::jsonl);
  EXPECT_EQ(t.find_column("options")->kind, pv::ColumnKind::text);
  const auto l = t.with_list_column("options", ",");
  EXPECT_EQ(l.find_column("options")->kind, pv::ColumnKind::list);
  EXPECT_EQ(pv::split_list_cell(l.row(0).at("options"), ","),
            (std::vector<std::string>{"Venus", "Mars", "Jupiter", "Saturn"}));
  EXPECT_THROW(t.with_list_column("missing"), pv::ConfigError);
  const auto empty = pv::parse_table("o\n\" \"\n", pv::DataFormat::csv);
  EXPECT_THROW(empty.with_list_column("o"), pv::ParseError);
}

TEST(ValidateColumns, ReportsMissingAndUnused) {
  const auto t = pv::parse_table("question,answer,id\nq,a,1\n", pv::DataFormat::csv);
  auto r = pv::validate_columns(t, {"question", "answer"});
  EXPECT_TRUE(r.ok);
  EXPECT_TRUE(r.missing.empty());
  EXPECT_EQ(r.unused, std::vector<std::string>{"id"});

  const auto t2 = pv::parse_table("question\nq\n", pv::DataFormat::csv);
  r = pv::validate_columns(t2, {"question", "answer"});
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.missing, std::vector<std::string>{"answer"});

  r = pv::validate_columns(t2, std::vector<std::string>{});
  EXPECT_TRUE(r.ok);
  EXPECT_TRUE(r.missing.empty());
}

// Exporting a table and reloading it gives back the same columns and cells,
// over generated tables with awkward cell contents.
TEST(RoundTrip, ExportAndReloadPreservesCells) {
  const std::vector<std::string> alphabet = {"a", " ", ",", "\"", "\n", "\r\n", "{", "}", "x y", "\xC3\xA9", "", "1.0"};
  std::uint64_t state = 12345;
  auto next = [&] {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    return static_cast<std::size_t>(state >> 33);
  };
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t ncols = 1 + next() % 4;
    const std::size_t nrows = 1 + next() % 5;
    std::vector<pv::InlineRow> rows;
    for (std::size_t r = 0; r < nrows; ++r) {
      pv::InlineRow row;
      for (std::size_t c = 0; c < ncols; ++c) {
        std::string cell;
        const std::size_t len = next() % 6;
        for (std::size_t k = 0; k < len; ++k) cell += alphabet[next() % alphabet.size()];
        // A lone empty single-column row is indistinguishable from a blank line.
        if (ncols == 1 && cell.empty()) cell = "v";
        row.emplace_back("col" + std::to_string(c), cell);
      }
      rows.push_back(row);
    }
    const auto table = pv::table_from_rows(rows);
    for (auto fmt : {pv::DataFormat::csv, pv::DataFormat::json, pv::DataFormat::jsonl}) {
      const auto reloaded = pv::parse_table(pv::write_table(table, fmt), fmt);
      ASSERT_EQ(reloaded, table) << "format " << pv::to_string(fmt) << " trial " << trial;
    }
  }
}
