#include "reqdep/csv.hpp"
#include "reqdep/errors.hpp"
#include "reqdep/fs.hpp"
#include "reqdep/label.hpp"
#include "reqdep/text.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace reqdep;
using testing_support::TempDir;

TEST(Text, NormalizeCollapsesCaseWhitespaceAndTrailingPunctuation) {
    EXPECT_EQ(text::normalize("  The UAV   shall\tLAND.  "), "the uav shall land");
    EXPECT_EQ(text::normalize("a b!?"), "a b");
    EXPECT_EQ(text::normalize(""), "");
}

TEST(Text, IsNumber) {
    EXPECT_TRUE(text::is_number("5"));
    EXPECT_TRUE(text::is_number("2.5"));
    EXPECT_FALSE(text::is_number("2.5.1"));
    EXPECT_FALSE(text::is_number("five"));
    EXPECT_FALSE(text::is_number(""));
}

TEST(Text, Fnv1aKnownVectors) {
    EXPECT_EQ(text::fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(text::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Text, FormatDoubleRoundTrips) {
    for (double v : {0.1, 1.0 / 3.0, 2.7777777777777777e-05, 1e300, -0.0}) {
        EXPECT_EQ(std::stod(text::format_double(v)), v);
    }
}

TEST(Label, ParseIsCaseInsensitive) {
    EXPECT_EQ(parse_label(" conflict "), Label::Conflict);
    EXPECT_EQ(parse_label("NEUTRAL"), Label::Neutral);
    EXPECT_FALSE(parse_label("maybe"));
    EXPECT_EQ(to_string(Label::Conflict), "Conflict");
}

TEST(Csv, QuotedFieldsWithCommasQuotesAndNewlines) {
    const auto rows = csv::parse("id,text\nr1,\"a, \"\"quoted\"\"\nline\"\n\nr2,plain\n");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[1].fields[1], "a, \"quoted\"\nline");
    EXPECT_EQ(rows[2].fields[0], "r2");
    EXPECT_EQ(rows[2].line, 5u);
}

TEST(Csv, SkipsBom) {
    const auto rows = csv::parse("\xEF\xBB\xBFid,text\n");
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].fields[0], "id");
}

TEST(Csv, WriteThenParseRoundTrip) {
    const std::vector<std::string> fields{"a", "b,c", "d\"e", "f\ng", ""};
    std::ostringstream out;
    csv::write_row(out, fields);
    const auto rows = csv::parse(out.str());
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].fields, fields);
}

TEST(Fs, WriteAtomicReplacesContent) {
    TempDir dir;
    const auto p = dir / "x.txt";
    fs::write_atomic(p, "one");
    fs::write_atomic(p, "two");
    EXPECT_EQ(fs::read_text(p), "two");
    EXPECT_THROW(fs::read_text(dir / "missing.txt"), LookupError);
}
