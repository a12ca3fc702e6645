#include "reqdep/corpus.hpp"
#include "reqdep/errors.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace reqdep;
using namespace reqdep::corpus;
using testing_support::TempDir;

namespace {

Dataset three_rows(const TempDir& dir) {
    return load_requirements(dir.write("reqs.csv", "id,text\nr1,Alpha one\nr2,Beta two\nr3,Gamma three\n"),
                             Format::Csv);
}

}  // namespace

TEST(LoadRequirements, ThreeRowCsv) {
    TempDir dir;
    const auto ds = three_rows(dir);
    ASSERT_EQ(ds.requirements.size(), 3u);
    EXPECT_EQ(ds.source, "reqs");
    EXPECT_EQ(ds.requirements[0].id, "r1");
    EXPECT_EQ(ds.requirements[2].text, "Gamma three");
}

TEST(LoadRequirements, EmptyTextNamesTheRow) {
    TempDir dir;
    const auto p = dir.write("bad.csv", "id,text\nr1,ok\nr2,   \n");
    try {
        load_requirements(p, Format::Csv);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
    }
}

TEST(LoadRequirements, DuplicateIdIsIntegrityError) {
    TempDir dir;
    EXPECT_THROW(load_requirements(dir.write("d.csv", "id,text\nr1,a\nr1,b\n"), Format::Csv),
                 IntegrityError);
}

TEST(LoadRequirements, JsonArrayKeepsInputOrder) {
    TempDir dir;
    std::string body = "[";
    std::vector<std::string> ids;
    for (int i = 9; i >= 0; --i) {
        ids.push_back("q" + std::to_string(i));
        body += std::string(i == 9 ? "" : ",") + "{\"id\":\"q" + std::to_string(i) +
                "\",\"text\":\"requirement " + std::to_string(i) + "\"}";
    }
    body += "]";
    const auto ds = load_requirements(dir.write("r.json", body), Format::Json, "src");
    ASSERT_EQ(ds.requirements.size(), 10u);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        EXPECT_EQ(ds.requirements[i].id, ids[i]);
        EXPECT_EQ(ds.requirements[i].source, "src");
    }
}

TEST(LoadPairs, GroundTruthFromConflicts) {
    TempDir dir;
    auto ds = three_rows(dir);
    const auto loaded =
        load_pairs(dir.write("p.csv", "anchor_id,candidate_id,label\nr1,r2,Conflict\nr1,r3,neutral\n"), ds);
    ASSERT_EQ(loaded.pairs.size(), 2u);
    EXPECT_EQ(loaded.pairs[1].label, Label::Neutral);
    ASSERT_EQ(loaded.ground_truth.size(), 1u);
    EXPECT_EQ(loaded.ground_truth.at("r1"), (std::set<std::string>{"r2"}));
}

TEST(LoadPairs, TwoConflictPartnersGiveMultiLabelTruth) {
    TempDir dir;
    auto ds = three_rows(dir);
    const auto loaded =
        load_pairs(dir.write("p.csv", "anchor_id,candidate_id,label\nr1,r2,Conflict\nr1,r3,CONFLICT\n"), ds);
    EXPECT_EQ(loaded.ground_truth.at("r1").size(), 2u);
}

TEST(LoadPairs, UnknownIdAndUnknownLabel) {
    TempDir dir;
    auto ds = three_rows(dir);
    EXPECT_THROW(load_pairs(dir.write("a.csv", "anchor_id,candidate_id,label\nr1,r9,Conflict\n"), ds),
                 IntegrityError);
    try {
        load_pairs(dir.write("b.csv", "anchor_id,candidate_id,label\nr1,r2,Conflict\nr1,r3,Maybe\n"), ds);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
    }
}

TEST(LoadPairs, CountsLargeSyntheticFile) {
    // A pairs file with the class sizes of a large industrial corpus.
    TempDir dir;
    std::string reqs = "id,text\n";
    for (int i = 0; i < 200; ++i) reqs += "u" + std::to_string(i) + ",requirement " + std::to_string(i) + "\n";
    auto ds = load_requirements(dir.write("uav.csv", reqs), Format::Csv);
    std::string pairs = "anchor_id,candidate_id,label\n";
    std::size_t written = 0;
    for (int a = 0; a < 200 && written < 5553 + 3400; ++a) {
        for (int c = 0; c < 200 && written < 5553 + 3400; ++c) {
            if (a == c) continue;
            pairs += "u" + std::to_string(a) + ",u" + std::to_string(c) + "," +
                     (written < 5553 ? "Conflict" : "Neutral") + "\n";
            ++written;
        }
    }
    attach_pairs(ds, dir.write("uav_pairs.csv", pairs));
    const auto stats = dataset_stats(ds);
    EXPECT_EQ(stats.conflict_count, 5553u);
    EXPECT_EQ(stats.neutral_count, 3400u);
}

TEST(Deduplicate, ByteIdenticalTextRemapsPairs) {
    Dataset ds{"s", {{"a", "s", "Same text"}, {"b", "s", "Same text"}, {"c", "s", "Other"}}, {}, {}};
    ds.pairs = {{"c", "b", Label::Conflict}, {"a", "b", Label::Neutral}};
    ds.ground_truth = build_ground_truth(ds.pairs);
    const auto out = deduplicate(ds);
    ASSERT_EQ(out.requirements.size(), 2u);
    EXPECT_EQ(out.requirements[0].id, "a");
    ASSERT_EQ(out.pairs.size(), 1u);  // (a,b) became a self-pair
    EXPECT_EQ(out.pairs[0], (RequirementPair{"c", "a", Label::Conflict}));
    EXPECT_EQ(out.ground_truth.at("c"), (std::set<std::string>{"a"}));
}

TEST(Deduplicate, CaseAndWhitespaceVariantsCollapse) {
    Dataset ds{"s", {{"a", "s", "The UAV  shall land."}, {"b", "s", "the uav shall LAND"}}, {}, {}};
    EXPECT_EQ(deduplicate(ds).requirements.size(), 1u);
}

TEST(Deduplicate, NoDuplicatesIsIdentity) {
    TempDir dir;
    auto ds = three_rows(dir);
    attach_pairs(ds, dir.write("p.csv", "anchor_id,candidate_id,label\nr1,r2,Conflict\n"));
    EXPECT_EQ(deduplicate(ds), ds);
}

TEST(Deduplicate, IdempotentOnRandomCorpora) {
    testing_support::Rng rng(7);
    const std::vector<std::string> texts{"Alpha", "alpha.", "Beta", "BETA  ", "gamma", "delta!"};
    for (int trial = 0; trial < 200; ++trial) {
        Dataset ds{"s", {}, {}, {}};
        const auto n = testing_support::uniform(rng, 1, 12);
        for (std::size_t i = 0; i < n; ++i) {
            ds.requirements.push_back({testing_support::rid(i), "s", texts[rng() % texts.size()]});
        }
        for (int p = 0; p < 10; ++p) {
            const auto a = rng() % n;
            const auto c = rng() % n;
            if (a == c) continue;
            ds.pairs.push_back({testing_support::rid(a), testing_support::rid(c),
                                rng() % 2 ? Label::Conflict : Label::Neutral});
        }
        ds.ground_truth = build_ground_truth(ds.pairs);
        const auto once = deduplicate(ds);
        EXPECT_EQ(deduplicate(once), once);
        const auto st = dataset_stats(once);
        EXPECT_EQ(st.conflict_count + st.neutral_count, once.pairs.size());
    }
}

TEST(Stats, CountsAndAverages) {
    Dataset ds{"s",
               {{"a", "s", "one two three four"}, {"b", "s", "one two three four five six"}, {"c", "s", "x"}},
               {{"a", "b", Label::Conflict}},
               {}};
    auto st = dataset_stats(ds);
    EXPECT_EQ(st.conflict_count, 1u);
    EXPECT_DOUBLE_EQ(st.avg_tokens_pair.first, 4.0);
    EXPECT_DOUBLE_EQ(st.avg_tokens_pair.second, 6.0);

    ds.pairs = {{"a", "b", Label::Conflict}, {"a", "c", Label::Conflict}, {"b", "c", Label::Neutral}};
    st = dataset_stats(ds);
    EXPECT_EQ(st.conflict_count, 2u);
    EXPECT_EQ(st.neutral_count, 1u);
}

TEST(Stats, VocabularyOfSingleText) {
    // Tokens: the, uav, shall, land, /, hover.
    Dataset ds{"s", {{"a", "s", "the uav shall land / the uav shall hover"}}, {}, {}};
    EXPECT_EQ(dataset_stats(ds).vocabulary_size, 6u);
}

TEST(RoundTrip, CsvWriteAndReload) {
    TempDir dir;
    Dataset ds{"rt",
               {{"r1", "rt", "Text, with \"quotes\""}, {"r2", "rt", "Line\nbreak"}, {"r3", "rt", "plain"}},
               {{"r1", "r2", Label::Conflict}, {"r2", "r3", Label::Neutral}},
               {}};
    ds.ground_truth = build_ground_truth(ds.pairs);
    write_requirements_csv(ds, dir / "rt.csv");
    write_pairs_csv(ds.pairs, dir / "rt_pairs.csv");
    auto back = load_requirements(dir / "rt.csv", Format::Csv, "rt");
    attach_pairs(back, dir / "rt_pairs.csv");
    EXPECT_EQ(back, ds);
}

TEST(UnifySources, FirstSourceWins) {
    Dataset a{"a", {{"1", "a", "Shared text"}, {"2", "a", "Only a"}}, {}, {}};
    Dataset b{"b", {{"9", "b", "shared TEXT"}, {"8", "b", "Only b"}}, {}, {}};
    const std::vector<Dataset> both{a, b};
    const auto u = unify_sources(both);
    ASSERT_EQ(u.size(), 3u);
    EXPECT_EQ(u[0].source, "a");
    EXPECT_EQ(u[2].id, "8");
}
