#include "reqdep/extract.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace reqdep;
using namespace reqdep::extract;

namespace {

const std::string kR1 =
    "The UAV shall land automatically when Pilot communication is restored and estimated flight "
    "time lapsed is more than 5 minutes";
const std::string kR2 =
    "The UAV shall land automatically when Pilot communication is lost and the estimated flight "
    "time remaining is more than 5 minutes,";

bool has(const EntitySet& s, EntityKind kind, const std::string& value) {
    return s.entities.count(Entity{kind, value}) > 0;
}

std::string joined(const std::vector<std::string>& tokens) {
    std::string out = " ";
    for (const auto& t : tokens) out += t + " ";
    return out;
}

}  // namespace

TEST(NormalizeTokens, Examples) {
    EXPECT_EQ(normalize_tokens("The UAV shall land."), (std::vector<std::string>{"the", "uav", "shall", "land"}));
    EXPECT_TRUE(normalize_tokens("").empty());
    EXPECT_EQ(normalize_tokens("5 minutes!"), (std::vector<std::string>{"5", "minutes"}));
    EXPECT_EQ(normalize_tokens("wait 2.5 s, e-mail"), (std::vector<std::string>{"wait", "2.5", "s", "e-mail"}));
}

TEST(Lemmatize, Examples) {
    EXPECT_EQ(lemmatize("restored"), "restore");
    EXPECT_EQ(lemmatize("land"), "land");
    EXPECT_EQ(lemmatize("is"), "be");
}

TEST(Lemmatize, SuffixRules) {
    EXPECT_EQ(lemmatize("batteries"), "battery");
    EXPECT_EQ(lemmatize("passes"), "pass");
    EXPECT_EQ(lemmatize("watches"), "watch");
    EXPECT_EQ(lemmatize("logs"), "log");
    EXPECT_EQ(lemmatize("stopped"), "stop");
    EXPECT_EQ(lemmatize("logging"), "log");
    EXPECT_EQ(lemmatize("landing"), "land");
    EXPECT_EQ(lemmatize("status"), "status");
    EXPECT_EQ(lemmatize("lost"), "lose");
    EXPECT_EQ(lemmatize("5"), "5");
}

TEST(ExtractEntities, FigureTwoAnchor) {
    const auto s = extract_entities({"R1", "s", kR1});
    EXPECT_TRUE(has(s, EntityKind::Actor, "uav"));
    EXPECT_TRUE(has(s, EntityKind::Action, "land"));
    bool condition_mentions_pilot = false;
    for (const auto& e : s.entities) {
        if (e.kind == EntityKind::Condition && e.value.find("pilot communication") != std::string::npos) {
            condition_mentions_pilot = true;
        }
    }
    EXPECT_TRUE(condition_mentions_pilot);
}

TEST(ExtractEntities, EmptyText) { EXPECT_TRUE(extract_entities({"x", "s", ""}).empty()); }

TEST(ExtractEntities, LoggingRequirement) {
    const auto s = extract_entities({"x", "s", "The system shall log every request within 2 seconds"});
    EXPECT_TRUE(has(s, EntityKind::Actor, "system"));
    EXPECT_TRUE(has(s, EntityKind::Action, "log"));
    EXPECT_TRUE(has(s, EntityKind::Object, "request"));
    EXPECT_TRUE(has(s, EntityKind::Attribute, "2 seconds"));
}

TEST(ExtractEntities, FigureTwoPairShareActorAndAction) {
    const auto a = extract_entities({"R1", "s", kR1});
    const auto b = extract_entities({"R2", "s", kR2});
    std::size_t shared = 0;
    for (const auto& e : a.entities) shared += b.entities.count(e);
    EXPECT_GE(shared, 2u);
    EXPECT_TRUE(has(b, EntityKind::Actor, "uav"));
    EXPECT_TRUE(has(b, EntityKind::Action, "land"));
}

TEST(ExtractEntities, ComparativeAttributes) {
    const auto s = extract_entities({"x", "s", "The pump must run for at least 10 minutes"});
    EXPECT_TRUE(has(s, EntityKind::Attribute, "at least 10 minutes"));
    EXPECT_TRUE(has(s, EntityKind::Attribute, "10 minutes"));
}

TEST(ExtractEntities, ClauseLevelConditions) {
    const auto s = extract_entities(
        {"x", "s", "If the link drops, the drone shall return home unless the battery is low"});
    EXPECT_TRUE(has(s, EntityKind::Condition, "the link drops"));
    EXPECT_TRUE(has(s, EntityKind::Condition, "the battery is low"));
    EXPECT_TRUE(has(s, EntityKind::Actor, "drone"));
    EXPECT_TRUE(has(s, EntityKind::Action, "return"));
}

TEST(ExtractEntities, NoModalMeansNoActorOrAction) {
    const auto s = extract_entities({"x", "s", "Telemetry at 10 Hz"});
    for (const auto& e : s.entities) {
        EXPECT_NE(e.kind, EntityKind::Actor);
        EXPECT_NE(e.kind, EntityKind::Action);
    }
}

TEST(ExtractEntities, PropertiesOnRandomSentences) {
    const std::vector<std::string> words{"the", "system", "operator", "shall", "must", "log", "display",
                                         "when", "if", "unless", "5", "seconds", "more", "than", "at",
                                         "least", "alarm", "pressure", "is", "high", "and", "valve",
                                         "closed", ",", "within", "10", "meters", "every", "request"};
    testing_support::Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        std::string sentence;
        const auto n = testing_support::uniform(rng, 0, 18);
        for (std::size_t i = 0; i < n; ++i) sentence += words[rng() % words.size()] + " ";
        const corpus::Requirement req{"x", "s", sentence};
        const auto s = extract_entities(req);
        EXPECT_EQ(s, extract_entities(req)) << sentence;

        const auto hay = joined(normalize_tokens(sentence));
        for (const auto& e : s.entities) {
            EXPECT_FALSE(e.value.empty()) << sentence;
            if (e.kind == EntityKind::Action) continue;
            EXPECT_NE(hay.find(" " + e.value + " "), std::string::npos)
                << "'" << e.value << "' not a span of: " << sentence;
        }
    }
}

TEST(Lexicon, BundledListHasFiftyStopwords) {
    EXPECT_EQ(Lexicon::bundled().stopwords.size(), 50u);
    EXPECT_EQ(Lexicon::bundled().irregular.at("is"), "be");
}
