// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cctype>
#include <random>

#include "misbench/detail/files.hpp"
#include "misbench/parsing.hpp"

using namespace misbench;
using namespace misbench::parsing;
using dataset::ClassTaxonomy;
namespace cls = misbench::dataset::cls;

namespace {

ClassSet names_to_set(const std::vector<std::string>& names) {
  const auto tax = ClassTaxonomy::cityscapes();
  ClassSet s;
  for (const auto& n : names) s.insert(*tax.id_of(n));
  return s;
}

std::string set_to_string(ClassSet s) {
  const auto tax = ClassTaxonomy::cityscapes();
  std::string out = "{";
  for (int c : s.members()) out += (out.size() > 1 ? ", " : "") + tax.name(c);
  return out + "}";
}

}  // namespace

TEST(Tokenize, LowercaseAlnumRuns) {
  EXPECT_EQ(tokenize("Hello, World! it's 3pm"),
            (std::vector<std::string>{"hello", "world", "it", "s", "3pm"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize(" ,;!").empty());
}

TEST(Description, Examples) {
  EXPECT_EQ(parse_description("A car and two pedestrians near a traffic light."),
            (ClassSet{cls::kCar, cls::kPerson, cls::kTrafficLight}));
  EXPECT_TRUE(parse_description("").empty());
  EXPECT_EQ(parse_description("The busy road."), ClassSet{cls::kRoad});
}

TEST(Description, LongestMatchConsumesTokens) {
  EXPECT_EQ(parse_description("a traffic light"), ClassSet{cls::kTrafficLight});
  EXPECT_EQ(parse_description("a road sign"), ClassSet{cls::kTrafficSign});
  EXPECT_EQ(parse_description("the road, a sign"), (ClassSet{cls::kRoad, cls::kTrafficSign}));
}

TEST(Description, CaseInsensitiveAndIdempotent) {
  std::mt19937_64 gen(5);
  const std::vector<std::string> words{"Car", "BUS", "busy", "Traffic", "light", "PEOPLE", "sky", "of",
                                       "a", "Sign", "road", "train", "cyclists", "the", "bike"};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  for (int t = 0; t < 1000; ++t) {
    std::string s;
    for (int i = 0; i < 8; ++i) s += words[pick(gen)] + (i % 3 ? " " : ", ");
    std::string lower = s;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    const auto a = parse_description(s);
    EXPECT_EQ(a, parse_description(lower));
    EXPECT_EQ(a, parse_description(s));
  }
}

TEST(Lexicon, RejectsCrossClassDuplicatesAndGaps) {
  std::vector<std::vector<std::string>> kw(19, std::vector<std::string>{"x"});
  for (int c = 0; c < 19; ++c) kw[c] = {"word" + std::to_string(c)};
  EXPECT_NO_THROW(Lexicon("t", kw));
  kw[3].push_back("word4");
  EXPECT_THROW(Lexicon("t", kw), std::invalid_argument);
  kw[3] = {};
  EXPECT_THROW(Lexicon("t", kw), std::invalid_argument);
  EXPECT_THROW(Lexicon("t", std::vector<std::vector<std::string>>(3)), std::invalid_argument);
}

TEST(Lexicon, JsonRoundTrip) {
  const auto tax = ClassTaxonomy::cityscapes();
  const auto& lex = default_lexicon();
  const auto back = Lexicon::from_json(nlohmann::json::parse(lex.to_json(tax).dump()), tax);
  EXPECT_EQ(back.version(), lex.version());
  for (int c = 0; c < 19; ++c) EXPECT_EQ(back.keywords(c), lex.keywords(c));
}

TEST(Binary, Examples) {
  EXPECT_EQ(parse_binary("Yes, there is."), BinaryOutcome::Positive);
  EXPECT_EQ(parse_binary("decision: NO, reason: Pedestrians and cyclists are actively crossing"),
            BinaryOutcome::Negative);
  EXPECT_EQ(parse_binary("It is difficult to tell."), BinaryOutcome::Unparsable);
}

TEST(Safety, Examples) {
  EXPECT_EQ(parse_safety("Based on the image, it is safe to proceed."), BinaryOutcome::Positive);
  EXPECT_EQ(parse_safety("decision: NO, reason: UNCERTAIN , A large occlusion blocks much of the scene"),
            BinaryOutcome::Unparsable);
  EXPECT_EQ(parse_safety("no"), BinaryOutcome::Negative);
}

TEST(Safety, CustomMarkers) {
  const UncertaintyMarkers m("t", {"hard to say"});
  EXPECT_EQ(parse_safety("Yes, though it is hard to say.", m), BinaryOutcome::Unparsable);
  EXPECT_EQ(parse_safety("Yes, though it is unclear.", m), BinaryOutcome::Positive);
}

TEST(Safety, NoMarkersNeverDecides) {
  std::mt19937_64 gen(6);
  const std::vector<std::string> words{"the", "road", "is", "wet", "proceed", "forward", "caution",
                                       "vehicle", "yesterday", "nothing", "safely", "unsafely", "note"};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  for (int t = 0; t < 1000; ++t) {
    std::string s;
    for (int i = 0; i < 6; ++i) s += words[pick(gen)] + " ";
    EXPECT_EQ(parse_safety(s), BinaryOutcome::Unparsable) << s;
  }
}

TEST(TopK, Examples) {
  std::vector<double> s(19, 0.0);
  s[13] = 1.0;
  EXPECT_EQ(topk_selection(s, 1), ClassSet{13});
  for (int c = 0; c < 19; ++c) s[c] = 0.9 - 0.01 * c;
  EXPECT_EQ(topk_selection(s, 3), (ClassSet{0, 1, 2}));
  std::vector<double> tie(19, 0.0);
  tie[0] = 1.0;
  tie[1] = 0.9;
  tie[5] = 0.5;
  tie[6] = 0.5;
  EXPECT_EQ(topk_selection(tie, 3), (ClassSet{0, 1, 5}));
}

TEST(TopK, Errors) {
  try {
    topk_selection(std::vector<double>(18, 0.0), 5);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("expected 19"), std::string::npos);
  }
  EXPECT_THROW(topk_selection(std::vector<double>(19, 0.0), 0), std::invalid_argument);
  EXPECT_THROW(topk_selection(std::vector<double>(19, 0.0), 20), std::invalid_argument);
  std::vector<double> nan(19, 0.0);
  nan[2] = std::nan("");
  EXPECT_THROW(topk_selection(nan, 5), std::invalid_argument);
}

TEST(PresenceUnion, Examples) {
  EXPECT_EQ(presence_union({cls::kRoad}, {{cls::kPerson, BinaryOutcome::Positive}}),
            (ClassSet{cls::kRoad, cls::kPerson}));
  EXPECT_EQ(presence_union({cls::kRoad}, {{cls::kPerson, BinaryOutcome::Unparsable},
                                          {cls::kRider, BinaryOutcome::Unparsable}}),
            ClassSet{cls::kRoad});
  EXPECT_EQ(presence_union({}, {{cls::kTrafficSign, BinaryOutcome::Positive},
                                {cls::kTrafficLight, BinaryOutcome::Negative}}),
            ClassSet{cls::kTrafficSign});
}

TEST(Corpus, EveryCaseMatchesExpected) {
  const auto path = std::filesystem::path(MISBENCH_TEST_DATA) / "parsing_corpus.json";
  const auto j = nlohmann::json::parse(misbench::detail::read_file(path));
  const auto& cases = j.at("cases");
  ASSERT_GE(cases.size(), 30u);
  int agree = 0;
  for (const auto& c : cases) {
    const auto mode = c.at("mode").get<std::string>();
    const auto text = c.at("text").get<std::string>();
    if (mode == "description") {
      const auto want = names_to_set(c.at("expected").get<std::vector<std::string>>());
      const auto got = parse_description(text);
      EXPECT_EQ(got, want) << text << "\n got " << set_to_string(got) << " want " << set_to_string(want);
      agree += got == want;
    } else {
      const auto want = parse_outcome_name(c.at("expected").get<std::string>());
      const auto got = mode == "safety" ? parse_safety(text) : parse_binary(text);
      EXPECT_EQ(got, want) << mode << ": " << text << " got " << to_string(got);
      agree += got == want;
    }
  }
  EXPECT_EQ(agree, static_cast<int>(cases.size()));
}
