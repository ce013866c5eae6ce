#include <gtest/gtest.h>

#include <filesystem>

#include "dvc/concepts.hpp"
#include "dvc/text.hpp"

namespace dvc {
namespace {

TEST(TokenizeTest, LowercasesAndStripsPunctuation) {
  EXPECT_EQ(text::tokenize("Add the Salt, then stir!"),
            (std::vector<std::string>{"add", "the", "salt", "then", "stir"}));
  EXPECT_TRUE(text::tokenize("  ... ").empty());
  EXPECT_EQ(text::join({"a", "b"}), "a b");
}

TEST(WordVocabularyTest, ReservedIdsAndOrdering) {
  const auto v = text::WordVocabulary::build({{"b", "a", "c"}, {"c", "b"}, {"c"}});
  EXPECT_EQ(v.word(text::WordVocabulary::kPad), "<pad>");
  EXPECT_EQ(v.id("c"), 4);
  EXPECT_EQ(v.id("b"), 5);
  EXPECT_EQ(v.id("a"), 6);
  EXPECT_EQ(v.id("zzz"), text::WordVocabulary::kUnk);
}

TEST(WordVocabularyTest, EncodeDecodeRoundTrip) {
  const auto v = text::WordVocabulary::build({{"peel", "the", "egg"}});
  const auto ids = v.encode({"peel", "the", "egg"}, 8);
  ASSERT_EQ(ids.size(), 4u);
  EXPECT_EQ(ids.back(), text::WordVocabulary::kEos);
  EXPECT_EQ(v.decode(ids), (std::vector<std::string>{"peel", "the", "egg"}));
  const auto cut = v.encode({"peel", "the", "egg"}, 2);
  EXPECT_EQ(cut.size(), 2u);
  EXPECT_EQ(cut.back(), text::WordVocabulary::kEos);
}

concepts::ContentLexicon lexicon_of(std::set<std::string> allow) {
  concepts::ContentLexicon lex;
  lex.allow = std::move(allow);
  return lex;
}

TEST(ConceptVocabularyTest, FrequencyThenLexicographic) {
  const auto v = concepts::build_vocabulary({"add the salt", "add oil"}, 2,
                                            lexicon_of({"add", "salt", "oil"}));
  EXPECT_EQ(v.entries, (std::vector<std::string>{"add", "oil"}));
  EXPECT_FALSE(v.short_of_request);
}

TEST(ConceptVocabularyTest, ShortVocabularyIsFlagged) {
  const auto v = concepts::build_vocabulary({"add the salt"}, 30,
                                            lexicon_of({"add", "salt", "oil"}));
  EXPECT_EQ(v.entries, (std::vector<std::string>{"add", "salt"}));
  EXPECT_TRUE(v.short_of_request);
}

TEST(ConceptVocabularyTest, DeterministicRebuild) {
  const std::vector<std::string> corpus = {"Cut the onion.", "cut the bread",
                                           "fry the onion", "mix the rice and onion"};
  concepts::ContentLexicon lex;
  lex.deny = concepts::default_stopwords();
  const auto a = concepts::build_vocabulary(corpus, 5, lex);
  const auto b = concepts::build_vocabulary(corpus, 5, lex);
  EXPECT_EQ(a.entries, b.entries);
  EXPECT_EQ(a.entries.front(), "onion");
  for (const auto& e : a.entries) EXPECT_FALSE(lex.deny.contains(e));
}

TEST(LabelEventsTest, MembershipCases) {
  const auto vocab = concepts::ConceptVocabulary::from_entries({"add", "salt", "oil"});
  EXPECT_EQ(concepts::label_events(text::tokenize("add the oil"), vocab),
            (concepts::ConceptLabel{1, 0, 1}));
  EXPECT_EQ(concepts::label_events(text::tokenize("stir the soup"), vocab),
            (concepts::ConceptLabel{0, 0, 0}));
  EXPECT_EQ(concepts::label_events({"add", "salt", "oil"}, vocab),
            (concepts::ConceptLabel{1, 1, 1}));
}

TEST(LabelEventsTest, IdempotentAndMonotone) {
  const auto vocab =
      concepts::ConceptVocabulary::from_entries({"add", "salt", "oil", "egg"});
  auto tokens = text::tokenize("Add SALT, quickly.");
  const auto once = concepts::label_events(tokens, vocab);
  EXPECT_EQ(concepts::label_events(text::tokenize(text::join(tokens)), vocab), once);
  auto prev = once;
  for (const char* extra : {"oil", "pan", "egg"}) {
    tokens.push_back(extra);
    const auto next = concepts::label_events(tokens, vocab);
    for (std::size_t k = 0; k < prev.size(); ++k)
      if (prev[k]) {
        EXPECT_EQ(next[k], 1);
      }
    prev = next;
  }
}

TEST(ConceptFilesTest, VocabularyRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "dvc_concept_test";
  std::filesystem::create_directories(dir);
  const auto vocab = concepts::ConceptVocabulary::from_entries({"cut", "onion", "fry"});
  concepts::write_vocabulary(dir / "vocab.txt", vocab);
  EXPECT_EQ(concepts::read_vocabulary(dir / "vocab.txt").entries, vocab.entries);
  concepts::write_token_list(dir / "lex.txt", {"b", "a"});
  EXPECT_EQ(concepts::read_token_list(dir / "lex.txt"), (std::set<std::string>{"a", "b"}));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace dvc
