#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace acctdst;

namespace {

CorpusSplit two_utterance_split() {
  CorpusSplit s;
  s.name = "train";
  s.ontology = Ontology({{SlotId("hotel", "area"), std::vector<std::string>{"west", "north"}},
                         {SlotId("restaurant", "booktime"), std::vector<std::string>{"15:15"}}});
  Dialogue d;
  d.id = "d";
  d.turns.push_back({"", "hi there", {}});
  d.turns.push_back({"how can i help", "the west please", DialogueState{{"hotel-area", "west"}}});
  s.dialogues.push_back(d);
  return s;
}

}  // namespace

TEST(Vocab, SpecialsWordsAndOntologyTerms) {
  const auto split = two_utterance_split();
  const auto v = build_vocab(split, 1);
  std::set<std::string> expected(special_strings().begin(), special_strings().end());
  for (const char* w : {"hi", "there", "how", "can", "i", "help", "the", "west", "please",
                        "hotel-area", "restaurant-booktime", "north", "15:15"})
    expected.insert(w);
  const std::set<std::string> got(v.tokens().begin(), v.tokens().end());
  EXPECT_EQ(got, expected);
  EXPECT_EQ(v.tokens().size(), expected.size());
  EXPECT_TRUE(v.contains("15:15"));  // ontology value never seen in text
}

TEST(Vocab, HashStableAcrossBuilds) {
  const auto split = two_utterance_split();
  EXPECT_EQ(build_vocab(split).hash(), build_vocab(split).hash());
  EXPECT_EQ(Vocabulary::from_json(build_vocab(split).to_json()).hash(), build_vocab(split).hash());
}

TEST(Context, SingleUserTurn) {
  const auto split = two_utterance_split();
  const auto v = build_vocab(split);
  const auto ctx = encode_context({Turn{"", "hi", {}}}, split.ontology, v, 64);
  const std::vector<TokenId> expected = {kBos,
                                         v.id("hotel-area"),
                                         v.id("restaurant-booktime"),
                                         kRoleSys,
                                         kRoleUser,
                                         v.id("hi"),
                                         kSepContext};
  EXPECT_EQ(ctx.token_ids, expected);
  EXPECT_EQ(ctx.turn_index, 0u);
}

TEST(Context, OldestTurnsDroppedFirst) {
  const auto split = two_utterance_split();
  const auto v = build_vocab(split);
  const std::vector<Turn> turns = {
      {"", "hi there", {}}, {"how can i help", "the west", {}}, {"", "please", {}}};
  // Preamble 3 + sep 1; turns are 4, 8 and 3 tokens long.
  const auto full = encode_context(turns, split.ontology, v, 19);
  EXPECT_EQ(full.dropped_turns, 0u);
  EXPECT_EQ(full.token_ids.size(), 19u);
  const auto cut = encode_context(turns, split.ontology, v, 18);
  EXPECT_EQ(cut.dropped_turns, 1u);
  EXPECT_EQ(cut.token_ids.size(), 15u);
  EXPECT_EQ(cut.token_ids[3], kRoleSys);
  EXPECT_EQ(cut.token_ids[4], v.id("how"));
  try {
    encode_context(turns, split.ontology, v, 6);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "context_overflow");
  }
}

TEST(StateCodec, EmptyState) {
  const auto split = two_utterance_split();
  const auto v = build_vocab(split);
  const auto ids = encode_state({}, v);
  EXPECT_EQ(ids, (std::vector<TokenId>{kBraceOpen, kBraceClose, kEosState}));
  const auto parsed = parse_state(ids, v, split.ontology);
  EXPECT_TRUE(parsed.state.empty());
  EXPECT_TRUE(parsed.diagnostics.closed);
  EXPECT_EQ(parsed.diagnostics.dropped, 0u);
}

TEST(StateCodec, CanonicalOrderAndRoundTrip) {
  auto corpus = generate_synthetic_corpus(test::small_synth(30, 5));
  const auto v = build_vocab(corpus.train);
  DialogueState a, b;
  a.set(SlotId("hotel", "stars"), "2");
  a.set(SlotId("hotel", "area"), "west");
  b.set(SlotId("hotel", "area"), "west");
  b.set(SlotId("hotel", "stars"), "2");
  const auto ids = encode_state(a, v);
  EXPECT_EQ(ids, encode_state(b, v));
  EXPECT_EQ(ids[1], v.id("hotel-area"));
  for (const auto& d : corpus.train.dialogues)
    for (const auto& t : d.turns)
      EXPECT_EQ(parse_state(encode_state(t.gold_state, v), v, corpus.ontology).state, t.gold_state);
}

TEST(StateCodec, DanglingPairDropped) {
  const auto split = two_utterance_split();
  const auto v = build_vocab(split);
  const std::vector<TokenId> ids = {kBraceOpen, v.id("restaurant-booktime"), kColon, v.id("15:15"),
                                    kComma,     v.id("hotel-area"),          kColon, kBraceClose};
  const auto parsed = parse_state(ids, v, split.ontology);
  EXPECT_EQ(parsed.state, (DialogueState{{"restaurant-booktime", "15:15"}}));
  EXPECT_EQ(parsed.diagnostics.dropped, 1u);
}

TEST(StateCodec, MalformedInputNeverThrows) {
  const auto split = two_utterance_split();
  const auto v = build_vocab(split);
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    std::vector<TokenId> ids(rng.below(12));
    for (auto& t : ids) t = static_cast<TokenId>(rng.below(v.size()));
    EXPECT_NO_THROW(parse_state(ids, v, split.ontology));
  }
}
