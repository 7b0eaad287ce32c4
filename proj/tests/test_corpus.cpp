#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace acctdst;

namespace {

json one_dialogue_json() {
  return json::parse(R"({
    "split": "test",
    "ontology": {"slots": [{"domain": "hotel", "slot": "area"}, {"domain": "hotel", "slot": "stars"}]},
    "dialogues": [{"id": "d1", "turns": [
      {"system": "", "user": "a place with 2 stars", "state": {"hotel-stars": "2"}},
      {"system": "which area ?", "user": "the west", "state": {"hotel-stars": "2", "hotel-area": "west"}}
    ]}]
  })");
}

}  // namespace

TEST(Corpus, EmptyDialogueList) {
  auto j = one_dialogue_json();
  j["dialogues"] = json::array();
  const auto split = corpus_from_json(j);
  EXPECT_EQ(split.dialogues.size(), 0u);
  EXPECT_EQ(split.num_turns(), 0u);
}

TEST(Corpus, CumulativeStatesPassThrough) {
  const auto split = corpus_from_json(one_dialogue_json());
  ASSERT_EQ(split.dialogues.size(), 1u);
  const auto& turns = split.dialogues[0].turns;
  EXPECT_EQ(turns[0].gold_state, (DialogueState{{"hotel-stars", "2"}}));
  EXPECT_EQ(turns[1].gold_state, (DialogueState{{"hotel-stars", "2"}, {"hotel-area", "west"}}));
}

TEST(Corpus, NativeRoundTrip) {
  const auto split = corpus_from_json(one_dialogue_json());
  const auto dir = test::temp_dir("corpus");
  save_corpus(split, dir + "/c.json");
  LoadReport report;
  const auto again = load_corpus(dir + "/c.json", CorpusFormat::kNative, {}, &report);
  EXPECT_EQ(corpus_hash(split), corpus_hash(again));
  EXPECT_TRUE(report.unknown_slots.empty());
}

TEST(Corpus, UnknownSlotFailsOrIsDropped) {
  auto j = one_dialogue_json();
  j["dialogues"][0]["turns"][0]["state"]["taxi-leaveat"] = "10:00";
  try {
    corpus_from_json(j);
    FAIL() << "expected ontology_violation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "ontology_violation");
    EXPECT_NE(std::string(e.what()).find("dialogue d1 turn 0"), std::string::npos);
  }
  LoadOptions opts;
  opts.drop_unknown_slots = true;
  LoadReport report;
  const auto split = corpus_from_json(j, opts, &report);
  EXPECT_EQ(report.dropped_annotations, 1u);
  EXPECT_EQ(split.dialogues[0].turns[0].gold_state.size(), 1u);
}

TEST(Corpus, MultiwozCountsMatch) {
  // 999 dialogues, 7368 user turns: 375 dialogues of 8 turns and 624 of 7.
  json j = json::object();
  for (int d = 0; d < 999; ++d) {
    const int turns = d < 375 ? 8 : 7;
    json log = json::array();
    for (int t = 0; t < turns; ++t) {
      log.push_back({{"text", "i need a hotel in the west"}, {"metadata", json::object()}});
      log.push_back({{"text", "sure ."},
                     {"metadata",
                      {{"hotel",
                        {{"semi", {{"area", "west"}, {"name", "not mentioned"}}},
                         {"book", {{"booked", json::array()}, {"people", t > 2 ? "2" : ""}}}}}}}});
    }
    j["MUL" + std::to_string(d) + ".json"] = {{"log", log}};
  }
  const auto split = multiwoz_from_json(j);
  EXPECT_EQ(split.dialogues.size(), 999u);
  EXPECT_EQ(split.num_turns(), 7368u);
  const auto& last = split.dialogues[0].turns.back();
  EXPECT_EQ(last.gold_state, (DialogueState{{"hotel-area", "west"}, {"hotel-bookpeople", "2"}}));
  EXPECT_EQ(split.ontology.size(), 30u);
}

TEST(Corpus, MultiwozDontCareNormalized) {
  json j = {{"d", {{"log", {{{"text", "any area"}},
                            {{"text", "ok"},
                             {"metadata", {{"hotel", {{"semi", {{"area", "dont care"}}}}}}}}}}}}};
  const auto split = multiwoz_from_json(j);
  EXPECT_EQ(*split.dialogues[0].turns[0].gold_state.get(SlotId("hotel", "area")), kDontCare);
}

TEST(Corpus, SnipsSingleTurnDialogues) {
  const json j = json::parse(R"({
    "GetWeather": [{"data": [{"text": "will there be sun "},
                             {"text": "around", "entity": "spatial_relation"},
                             {"text": " "}, {"text": "here", "entity": "current_location"}]}],
    "AddToPlaylist": [{"data": [{"text": "add "}, {"text": "brad kane", "entity": "artist"}]}]
  })");
  const auto split = snips_from_json(j);
  EXPECT_EQ(split.dialogues.size(), 2u);
  EXPECT_EQ(split.ontology.size(), 3u);
  std::set<std::string> states;
  for (const auto& d : split.dialogues) {
    ASSERT_EQ(d.turns.size(), 1u);
    states.insert(d.turns[0].gold_state.to_string());
  }
  EXPECT_TRUE(states.count("{addtoplaylist-artist: brad kane}"));
  EXPECT_TRUE(states.count("{getweather-current_location: here, getweather-spatial_relation: around}"));
}

TEST(SlotLabels, Vectors) {
  const auto corpus = generate_synthetic_corpus(test::small_synth(5, 2));
  const auto& ont = corpus.ontology;
  ASSERT_EQ(ont.size(), 12u);
  EXPECT_EQ(slot_labels({}, ont), SlotLabels(12, 0));
  DialogueState full;
  for (const auto& s : ont.slots()) full.set(s, "x");
  EXPECT_EQ(slot_labels(full, ont), SlotLabels(12, 1));
  const auto y = slot_labels(DialogueState{{"hotel-area", "west"}}, ont);
  const auto slots = ont.slots();
  for (std::size_t i = 0; i < slots.size(); ++i)
    EXPECT_EQ(y[i], slots[i].str() == "hotel-area" ? 1 : 0) << slots[i].str();
}

TEST(Synth, DeterministicForSeed) {
  const auto a = generate_synthetic_corpus(test::small_synth(50, 10, 3));
  const auto b = generate_synthetic_corpus(test::small_synth(50, 10, 3));
  EXPECT_EQ(corpus_hash(a.train), corpus_hash(b.train));
  EXPECT_EQ(corpus_hash(a.test), corpus_hash(b.test));
  const auto c = generate_synthetic_corpus(test::small_synth(50, 10, 4));
  EXPECT_NE(corpus_hash(a.train), corpus_hash(c.train));
}

TEST(Synth, NoDontCareWhenRateIsZero) {
  auto cfg = test::small_synth(300, 10);
  cfg.dontcare_rate = 0;
  const auto corpus = generate_synthetic_corpus(cfg);
  for (const auto& d : corpus.train.dialogues)
    for (const auto& t : d.turns)
      for (const auto& [slot, value] : t.gold_state) EXPECT_NE(value, kDontCare);
}

TEST(Synth, EveryGoldValueIsGrounded) {
  // Each gold value (or one of its synonyms, or a dontcare reply) must appear
  // in some user utterance of the dialogue up to that turn.
  SynthConfig cfg;
  const auto corpus = generate_synthetic_corpus(cfg);
  ASSERT_EQ(corpus.train.dialogues.size(), 2000u);
  ASSERT_EQ(corpus.ontology.size(), 12u);
  std::size_t checked = 0;
  for (const auto* split : {&corpus.train, &corpus.validation, &corpus.test})
    for (const auto& d : split->dialogues) {
      std::string users;
      for (const auto& t : d.turns) {
        users += " " + normalize_value(t.user_utterance) + " ";
        for (const auto& [slot, value] : t.gold_state) {
          ++checked;
          if (value == kDontCare) {
            bool found = false;
            for (const auto& r : synth::dontcare_replies())
              found = found || users.find(normalize_value(r)) != std::string::npos;
            EXPECT_TRUE(found) << d.id << " " << slot.str();
            continue;
          }
          bool found = users.find(value) != std::string::npos;
          if (auto it = synth::synonyms().find(value); it != synth::synonyms().end())
            for (const auto& syn : it->second) found = found || users.find(syn) != std::string::npos;
          EXPECT_TRUE(found) << d.id << " " << slot.str() << "=" << value;
        }
      }
    }
  EXPECT_GT(checked, 10000u);
}

TEST(Synth, ValidatorListsEveryProblem) {
  SynthConfig cfg;
  cfg.value_set_size = 0;
  cfg.min_turns = 5;
  cfg.max_turns = 2;
  cfg.switch_rate = 2.0;
  try {
    generate_synthetic_corpus(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "invalid_config");
    const std::string msg = e.what();
    EXPECT_NE(msg.find("value_set_size"), std::string::npos);
    EXPECT_NE(msg.find("max_turns"), std::string::npos);
    EXPECT_NE(msg.find("switch_rate"), std::string::npos);
  }
}
