#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace acctdst;

namespace {

const std::vector<std::string> kSlots = {"a-x", "a-y", "b-x", "b-y", "c-x", "c-y"};

DialogueState random_state(Rng& rng) {
  DialogueState s;
  for (const auto& name : kSlots)
    if (rng.bernoulli(0.4)) s.set(SlotId::parse(name), std::string(1, char('p' + rng.below(3))));
  return s;
}

std::set<std::string> pairs(const DialogueState& s) {
  std::set<std::string> out;
  for (const auto& [k, v] : s) out.insert(k.str() + "=" + v);
  return out;
}

std::set<std::string> names(const DialogueState& s) {
  std::set<std::string> out;
  for (const auto& [k, v] : s) out.insert(k.str());
  return out;
}

double pairwise_auc(const std::vector<ScoredPair>& pts) {
  double wins = 0, total = 0;
  for (const auto& p : pts)
    for (const auto& n : pts) {
      if (!(p.label == 1 && n.label == 0)) continue;
      total += 1;
      wins += p.score > n.score ? 1.0 : p.score == n.score ? 0.5 : 0.0;
    }
  return 100.0 * wins / total;
}

}  // namespace

TEST(Jga, Basics) {
  const std::vector<DialogueState> g = {DialogueState{{"a-x", "1"}}, {}, DialogueState{{"b-x", "2"}}};
  EXPECT_EQ(jga(g, g), 100.0);
  auto p = g;
  p[2] = {};
  EXPECT_NEAR(jga(p, g), 66.67, 0.005);
  EXPECT_THROW(jga({}, {}), Error);
  EXPECT_THROW(jga(p, {g[0]}), Error);
}

TEST(SlotF1, HandCounts) {
  const std::vector<DialogueState> p = {DialogueState{{"a-x", "1"}, {"a-y", "2"}}};
  const std::vector<DialogueState> g = {DialogueState{{"a-x", "1"}, {"b-x", "3"}}};
  const auto c = pair_counts(p, g);
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(slot_f1(p, g), 50.0);
  const std::vector<DialogueState> empty(3);
  EXPECT_EQ(slot_f1(empty, empty), 100.0);
  EXPECT_EQ(slot_f1(g, g), 100.0);
}

TEST(ErrorRates, Basics) {
  const std::vector<DialogueState> g = {DialogueState{{"a-x", "1"}}};
  const auto same = error_rates(g, g);
  EXPECT_EQ(same.fpr + same.fnr + same.ver, 0.0);
  const auto r = error_rates({DialogueState{{"a-x", "1"}}}, {DialogueState{{"b-y", "2"}}});
  EXPECT_EQ(r.fpr, 100.0);
  EXPECT_EQ(r.fnr, 100.0);
  EXPECT_EQ(r.ver, 0.0);
  const auto v = error_profile(DialogueState{{"a-x", "1"}}, DialogueState{{"a-x", "2"}});
  EXPECT_EQ(v.value_error_slots.size(), 1u);
  EXPECT_TRUE(v.fp_slots.empty() && v.fn_slots.empty());
}

TEST(Metrics, RandomizedAgainstBruteForce) {
  Rng rng(42);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<DialogueState> p, g;
    for (int i = 0; i < 200; ++i) {
      g.push_back(random_state(rng));
      p.push_back(rng.bernoulli(0.3) ? g.back() : random_state(rng));
    }
    std::size_t hit = 0, tp = 0, fp = 0, fn = 0, fpt = 0, fnt = 0, vet = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto pp = pairs(p[i]), gp = pairs(g[i]);
      const auto pn = names(p[i]), gn = names(g[i]);
      hit += pp == gp;
      for (const auto& x : pp) (gp.count(x) ? tp : fp)++;
      for (const auto& x : gp) fn += !pp.count(x);
      bool any_fp = false, any_fn = false, any_ve = false;
      for (const auto& n : pn) any_fp = any_fp || !gn.count(n);
      for (const auto& n : gn) any_fn = any_fn || !pn.count(n);
      for (const auto& n : pn)
        if (gn.count(n)) any_ve = any_ve || *p[i].get(SlotId::parse(n)) != *g[i].get(SlotId::parse(n));
      fpt += any_fp;
      fnt += any_fn;
      vet += any_ve;
    }
    const double n = double(p.size());
    EXPECT_EQ(jga(p, g), 100.0 * double(hit) / n);
    EXPECT_EQ(slot_f1(p, g), 100.0 * double(2 * tp) / double(2 * tp + fp + fn));
    const auto r = error_rates(p, g);
    EXPECT_EQ(r.fpr, 100.0 * double(fpt) / n);
    EXPECT_EQ(r.fnr, 100.0 * double(fnt) / n);
    EXPECT_EQ(r.ver, 100.0 * double(vet) / n);
  }
}

TEST(RocAuc, Conventions) {
  EXPECT_EQ(*roc_auc({{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}}), 100.0);
  EXPECT_EQ(*roc_auc({{0.5, 1}, {0.5, 0}, {0.5, 1}, {0.5, 0}}), 50.0);
  EXPECT_FALSE(roc_auc({{0.5, 1}, {0.7, 1}}).has_value());
  EXPECT_FALSE(roc_auc({}).has_value());
}

TEST(RocAuc, MatchesPairwiseOracleWithTies) {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<ScoredPair> pts;
    for (int i = 0; i < 200; ++i)
      pts.push_back({double(rng.below(20)) / 20.0, rng.bernoulli(0.6) ? 1 : 0});
    EXPECT_NEAR(*roc_auc(pts), pairwise_auc(pts), 1e-9);
  }
}

TEST(AdditionalCost, Values) {
  std::vector<CorrectionResult> rs(10);
  EXPECT_EQ(additional_cost(rs).percent_turns, 0.0);
  rs[1].cost_incurred = rs[6].cost_incurred = true;
  rs[1].added.resize(2);
  const auto c = additional_cost(rs);
  EXPECT_EQ(c.percent_turns, 20.0);
  EXPECT_EQ(c.mean_added_per_updated, 1.0);
}

TEST(MetricsReport, JsonAndCsvRounding) {
  MetricsReport r;
  r.jga = 66.666666;
  r.roc_auc = 81.235;
  r.n_turns = 3;
  EXPECT_EQ(r.to_json().at("jga"), 66.67);
  EXPECT_NE(r.csv_row().find("66.67,"), std::string::npos);
  EXPECT_EQ(MetricsReport::csv_header().substr(0, 4), "jga,");
  MetricsReport none;
  EXPECT_TRUE(none.to_json().at("roc_auc").is_null());
}
