#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "acctdst/corpus.hpp"

namespace acctdst {

/// Per-turn error taxonomy: spurious slots, missing slots, wrong values.
struct TurnErrorProfile {
  std::set<SlotId> fp_slots;
  std::set<SlotId> fn_slots;
  std::set<SlotId> value_error_slots;

  bool empty() const { return fp_slots.empty() && fn_slots.empty() && value_error_slots.empty(); }
  std::size_t count() const { return fp_slots.size() + fn_slots.size() + value_error_slots.size(); }

  json to_json() const {
    auto names = [](const std::set<SlotId>& s) {
      json a = json::array();
      for (const auto& x : s) a.push_back(x.str());
      return a;
    };
    return {{"false_positive", names(fp_slots)},
            {"false_negative", names(fn_slots)},
            {"value_error", names(value_error_slots)}};
  }
};

inline TurnErrorProfile error_profile(const DialogueState& pred, const DialogueState& gold) {
  TurnErrorProfile e;
  for (const auto& [slot, value] : pred) {
    const auto* g = gold.get(slot);
    if (!g) e.fp_slots.insert(slot);
    else if (*g != value) e.value_error_slots.insert(slot);
  }
  for (const auto& [slot, value] : gold)
    if (!pred.contains(slot)) e.fn_slots.insert(slot);
  return e;
}

namespace detail {
inline void check_aligned(const std::vector<DialogueState>& p, const std::vector<DialogueState>& g) {
  if (p.size() != g.size() || p.empty())
    throw Error("invalid_argument", "predictions and golds must be equal-length and nonempty");
}
}  // namespace detail

/// Percent of turns whose prediction equals the gold state exactly.
inline double jga(const std::vector<DialogueState>& preds, const std::vector<DialogueState>& golds) {
  detail::check_aligned(preds, golds);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == golds[i] ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(preds.size());
}

struct PairCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

inline PairCounts pair_counts(const std::vector<DialogueState>& preds,
                              const std::vector<DialogueState>& golds) {
  detail::check_aligned(preds, golds);
  PairCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (const auto& [slot, value] : preds[i]) {
      const auto* g = golds[i].get(slot);
      if (g && *g == value) ++c.tp;
      else ++c.fp;
    }
    for (const auto& [slot, value] : golds[i]) {
      const auto* p = preds[i].get(slot);
      if (!p || *p != value) ++c.fn;
    }
  }
  return c;
}

/// Micro-averaged F1 over (slot, value) pairs; 100 when there are no pairs at all.
inline double slot_f1(const std::vector<DialogueState>& preds,
                      const std::vector<DialogueState>& golds) {
  const auto c = pair_counts(preds, golds);
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 100.0;
  return 100.0 * static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

struct ErrorRates {
  double fpr = 0, fnr = 0, ver = 0;
};

/// Turn-level rates: percent of turns with at least one error of each kind.
inline ErrorRates error_rates(const std::vector<DialogueState>& preds,
                              const std::vector<DialogueState>& golds) {
  detail::check_aligned(preds, golds);
  std::size_t fp = 0, fn = 0, ve = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto e = error_profile(preds[i], golds[i]);
    fp += e.fp_slots.empty() ? 0 : 1;
    fn += e.fn_slots.empty() ? 0 : 1;
    ve += e.value_error_slots.empty() ? 0 : 1;
  }
  const double n = static_cast<double>(preds.size());
  return {100.0 * fp / n, 100.0 * fn / n, 100.0 * ve / n};
}

struct ScoredPair {
  double score;
  int label;  // 1 if the pair is in the gold state
};

/// Area under the ROC curve via average ranks (ties count one half).
/// nullopt when either class is absent.
inline std::optional<double> roc_auc(std::vector<ScoredPair> pairs) {
  std::size_t n_pos = 0;
  for (const auto& p : pairs) n_pos += p.label ? 1 : 0;
  const std::size_t n_neg = pairs.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  std::sort(pairs.begin(), pairs.end(),
            [](const ScoredPair& a, const ScoredPair& b) { return a.score < b.score; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < pairs.size();) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j].score == pairs[i].score) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (pairs[k].label) rank_sum += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return 100.0 * (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

/// Every predicted pair scored by its slot probability, labelled by gold membership.
inline std::vector<ScoredPair> score_pairs(const std::vector<DialogueState>& preds,
                                           const std::vector<DialogueState>& golds,
                                           const std::vector<std::vector<double>>& probs,
                                           const Ontology& ontology) {
  detail::check_aligned(preds, golds);
  std::vector<ScoredPair> out;
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (const auto& [slot, value] : preds[i]) {
      const auto* g = golds[i].get(slot);
      out.push_back({probs.at(i).at(ontology.index_of(slot)), (g && *g == value) ? 1 : 0});
    }
  return out;
}

struct MetricsReport {
  double jga = 0, slot_f1 = 0, fpr = 0, fnr = 0, ver = 0;
  std::optional<double> roc_auc;
  double additional_cost = 0;            // percent of turns that generated/extracted values
  double mean_slots_per_updated_turn = 0;
  std::size_t n_turns = 0;

  json to_json() const {
    json j = {{"jga", round2(jga)},
              {"slot_f1", round2(slot_f1)},
              {"fpr", round2(fpr)},
              {"fnr", round2(fnr)},
              {"ver", round2(ver)},
              {"additional_cost", round2(additional_cost)},
              {"mean_slots_per_updated_turn", round2(mean_slots_per_updated_turn)},
              {"n_turns", n_turns}};
    j["roc_auc"] = roc_auc ? json(round2(*roc_auc)) : json(nullptr);
    return j;
  }

  static std::string csv_header() {
    return "jga,slot_f1,fpr,fnr,ver,roc_auc,additional_cost,mean_slots_per_updated_turn,n_turns";
  }
  std::string csv_row() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.2f,%.2f,%.2f,%.2f,%.2f,%s,%.2f,%.2f,%zu", round2(jga),
                  round2(slot_f1), round2(fpr), round2(fnr), round2(ver),
                  roc_auc ? format2(*roc_auc).c_str() : "", round2(additional_cost),
                  round2(mean_slots_per_updated_turn), n_turns);
    return buf;
  }

  static std::string format2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", round2(v));
    return buf;
  }
};

inline MetricsReport evaluate(const std::vector<DialogueState>& preds,
                              const std::vector<DialogueState>& golds,
                              const std::vector<std::vector<double>>* probs = nullptr,
                              const Ontology* ontology = nullptr) {
  MetricsReport r;
  r.n_turns = preds.size();
  r.jga = jga(preds, golds);
  r.slot_f1 = slot_f1(preds, golds);
  const auto rates = error_rates(preds, golds);
  r.fpr = rates.fpr;
  r.fnr = rates.fnr;
  r.ver = rates.ver;
  if (probs && ontology) r.roc_auc = roc_auc(score_pairs(preds, golds, *probs, *ontology));
  return r;
}

/// Text table with one row per model variant.
inline std::string render_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::string out = "variant            JGA  Slot-F1      FPR      FNR      VER      AUC\n";
  for (const auto& [name, r] : rows) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-16s %6.2f %8.2f %8.2f %8.2f %8.2f %8s\n", name.c_str(),
                  round2(r.jga), round2(r.slot_f1), round2(r.fpr), round2(r.fnr), round2(r.ver),
                  r.roc_auc ? MetricsReport::format2(*r.roc_auc).c_str() : "-");
    out += buf;
  }
  return out;
}

}  // namespace acctdst
