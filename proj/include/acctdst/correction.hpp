#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "acctdst/decoding.hpp"
#include "acctdst/metrics.hpp"
#include "acctdst/state_edit.hpp"

namespace acctdst {

/// (tau_fp, tau_fn). tau_fp = 0 keeps every predicted pair; tau_fn = 1 adds nothing.
struct Thresholds {
  double fp = 0.0;
  double fn = 1.0;

  bool is_noop() const { return fp <= 0.0 && fn >= 1.0; }
  json to_json() const { return {{"tau_fp", fp}, {"tau_fn", fn}}; }
  static Thresholds from_json(const json& j) {
    return {j.value("tau_fp", 0.0), j.value("tau_fn", 1.0)};
  }
  friend bool operator==(const Thresholds&, const Thresholds&) = default;
};

/// Produces a value for a slot missing from the prediction, or nullopt.
using ValueSource = std::function<std::optional<std::string>(const SlotId&)>;

namespace detail {

// Step 1 of the correction: keep (slot, value) iff p_slot >= tau_fp.
inline void filter_false_positives(const DialogueState& b, const SlotProbabilities& p,
                                   const Ontology& ontology, double tau_fp,
                                   CorrectionResult& out) {
  for (const auto& [slot, value] : b) {
    const double ps = p.at(ontology.index_of(slot));
    if (ps >= tau_fp) out.corrected.set(slot, value);
    else out.removed.push_back({slot, value, ps});
  }
}

inline void warn_readdition(const Thresholds& t) {
  if (t.fn < t.fp)
    log(LogLevel::kWarn, "tau_fn < tau_fp: pairs removed in step 1 may be re-added in step 2");
}

}  // namespace detail

/// Threshold-based correction of a generated state. Step 1 filters predicted
/// pairs with p < tau_fp. Step 2 walks the slots absent from the ORIGINAL
/// prediction in ontology order and, where p >= tau_fn, asks `value_source`.
inline CorrectionResult self_correct(const DialogueState& b, const SlotProbabilities& p,
                                     const Ontology& ontology, const Thresholds& t,
                                     const ValueSource& value_source) {
  if (p.size() != ontology.size())
    throw Error("invalid_argument", "slot probabilities do not match the ontology");
  detail::warn_readdition(t);
  CorrectionResult out;
  detail::filter_false_positives(b, p, ontology, t.fp, out);
  for (std::size_t s = 0; s < ontology.size(); ++s) {
    const auto& slot = ontology.slot(s);
    if (b.contains(slot) || p[s] < t.fn) continue;
    ++out.attempted;
    out.cost_incurred = true;
    std::optional<std::string> value;
    try {
      value = value_source(slot);
    } catch (const std::exception& e) {
      log(LogLevel::kWarn, "value source failed for " + slot.str() + ": " + e.what());
    }
    if (!value || normalize_value(*value).empty()) continue;
    out.corrected.set(slot, *value);
    out.added.push_back({slot, normalize_value(*value), p[s], EditSource::kSelfGenerated});
  }
  return out;
}

/// Same as self_correct, except step 2 adds a slot only when it is in the
/// gold state, and then with the gold value.
inline CorrectionResult oracle_correct(const DialogueState& b, const SlotProbabilities& p,
                                       const Ontology& ontology, const Thresholds& t,
                                       const DialogueState& gold) {
  if (p.size() != ontology.size())
    throw Error("invalid_argument", "slot probabilities do not match the ontology");
  detail::warn_readdition(t);
  CorrectionResult out;
  detail::filter_false_positives(b, p, ontology, t.fp, out);
  for (std::size_t s = 0; s < ontology.size(); ++s) {
    const auto& slot = ontology.slot(s);
    if (b.contains(slot) || p[s] < t.fn) continue;
    ++out.attempted;
    out.cost_incurred = true;
    if (const auto* g = gold.get(slot)) {
      out.corrected.set(slot, *g);
      out.added.push_back({slot, *g, p[s], EditSource::kOracle});
    }
  }
  return out;
}

/// A decoded validation/test turn with everything threshold tuning needs,
/// computed once: the prediction, p, and generated values for every slot
/// that some grid cell might try to add.
struct TurnRecord {
  std::string dialogue_id;
  std::size_t turn = 0;
  DialogueState gold;
  DecodedState decoded;
  SlotProbabilities probs;
  std::map<SlotId, std::optional<std::string>> values;

  ValueSource value_source() const {
    return [this](const SlotId& slot) -> std::optional<std::string> {
      auto it = values.find(slot);
      if (it == values.end())
        throw Error("missing_value", "no precomputed value for " + slot.str());
      return it->second;
    };
  }
};

/// Decodes one turn and precomputes values for missing slots with p >= min_tau_fn.
template <class T>
TurnRecord make_turn_record(const Decoder<T>& decoder, const SerializedContext& ctx,
                            const DialogueState& gold, double min_tau_fn) {
  TurnRecord rec;
  rec.gold = gold;
  const auto pc = decoder.prepare(ctx);
  rec.probs = pc.probs;
  rec.decoded = decoder.generate_state(pc);
  const auto& ontology = decoder.ontology();
  for (std::size_t s = 0; s < ontology.size(); ++s) {
    const auto& slot = ontology.slot(s);
    if (rec.decoded.state.contains(slot) || rec.probs[s] < min_tau_fn) continue;
    rec.values[slot] = decoder.generate_slot_value(pc, rec.decoded, slot);
  }
  return rec;
}

struct GridRow {
  Thresholds thresholds;
  MetricsReport self_correct;
  MetricsReport oracle_correct;
  std::size_t jga_hits = 0;
};

struct GridResult {
  Thresholds best;
  std::vector<GridRow> rows;

  static std::string csv_header() {
    return "tau_fp,tau_fn,jga,slot_f1,fpr,fnr,additional_cost_percent,"
           "oracle_jga,oracle_slot_f1,oracle_fpr,oracle_fnr";
  }
  std::string to_csv() const {
    std::string out = csv_header() + "\n";
    for (const auto& r : rows) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%g,%g,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f\n",
                    r.thresholds.fp, r.thresholds.fn, round2(r.self_correct.jga),
                    round2(r.self_correct.slot_f1), round2(r.self_correct.fpr),
                    round2(r.self_correct.fnr), round2(r.self_correct.additional_cost),
                    round2(r.oracle_correct.jga), round2(r.oracle_correct.slot_f1),
                    round2(r.oracle_correct.fpr), round2(r.oracle_correct.fnr));
      out += buf;
    }
    return out;
  }
  json to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows)
      rows_j.push_back({{"tau_fp", r.thresholds.fp}, {"tau_fn", r.thresholds.fn},
                        {"self_correct", r.self_correct.to_json()},
                        {"oracle_correct", r.oracle_correct.to_json()}});
    return {{"best", best.to_json()}, {"rows", rows_j}};
  }
};

inline std::vector<double> default_fp_grid() { return {0.0, 0.05, 0.1, 0.2, 0.3}; }
inline std::vector<double> default_fn_grid() { return {1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4}; }

struct CorrectedSplit {
  std::vector<DialogueState> states;
  std::vector<CorrectionResult> results;
};

inline CorrectedSplit apply_self_correct(const std::vector<TurnRecord>& turns,
                                         const Ontology& ontology, const Thresholds& t) {
  CorrectedSplit out;
  for (const auto& rec : turns) {
    auto r = self_correct(rec.decoded.state, rec.probs, ontology, t, rec.value_source());
    out.states.push_back(r.corrected);
    out.results.push_back(std::move(r));
  }
  return out;
}

inline CorrectedSplit apply_oracle_correct(const std::vector<TurnRecord>& turns,
                                           const Ontology& ontology, const Thresholds& t) {
  CorrectedSplit out;
  for (const auto& rec : turns) {
    auto r = oracle_correct(rec.decoded.state, rec.probs, ontology, t, rec.gold);
    out.states.push_back(r.corrected);
    out.results.push_back(std::move(r));
  }
  return out;
}

inline MetricsReport report_for(const CorrectedSplit& cs, const std::vector<TurnRecord>& turns,
                                const Ontology& ontology) {
  std::vector<DialogueState> golds;
  std::vector<std::vector<double>> probs;
  for (const auto& t : turns) {
    golds.push_back(t.gold);
    probs.push_back(t.probs);
  }
  auto r = evaluate(cs.states, golds, &probs, &ontology);
  const auto cost = additional_cost(cs.results);
  r.additional_cost = cost.percent_turns;
  r.mean_slots_per_updated_turn = cost.mean_added_per_updated;
  return r;
}

/// Exhaustive search over tau_fp x tau_fn maximizing JGA on `turns`. Ties go
/// to the least intervention: smaller tau_fp, then larger tau_fn.
inline GridResult grid_search_thresholds(const std::vector<TurnRecord>& turns,
                                         const Ontology& ontology,
                                         const std::vector<double>& fp_grid,
                                         const std::vector<double>& fn_grid) {
  if (std::find(fp_grid.begin(), fp_grid.end(), 0.0) == fp_grid.end() ||
      std::find(fn_grid.begin(), fn_grid.end(), 1.0) == fn_grid.end())
    throw Error("invalid_argument", "grids must contain tau_fp = 0 and tau_fn = 1");
  if (turns.empty()) throw Error("invalid_argument", "grid search needs at least one turn");
  GridResult out;
  std::optional<std::size_t> best;
  for (double fp : fp_grid)
    for (double fn : fn_grid) {
      GridRow row;
      row.thresholds = {fp, fn};
      const auto self = apply_self_correct(turns, ontology, row.thresholds);
      row.self_correct = report_for(self, turns, ontology);
      row.oracle_correct = report_for(apply_oracle_correct(turns, ontology, row.thresholds), turns,
                                      ontology);
      for (std::size_t i = 0; i < turns.size(); ++i)
        row.jga_hits += self.states[i] == turns[i].gold ? 1 : 0;
      out.rows.push_back(std::move(row));
      const auto& cand = out.rows.back();
      if (!best) {
        best = out.rows.size() - 1;
        continue;
      }
      const auto& cur = out.rows[*best];
      const bool better =
          cand.jga_hits > cur.jga_hits ||
          (cand.jga_hits == cur.jga_hits &&
           (cand.thresholds.fp < cur.thresholds.fp ||
            (cand.thresholds.fp == cur.thresholds.fp && cand.thresholds.fn > cur.thresholds.fn)));
      if (better) best = out.rows.size() - 1;
    }
  out.best = out.rows[*best].thresholds;
  return out;
}

}  // namespace acctdst
