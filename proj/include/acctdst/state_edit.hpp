#pragma once

#include <string>
#include <vector>

#include "acctdst/corpus.hpp"

namespace acctdst {

enum class EditSource { kSelfGenerated, kOracle, kUser };

inline const char* to_string(EditSource s) {
  switch (s) {
    case EditSource::kSelfGenerated: return "self_generated";
    case EditSource::kOracle: return "oracle";
    case EditSource::kUser: return "user";
  }
  return "?";
}

struct RemovedPair {
  SlotId slot;
  std::string value;
  double prob;
};

struct AddedPair {
  SlotId slot;
  std::string value;
  double prob;
  EditSource source;
};

struct UpdatedPair {
  SlotId slot;
  std::string old_value;
  std::string new_value;
};

/// Corrected state plus the provenance of every edit.
struct CorrectionResult {
  DialogueState corrected;
  std::vector<RemovedPair> removed;
  std::vector<AddedPair> added;
  std::vector<UpdatedPair> updated;
  bool cost_incurred = false;  // a value was generated/extracted for some candidate
  std::size_t attempted = 0;   // false-negative candidates passed to the value source

  json to_json() const {
    json rm = json::array(), ad = json::array(), up = json::array();
    for (const auto& r : removed) rm.push_back({{"slot", r.slot.str()}, {"value", r.value}, {"p", r.prob}});
    for (const auto& a : added)
      ad.push_back({{"slot", a.slot.str()}, {"value", a.value}, {"p", a.prob},
                    {"source", to_string(a.source)}});
    for (const auto& u : updated)
      up.push_back({{"slot", u.slot.str()}, {"old", u.old_value}, {"new", u.new_value}});
    return {{"corrected", state_to_json(corrected)}, {"removed", rm}, {"added", ad},
            {"updated", up}, {"cost_incurred", cost_incurred}, {"attempted", attempted}};
  }
};

struct CostSummary {
  double percent_turns = 0;           // turns with cost_incurred
  double mean_added_per_updated = 0;  // over cost-incurring turns
};

inline CostSummary additional_cost(const std::vector<CorrectionResult>& results) {
  CostSummary c;
  if (results.empty()) return c;
  std::size_t turns = 0, added = 0;
  for (const auto& r : results)
    if (r.cost_incurred) {
      ++turns;
      added += r.added.size();
    }
  c.percent_turns = 100.0 * static_cast<double>(turns) / static_cast<double>(results.size());
  if (turns) c.mean_added_per_updated = static_cast<double>(added) / static_cast<double>(turns);
  return c;
}

}  // namespace acctdst
