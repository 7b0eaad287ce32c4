#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "acctdst/common.hpp"
#include "acctdst/ontology.hpp"

namespace acctdst {

using json = nlohmann::json;

struct Turn {
  std::string system_utterance;
  std::string user_utterance;
  DialogueState gold_state;  // cumulative snapshot after this user turn
};

struct Dialogue {
  std::string id;
  std::vector<Turn> turns;
};

struct CorpusSplit {
  std::string name;  // train | validation | test
  std::vector<Dialogue> dialogues;
  Ontology ontology;

  std::size_t num_turns() const {
    std::size_t n = 0;
    for (const auto& d : dialogues) n += d.turns.size();
    return n;
  }
};

enum class CorpusFormat { kNative, kMultiwoz, kSnips };

inline CorpusFormat parse_corpus_format(std::string_view s) {
  if (s == "native_json" || s == "native") return CorpusFormat::kNative;
  if (s == "multiwoz_json" || s == "multiwoz") return CorpusFormat::kMultiwoz;
  if (s == "snips_json" || s == "snips") return CorpusFormat::kSnips;
  throw Error("invalid_argument", "unknown corpus format: " + std::string(s));
}

struct LoadOptions {
  std::string split_name = "test";
  // Ontology for external formats. MultiWOZ defaults to the 30-slot set;
  // Snips infers one from the entities it sees when this is empty.
  std::optional<Ontology> ontology;
  // When set, out-of-ontology slots are dropped and listed in the report
  // instead of failing the load.
  bool drop_unknown_slots = false;
};

struct LoadReport {
  std::vector<std::string> unknown_slots;  // "dialogue_id#turn: slot"
  std::size_t dropped_annotations = 0;
};

// ---------------------------------------------------------------------------
// Native JSON

inline json ontology_to_json(const Ontology& ontology) {
  json slots = json::array();
  for (const auto& spec : ontology.specs()) {
    json s = {{"domain", spec.id.domain()}, {"slot", spec.id.slot()}};
    s["values"] = spec.values ? json(*spec.values) : json(nullptr);
    slots.push_back(std::move(s));
  }
  return {{"slots", std::move(slots)}};
}

inline Ontology ontology_from_json(const json& j) {
  std::vector<Ontology::SlotSpec> specs;
  for (const auto& s : j.at("slots")) {
    Ontology::SlotSpec spec{SlotId(s.at("domain").get<std::string>(),
                                   s.at("slot").get<std::string>()),
                            std::nullopt};
    if (s.contains("values") && !s["values"].is_null())
      spec.values = s["values"].get<std::vector<std::string>>();
    specs.push_back(std::move(spec));
  }
  return Ontology(std::move(specs));
}

inline json state_to_json(const DialogueState& state) {
  json j = json::object();
  for (const auto& [slot, value] : state) j[slot.str()] = value;
  return j;
}

inline json corpus_to_json(const CorpusSplit& split) {
  json dialogues = json::array();
  for (const auto& d : split.dialogues) {
    json turns = json::array();
    for (const auto& t : d.turns)
      turns.push_back({{"system", t.system_utterance},
                       {"user", t.user_utterance},
                       {"state", state_to_json(t.gold_state)}});
    dialogues.push_back({{"id", d.id}, {"turns", std::move(turns)}});
  }
  return {{"split", split.name},
          {"ontology", ontology_to_json(split.ontology)},
          {"dialogues", std::move(dialogues)}};
}

inline std::string corpus_hash(const CorpusSplit& split) {
  return hash_hex(corpus_to_json(split).dump());
}

namespace detail {

inline std::string where(const std::string& id, std::size_t turn) {
  return "dialogue " + id + " turn " + std::to_string(turn);
}

// Adds `slot=value` to `state`, enforcing ontology membership.
inline void add_checked(DialogueState& state, const std::string& slot_name,
                        const std::string& value, const Ontology& ontology,
                        const LoadOptions& opts, LoadReport& report,
                        const std::string& id, std::size_t turn) {
  std::optional<SlotId> slot;
  try {
    slot = SlotId::parse(normalize_value(slot_name));
  } catch (const Error&) {
  }
  if (!slot || !ontology.contains(*slot)) {
    if (!opts.drop_unknown_slots)
      throw Error("ontology_violation",
                  where(id, turn) + ": slot '" + slot_name + "' outside ontology");
    report.unknown_slots.push_back(id + "#" + std::to_string(turn) + ": " + slot_name);
    ++report.dropped_annotations;
    return;
  }
  state.set(*slot, value);
}

}  // namespace detail

inline CorpusSplit corpus_from_json(const json& j, const LoadOptions& opts = {},
                                    LoadReport* report_out = nullptr) {
  LoadReport report;
  CorpusSplit split;
  split.name = j.value("split", opts.split_name);
  split.ontology = opts.ontology ? *opts.ontology : ontology_from_json(j.at("ontology"));
  for (const auto& jd : j.at("dialogues")) {
    Dialogue d;
    d.id = jd.at("id").get<std::string>();
    std::size_t t = 0;
    for (const auto& jt : jd.at("turns")) {
      Turn turn;
      turn.system_utterance = jt.value("system", "");
      turn.user_utterance = jt.at("user").get<std::string>();
      for (const auto& [k, v] : jt.at("state").items())
        detail::add_checked(turn.gold_state, k, v.get<std::string>(), split.ontology, opts,
                            report, d.id, t);
      d.turns.push_back(std::move(turn));
      ++t;
    }
    if (d.turns.empty()) throw Error("parse_error", "dialogue " + d.id + " has no turns");
    split.dialogues.push_back(std::move(d));
  }
  if (report_out) *report_out = std::move(report);
  return split;
}

inline void save_corpus(const CorpusSplit& split, const std::string& path) {
  write_file(path, corpus_to_json(split).dump(1));
}

// ---------------------------------------------------------------------------
// External adapters

/// The 30 MultiWOZ slots across hotel, attraction, restaurant, taxi, train.
inline Ontology multiwoz_ontology() {
  const std::vector<std::pair<std::string, std::vector<std::string>>> domains = {
      {"hotel",
       {"name", "type", "parking", "area", "bookday", "bookstay", "internet", "bookpeople",
        "stars", "pricerange"}},
      {"attraction", {"name", "type", "area"}},
      {"restaurant",
       {"name", "food", "area", "bookday", "booktime", "bookpeople", "pricerange"}},
      {"taxi", {"arriveby", "departure", "leaveat", "destination"}},
      {"train", {"arriveby", "day", "leaveat", "destination", "departure", "bookpeople"}},
  };
  std::vector<Ontology::SlotSpec> specs;
  for (const auto& [domain, slots] : domains)
    for (const auto& s : slots) specs.push_back({SlotId(domain, s), std::nullopt});
  return Ontology(std::move(specs));
}

namespace detail {

inline std::optional<std::string> multiwoz_value(const json& v) {
  if (!v.is_string()) return std::nullopt;
  auto s = normalize_value(v.get<std::string>());
  if (s.empty() || s == "not mentioned" || s == "none") return std::nullopt;
  if (s == "dont care" || s == "don't care" || s == "do n't care" || s == "dontcare")
    return std::string(kDontCare);
  return s;
}

}  // namespace detail

/// MultiWOZ data.json layout: {dialogue_id: {log: [user, system, user, ...]}}.
/// The state after user turn t lives in the metadata of log[2t+1].
inline CorpusSplit multiwoz_from_json(const json& j, const LoadOptions& opts = {},
                                      LoadReport* report_out = nullptr) {
  LoadReport report;
  CorpusSplit split;
  split.name = opts.split_name;
  split.ontology = opts.ontology ? *opts.ontology : multiwoz_ontology();
  for (const auto& [id, jd] : j.items()) {
    Dialogue d;
    d.id = id;
    const auto& log = jd.at("log");
    for (std::size_t i = 0, t = 0; i < log.size(); i += 2, ++t) {
      Turn turn;
      turn.user_utterance = log[i].value("text", "");
      if (i > 0) turn.system_utterance = log[i - 1].value("text", "");
      if (i + 1 < log.size()) {
        const json meta = log[i + 1].value("metadata", json::object());
        for (const auto& [domain, jdom] : meta.items()) {
          if (jdom.contains("semi"))
            for (const auto& [slot, v] : jdom["semi"].items())
              if (auto val = detail::multiwoz_value(v))
                detail::add_checked(turn.gold_state, domain + "-" + slot, *val,
                                    split.ontology, opts, report, d.id, t);
          if (jdom.contains("book"))
            for (const auto& [slot, v] : jdom["book"].items()) {
              if (slot == "booked") continue;
              if (auto val = detail::multiwoz_value(v))
                detail::add_checked(turn.gold_state, domain + "-book" + slot, *val,
                                    split.ontology, opts, report, d.id, t);
            }
        }
      }
      d.turns.push_back(std::move(turn));
    }
    if (d.turns.empty()) throw Error("parse_error", "dialogue " + d.id + " has an empty log");
    split.dialogues.push_back(std::move(d));
  }
  if (report_out) *report_out = std::move(report);
  return split;
}

/// Snips NLU benchmark layout: {Intent: [{data: [{text, entity?}, ...]}, ...]}.
/// Each utterance is a single-turn dialogue; slots are "intent-entity".
inline CorpusSplit snips_from_json(const json& j, const LoadOptions& opts = {},
                                   LoadReport* report_out = nullptr) {
  LoadReport report;
  CorpusSplit split;
  split.name = opts.split_name;
  if (opts.ontology) {
    split.ontology = *opts.ontology;
  } else {
    std::map<std::string, bool> names;
    for (const auto& [intent, utts] : j.items())
      for (const auto& u : utts)
        for (const auto& chunk : u.at("data"))
          if (chunk.contains("entity"))
            names[normalize_value(intent) + "-" +
                  normalize_value(chunk["entity"].get<std::string>())] = true;
    std::vector<Ontology::SlotSpec> specs;
    for (const auto& [name, unused] : names) specs.push_back({SlotId::parse(name), std::nullopt});
    split.ontology = Ontology(std::move(specs));
  }
  for (const auto& [intent, utts] : j.items()) {
    std::size_t k = 0;
    for (const auto& u : utts) {
      Dialogue d;
      d.id = normalize_value(intent) + "_" + std::to_string(k++);
      Turn turn;
      for (const auto& chunk : u.at("data")) {
        const auto text = chunk.at("text").get<std::string>();
        turn.user_utterance += text;
        if (chunk.contains("entity"))
          detail::add_checked(turn.gold_state,
                              intent + "-" + chunk["entity"].get<std::string>(), text,
                              split.ontology, opts, report, d.id, 0);
      }
      turn.user_utterance = normalize_value(turn.user_utterance);
      d.turns.push_back(std::move(turn));
      split.dialogues.push_back(std::move(d));
    }
  }
  if (report_out) *report_out = std::move(report);
  return split;
}

inline CorpusSplit load_corpus(const std::string& path, CorpusFormat format,
                               const LoadOptions& opts = {}, LoadReport* report = nullptr) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error("parse_error", path + ": " + e.what());
  }
  try {
    switch (format) {
      case CorpusFormat::kNative:
        return corpus_from_json(j, opts, report);
      case CorpusFormat::kMultiwoz:
        return multiwoz_from_json(j, opts, report);
      case CorpusFormat::kSnips:
        return snips_from_json(j, opts, report);
    }
  } catch (const json::exception& e) {
    throw Error("parse_error", path + ": " + e.what());
  }
  throw Error("invalid_argument", "unhandled corpus format");
}

}  // namespace acctdst
