#pragma once

#include <map>
#include <string>
#include <vector>

#include "acctdst/common.hpp"
#include "acctdst/corpus.hpp"

namespace acctdst {

/// Template-driven toy dialogue corpus with gold states correct by construction.
struct SynthConfig {
  std::vector<std::string> domains = {"hotel", "restaurant", "attraction"};
  std::size_t slots_per_domain = 4;
  // Values kept per slot (capped by the built-in bank; 0 is invalid).
  std::size_t value_set_size = 6;
  std::size_t n_train = 2000;
  std::size_t n_validation = 300;
  std::size_t n_test = 300;
  std::uint64_t seed = 1;
  std::size_t min_turns = 2;
  std::size_t max_turns = 5;

  // Phenomena.
  double dontcare_rate = 0.15;   // system asks about a slot, user waives it
  double overwrite_rate = 0.12;  // "actually , make the area north instead ."
  double chatter_rate = 0.10;    // slot-free turn
  double switch_rate = 0.25;     // open a second domain
  double offer_rate = 0.35;      // system mentions a distractor value
  double synonym_rate = 0.15;    // user uses a synonym of the canonical value

  json to_json() const {
    return {{"domains", domains},         {"slots_per_domain", slots_per_domain},
            {"value_set_size", value_set_size}, {"n_train", n_train},
            {"n_validation", n_validation}, {"n_test", n_test},
            {"seed", seed},               {"min_turns", min_turns},
            {"max_turns", max_turns},     {"dontcare_rate", dontcare_rate},
            {"overwrite_rate", overwrite_rate}, {"chatter_rate", chatter_rate},
            {"switch_rate", switch_rate}, {"offer_rate", offer_rate},
            {"synonym_rate", synonym_rate}};
  }

  static SynthConfig from_json(const json& j) {
    SynthConfig c;
    c.domains = j.value("domains", c.domains);
    c.slots_per_domain = j.value("slots_per_domain", c.slots_per_domain);
    c.value_set_size = j.value("value_set_size", c.value_set_size);
    c.n_train = j.value("n_train", c.n_train);
    c.n_validation = j.value("n_validation", c.n_validation);
    c.n_test = j.value("n_test", c.n_test);
    c.seed = j.value("seed", c.seed);
    c.min_turns = j.value("min_turns", c.min_turns);
    c.max_turns = j.value("max_turns", c.max_turns);
    c.dontcare_rate = j.value("dontcare_rate", c.dontcare_rate);
    c.overwrite_rate = j.value("overwrite_rate", c.overwrite_rate);
    c.chatter_rate = j.value("chatter_rate", c.chatter_rate);
    c.switch_rate = j.value("switch_rate", c.switch_rate);
    c.offer_rate = j.value("offer_rate", c.offer_rate);
    c.synonym_rate = j.value("synonym_rate", c.synonym_rate);
    return c;
  }
};

struct SynthCorpus {
  Ontology ontology;
  CorpusSplit train;
  CorpusSplit validation;
  CorpusSplit test;
};

namespace synth {

struct SlotBank {
  std::string name;
  std::string noun;                    // how the system/user refer to the slot
  std::vector<std::string> templates;  // "{v}" is replaced by the surface value
  std::vector<std::string> values;
};

struct DomainBank {
  std::string name;
  std::vector<std::string> openers;  // first mention of the domain
  std::vector<SlotBank> slots;
};

inline const std::vector<DomainBank>& banks() {
  static const std::vector<DomainBank> kBanks = {
      {"hotel",
       {"i need a place to stay", "i am looking for a hotel", "can you find me a hotel"},
       {{"area", "area", {"in the {v}", "somewhere in the {v}", "located in the {v}"},
         {"north", "south", "east", "west", "centre", "downtown", "riverside", "airport"}},
        {"pricerange", "price range", {"in the {v} price range", "that is {v}", "a {v} one"},
         {"cheap", "moderate", "expensive", "budget", "luxury", "mid-range"}},
        {"stars", "stars", {"with {v} stars", "rated {v} stars", "{v} star"},
         {"0", "1", "2", "3", "4", "5"}},
        {"bookday", "day", {"starting {v}", "from {v}", "arriving on {v}"},
         {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"}},
        {"type", "type", {"of type {v}", "that is a {v}"},
         {"hotel", "guesthouse", "hostel", "lodge", "inn", "motel"}},
        {"bookpeople", "number of people", {"for {v} people", "for {v} guests"},
         {"1", "2", "3", "4", "5", "6", "7", "8"}}}},
      {"restaurant",
       {"i want somewhere to eat", "i am looking for a restaurant", "find me a restaurant"},
       {{"area", "area", {"in the {v}", "somewhere in the {v}", "near the {v}"},
         {"north", "south", "east", "west", "centre", "downtown", "riverside", "airport"}},
        {"food", "food", {"serving {v} food", "that serves {v}", "with {v} cuisine"},
         {"italian", "chinese", "indian", "thai", "french", "mexican", "korean", "greek"}},
        {"pricerange", "price range", {"in the {v} price range", "that is {v}", "a {v} one"},
         {"cheap", "moderate", "expensive", "budget", "luxury", "mid-range"}},
        {"booktime", "time", {"at {v}", "for {v}", "around {v}"},
         {"12:00", "13:30", "15:15", "17:45", "18:30", "19:00", "20:15", "21:00"}},
        {"bookday", "day", {"on {v}", "for {v}"},
         {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"}},
        {"bookpeople", "number of people", {"for {v} people", "a table for {v}"},
         {"1", "2", "3", "4", "5", "6", "7", "8"}}}},
      {"attraction",
       {"i want to visit an attraction", "what is there to see", "find me something to do"},
       {{"area", "area", {"in the {v}", "somewhere in the {v}", "around the {v}"},
         {"north", "south", "east", "west", "centre", "downtown", "riverside", "airport"}},
        {"type", "type", {"like a {v}", "maybe a {v}", "such as a {v}"},
         {"museum", "theatre", "park", "college", "gallery", "cinema", "church", "pool"}},
        {"name", "name", {"called {v}", "named {v}"},
         {"kings college", "the fitzwilliam", "castle galleries", "riverboat georgina",
          "the junction", "whale of a time", "abbey pool", "clare hall"}},
        {"day", "day", {"on {v}", "this {v}"},
         {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"}}}},
      {"train",
       {"i need a train", "i am looking for a train", "can you book me a train"},
       {{"departure", "departure", {"leaving from {v}", "departing {v}", "from {v}"},
         {"cambridge", "london", "ely", "norwich", "stevenage", "leicester", "peterborough"}},
        {"destination", "destination", {"going to {v}", "arriving in {v}", "to {v}"},
         {"cambridge", "london", "ely", "norwich", "stevenage", "leicester", "peterborough"}},
        {"day", "day", {"on {v}", "for {v}"},
         {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"}},
        {"leaveat", "departure time", {"leaving after {v}", "departing at {v}"},
         {"08:00", "09:15", "11:30", "13:45", "15:15", "17:00", "19:30"}}}},
      {"taxi",
       {"i need a taxi", "please book a taxi", "can you get me a cab"},
       {{"departure", "pickup", {"picking me up at {v}", "from {v}"},
         {"the station", "the airport", "my hotel", "the museum", "the college"}},
        {"destination", "destination", {"going to {v}", "taking me to {v}"},
         {"the station", "the airport", "my hotel", "the museum", "the college"}},
        {"leaveat", "pickup time", {"leaving at {v}", "after {v}"},
         {"08:00", "09:15", "11:30", "13:45", "15:15", "17:00", "19:30"}},
        {"arriveby", "arrival time", {"arriving by {v}", "before {v}"},
         {"08:00", "09:15", "11:30", "13:45", "15:15", "17:00", "19:30"}}}},
  };
  return kBanks;
}

// Surface forms that denote a canonical value.
inline const std::map<std::string, std::vector<std::string>>& synonyms() {
  static const std::map<std::string, std::vector<std::string>> kSyn = {
      {"centre", {"center", "city centre"}},
      {"cheap", {"inexpensive"}},
      {"moderate", {"moderately priced"}},
      {"expensive", {"pricey"}},
      {"guesthouse", {"guest house"}},
      {"theatre", {"theater"}},
  };
  return kSyn;
}

inline const std::vector<std::string>& dontcare_replies() {
  static const std::vector<std::string> kReplies = {
      "no , i do not care about that .", "it does not matter .",
      "no , i am not concerned about that .", "any is fine ."};
  return kReplies;
}

inline const std::vector<std::string>& chatter_replies() {
  static const std::vector<std::string> kReplies = {
      "thank you .", "that sounds great .", "ok , let me think .", "great , thanks a lot ."};
  return kReplies;
}

inline std::string fill(const std::string& tmpl, const std::string& v) {
  std::string out = tmpl;
  auto pos = out.find("{v}");
  if (pos != std::string::npos) out.replace(pos, 3, v);
  return out;
}

class DialogueGenerator {
 public:
  DialogueGenerator(const SynthConfig& cfg, std::vector<DomainBank> domains)
      : cfg_(cfg), domains_(std::move(domains)) {}

  Dialogue generate(Rng& rng, std::string id) {
    Dialogue d;
    d.id = std::move(id);
    const std::size_t n_turns =
        cfg_.min_turns + rng.below(cfg_.max_turns - cfg_.min_turns + 1);
    DialogueState state;
    std::vector<std::size_t> opened;
    std::size_t active = rng.below(domains_.size());
    // Slot the system asked about at the end of the previous turn, if any.
    std::optional<std::size_t> requested;
    std::string system;

    for (std::size_t t = 0; t < n_turns; ++t) {
      Turn turn;
      turn.system_utterance = system;
      std::string user;
      const auto& dom = domains_[active];
      const double roll = rng.uniform();

      if (t == 0) {
        user = open_domain(rng, active, state, 1 + rng.below(2));
        opened.push_back(active);
      } else if (requested) {
        const auto& slot = dom.slots[*requested];
        if (rng.bernoulli(cfg_.dontcare_rate / (cfg_.dontcare_rate + 0.5))) {
          user = rng.pick(dontcare_replies());
          state.set(SlotId(dom.name, slot.name), kDontCare);
        } else {
          const auto& v = rng.pick(slot.values);
          user = surface(rng, v) + " please .";
          state.set(SlotId(dom.name, slot.name), v);
        }
      } else if (roll < cfg_.chatter_rate) {
        user = rng.pick(chatter_replies());
      } else if (roll < cfg_.chatter_rate + cfg_.overwrite_rate && has_domain_slot(state, active)) {
        auto filled = filled_slots(state, active);
        const auto& slot = dom.slots[rng.pick(filled)];
        std::string v = rng.pick(slot.values);
        const auto* cur = state.get(SlotId(dom.name, slot.name));
        if (cur && *cur == v) v = slot.values[(index_of(slot.values, v) + 1) % slot.values.size()];
        user = "actually , make the " + slot.noun + " " + surface(rng, v) + " instead .";
        state.set(SlotId(dom.name, slot.name), v);
      } else if (roll < cfg_.chatter_rate + cfg_.overwrite_rate + cfg_.switch_rate &&
                 opened.size() < domains_.size()) {
        std::size_t next = rng.below(domains_.size());
        while (std::find(opened.begin(), opened.end(), next) != opened.end())
          next = (next + 1) % domains_.size();
        active = next;
        opened.push_back(active);
        user = "i also need something else . " + open_domain(rng, active, state, 1 + rng.below(2));
      } else {
        auto empty = empty_slots(state, active);
        if (empty.empty()) {
          user = rng.pick(chatter_replies());
        } else {
          const auto& slot = domains_[active].slots[rng.pick(empty)];
          const auto& v = rng.pick(slot.values);
          user = "i would like it " + fill(rng.pick(slot.templates), surface(rng, v)) + " .";
          state.set(SlotId(domains_[active].name, slot.name), v);
        }
      }
      turn.user_utterance = user;
      turn.gold_state = state;
      d.turns.push_back(std::move(turn));

      // System response for the next turn.
      requested.reset();
      auto empty = empty_slots(state, active);
      if (!empty.empty() && rng.bernoulli(0.35 + cfg_.dontcare_rate)) {
        requested = rng.pick(empty);
        const auto& slot = domains_[active].slots[*requested];
        system = rng.bernoulli(0.5) ? "do you have a preference for the " + slot.noun + " ?"
                                    : "what " + slot.noun + " would you like ?";
      } else if (rng.bernoulli(cfg_.offer_rate)) {
        const auto& slot = rng.pick(domains_[active].slots);
        system = "i found one " + fill(slot.templates.front(), rng.pick(slot.values)) +
                 " . does that work ?";
      } else {
        system = "i have a few options for you .";
      }
    }
    return d;
  }

 private:
  static std::size_t index_of(const std::vector<std::string>& v, const std::string& x) {
    return static_cast<std::size_t>(std::find(v.begin(), v.end(), x) - v.begin());
  }

  std::string surface(Rng& rng, const std::string& v) {
    auto it = synonyms().find(v);
    if (it != synonyms().end() && rng.bernoulli(cfg_.synonym_rate)) return rng.pick(it->second);
    return v;
  }

  std::string open_domain(Rng& rng, std::size_t dom_idx, DialogueState& state, std::size_t k) {
    const auto& dom = domains_[dom_idx];
    auto empty = empty_slots(state, dom_idx);
    rng.shuffle(empty);
    std::string user = rng.pick(dom.openers);
    for (std::size_t i = 0; i < k && i < empty.size(); ++i) {
      const auto& slot = dom.slots[empty[i]];
      const auto& v = rng.pick(slot.values);
      user += (i == 0 ? " " : " and ") + fill(rng.pick(slot.templates), surface(rng, v));
      state.set(SlotId(dom.name, slot.name), v);
    }
    return user + " .";
  }

  std::vector<std::size_t> empty_slots(const DialogueState& s, std::size_t dom_idx) const {
    std::vector<std::size_t> out;
    const auto& dom = domains_[dom_idx];
    for (std::size_t i = 0; i < dom.slots.size(); ++i)
      if (!s.contains(SlotId(dom.name, dom.slots[i].name))) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> filled_slots(const DialogueState& s, std::size_t dom_idx) const {
    std::vector<std::size_t> out;
    const auto& dom = domains_[dom_idx];
    for (std::size_t i = 0; i < dom.slots.size(); ++i)
      if (const auto* v = s.get(SlotId(dom.name, dom.slots[i].name)); v && *v != kDontCare)
        out.push_back(i);
    return out;
  }

  bool has_domain_slot(const DialogueState& s, std::size_t dom_idx) const {
    return !filled_slots(s, dom_idx).empty();
  }

  const SynthConfig& cfg_;
  std::vector<DomainBank> domains_;
};

}  // namespace synth

/// Every problem with `cfg`, one message per violated field.
inline std::vector<std::string> synth_config_problems(const SynthConfig& cfg) {
  std::vector<std::string> problems;
  if (cfg.domains.empty()) problems.push_back("synth.domains: need at least one domain");
  if (cfg.slots_per_domain < 2) problems.push_back("synth.slots_per_domain: must be >= 2");
  if (cfg.value_set_size == 0)
    problems.push_back("synth.value_set_size: categorical slots need values");
  if (cfg.min_turns == 0 || cfg.max_turns < cfg.min_turns)
    problems.push_back("synth.min_turns/max_turns: need 1 <= min_turns <= max_turns");
  const std::pair<const char*, double> rates[] = {
      {"dontcare_rate", cfg.dontcare_rate}, {"overwrite_rate", cfg.overwrite_rate},
      {"chatter_rate", cfg.chatter_rate},   {"switch_rate", cfg.switch_rate},
      {"offer_rate", cfg.offer_rate},       {"synonym_rate", cfg.synonym_rate}};
  for (const auto& [name, r] : rates)
    if (!(r >= 0.0 && r <= 1.0)) problems.push_back(std::string("synth.") + name + ": must lie in [0, 1]");
  for (const auto& name : cfg.domains) {
    auto it = std::find_if(synth::banks().begin(), synth::banks().end(),
                           [&](const auto& b) { return b.name == name; });
    if (it == synth::banks().end())
      problems.push_back("synth.domains: unknown domain '" + name + "'");
    else if (it->slots.size() < cfg.slots_per_domain)
      problems.push_back("synth.slots_per_domain: domain '" + name + "' has only " +
                         std::to_string(it->slots.size()) + " slots");
  }
  return problems;
}

inline SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg) {
  if (const auto problems = synth_config_problems(cfg); !problems.empty()) {
    std::string msg;
    for (const auto& p : problems) msg += p + "; ";
    throw Error("invalid_config", msg);
  }
  std::vector<synth::DomainBank> chosen;
  for (const auto& name : cfg.domains) {
    auto bank = *std::find_if(synth::banks().begin(), synth::banks().end(),
                              [&](const auto& b) { return b.name == name; });
    bank.slots.resize(cfg.slots_per_domain);
    for (auto& s : bank.slots)
      if (s.values.size() > cfg.value_set_size) s.values.resize(cfg.value_set_size);
    chosen.push_back(std::move(bank));
  }

  std::vector<Ontology::SlotSpec> specs;
  for (const auto& dom : chosen)
    for (const auto& s : dom.slots) {
      auto values = s.values;
      if (cfg.dontcare_rate > 0.0) values.push_back(kDontCare);
      specs.push_back({SlotId(dom.name, s.name), values});
    }

  SynthCorpus out;
  out.ontology = Ontology(std::move(specs));
  synth::DialogueGenerator gen(cfg, chosen);
  auto make = [&](const std::string& name, std::size_t n, std::uint64_t stream) {
    CorpusSplit split;
    split.name = name;
    split.ontology = out.ontology;
    Rng rng(cfg.seed * 1000003ULL + stream);
    for (std::size_t i = 0; i < n; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s-%05zu", name.c_str(), i);
      split.dialogues.push_back(gen.generate(rng, id));
    }
    return split;
  };
  out.train = make("train", cfg.n_train, 1);
  out.validation = make("validation", cfg.n_validation, 2);
  out.test = make("test", cfg.n_test, 3);
  return out;
}

}  // namespace acctdst
