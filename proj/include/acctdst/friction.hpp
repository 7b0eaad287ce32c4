#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "acctdst/correction.hpp"

namespace acctdst {

enum class QuestionKind { kConfirmFp, kConfirmFn };

inline const char* to_string(QuestionKind k) {
  return k == QuestionKind::kConfirmFp ? "confirm_fp_candidate" : "confirm_fn_candidate";
}

struct FrictionQuestion {
  std::string id;  // "fp:<slot>" or "fn:<slot>", unique within a turn
  QuestionKind kind = QuestionKind::kConfirmFp;
  SlotId slot;
  std::string value;
  double confidence = 0;
  std::string rendered_text;

  json to_json() const {
    return {{"id", id},         {"kind", to_string(kind)}, {"slot", slot.str()},
            {"value", value},   {"confidence", confidence}, {"text", rendered_text}};
  }
};

/// Questions for one turn. `generation_attempts` counts fn candidates for
/// which a value was generated, whether or not one came back.
struct FrictionQuestionSet {
  std::vector<FrictionQuestion> questions;
  std::size_t generation_attempts = 0;

  bool empty() const { return questions.empty(); }
  std::size_t size() const { return questions.size(); }
  const FrictionQuestion* find(const std::string& id) const {
    for (const auto& q : questions)
      if (q.id == id) return &q;
    return nullptr;
  }
  json to_json() const {
    json a = json::array();
    for (const auto& q : questions) a.push_back(q.to_json());
    return a;
  }
};

inline std::string render_fp_question(const SlotId& slot, const std::string& value) {
  return "I have " + slot.str() + " as \"" + value +
         "\". Is that right? (Agree / Not agree: update to [new value] / Delete)";
}

inline std::string render_fn_question(const SlotId& slot, const std::string& value) {
  return "Should " + slot.str() + " be \"" + value + "\"? (Agree / Disagree)";
}

namespace detail {
// Slots of `b` ordered by where they first appear in the generated tokens.
inline std::vector<SlotId> prediction_order(const DecodedState& b, const Vocabulary* vocab) {
  std::vector<std::pair<std::size_t, SlotId>> keyed;
  std::size_t rank = 0;
  for (const auto& [slot, value] : b.state) {
    std::size_t pos = b.raw_tokens.size() + rank++;
    if (vocab) {
      const TokenId id = vocab->id(slot.str());
      auto it = std::find(b.raw_tokens.begin(), b.raw_tokens.end(), id);
      if (it != b.raw_tokens.end()) pos = static_cast<std::size_t>(it - b.raw_tokens.begin());
    }
    keyed.push_back({pos, slot});
  }
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& c) { return a.first < c.first; });
  std::vector<SlotId> out;
  for (auto& k : keyed) out.push_back(k.second);
  return out;
}
}  // namespace detail

/// fp questions for predicted pairs with p < tau_fp (prediction order), then
/// fn questions for absent slots with p >= tau_fn that got a value (ontology order).
inline FrictionQuestionSet build_questions(const DecodedState& b, const SlotProbabilities& p,
                                           const Ontology& ontology, const Thresholds& t,
                                           const ValueSource& value_source,
                                           const Vocabulary* vocab = nullptr) {
  if (p.size() != ontology.size())
    throw Error("invalid_argument", "slot probabilities do not match the ontology");
  FrictionQuestionSet qs;
  for (const auto& slot : detail::prediction_order(b, vocab)) {
    const double ps = p[ontology.index_of(slot)];
    if (ps >= t.fp) continue;
    const auto& v = *b.state.get(slot);
    qs.questions.push_back({"fp:" + slot.str(), QuestionKind::kConfirmFp, slot, v, ps,
                            render_fp_question(slot, v)});
  }
  for (std::size_t s = 0; s < ontology.size(); ++s) {
    const auto& slot = ontology.slot(s);
    if (b.state.contains(slot) || p[s] < t.fn) continue;
    ++qs.generation_attempts;
    std::optional<std::string> v;
    try {
      v = value_source(slot);
    } catch (const std::exception& e) {
      log(LogLevel::kWarn, "value source failed for " + slot.str() + ": " + e.what());
    }
    if (!v || normalize_value(*v).empty()) continue;
    const auto value = normalize_value(*v);
    qs.questions.push_back({"fn:" + slot.str(), QuestionKind::kConfirmFn, slot, value, p[s],
                            render_fn_question(slot, value)});
  }
  return qs;
}

enum class AnswerKind { kAgree, kDisagree, kUpdateTo, kDelete };

inline const char* to_string(AnswerKind k) {
  switch (k) {
    case AnswerKind::kAgree: return "agree";
    case AnswerKind::kDisagree: return "disagree";
    case AnswerKind::kUpdateTo: return "update_to";
    case AnswerKind::kDelete: return "delete";
  }
  return "?";
}

struct UserAnswer {
  AnswerKind kind = AnswerKind::kAgree;
  std::string value;  // only for kUpdateTo

  static UserAnswer agree() { return {AnswerKind::kAgree, {}}; }
  static UserAnswer disagree() { return {AnswerKind::kDisagree, {}}; }
  static UserAnswer remove() { return {AnswerKind::kDelete, {}}; }
  static UserAnswer update_to(const std::string& v) {
    auto n = normalize_value(v);
    if (n.empty()) throw Error("invalid_answer", "update_to needs a nonempty value");
    return {AnswerKind::kUpdateTo, std::move(n)};
  }

  json to_json() const {
    json j = {{"answer", to_string(kind)}};
    if (kind == AnswerKind::kUpdateTo) j["value"] = value;
    return j;
  }
  static UserAnswer from_json(const json& j) {
    const auto a = j.at("answer").get<std::string>();
    if (a == "agree") return agree();
    if (a == "disagree") return disagree();
    if (a == "delete") return remove();
    if (a == "update_to") return update_to(j.at("value").get<std::string>());
    throw Error("invalid_answer", "unknown answer \"" + a + "\"");
  }
  friend bool operator==(const UserAnswer&, const UserAnswer&) = default;
};

/// Applies answers keyed by question id. Unanswered questions leave the state
/// as predicted. On fp questions Disagree means Delete.
inline CorrectionResult apply_answers(const DialogueState& b, const FrictionQuestionSet& qs,
                                      const std::map<std::string, UserAnswer>& answers) {
  for (const auto& [id, a] : answers) {
    const auto* q = qs.find(id);
    if (!q) throw Error("unknown_question", "no pending question with id " + id);
    if (q->kind == QuestionKind::kConfirmFn &&
        (a.kind == AnswerKind::kUpdateTo || a.kind == AnswerKind::kDelete))
      throw Error("invalid_answer", "question " + id + " accepts only agree/disagree");
  }
  CorrectionResult out;
  out.corrected = b;
  out.attempted = qs.generation_attempts;
  out.cost_incurred = qs.generation_attempts > 0;
  for (const auto& q : qs.questions) {
    auto it = answers.find(q.id);
    if (it == answers.end()) continue;
    const auto& a = it->second;
    if (q.kind == QuestionKind::kConfirmFp) {
      if (a.kind == AnswerKind::kDelete || a.kind == AnswerKind::kDisagree) {
        out.corrected.set(q.slot, "");
        out.removed.push_back({q.slot, q.value, q.confidence});
      } else if (a.kind == AnswerKind::kUpdateTo && a.value != q.value) {
        out.corrected.set(q.slot, a.value);
        out.updated.push_back({q.slot, q.value, a.value});
      }
    } else if (a.kind == AnswerKind::kAgree) {
      out.corrected.set(q.slot, q.value);
      out.added.push_back({q.slot, q.value, q.confidence, EditSource::kUser});
    }
  }
  return out;
}

/// What a user who knows `gold` answers. With `binary`, fp questions get
/// Agree/Disagree only.
inline UserAnswer oracle_answer(const DialogueState& gold, const FrictionQuestion& q,
                                bool binary = false) {
  const auto* g = gold.get(q.slot);
  if (q.kind == QuestionKind::kConfirmFn)
    return (g && *g == q.value) ? UserAnswer::agree() : UserAnswer::disagree();
  if (g && *g == q.value) return UserAnswer::agree();
  if (binary) return UserAnswer::disagree();
  if (g) return UserAnswer::update_to(*g);
  return UserAnswer::remove();
}

/// Answers friction questions given the dialogue so far. The last turn of
/// `history` is the one being asked about; its gold_state may be empty when
/// the simulator does not need it.
class UserSimulator {
 public:
  virtual ~UserSimulator() = default;
  // nullopt: the question stays unanswered.
  virtual std::optional<UserAnswer> answer(const std::vector<Turn>& history,
                                           const FrictionQuestion& q) = 0;
  virtual std::string name() const = 0;

  std::map<std::string, UserAnswer> answer_all(const std::vector<Turn>& history,
                                               const FrictionQuestionSet& qs) {
    std::map<std::string, UserAnswer> out;
    for (const auto& q : qs.questions)
      if (auto a = answer(history, q)) out.emplace(q.id, *a);
    return out;
  }
};

class OracleSimulator : public UserSimulator {
 public:
  explicit OracleSimulator(bool binary = false) : binary_(binary) {}
  std::optional<UserAnswer> answer(const std::vector<Turn>& history,
                                   const FrictionQuestion& q) override {
    if (history.empty()) throw Error("invalid_argument", "oracle simulator needs a turn");
    return oracle_answer(history.back().gold_state, q, binary_);
  }
  std::string name() const override { return binary_ ? "oracle-binary" : "oracle"; }

 private:
  bool binary_;
};

/// Oracle answers flipped with probability epsilon: Agree <-> Disagree on fn
/// questions; on fp questions Agree becomes Delete and anything else Agree.
class NoisySimulator : public UserSimulator {
 public:
  NoisySimulator(double epsilon, std::uint64_t seed, bool binary = false)
      : epsilon_(epsilon), rng_(seed), oracle_(binary), binary_(binary) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
      throw Error("invalid_argument", "noise rate must lie in [0, 1]");
  }
  std::optional<UserAnswer> answer(const std::vector<Turn>& history,
                                   const FrictionQuestion& q) override {
    auto a = *oracle_.answer(history, q);
    if (epsilon_ <= 0.0 || !rng_.bernoulli(epsilon_)) return a;
    if (q.kind == QuestionKind::kConfirmFn)
      return a.kind == AnswerKind::kAgree ? UserAnswer::disagree() : UserAnswer::agree();
    if (a.kind == AnswerKind::kAgree) return binary_ ? UserAnswer::disagree() : UserAnswer::remove();
    return UserAnswer::agree();
  }
  std::string name() const override { return "noisy"; }

 private:
  double epsilon_;
  Rng rng_;
  OracleSimulator oracle_;
  bool binary_;
};

/// Tolerant reading of a free-text reply. Checked in order: "update to X",
/// "delete", "not agree"/"disagree", "agree". Case-insensitive.
inline std::optional<UserAnswer> parse_reply(const std::string& text, QuestionKind kind) {
  std::string t = normalize_value(text);
  const auto has = [&](const char* s) { return t.find(s) != std::string::npos; };
  if (auto pos = t.find("update to"); pos != std::string::npos) {
    if (kind == QuestionKind::kConfirmFn) return std::nullopt;
    std::string v = t.substr(pos + 9);
    const auto strip = [](char c) {
      return std::isspace(static_cast<unsigned char>(c)) || c == '"' || c == '\'' || c == '.' ||
             c == ':' || c == '[' || c == ']' || c == '!';
    };
    while (!v.empty() && strip(v.front())) v.erase(v.begin());
    while (!v.empty() && strip(v.back())) v.pop_back();
    if (normalize_value(v).empty()) return std::nullopt;
    return UserAnswer::update_to(v);
  }
  if (has("delete")) {
    if (kind == QuestionKind::kConfirmFn) return std::nullopt;
    return UserAnswer::remove();
  }
  if (has("not agree") || has("disagree") || has("don't agree") || has("do not agree"))
    return UserAnswer::disagree();
  if (has("agree")) return UserAnswer::agree();
  return std::nullopt;
}

struct UserCorrectOutcome {
  FrictionQuestionSet questions;
  std::map<std::string, UserAnswer> answers;
  CorrectionResult result;
};

/// One friction turn: ask, collect answers, apply.
inline UserCorrectOutcome user_correct(const DecodedState& b, const SlotProbabilities& p,
                                       const Ontology& ontology, const Thresholds& t,
                                       const ValueSource& value_source, UserSimulator& sim,
                                       const std::vector<Turn>& history,
                                       const Vocabulary* vocab = nullptr) {
  UserCorrectOutcome out;
  out.questions = build_questions(b, p, ontology, t, value_source, vocab);
  out.answers = sim.answer_all(history, out.questions);
  out.result = apply_answers(b.state, out.questions, out.answers);
  return out;
}

}  // namespace acctdst
