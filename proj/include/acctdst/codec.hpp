#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "acctdst/corpus.hpp"

namespace acctdst {

using TokenId = int;

/// Reserved ids. These are stable across vocabularies.
enum Special : TokenId {
  kPad = 0,
  kUnk,
  kBos,
  kEosState,
  kSepContext,
  kRoleSys,
  kRoleUser,
  kBraceOpen,
  kBraceClose,
  kComma,
  kColon,
  kNumSpecials
};

inline const std::vector<std::string>& special_strings() {
  static const std::vector<std::string> kSpecials = {
      "<pad>", "<unk>", "<bos>", "<eos_state>", "<sep>", "<sys>",
      "<user>", "<{>", "<}>", "<,>", "<:>"};
  return kSpecials;
}

/// Lowercased word-level tokenization. Runs of letters, digits and
/// `- : _ ' & /` form one token; every other non-space char is its own token.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || raw == '-' || raw == ':' || raw == '_' || raw == '\'' ||
               raw == '&' || raw == '/') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      out.emplace_back(1, raw);
    }
  }
  flush();
  return out;
}

class Vocabulary {
 public:
  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  // `words` excludes the specials; they are always prepended.
  explicit Vocabulary(const std::vector<std::string>& words) {
    tokens_ = special_strings();
    for (const auto& w : words) {
      if (ids_.count(w) || std::find(tokens_.begin(), tokens_.end(), w) != tokens_.end())
        continue;
      tokens_.push_back(w);
    }
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      ids_.emplace(tokens_[i], static_cast<TokenId>(i));
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  TokenId id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& word) const { return ids_.count(word) > 0; }

  static bool is_special(TokenId id) { return id >= 0 && id < kNumSpecials; }

  json to_json() const { return json(tokens_); }
  static Vocabulary from_json(const json& j) {
    auto all = j.get<std::vector<std::string>>();
    if (all.size() < kNumSpecials ||
        !std::equal(special_strings().begin(), special_strings().end(), all.begin()))
      throw Error("parse_error", "vocabulary file must start with the reserved specials");
    return Vocabulary(std::vector<std::string>(all.begin() + kNumSpecials, all.end()));
  }
  std::string hash() const { return hash_hex(to_json().dump()); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Words with count >= min_count from the utterances, plus every ontology slot
/// name, ontology value word and gold value word (so every state is encodable).
inline Vocabulary build_vocab(const CorpusSplit& train, std::size_t min_count = 1) {
  if (train.dialogues.empty()) throw Error("invalid_argument", "empty training split");
  std::map<std::string, std::size_t> counts;
  for (const auto& d : train.dialogues)
    for (const auto& t : d.turns) {
      for (const auto& w : tokenize(t.system_utterance)) ++counts[w];
      for (const auto& w : tokenize(t.user_utterance)) ++counts[w];
    }
  std::vector<std::string> words;
  for (const auto& spec : train.ontology.specs()) words.push_back(spec.id.str());
  std::vector<std::string> rest;
  for (const auto& [w, c] : counts)
    if (c >= min_count) rest.push_back(w);
  for (const auto& spec : train.ontology.specs())
    if (spec.values)
      for (const auto& v : *spec.values)
        for (const auto& w : tokenize(v)) rest.push_back(w);
  for (const auto& d : train.dialogues)
    for (const auto& t : d.turns)
      for (const auto& [slot, value] : t.gold_state)
        for (const auto& w : tokenize(value)) rest.push_back(w);
  std::sort(rest.begin(), rest.end());
  rest.erase(std::unique(rest.begin(), rest.end()), rest.end());
  words.insert(words.end(), rest.begin(), rest.end());
  return Vocabulary(words);
}

struct SerializedContext {
  std::vector<TokenId> token_ids;  // always ends in kSepContext
  std::size_t turn_index = 0;
  std::size_t dropped_turns = 0;
};

inline std::vector<TokenId> encode_words(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : tokenize(text)) ids.push_back(vocab.id(w));
  return ids;
}

/// [BOS] slot names... then per turn [SYS] sys [USER] user, closed by [SEP].
/// Oldest turns are dropped first when the result would exceed `max_len`.
inline SerializedContext encode_context(const std::vector<Turn>& prefix, const Ontology& ontology,
                                        const Vocabulary& vocab, std::size_t max_len) {
  if (prefix.empty()) throw Error("invalid_argument", "context needs at least one user turn");
  std::vector<TokenId> preamble{kBos};
  for (const auto& slot : ontology.slots()) preamble.push_back(vocab.id(slot.str()));

  std::vector<std::vector<TokenId>> turns;
  for (const auto& t : prefix) {
    std::vector<TokenId> ids{kRoleSys};
    auto sys = encode_words(t.system_utterance, vocab);
    ids.insert(ids.end(), sys.begin(), sys.end());
    ids.push_back(kRoleUser);
    auto usr = encode_words(t.user_utterance, vocab);
    ids.insert(ids.end(), usr.begin(), usr.end());
    turns.push_back(std::move(ids));
  }

  std::size_t first = 0;
  std::size_t total = preamble.size() + 1;
  for (const auto& t : turns) total += t.size();
  while (total > max_len && first + 1 < turns.size()) total -= turns[first++].size();
  if (total > max_len)
    throw Error("context_overflow", "context of " + std::to_string(total) +
                                        " tokens exceeds max length " + std::to_string(max_len));

  SerializedContext ctx;
  ctx.turn_index = prefix.size() - 1;
  ctx.dropped_turns = first;
  ctx.token_ids = std::move(preamble);
  for (std::size_t i = first; i < turns.size(); ++i)
    ctx.token_ids.insert(ctx.token_ids.end(), turns[i].begin(), turns[i].end());
  ctx.token_ids.push_back(kSepContext);
  return ctx;
}

/// `{ slot : value , ... } <eos_state>` with slots in canonical order.
inline std::vector<TokenId> encode_state(const DialogueState& state, const Vocabulary& vocab) {
  std::vector<TokenId> ids{kBraceOpen};
  bool first = true;
  for (const auto& [slot, value] : state) {
    if (!first) ids.push_back(kComma);
    first = false;
    ids.push_back(vocab.id(slot.str()));
    ids.push_back(kColon);
    auto v = encode_words(value, vocab);
    ids.insert(ids.end(), v.begin(), v.end());
  }
  ids.push_back(kBraceClose);
  ids.push_back(kEosState);
  return ids;
}

struct ParseDiagnostics {
  std::size_t dropped = 0;  // malformed, unknown-slot, duplicate or truncated pairs
  bool closed = false;      // saw the closing brace
};

struct ParsedState {
  DialogueState state;
  ParseDiagnostics diagnostics;
};

/// Best-effort inverse of encode_state. Never throws on malformed input.
inline ParsedState parse_state(const std::vector<TokenId>& tokens, const Vocabulary& vocab,
                               const Ontology& ontology) {
  ParsedState out;
  std::size_t i = 0;
  const std::size_t n = tokens.size();
  if (i < n && tokens[i] == kBraceOpen) ++i;

  auto at_end = [&] {
    return i >= n || tokens[i] == kBraceClose || tokens[i] == kEosState;
  };

  while (!at_end()) {
    // One pair: slot ':' value-words, terminated by ',' '}' <eos> or end.
    bool ok = true;
    std::optional<SlotId> slot;
    const TokenId slot_tok = tokens[i++];
    if (Vocabulary::is_special(slot_tok)) {
      ok = false;
    } else {
      const auto idx = ontology.find(vocab.token(slot_tok));
      if (idx) slot = ontology.slot(*idx);
      else ok = false;
    }
    if (i < n && tokens[i] == kColon) ++i;
    else ok = false;

    std::string value;
    while (i < n && tokens[i] != kComma && tokens[i] != kBraceClose && tokens[i] != kEosState) {
      if (Vocabulary::is_special(tokens[i]) && tokens[i] != kUnk) ok = false;
      if (!value.empty()) value += ' ';
      value += vocab.token(tokens[i]);
      ++i;
    }
    const bool terminated = i < n;
    if (i < n && tokens[i] == kComma) ++i;

    if (!ok || !terminated || normalize_value(value).empty() ||
        (slot && out.state.contains(*slot))) {
      ++out.diagnostics.dropped;
      continue;
    }
    out.state.set(*slot, value);
  }
  out.diagnostics.closed = i < n && tokens[i] == kBraceClose;
  return out;
}

inline std::string render_tokens(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::string s;
  for (auto id : ids) {
    if (!s.empty()) s += ' ';
    s += vocab.token(id);
  }
  return s;
}

}  // namespace acctdst
