#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "acctdst/codec.hpp"
#include "acctdst/inference.hpp"

namespace acctdst {

struct DecodeOptions {
  std::size_t max_new_tokens = 64;
  std::size_t max_value_tokens = 8;
};

struct DecodedState {
  DialogueState state;
  std::vector<TokenId> raw_tokens;
  std::map<SlotId, double> pair_logprobs;  // summed token log-probs per emitted pair
  ParseDiagnostics diagnostics;
  bool truncated = false;  // hit max_new_tokens before <eos_state>
};

/// Slot probabilities in ontology order.
using SlotProbabilities = std::vector<double>;

/// Decoder state right after the separator plus the slot probabilities read
/// off the separator's encoding.
template <class T>
struct PreparedContext {
  DecoderState<T> state;
  std::vector<T> phi;
  SlotProbabilities probs;
};

template <class T>
class Decoder {
 public:
  Decoder(const ModelParameters<T>& params, const Vocabulary& vocab, const Ontology& ontology,
          DecodeOptions opts = {})
      : params_(&params), vocab_(&vocab), ontology_(&ontology), opts_(opts) {}

  const DecodeOptions& options() const { return opts_; }
  const Vocabulary& vocab() const { return *vocab_; }
  const Ontology& ontology() const { return *ontology_; }

  PreparedContext<T> prepare(const SerializedContext& ctx) const {
    if (ctx.token_ids.empty() || ctx.token_ids.back() != kSepContext)
      throw Error("invalid_argument", "context must end with the separator");
    PreparedContext<T> pc{DecoderState<T>(*params_), {}, {}};
    pc.state.feed(ctx.token_ids);
    pc.phi = pc.state.hidden();
    pc.probs = sigmoid_head<T>(pc.phi, params_->acc_w().value, params_->acc_b().value);
    return pc;
  }

  SlotProbabilities slot_probabilities(const SerializedContext& ctx) const {
    return prepare(ctx).probs;
  }

  /// Greedy decoding from the separator until <eos_state> or the token budget.
  DecodedState generate_state(const PreparedContext<T>& pc) const {
    DecodedState out;
    DecoderState<T> st = pc.state;
    std::vector<double> logps;
    for (std::size_t n = 0;; ++n) {
      if (n >= opts_.max_new_tokens) {
        out.truncated = true;
        break;
      }
      const auto logits = st.logits();
      const int tok = static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                                       logits.begin());
      logps.push_back(log_softmax_at(logits, tok));
      out.raw_tokens.push_back(tok);
      if (tok == kEosState) break;
      if (st.position() >= params_->config().max_seq_len) {
        out.truncated = true;
        break;
      }
      st.step(tok);
    }
    auto parsed = parse_state(out.raw_tokens, *vocab_, *ontology_);
    out.state = std::move(parsed.state);
    out.diagnostics = parsed.diagnostics;
    attribute_logprobs(out, logps);
    return out;
  }

  DecodedState generate_state(const SerializedContext& ctx) const {
    return generate_state(prepare(ctx));
  }

  /// Tokens forced before the value of `slot`: the state so far without its
  /// closing brace and <eos_state>, then `,` (if nonempty) `slot :`.
  std::vector<TokenId> forced_prefix(const DecodedState& b, const SlotId& slot) const {
    std::vector<TokenId> prefix =
        (b.diagnostics.dropped == 0 && b.diagnostics.closed && !b.truncated)
            ? b.raw_tokens
            : encode_state(b.state, *vocab_);
    while (!prefix.empty() && (prefix.back() == kEosState || prefix.back() == kBraceClose))
      prefix.pop_back();
    if (prefix.empty()) prefix.push_back(kBraceOpen);
    if (!b.state.empty()) prefix.push_back(kComma);
    prefix.push_back(vocab_->id(slot.str()));
    prefix.push_back(kColon);
    return prefix;
  }

  /// Forced continuation for a slot missing from `b`. Returns nullopt for an
  /// empty completion, a malformed one, or one without a terminator within
  /// max_value_tokens.
  std::optional<std::string> generate_slot_value(const PreparedContext<T>& pc,
                                                 const DecodedState& b, const SlotId& slot) const {
    if (b.state.contains(slot))
      throw Error("invalid_argument", "slot " + slot.str() + " is already in the state");
    const auto prefix = forced_prefix(b, slot);
    DecoderState<T> st = pc.state;
    try {
      st.feed(prefix);
      std::string value;
      for (std::size_t n = 0; n <= opts_.max_value_tokens; ++n) {
        const int tok = st.argmax_next();
        if (tok == kComma || tok == kBraceClose || tok == kEosState) {
          value = normalize_value(value);
          if (value.empty()) return std::nullopt;
          return value;
        }
        if (Vocabulary::is_special(tok) || n == opts_.max_value_tokens) return std::nullopt;
        if (!value.empty()) value += ' ';
        value += vocab_->token(tok);
        st.step(tok);
      }
    } catch (const Error& e) {
      if (e.code() != "sequence_overflow") throw;
    }
    return std::nullopt;
  }

 private:
  static double log_softmax_at(const std::vector<T>& logits, int idx) {
    const double mx = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
    double z = 0;
    for (T l : logits) z += std::exp(static_cast<double>(l) - mx);
    return static_cast<double>(logits[static_cast<std::size_t>(idx)]) - mx - std::log(z);
  }

  void attribute_logprobs(DecodedState& out, const std::vector<double>& logps) const {
    // Pairs are delimited by ',' after the opening brace.
    std::size_t i = (!out.raw_tokens.empty() && out.raw_tokens[0] == kBraceOpen) ? 1 : 0;
    while (i < out.raw_tokens.size()) {
      const std::size_t start = i;
      double sum = 0;
      while (i < out.raw_tokens.size() && out.raw_tokens[i] != kComma &&
             out.raw_tokens[i] != kBraceClose && out.raw_tokens[i] != kEosState)
        sum += logps[i++];
      if (start < out.raw_tokens.size() && !Vocabulary::is_special(out.raw_tokens[start])) {
        if (auto idx = ontology_->find(vocab_->token(out.raw_tokens[start])))
          if (out.state.contains(ontology_->slot(*idx)) &&
              !out.pair_logprobs.count(ontology_->slot(*idx)))
            out.pair_logprobs[ontology_->slot(*idx)] = sum;
      }
      if (i < out.raw_tokens.size() && out.raw_tokens[i] == kComma) ++i;
      else break;
    }
  }

  const ModelParameters<T>* params_;
  const Vocabulary* vocab_;
  const Ontology* ontology_;
  DecodeOptions opts_;
};

}  // namespace acctdst
