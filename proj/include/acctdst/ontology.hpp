#pragma once

#include <algorithm>
#include <compare>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "acctdst/common.hpp"

namespace acctdst {

inline constexpr const char* kDontCare = "dontcare";

/// A "domain-slot" identifier. Ordered by canonical string.
class SlotId {
 public:
  SlotId() = default;
  SlotId(std::string_view domain, std::string_view slot)
      : domain_(normalize_value(domain)), slot_(normalize_value(slot)) {
    if (domain_.empty() || slot_.empty())
      throw Error("invalid_slot", "slot id needs a nonempty domain and slot");
    if (domain_.find('-') != std::string::npos)
      throw Error("invalid_slot", "domain may not contain '-': " + domain_);
    for (char c : domain_ + slot_)
      if (std::isspace(static_cast<unsigned char>(c)))
        throw Error("invalid_slot", "slot id may not contain whitespace");
  }

  // Splits at the first '-'.
  static SlotId parse(std::string_view canonical) {
    const auto dash = canonical.find('-');
    if (dash == std::string_view::npos || dash == 0 || dash + 1 == canonical.size())
      throw Error("invalid_slot", "not a domain-slot name: " + std::string(canonical));
    return SlotId(canonical.substr(0, dash), canonical.substr(dash + 1));
  }

  const std::string& domain() const { return domain_; }
  const std::string& slot() const { return slot_; }
  std::string str() const { return domain_ + "-" + slot_; }

  friend bool operator==(const SlotId& a, const SlotId& b) {
    return a.domain_ == b.domain_ && a.slot_ == b.slot_;
  }
  friend std::strong_ordering operator<=>(const SlotId& a, const SlotId& b) {
    return a.str() <=> b.str();
  }

 private:
  std::string domain_;
  std::string slot_;
};

/// Fixed slot set with a stable index order (lexicographic by canonical name).
class Ontology {
 public:
  struct SlotSpec {
    SlotId id;
    // nullopt marks an open (free-text) slot.
    std::optional<std::vector<std::string>> values;
  };

  Ontology() = default;

  explicit Ontology(std::vector<SlotSpec> specs) : specs_(std::move(specs)) {
    if (specs_.empty()) throw Error("invalid_ontology", "ontology needs at least one slot");
    std::sort(specs_.begin(), specs_.end(),
              [](const SlotSpec& a, const SlotSpec& b) { return a.id < b.id; });
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      auto name = specs_[i].id.str();
      if (!index_.emplace(name, i).second)
        throw Error("invalid_ontology", "duplicate slot " + name);
      if (specs_[i].values) {
        auto& vals = *specs_[i].values;
        for (auto& v : vals) v = normalize_value(v);
        if (vals.empty())
          throw Error("invalid_ontology", "categorical slot " + name + " has no values");
      }
    }
  }

  std::size_t size() const { return specs_.size(); }
  const std::vector<SlotSpec>& specs() const { return specs_; }
  const SlotId& slot(std::size_t i) const { return specs_.at(i).id; }

  std::vector<SlotId> slots() const {
    std::vector<SlotId> out;
    for (const auto& s : specs_) out.push_back(s.id);
    return out;
  }

  std::optional<std::size_t> find(const SlotId& id) const { return find(id.str()); }
  std::optional<std::size_t> find(const std::string& canonical) const {
    auto it = index_.find(canonical);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(const SlotId& id) const { return find(id).has_value(); }

  std::size_t index_of(const SlotId& id) const {
    auto i = find(id);
    if (!i) throw Error("ontology_violation", "slot not in ontology: " + id.str());
    return *i;
  }

  // Canonical text used for hashing; the order is part of the contract.
  std::string fingerprint() const {
    std::string s;
    for (const auto& spec : specs_) {
      s += spec.id.str();
      s += '=';
      if (spec.values) {
        for (const auto& v : *spec.values) s += v + '|';
      } else {
        s += "<open>";
      }
      s += '\n';
    }
    return s;
  }
  std::string hash() const { return hash_hex(fingerprint()); }

  friend bool operator==(const Ontology& a, const Ontology& b) {
    return a.fingerprint() == b.fingerprint();
  }

 private:
  std::vector<SlotSpec> specs_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Belief state: slot -> normalized value. Iteration is in canonical order.
class DialogueState {
 public:
  using Map = std::map<SlotId, std::string>;

  DialogueState() = default;
  DialogueState(std::initializer_list<std::pair<const char*, const char*>> pairs) {
    for (const auto& [k, v] : pairs) set(SlotId::parse(k), v);
  }

  // Empty values (after normalization) are treated as slot-absent.
  void set(const SlotId& slot, std::string_view value) {
    auto v = normalize_value(value);
    if (v.empty()) {
      pairs_.erase(slot);
      return;
    }
    pairs_[slot] = std::move(v);
  }
  void erase(const SlotId& slot) { pairs_.erase(slot); }

  bool contains(const SlotId& slot) const { return pairs_.count(slot) > 0; }
  const std::string* get(const SlotId& slot) const {
    auto it = pairs_.find(slot);
    return it == pairs_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  const Map& pairs() const { return pairs_; }
  auto begin() const { return pairs_.begin(); }
  auto end() const { return pairs_.end(); }

  std::vector<SlotId> slots() const {
    std::vector<SlotId> out;
    for (const auto& [k, v] : pairs_) out.push_back(k);
    return out;
  }

  std::string to_string() const {
    std::string s = "{";
    bool first = true;
    for (const auto& [k, v] : pairs_) {
      if (!first) s += ", ";
      first = false;
      s += k.str() + ": " + v;
    }
    return s + "}";
  }

  friend bool operator==(const DialogueState& a, const DialogueState& b) {
    return a.pairs_ == b.pairs_;
  }

 private:
  Map pairs_;
};

/// y_s for every slot of an ontology, in ontology order.
using SlotLabels = std::vector<std::uint8_t>;

/// Bit s is set iff slot s has a value (any value, "dontcare" included).
inline SlotLabels slot_labels(const DialogueState& state, const Ontology& ontology) {
  SlotLabels y(ontology.size(), 0);
  for (const auto& [slot, value] : state) y[ontology.index_of(slot)] = 1;
  return y;
}

}  // namespace acctdst
