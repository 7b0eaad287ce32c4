#pragma once

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "acctdst/checkpoint.hpp"
#include "acctdst/friction.hpp"
#include "acctdst/runs.hpp"

namespace acctdst {

/// A checkpoint loaded once and shared read-only by every session bound to it.
struct ServedModel {
  std::string id;
  Checkpoint<float> ck;
  Thresholds thresholds;
  DecodeOptions decode;
  std::size_t max_context_len = 192;
  std::unique_ptr<Decoder<float>> decoder;

  static std::shared_ptr<ServedModel> load(const std::string& id, const std::string& path) {
    auto m = std::make_shared<ServedModel>();
    m->id = id;
    m->ck = load_checkpoint<float>(path);
    const auto& meta = m->ck.metadata;
    if (meta.contains("thresholds")) m->thresholds = Thresholds::from_json(meta.at("thresholds"));
    if (meta.contains("decoding")) {
      const auto& d = meta.at("decoding");
      m->decode.max_new_tokens = d.value("max_new_tokens", m->decode.max_new_tokens);
      m->decode.max_value_tokens = d.value("max_value_tokens", m->decode.max_value_tokens);
      m->max_context_len = d.value("max_context_len", m->max_context_len);
    }
    m->decoder = std::make_unique<Decoder<float>>(m->ck.params, m->ck.vocab, m->ck.ontology,
                                                  m->decode);
    return m;
  }
};

struct ServiceOptions {
  std::map<std::string, std::string> checkpoints;  // id -> file
  double session_ttl_seconds = 1800;
  std::string snapshot_dir;  // empty: no snapshots
};

struct ServiceResponse {
  int status = 200;
  json body;
};

inline json probabilities_json(const Ontology& ontology, const SlotProbabilities& p) {
  json j = json::object();
  for (std::size_t s = 0; s < ontology.size(); ++s) j[ontology.slot(s).str()] = p[s];
  return j;
}

inline DialogueState state_from_json(const json& j, const Ontology& ontology) {
  DialogueState s;
  if (j.is_null()) return s;
  if (!j.is_object()) throw Error("invalid_argument", "state must be an object");
  for (const auto& [k, v] : j.items()) {
    const auto slot = SlotId::parse(k);
    if (!ontology.contains(slot)) throw Error("ontology_violation", "unknown slot " + k);
    s.set(slot, v.get<std::string>());
  }
  return s;
}

class DstService {
 public:
  using Clock = std::chrono::steady_clock;

  DstService(ServiceOptions opts, std::shared_ptr<RunStore> runs = nullptr)
      : opts_(std::move(opts)), runs_(std::move(runs)) {}

  /// Routes one request. Never throws; errors become {"error": {code, message}}.
  ServiceResponse handle(const std::string& method, const std::string& path,
                         const std::string& body) {
    try {
      evict_idle();
      const auto parts = split_path(path);
      const json req = body.empty() ? json::object() : parse_body(body);
      if (parts.size() == 1 && parts[0] == "health" && method == "GET")
        return {200, {{"status", "ok"}}};
      if (parts.size() == 1 && parts[0] == "checkpoints" && method == "GET") {
        json ids = json::array();
        for (const auto& [id, p] : opts_.checkpoints) ids.push_back(id);
        return {200, {{"checkpoints", ids}}};
      }
      if (parts.size() == 1 && parts[0] == "sessions" && method == "POST") return create_session(req);
      if (parts.size() >= 2 && parts[0] == "sessions") {
        auto s = find_session(parts[1]);
        if (parts.size() == 2 && method == "GET") return {200, snapshot(*s)};
        if (parts.size() == 3 && method == "POST" && parts[2] == "user_turn") return user_turn(*s, req);
        if (parts.size() == 3 && method == "POST" && parts[2] == "confirmations")
          return confirmations(*s, req);
        if (parts.size() == 3 && method == "POST" && parts[2] == "thresholds")
          return set_thresholds(*s, req);
        if (parts.size() == 3 && method == "GET" && parts[2] == "export") return export_session(*s);
      }
      if (parts.size() == 1 && parts[0] == "runs" && method == "GET") {
        return {200, {{"runs", runs_ ? runs_->list() : json::array()}}};
      }
      if (parts.size() == 2 && parts[0] == "runs" && method == "GET") {
        auto rec = runs_ ? runs_->get(parts[1]) : std::nullopt;
        if (!rec) throw Error("unknown_run", "no run " + parts[1]);
        return {200, rec->to_json()};
      }
      throw Error("not_found", method + " " + path);
    } catch (const Error& e) {
      return {status_for(e.code()), {{"error", {{"code", e.code()}, {"message", e.what()}}}}};
    } catch (const json::exception& e) {
      return {400, {{"error", {{"code", "invalid_request"}, {"message", e.what()}}}}};
    } catch (const std::exception& e) {
      return {500, {{"error", {{"code", "internal"}, {"message", e.what()}}}}};
    }
  }

  /// Registers routes on an httplib server, with one JSON log line per request.
  void bind(httplib::Server& srv) {
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
      const auto t0 = Clock::now();
      auto r = handle(req.method, req.path, req.body);
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
      res.set_header("Access-Control-Allow-Origin", "*");
      const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
      log(LogLevel::kInfo, json{{"ts", utc_timestamp()},
                                {"method", req.method},
                                {"path", req.path},
                                {"status", r.status},
                                {"ms", std::round(ms * 100) / 100}}
                               .dump());
    };
    srv.Get(R"(/.*)", route);
    srv.Post(R"(/.*)", route);
    srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.status = 204;
    });
  }

  std::size_t session_count() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
  }

  /// Drops sessions idle for longer than the TTL.
  void evict_idle() {
    std::lock_guard lock(mu_);
    const auto now = Clock::now();
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      const double idle =
          std::chrono::duration<double>(now - it->second->touched.load()).count();
      if (idle > opts_.session_ttl_seconds) it = sessions_.erase(it);
      else ++it;
    }
  }

 private:
  struct Session {
    std::string id;
    std::shared_ptr<ServedModel> model;
    Thresholds thresholds;
    std::vector<Turn> history;
    std::vector<bool> gold_attached;
    DecodedState last_decoded;
    SlotProbabilities last_probs;
    FrictionQuestionSet pending;     // latest turn only
    FrictionQuestionSet last_asked;  // questions of the latest turn, kept after answering
    std::map<std::string, UserAnswer> last_answers;
    std::optional<CorrectionResult> last_applied;
    DialogueState committed;
    std::string created_at, updated_at;
    std::atomic<Clock::time_point> touched{Clock::now()};
    std::mutex mu;
  };

  static int status_for(const std::string& code) {
    if (code == "unknown_checkpoint" || code == "unknown_session" || code == "unknown_run" ||
        code == "unknown_question" || code == "not_found")
      return 404;
    if (code == "already_confirmed") return 409;
    if (code == "context_overflow" || code == "sequence_overflow") return 413;
    if (code == "internal" || code == "io_error") return 500;
    return 400;
  }

  static std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::size_t i = 0;
    while (i < path.size()) {
      while (i < path.size() && path[i] == '/') ++i;
      const auto j = path.find('/', i);
      const auto part = path.substr(i, j == std::string::npos ? std::string::npos : j - i);
      if (!part.empty()) parts.push_back(part);
      if (j == std::string::npos) break;
      i = j;
    }
    return parts;
  }

  static json parse_body(const std::string& body) {
    try {
      return json::parse(body);
    } catch (const json::exception& e) {
      throw Error("invalid_request", std::string("body is not JSON: ") + e.what());
    }
  }

  std::shared_ptr<ServedModel> model(const std::string& id) {
    std::lock_guard lock(mu_);
    if (auto it = models_.find(id); it != models_.end()) return it->second;
    auto p = opts_.checkpoints.find(id);
    if (p == opts_.checkpoints.end()) throw Error("unknown_checkpoint", "no checkpoint " + id);
    auto m = ServedModel::load(id, p->second);
    models_[id] = m;
    return m;
  }

  std::shared_ptr<Session> find_session(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error("unknown_session", "no session " + id);
    it->second->touched = Clock::now();
    return it->second;
  }

  std::string new_session_id() {
    static thread_local std::mt19937_64 gen{std::random_device{}()};
    char buf[48];
    std::snprintf(buf, sizeof buf, "s%06llu-%08llx",
                  static_cast<unsigned long long>(++counter_),
                  static_cast<unsigned long long>(gen() & 0xffffffffULL));
    return buf;
  }

  static Thresholds thresholds_from(const json& j, Thresholds fallback) {
    Thresholds t = fallback;
    t.fp = j.value("tau_fp", t.fp);
    t.fn = j.value("tau_fn", t.fn);
    if (!(t.fp >= 0 && t.fp <= 1 && t.fn >= 0 && t.fn <= 1))
      throw Error("invalid_argument", "thresholds must lie in [0, 1]");
    return t;
  }

  ServiceResponse create_session(const json& req) {
    const auto ckpt = req.at("checkpoint_id").get<std::string>();
    auto m = model(ckpt);
    auto s = std::make_shared<Session>();
    s->model = m;
    s->thresholds = req.contains("thresholds") ? thresholds_from(req.at("thresholds"), m->thresholds)
                                               : m->thresholds;
    s->created_at = s->updated_at = utc_timestamp();
    {
      std::lock_guard lock(mu_);
      s->id = new_session_id();
      sessions_[s->id] = s;
    }
    persist(*s);
    return {201,
            {{"session_id", s->id},
             {"ontology", ontology_to_json(m->ck.ontology)},
             {"thresholds", s->thresholds.to_json()}}};
  }

  ServiceResponse user_turn(Session& s, const json& req) {
    std::lock_guard lock(s.mu);
    const auto& m = *s.model;
    const auto& ontology = m.ck.ontology;
    Turn turn;
    turn.system_utterance = req.value("system_utterance", "");
    turn.user_utterance = req.at("user_utterance").get<std::string>();
    const bool has_gold = req.contains("gold_state");
    if (has_gold) turn.gold_state = state_from_json(req.at("gold_state"), ontology);

    auto history = s.history;
    history.push_back(turn);
    const auto ctx = encode_context(history, ontology, m.ck.vocab, m.max_context_len);
    auto pc = m.decoder->prepare(ctx);
    auto decoded = m.decoder->generate_state(pc);
    const ValueSource vs = [&](const SlotId& slot) {
      return m.decoder->generate_slot_value(pc, decoded, slot);
    };
    auto questions = build_questions(decoded, pc.probs, ontology, s.thresholds, vs, &m.ck.vocab);

    // Commit after validation succeeded; unanswered questions of the previous
    // turn leave its prediction as it was.
    s.history = std::move(history);
    s.gold_attached.push_back(has_gold);
    s.last_decoded = decoded;
    s.last_probs = pc.probs;
    s.last_asked = questions;
    s.last_answers.clear();
    s.last_applied.reset();
    if (questions.empty()) {
      s.committed = decoded.state;
      s.pending = {};
    } else {
      s.pending = questions;
    }
    s.updated_at = utc_timestamp();
    persist(s);

    json out = {{"turn_index", s.history.size() - 1},
                {"predicted_state", state_to_json(decoded.state)},
                {"slot_probabilities", probabilities_json(ontology, s.last_probs)},
                {"friction_questions", questions.to_json()},
                {"committed_state", state_to_json(s.committed)},
                {"pending", !questions.empty()},
                {"truncated", decoded.truncated}};
    if (has_gold) {
      out["metrics"] = {{"error_profile", error_profile(decoded.state, turn.gold_state).to_json()},
                        {"exact_match", decoded.state == turn.gold_state}};
    }
    return {200, out};
  }

  ServiceResponse confirmations(Session& s, const json& req) {
    std::lock_guard lock(s.mu);
    std::map<std::string, UserAnswer> answers;
    for (const auto& a : req.at("answers")) {
      const auto id = a.at("question_id").get<std::string>();
      if (!s.last_asked.find(id)) throw Error("unknown_question", "no question with id " + id);
      auto ans = UserAnswer::from_json(a);
      if (auto [it, fresh] = answers.emplace(id, ans); !fresh && !(it->second == ans))
        throw Error("invalid_answer", "conflicting answers for " + id);
    }
    if (s.last_applied) {
      // Already confirmed: a resubmission of the same answers is a no-op.
      for (const auto& [id, a] : answers) {
        auto it = s.last_answers.find(id);
        if (it == s.last_answers.end() || !(it->second == a))
          throw Error("already_confirmed", "answers for this turn were already applied");
      }
      return {200, {{"committed_state", state_to_json(s.committed)},
                    {"applied", s.last_applied->to_json()}}};
    }
    auto result = apply_answers(s.last_decoded.state, s.last_asked, answers);
    s.committed = result.corrected;
    s.last_answers = answers;
    s.last_applied = result;
    s.pending = {};
    s.updated_at = utc_timestamp();
    persist(s);
    return {200, {{"committed_state", state_to_json(s.committed)}, {"applied", result.to_json()}}};
  }

  ServiceResponse set_thresholds(Session& s, const json& req) {
    std::lock_guard lock(s.mu);
    s.thresholds = thresholds_from(req, s.thresholds);
    s.updated_at = utc_timestamp();
    persist(s);
    return {200, {{"thresholds", s.thresholds.to_json()}}};
  }

  ServiceResponse export_session(Session& s) {
    std::lock_guard lock(s.mu);
    CorpusSplit split;
    split.name = "session";
    split.ontology = s.model->ck.ontology;
    Dialogue d;
    d.id = s.id;
    d.turns = s.history;
    if (!d.turns.empty()) split.dialogues.push_back(std::move(d));
    return {200, corpus_to_json(split)};
  }

  json snapshot(Session& s) {
    std::lock_guard lock(s.mu);
    return snapshot_locked(s);
  }

  json snapshot_locked(const Session& s) const {
    json hist = json::array();
    for (std::size_t i = 0; i < s.history.size(); ++i) {
      json t = {{"system", s.history[i].system_utterance}, {"user", s.history[i].user_utterance}};
      if (s.gold_attached[i]) t["gold_state"] = state_to_json(s.history[i].gold_state);
      hist.push_back(t);
    }
    json j = {{"session_id", s.id},
              {"checkpoint_id", s.model->id},
              {"thresholds", s.thresholds.to_json()},
              {"history", hist},
              {"committed_state", state_to_json(s.committed)},
              {"pending_questions", s.pending.to_json()},
              {"created_at", s.created_at},
              {"updated_at", s.updated_at}};
    if (!s.history.empty()) {
      j["last_predicted_state"] = state_to_json(s.last_decoded.state);
      j["last_slot_probabilities"] = probabilities_json(s.model->ck.ontology, s.last_probs);
    }
    return j;
  }

  void persist(const Session& s) const {
    if (opts_.snapshot_dir.empty()) return;
    try {
      std::filesystem::create_directories(opts_.snapshot_dir);
      write_file(opts_.snapshot_dir + "/" + s.id + ".json", snapshot_locked(s).dump(2));
    } catch (const std::exception& e) {
      log(LogLevel::kWarn, std::string("session snapshot failed: ") + e.what());
    }
  }

  ServiceOptions opts_;
  std::shared_ptr<RunStore> runs_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<ServedModel>> models_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
};

}  // namespace acctdst
