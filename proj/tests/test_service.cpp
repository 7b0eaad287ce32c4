#include <gtest/gtest.h>

#include <thread>

#include "acctdst/service.hpp"
#include "support.hpp"

using namespace acctdst;

namespace {

DstService make_service(double ttl = 1800, std::string snapshot_dir = "") {
  ServiceOptions o;
  o.checkpoints["toy"] = test::toy_model().checkpoint_path;
  o.session_ttl_seconds = ttl;
  o.snapshot_dir = std::move(snapshot_dir);
  return DstService(o);
}

std::string create(DstService& svc, json thresholds = nullptr) {
  json req = {{"checkpoint_id", "toy"}};
  if (!thresholds.is_null()) req["thresholds"] = thresholds;
  const auto r = svc.handle("POST", "/sessions", req.dump());
  EXPECT_EQ(r.status, 201) << r.body.dump();
  return r.body.at("session_id").get<std::string>();
}

json turn_request(const Turn& t, bool with_gold) {
  json j = {{"system_utterance", t.system_utterance}, {"user_utterance", t.user_utterance}};
  if (with_gold) j["gold_state"] = state_to_json(t.gold_state);
  return j;
}

const Dialogue& first_test_dialogue() {
  const auto& d = test::toy_model().data.test.dialogues;
  for (const auto& x : d)
    if (x.turns.size() >= 3) return x;
  return d.front();
}

// Plays a dialogue, answering every question as a binary oracle would.
std::vector<json> replay(DstService& svc, const std::string& sid, const Dialogue& d) {
  std::vector<json> out;
  for (const auto& t : d.turns) {
    const auto r = svc.handle("POST", "/sessions/" + sid + "/user_turn", turn_request(t, false).dump());
    EXPECT_EQ(r.status, 200) << r.body.dump();
    json answers = json::array();
    for (const auto& q : r.body.at("friction_questions")) {
      FrictionQuestion fq;
      fq.slot = SlotId::parse(q.at("slot").get<std::string>());
      fq.value = q.at("value").get<std::string>();
      fq.kind = q.at("kind") == "confirm_fp_candidate" ? QuestionKind::kConfirmFp : QuestionKind::kConfirmFn;
      auto a = oracle_answer(t.gold_state, fq, true).to_json();
      a["question_id"] = q.at("id");
      answers.push_back(a);
    }
    json rec = r.body;
    if (!answers.empty()) {
      const auto c = svc.handle("POST", "/sessions/" + sid + "/confirmations", json{{"answers", answers}}.dump());
      EXPECT_EQ(c.status, 200) << c.body.dump();
      rec["committed_state"] = c.body.at("committed_state");
    }
    out.push_back(rec);
  }
  return out;
}

}  // namespace

TEST(Service, HealthAndCheckpoints) {
  auto svc = make_service();
  EXPECT_EQ(svc.handle("GET", "/health", "").status, 200);
  EXPECT_EQ(svc.handle("GET", "/checkpoints", "").body.at("checkpoints"), json::array({"toy"}));
  EXPECT_EQ(svc.handle("GET", "/nowhere", "").status, 404);
  EXPECT_EQ(svc.handle("POST", "/sessions", "{bad").body.at("error").at("code"), "invalid_request");
}

TEST(Service, UnknownCheckpointAndSession) {
  auto svc = make_service();
  const auto r = svc.handle("POST", "/sessions", json{{"checkpoint_id", "nope"}}.dump());
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(r.body.at("error").at("code"), "unknown_checkpoint");
  EXPECT_EQ(svc.handle("GET", "/sessions/zzz", "").body.at("error").at("code"), "unknown_session");
}

TEST(Service, SessionsGetDistinctIdsAndCheckpointThresholds) {
  auto svc = make_service();
  const auto a = create(svc), b = create(svc);
  EXPECT_NE(a, b);
  const auto s = svc.handle("GET", "/sessions/" + a, "");
  EXPECT_EQ(s.body.at("thresholds"), (Thresholds{0.1, 0.5}.to_json()));
  EXPECT_EQ(svc.session_count(), 2u);
  const auto r = svc.handle("POST", "/sessions", json{{"checkpoint_id", "toy"}, {"thresholds", {{"tau_fp", 2}}}}.dump());
  EXPECT_EQ(r.status, 400);
}

TEST(Service, NoQuestionsCommitsPredictionWithGoldMetrics) {
  auto svc = make_service();
  const auto sid = create(svc, Thresholds{0.0, 1.0}.to_json());
  const auto& t = first_test_dialogue().turns[0];
  const auto r = svc.handle("POST", "/sessions/" + sid + "/user_turn", turn_request(t, true).dump());
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body.at("turn_index"), 0);
  EXPECT_TRUE(r.body.at("friction_questions").empty());
  EXPECT_FALSE(r.body.at("pending"));
  EXPECT_EQ(r.body.at("committed_state"), r.body.at("predicted_state"));
  EXPECT_EQ(r.body.at("slot_probabilities").size(), test::toy_model().data.ontology.size());
  ASSERT_TRUE(r.body.contains("metrics"));
  EXPECT_EQ(r.body.at("metrics").at("exact_match"), r.body.at("predicted_state") == state_to_json(t.gold_state));
}

TEST(Service, ResponsesMatchOfflineDecoding) {
  const auto& toy = test::toy_model();
  auto svc = make_service();
  const auto sid = create(svc);
  const auto& d = first_test_dialogue();
  const auto r = svc.handle("POST", "/sessions/" + sid + "/user_turn", turn_request(d.turns[0], false).dump());
  const auto ck = load_checkpoint<float>(toy.checkpoint_path);
  Decoder<float> dec(ck.params, ck.vocab, ck.ontology);
  const auto pc = dec.prepare(encode_context({d.turns[0]}, ck.ontology, ck.vocab, toy.cfg.training.max_context_len));
  EXPECT_EQ(r.body.at("predicted_state"), state_to_json(dec.generate_state(pc).state));
  EXPECT_EQ(r.body.at("slot_probabilities"), probabilities_json(ck.ontology, pc.probs));
}

TEST(Service, ConfirmationsAreIdempotentAndGuarded) {
  auto svc = make_service();
  // Every slot becomes a candidate: tau_fp = 1 questions all predicted pairs,
  // tau_fn = 0 questions all absent slots.
  const auto sid = create(svc, Thresholds{1.0, 0.0}.to_json());
  const auto& t = first_test_dialogue().turns[0];
  const auto r = svc.handle("POST", "/sessions/" + sid + "/user_turn", turn_request(t, false).dump());
  const auto& qs = r.body.at("friction_questions");
  ASSERT_FALSE(qs.empty());
  EXPECT_TRUE(r.body.at("pending"));
  const auto qid = qs[0].at("id").get<std::string>();
  const std::string path = "/sessions/" + sid + "/confirmations";
  const auto answer = [&](const char* a) {
    return json{{"answers", json::array({json{{"question_id", qid}, {"answer", a}}})}};
  };
  const json agree = answer("agree");
  EXPECT_EQ(svc.handle("POST", path,
                       json{{"answers", json::array({json{{"question_id", "fp:nope"}, {"answer", "agree"}}})}}.dump()).status, 404);
  const auto first = svc.handle("POST", path, agree.dump());
  ASSERT_EQ(first.status, 200) << first.body.dump();
  const auto again = svc.handle("POST", path, agree.dump());
  EXPECT_EQ(again.status, 200);
  EXPECT_EQ(again.body, first.body);
  const json other = answer("disagree");
  const auto conflict = svc.handle("POST", path, other.dump());
  EXPECT_EQ(conflict.status, 409);
  EXPECT_EQ(conflict.body.at("error").at("code"), "already_confirmed");
  EXPECT_TRUE(svc.handle("GET", "/sessions/" + sid, "").body.at("pending_questions").empty());
}

TEST(Service, ThresholdUpdateAndValidation) {
  auto svc = make_service();
  const auto sid = create(svc);
  const auto r = svc.handle("POST", "/sessions/" + sid + "/thresholds", json{{"tau_fn", 0.7}}.dump());
  EXPECT_EQ(r.body.at("thresholds"), (Thresholds{0.1, 0.7}.to_json()));
  EXPECT_EQ(svc.handle("POST", "/sessions/" + sid + "/thresholds", json{{"tau_fp", -1}}.dump()).status, 400);
  const auto bad_gold = svc.handle("POST", "/sessions/" + sid + "/user_turn",
                                   json{{"user_utterance", "hi"}, {"gold_state", {{"zz-top", "x"}}}}.dump());
  EXPECT_EQ(bad_gold.body.at("error").at("code"), "ontology_violation");
  EXPECT_TRUE(svc.handle("GET", "/sessions/" + sid, "").body.at("history").empty());
}

TEST(Service, ExportRoundTripsThroughCorpusLoader) {
  auto svc = make_service();
  const auto sid = create(svc);
  const auto& d = first_test_dialogue();
  for (const auto& t : d.turns)
    svc.handle("POST", "/sessions/" + sid + "/user_turn", turn_request(t, true).dump());
  const auto r = svc.handle("GET", "/sessions/" + sid + "/export", "");
  ASSERT_EQ(r.status, 200);
  const auto split = corpus_from_json(r.body);
  ASSERT_EQ(split.dialogues.size(), 1u);
  ASSERT_EQ(split.dialogues[0].turns.size(), d.turns.size());
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    EXPECT_EQ(split.dialogues[0].turns[i].user_utterance, d.turns[i].user_utterance);
    EXPECT_EQ(split.dialogues[0].turns[i].gold_state, d.turns[i].gold_state);
  }
}

TEST(Service, ReplayIsDeterministicAcrossSessionsAndThreads) {
  auto svc = make_service();
  const auto& d = first_test_dialogue();
  const auto reference = replay(svc, create(svc), d);
  std::vector<std::vector<json>> results(4);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < results.size(); ++i)
    threads.emplace_back([&, i] { results[i] = replay(svc, create(svc), d); });
  for (auto& th : threads) th.join();
  for (const auto& r : results) EXPECT_EQ(r, reference);
}

TEST(Service, IdleSessionsExpireAndSnapshotsAreWritten) {
  const auto dir = test::temp_dir("snap");
  auto svc = make_service(1e-9, dir);
  const auto sid = create(svc);
  EXPECT_TRUE(std::filesystem::exists(dir + "/" + sid + ".json"));
  std::this_thread::sleep_for(std::chrono::milliseconds(5));
  EXPECT_EQ(svc.handle("GET", "/sessions/" + sid, "").status, 404);
}

TEST(Service, HttpRoundTrip) {
  auto svc = make_service();
  httplib::Server srv;
  svc.bind(srv);
  const int port = srv.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);
  auto created = cli.Post("/sessions", json{{"checkpoint_id", "toy"}}.dump(), "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  EXPECT_EQ(created->get_header_value("Access-Control-Allow-Origin"), "*");
  const auto sid = json::parse(created->body).at("session_id").get<std::string>();
  auto turn = cli.Post(("/sessions/" + sid + "/user_turn").c_str(),
                       turn_request(first_test_dialogue().turns[0], false).dump(), "application/json");
  ASSERT_TRUE(turn);
  EXPECT_EQ(turn->status, 200);
  EXPECT_TRUE(json::parse(turn->body).contains("predicted_state"));
  auto missing = cli.Get("/sessions/nope");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  srv.stop();
  th.join();
}
