#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "acctdst/checkpoint.hpp"
#include "acctdst/config.hpp"
#include "acctdst/external_simulator.hpp"
#include "acctdst/friction.hpp"
#include "acctdst/runs.hpp"

namespace acctdst {

struct Corpora {
  Ontology ontology;
  CorpusSplit train, validation, test;

  const CorpusSplit& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "validation") return validation;
    if (name == "test") return test;
    throw Error("invalid_argument", "unknown split " + name);
  }
  std::string hash() const {
    return hash_hex(corpus_hash(train) + corpus_hash(validation) + corpus_hash(test));
  }
};

inline Corpora load_corpora(const AppConfig& cfg) {
  const auto& c = cfg.raw.at("corpus");
  Corpora out;
  if (c.at("source").get<std::string>() == "synth") {
    auto s = generate_synthetic_corpus(cfg.synth);
    out.ontology = s.ontology;
    out.train = std::move(s.train);
    out.validation = std::move(s.validation);
    out.test = std::move(s.test);
    return out;
  }
  const auto fmt = parse_corpus_format(c.at("format").get<std::string>());
  LoadOptions opts;
  opts.drop_unknown_slots = c.at("drop_unknown_slots").get<bool>();
  opts.split_name = "train";
  out.train = load_corpus(c.at("train").get<std::string>(), fmt, opts);
  opts.ontology = out.train.ontology;
  opts.split_name = "validation";
  out.validation = load_corpus(c.at("validation").get<std::string>(), fmt, opts);
  opts.split_name = "test";
  out.test = load_corpus(c.at("test").get<std::string>(), fmt, opts);
  out.ontology = out.train.ontology;
  return out;
}

inline Vocabulary vocab_for(const AppConfig& cfg, const Corpora& data) {
  return build_vocab(data.train, cfg.raw.at("corpus").at("vocab_min_count").get<std::size_t>());
}

inline ModelConfig model_config_for(const AppConfig& cfg, const Vocabulary& vocab,
                                    const Ontology& ontology) {
  ModelConfig m = cfg.model;
  m.vocab_size = vocab.size();
  m.n_slots = ontology.size();
  m.validate();
  return m;
}

inline double min_of(const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); }

/// Decodes every turn of `split` once, with values precomputed for the
/// lowest tau_fn of interest.
template <class T>
std::vector<TurnRecord> decode_split(const ModelParameters<T>& params, const Vocabulary& vocab,
                                     const Ontology& ontology, const CorpusSplit& split,
                                     const DecodeOptions& opts, std::size_t max_context_len,
                                     double min_tau_fn) {
  Decoder<T> dec(params, vocab, ontology, opts);
  std::vector<TurnRecord> out;
  for (const auto& d : split.dialogues) {
    std::vector<Turn> prefix;
    for (std::size_t t = 0; t < d.turns.size(); ++t) {
      prefix.push_back(d.turns[t]);
      auto rec = make_turn_record(dec, encode_context(prefix, ontology, vocab, max_context_len),
                                  d.turns[t].gold_state, min_tau_fn);
      rec.dialogue_id = d.id;
      rec.turn = t;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

inline MetricsReport raw_report(const std::vector<TurnRecord>& turns, const Ontology& ontology,
                                bool with_auc = true) {
  std::vector<DialogueState> preds, golds;
  std::vector<std::vector<double>> probs;
  for (const auto& t : turns) {
    preds.push_back(t.decoded.state);
    golds.push_back(t.gold);
    probs.push_back(t.probs);
  }
  return with_auc ? evaluate(preds, golds, &probs, &ontology) : evaluate(preds, golds);
}

inline std::unique_ptr<UserSimulator> make_simulator(const AppConfig& cfg) {
  const auto& f = cfg.raw.at("friction");
  const bool binary = f.at("binary").get<bool>();
  const auto kind = f.at("simulator").get<std::string>();
  if (kind == "noisy")
    return std::make_unique<NoisySimulator>(f.at("noise").get<double>(),
                                            f.at("noise_seed").get<std::uint64_t>(), binary);
  if (kind == "external")
    return std::make_unique<ExternalClientSimulator>(f.at("external_url").get<std::string>(),
                                                     f.at("external_path").get<std::string>(),
                                                     f.at("timeout_seconds").get<int>());
  return std::make_unique<OracleSimulator>(binary);
}

/// Friction-based correction of every turn in `turns` (parallel to `split`).
inline CorrectedSplit apply_user_correct(const std::vector<TurnRecord>& turns,
                                         const CorpusSplit& split, const Thresholds& t,
                                         UserSimulator& sim, const Vocabulary* vocab = nullptr) {
  CorrectedSplit out;
  std::size_t k = 0;
  for (const auto& d : split.dialogues) {
    std::vector<Turn> history;
    for (const auto& turn : d.turns) {
      history.push_back(turn);
      const auto& rec = turns.at(k++);
      auto o = user_correct(rec.decoded, rec.probs, split.ontology, t, rec.value_source(), sim,
                            history, vocab);
      out.states.push_back(o.result.corrected);
      out.results.push_back(std::move(o.result));
    }
  }
  if (k != turns.size()) throw Error("invalid_argument", "decoded turns do not match the split");
  return out;
}

template <class T>
struct TrainedModel {
  ModelParameters<T> params;
  LossReport report;
  double lambda = 0;
  std::uint64_t seed = 0;
};

inline TrainedModel<float> train_model(const AppConfig& cfg, const Corpora& data,
                                       const Vocabulary& vocab, double lambda, std::uint64_t seed) {
  ModelParameters<float> params(model_config_for(cfg, vocab, data.ontology));
  params.initialize(seed);
  TrainingConfig tc = cfg.training;
  tc.lambda = lambda;
  tc.seed = seed;
  const auto tr = build_examples(data.train, vocab, tc.max_context_len);
  const auto va = build_examples(data.validation, vocab, tc.max_context_len);
  auto res = train(std::move(params), tr, va, tc);
  return {std::move(res.params), std::move(res.report), lambda, seed};
}

/// Deterministic part of the loss history (no wall-clock timings).
inline json loss_history(const LossReport& r) {
  json j = r.to_json();
  for (auto& e : j.at("epochs")) e.erase("seconds");
  return j;
}

inline json checkpoint_metadata(const TrainedModel<float>& m, const AppConfig& cfg,
                                const std::optional<Thresholds>& tuned) {
  json meta = {{"lambda", m.lambda},
               {"seed", m.seed},
               {"training", cfg.training.to_json()},
               {"losses", loss_history(m.report)},
               {"decoding",
                {{"max_new_tokens", cfg.decoding.max_new_tokens},
                 {"max_value_tokens", cfg.decoding.max_value_tokens},
                 {"max_context_len", cfg.training.max_context_len}}}};
  meta["training"]["lambda"] = m.lambda;
  meta["training"]["seed"] = m.seed;
  if (tuned) meta["thresholds"] = tuned->to_json();
  return meta;
}

/// Thresholds stored with a checkpoint, or the no-op pair.
inline Thresholds stored_thresholds(const json& metadata) {
  if (metadata.contains("thresholds")) return Thresholds::from_json(metadata.at("thresholds"));
  return {};
}

/// Test-split reports of every variant for one seed.
struct SeedResult {
  std::uint64_t seed = 0;
  MetricsReport base, account, self_correct, oracle_correct, user_correct;
  MetricsReport validation_raw, validation_tuned;
  Thresholds thresholds;
  GridResult validation_grid, test_grid;
  std::string base_checkpoint_hash, account_checkpoint_hash;

  json metrics_json() const {
    return {{"base", base.to_json()},
            {"account", account.to_json()},
            {"self-correct", self_correct.to_json()},
            {"oracle-correct", oracle_correct.to_json()},
            {"user-correct", user_correct.to_json()}};
  }
};

/// Trains base (lambda = 0) and account models for `seed`, tunes thresholds on
/// validation, and evaluates every variant on test. Checkpoints go to `ckpt_dir`
/// when nonempty.
inline SeedResult run_seed(const AppConfig& cfg, const Corpora& data, const Vocabulary& vocab,
                           std::uint64_t seed, const std::string& ckpt_dir = "") {
  SeedResult r;
  r.seed = seed;
  const double min_fn = min_of(cfg.fn_grid);
  const std::size_t mcl = cfg.training.max_context_len;

  auto base = train_model(cfg, data, vocab, 0.0, seed);
  const auto base_test = decode_split(base.params, vocab, data.ontology, data.test, cfg.decoding,
                                      mcl, 1.0);
  r.base = raw_report(base_test, data.ontology, false);
  const auto base_bytes =
      serialize_checkpoint(base.params, data.ontology, vocab, checkpoint_metadata(base, cfg, {}));
  r.base_checkpoint_hash = hash_hex(base_bytes);

  auto acc = train_model(cfg, data, vocab, cfg.lambda, seed);
  const auto val = decode_split(acc.params, vocab, data.ontology, data.validation, cfg.decoding,
                                mcl, min_fn);
  r.validation_grid = grid_search_thresholds(val, data.ontology, cfg.fp_grid, cfg.fn_grid);
  r.thresholds = r.validation_grid.best;
  r.validation_raw = raw_report(val, data.ontology);
  for (const auto& row : r.validation_grid.rows)
    if (row.thresholds == r.thresholds) r.validation_tuned = row.self_correct;

  const auto test = decode_split(acc.params, vocab, data.ontology, data.test, cfg.decoding, mcl,
                                 min_fn);
  r.account = raw_report(test, data.ontology);
  r.self_correct = report_for(apply_self_correct(test, data.ontology, r.thresholds), test,
                              data.ontology);
  r.oracle_correct = report_for(apply_oracle_correct(test, data.ontology, r.thresholds), test,
                                data.ontology);
  auto sim = make_simulator(cfg);
  r.user_correct = report_for(apply_user_correct(test, data.test, r.thresholds, *sim, &vocab),
                              test, data.ontology);
  r.test_grid = grid_search_thresholds(test, data.ontology, cfg.fp_grid, cfg.fn_grid);

  const auto acc_bytes = serialize_checkpoint(acc.params, data.ontology, vocab,
                                              checkpoint_metadata(acc, cfg, r.thresholds));
  r.account_checkpoint_hash = hash_hex(acc_bytes);
  if (!ckpt_dir.empty()) {
    std::filesystem::create_directories(ckpt_dir);
    const auto stem = ckpt_dir + "/seed" + std::to_string(seed);
    write_file(stem + "-base.ckpt", base_bytes);
    write_file(stem + "-account.ckpt", acc_bytes);
  }
  return r;
}

/// Per-seed values and means of the headline comparisons.
inline json summarize(const std::vector<SeedResult>& seeds) {
  json per_seed = json::array();
  double base = 0, account = 0, self = 0, oracle = 0, user = 0;
  for (const auto& s : seeds) {
    per_seed.push_back({{"seed", s.seed},
                        {"thresholds", s.thresholds.to_json()},
                        {"jga", {{"base", round2(s.base.jga)},
                                 {"account", round2(s.account.jga)},
                                 {"self-correct", round2(s.self_correct.jga)},
                                 {"oracle-correct", round2(s.oracle_correct.jga)},
                                 {"user-correct", round2(s.user_correct.jga)}}},
                        {"gap_account_minus_base", round2(s.account.jga - s.base.jga)},
                        {"gap_self_minus_account", round2(s.self_correct.jga - s.account.jga)},
                        {"checkpoints",
                         {{"base", s.base_checkpoint_hash}, {"account", s.account_checkpoint_hash}}}});
    base += s.base.jga;
    account += s.account.jga;
    self += s.self_correct.jga;
    oracle += s.oracle_correct.jga;
    user += s.user_correct.jga;
  }
  const double n = static_cast<double>(seeds.size());
  return {{"per_seed", per_seed},
          {"mean_jga",
           {{"base", round2(base / n)},
            {"account", round2(account / n)},
            {"self-correct", round2(self / n)},
            {"oracle-correct", round2(oracle / n)},
            {"user-correct", round2(user / n)}}}};
}

/// CSV in the layout of a lambda ablation table.
struct LambdaRow {
  double lambda = 0;
  std::size_t validation_hits = 0;
  MetricsReport validation;
  MetricsReport test;
};

inline std::string lambda_table_csv(const std::vector<LambdaRow>& rows) {
  std::string out = "lambda,validation_jga,jga,slot_f1,fpr,fnr,roc_auc\n";
  for (const auto& r : rows) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%g,%.2f,%.2f,%.2f,%.2f,%.2f,%s\n", r.lambda,
                  round2(r.validation.jga), round2(r.test.jga), round2(r.test.slot_f1),
                  round2(r.test.fpr), round2(r.test.fnr),
                  r.test.roc_auc && r.lambda > 0 ? MetricsReport::format2(*r.test.roc_auc).c_str()
                                                 : "");
    out += buf;
  }
  return out;
}

/// One model per lambda (same seed); picks the best raw validation JGA,
/// ties toward the smaller lambda.
inline std::pair<double, std::vector<LambdaRow>> select_lambda(const AppConfig& cfg,
                                                               const Corpora& data,
                                                               const Vocabulary& vocab,
                                                               const std::vector<double>& grid,
                                                               std::uint64_t seed) {
  if (grid.empty()) throw Error("invalid_argument", "empty lambda grid");
  std::vector<LambdaRow> rows;
  std::vector<std::size_t> hits;
  const std::size_t mcl = cfg.training.max_context_len;
  for (double lambda : grid) {
    auto m = train_model(cfg, data, vocab, lambda, seed);
    LambdaRow row;
    row.lambda = lambda;
    const auto val = decode_split(m.params, vocab, data.ontology, data.validation, cfg.decoding,
                                  mcl, 1.0);
    const auto test = decode_split(m.params, vocab, data.ontology, data.test, cfg.decoding, mcl,
                                   1.0);
    row.validation = raw_report(val, data.ontology);
    row.test = raw_report(test, data.ontology);
    for (const auto& t : val) row.validation_hits += t.decoded.state == t.gold ? 1 : 0;
    hits.push_back(row.validation_hits);
    rows.push_back(row);
  }
  return {grid[select_lambda_index(grid, hits)], rows};
}

}  // namespace acctdst
