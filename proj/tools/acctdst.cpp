// Command-line entry point: corpus generation, training, evaluation,
// threshold sweeps, lambda ablation, the session service and a replay demo.

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iostream>

#include "acctdst/experiment.hpp"
#include "acctdst/service.hpp"

using namespace acctdst;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;
};

AppConfig resolve(const Common& c) {
  if (c.quiet) log_threshold() = LogLevel::kWarn;
  return load_config(c.config_path, c.overrides);
}

RunStore store_for(const AppConfig& cfg) {
  return RunStore(cfg.raw.at("runs_dir").get<std::string>());
}

RunRecord new_record(const std::string& command, const AppConfig& cfg, const std::string& corpus) {
  RunRecord r;
  r.command = command;
  r.config = cfg.raw;
  r.config_hash = cfg.hash();
  r.corpus_hash = corpus;
  r.git_revision = git_revision();
  return r;
}

void write_output(const std::string& path, const std::string& content) {
  if (path.empty()) return;
  if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  write_file(path, content);
}

std::string default_checkpoint_path(const AppConfig& cfg, double lambda, std::uint64_t seed) {
  std::string dir = cfg.training.checkpoint_dir;
  if (dir.empty()) dir = cfg.raw.at("runs_dir").get<std::string>() + "/checkpoints";
  char name[64];
  std::snprintf(name, sizeof name, "/model-l%g-s%llu.ckpt", lambda,
                static_cast<unsigned long long>(seed));
  return dir + name;
}

Checkpoint<float> load_for(const std::string& path, const Corpora& data, const Vocabulary& vocab) {
  return load_checkpoint<float>(path, {data.ontology.hash(), vocab.hash()});
}

int cmd_synth(const Common& common, const std::string& out_dir) {
  const auto cfg = resolve(common);
  const auto corpus = generate_synthetic_corpus(cfg.synth);
  std::filesystem::create_directories(out_dir);
  save_corpus(corpus.train, out_dir + "/train.json");
  save_corpus(corpus.validation, out_dir + "/validation.json");
  save_corpus(corpus.test, out_dir + "/test.json");
  auto rec = new_record("synth", cfg,
                        hash_hex(corpus_hash(corpus.train) + corpus_hash(corpus.validation) +
                                 corpus_hash(corpus.test)));
  rec.extra = {{"out_dir", out_dir},
               {"dialogues",
                {{"train", corpus.train.dialogues.size()},
                 {"validation", corpus.validation.dialogues.size()},
                 {"test", corpus.test.dialogues.size()}}},
               {"turns",
                {{"train", corpus.train.num_turns()},
                 {"validation", corpus.validation.num_turns()},
                 {"test", corpus.test.num_turns()}}},
               {"slots", corpus.ontology.size()}};
  const auto id = store_for(cfg).append(rec);
  std::cout << json{{"run_id", id}, {"summary", rec.extra}}.dump(2) << "\n";
  return 0;
}

int cmd_train(const Common& common, std::optional<double> lambda, std::vector<double> grid,
              std::optional<std::uint64_t> seed_opt, std::string out) {
  const auto cfg = resolve(common);
  const auto data = load_corpora(cfg);
  const auto vocab = vocab_for(cfg, data);
  const std::uint64_t seed = seed_opt.value_or(cfg.training.seed);
  auto rec = new_record("train", cfg, data.hash());
  double chosen = lambda.value_or(cfg.lambda);
  if (!grid.empty()) {
    auto [best, rows] = select_lambda(cfg, data, vocab, grid, seed);
    json table = json::array();
    for (const auto& r : rows)
      table.push_back({{"lambda", r.lambda}, {"validation_jga", round2(r.validation.jga)}});
    rec.extra["lambda_selection"] = {{"grid", grid}, {"best", best}, {"table", table}};
    chosen = best;
  }
  auto m = train_model(cfg, data, vocab, chosen, seed);
  const auto val = decode_split(m.params, vocab, data.ontology, data.validation, cfg.decoding,
                                cfg.training.max_context_len, chosen > 0 ? min_of(cfg.fn_grid) : 1.0);
  std::optional<Thresholds> tuned;
  if (chosen > 0) {
    auto g = grid_search_thresholds(val, data.ontology, cfg.fp_grid, cfg.fn_grid);
    tuned = g.best;
    rec.grids["validation"] = g.to_json();
  }
  if (out.empty()) out = default_checkpoint_path(cfg, chosen, seed);
  if (auto parent = std::filesystem::path(out).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  save_checkpoint(out, m.params, data.ontology, vocab, checkpoint_metadata(m, cfg, tuned));
  rec.checkpoints["model"] = {{"path", out}, {"hash", file_hash(out)}};
  rec.metrics["validation"] = raw_report(val, data.ontology, chosen > 0).to_json();
  rec.extra["losses"] = m.report.to_json();
  rec.extra["lambda"] = chosen;
  rec.extra["seed"] = seed;
  if (tuned) rec.extra["thresholds"] = tuned->to_json();
  const auto id = store_for(cfg).append(rec);
  std::cout << json{{"run_id", id},
                    {"checkpoint", out},
                    {"lambda", chosen},
                    {"best_epoch", m.report.best_epoch},
                    {"validation", rec.metrics["validation"]}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_eval(const Common& common, const std::string& ckpt_path, const std::string& variant,
             const std::string& split_name, std::optional<double> tau_fp,
             std::optional<double> tau_fn, const std::string& out) {
  static const std::vector<std::string> kVariants = {"base", "account", "self-correct",
                                                     "oracle-correct", "user-correct"};
  if (std::find(kVariants.begin(), kVariants.end(), variant) == kVariants.end())
    throw Error("invalid_argument", "unknown variant " + variant);
  const auto cfg = resolve(common);
  const auto data = load_corpora(cfg);
  const auto vocab = vocab_for(cfg, data);
  const auto ck = load_for(ckpt_path, data, vocab);
  Thresholds t = stored_thresholds(ck.metadata);
  if (tau_fp) t.fp = *tau_fp;
  if (tau_fn) t.fn = *tau_fn;
  const auto& split = data.split(split_name);
  const bool corrects = variant != "base" && variant != "account";
  const auto turns = decode_split(ck.params, vocab, data.ontology, split, cfg.decoding,
                                  cfg.training.max_context_len, corrects ? t.fn : 1.0);
  MetricsReport report;
  if (variant == "base") report = raw_report(turns, data.ontology, false);
  else if (variant == "account") report = raw_report(turns, data.ontology);
  else if (variant == "self-correct")
    report = report_for(apply_self_correct(turns, data.ontology, t), turns, data.ontology);
  else if (variant == "oracle-correct")
    report = report_for(apply_oracle_correct(turns, data.ontology, t), turns, data.ontology);
  else {
    auto sim = make_simulator(cfg);
    report = report_for(apply_user_correct(turns, split, t, *sim, &vocab), turns, data.ontology);
  }
  auto rec = new_record("eval", cfg, data.hash());
  rec.checkpoints["model"] = {{"path", ckpt_path}, {"hash", file_hash(ckpt_path)}};
  rec.metrics[variant] = report.to_json();
  rec.extra = {{"split", split_name}, {"thresholds", t.to_json()}};
  const auto id = store_for(cfg).append(rec);
  write_output(out, report.to_json().dump(2) + "\n");
  std::cout << json{{"run_id", id}, {"variant", variant}, {"split", split_name},
                    {"thresholds", t.to_json()}, {"metrics", report.to_json()}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_sweep(const Common& common, const std::string& ckpt_path, const std::string& split_name,
              const std::string& out) {
  const auto cfg = resolve(common);
  const auto data = load_corpora(cfg);
  const auto vocab = vocab_for(cfg, data);
  const auto ck = load_for(ckpt_path, data, vocab);
  const auto turns = decode_split(ck.params, vocab, data.ontology, data.split(split_name),
                                  cfg.decoding, cfg.training.max_context_len, min_of(cfg.fn_grid));
  const auto g = grid_search_thresholds(turns, data.ontology, cfg.fp_grid, cfg.fn_grid);
  auto rec = new_record("sweep", cfg, data.hash());
  rec.checkpoints["model"] = {{"path", ckpt_path}, {"hash", file_hash(ckpt_path)}};
  rec.grids[split_name] = g.to_json();
  rec.extra = {{"split", split_name}, {"best", g.best.to_json()}};
  const auto id = store_for(cfg).append(rec);
  write_output(out, g.to_csv());
  std::cout << g.to_csv();
  std::cerr << "run " << id << ", best tau_fp=" << g.best.fp << " tau_fn=" << g.best.fn << "\n";
  return 0;
}

int cmd_ablate(const Common& common, std::optional<std::uint64_t> seed_opt, const std::string& out) {
  const auto cfg = resolve(common);
  const auto data = load_corpora(cfg);
  const auto vocab = vocab_for(cfg, data);
  const std::uint64_t seed = seed_opt.value_or(cfg.training.seed);
  auto [best, rows] = select_lambda(cfg, data, vocab, cfg.lambda_grid, seed);
  const auto csv = lambda_table_csv(rows);
  auto rec = new_record("ablate-lambda", cfg, data.hash());
  for (const auto& r : rows) {
    char key[32];
    std::snprintf(key, sizeof key, "lambda=%g", r.lambda);
    rec.metrics[key] = {{"validation", r.validation.to_json()}, {"test", r.test.to_json()}};
  }
  rec.extra = {{"best_lambda", best}, {"seed", seed}, {"csv", csv}};
  const auto id = store_for(cfg).append(rec);
  write_output(out, csv);
  std::cout << csv;
  std::cerr << "run " << id << ", best lambda " << best << "\n";
  return 0;
}

int cmd_pipeline(const Common& common, const std::string& out_dir) {
  const auto cfg = resolve(common);
  const auto data = load_corpora(cfg);
  const auto vocab = vocab_for(cfg, data);
  std::vector<SeedResult> results;
  auto rec = new_record("pipeline", cfg, data.hash());
  for (auto seed : cfg.seeds) {
    results.push_back(run_seed(cfg, data, vocab, seed, out_dir.empty() ? "" : out_dir + "/checkpoints"));
    const auto& r = results.back();
    const auto key = "seed" + std::to_string(seed);
    rec.metrics[key] = r.metrics_json();
    rec.grids[key] = {{"validation", r.validation_grid.to_json()}, {"test", r.test_grid.to_json()}};
    std::vector<std::pair<std::string, MetricsReport>> rows = {
        {"base", r.base},
        {"account", r.account},
        {"self-correct", r.self_correct},
        {"oracle-correct", r.oracle_correct},
        {"user-correct", r.user_correct}};
    std::cout << "seed " << seed << " (tau_fp=" << r.thresholds.fp << ", tau_fn=" << r.thresholds.fn
              << ")\n"
              << render_table(rows) << "\n";
    if (!out_dir.empty()) write_output(out_dir + "/" + key + "-test-grid.csv", r.test_grid.to_csv());
  }
  const auto summary = summarize(results);
  rec.extra["summary"] = summary;
  const auto id = store_for(cfg).append(rec);
  write_output(out_dir.empty() ? "" : out_dir + "/summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\nrun " << id << "\n";
  return 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const Common& common, const std::vector<std::string>& ckpts) {
  const auto cfg = resolve(common);
  ServiceOptions opts;
  for (const auto& [id, p] : cfg.raw.at("service").at("checkpoints").items())
    opts.checkpoints[id] = p.get<std::string>();
  for (const auto& c : ckpts) {
    const auto eq = c.find('=');
    if (eq == std::string::npos) throw Error("invalid_argument", "--checkpoint expects id=path");
    opts.checkpoints[c.substr(0, eq)] = c.substr(eq + 1);
  }
  opts.session_ttl_seconds = cfg.raw.at("service").at("session_ttl_seconds").get<double>();
  opts.snapshot_dir = cfg.raw.at("service").at("snapshot_dir").get<std::string>();
  auto runs = std::make_shared<RunStore>(cfg.raw.at("runs_dir").get<std::string>());
  DstService service(opts, runs);
  httplib::Server srv;
  service.bind(srv);
  const auto [host, port] = service_bind(cfg);
  g_server = &srv;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  log(LogLevel::kInfo, "listening on " + host + ":" + std::to_string(port));
  if (!srv.listen(host, port)) throw Error("io_error", "cannot bind " + host + ":" + std::to_string(port));
  return 0;
}

void print_turn(std::size_t i, const Turn& turn, const TurnRecord& rec, const Ontology& ontology,
                const Thresholds& t, const CorrectionResult& corrected) {
  std::cout << "turn " << i << "\n";
  if (!turn.system_utterance.empty()) std::cout << "  system: " << turn.system_utterance << "\n";
  std::cout << "  user:   " << turn.user_utterance << "\n";
  std::cout << "  predicted: " << rec.decoded.state.to_string() << "\n";
  std::cout << "  confidence:";
  for (std::size_t s = 0; s < ontology.size(); ++s) {
    const bool shown = rec.decoded.state.contains(ontology.slot(s)) || rec.probs[s] >= t.fn;
    if (!shown) continue;
    char buf[96];
    std::snprintf(buf, sizeof buf, " %s=%.2f", ontology.slot(s).str().c_str(), rec.probs[s]);
    std::cout << buf;
  }
  std::cout << "\n";
  for (const auto& r : corrected.removed)
    std::cout << "  - removed " << r.slot.str() << ": " << r.value << " (" << r.prob << ")\n";
  for (const auto& a : corrected.added)
    std::cout << "  + added   " << a.slot.str() << ": " << a.value << " (" << a.prob << ")\n";
  std::cout << "  corrected: " << corrected.corrected.to_string() << "\n";
  if (!turn.gold_state.empty() || !rec.gold.empty())
    std::cout << "  gold:      " << turn.gold_state.to_string() << "\n";
}

int cmd_demo(const Common& common, const std::string& ckpt_path, const std::string& dialogue_id,
             const std::string& script) {
  const auto cfg = resolve(common);
  Checkpoint<float> ck = load_checkpoint<float>(ckpt_path);
  Dialogue dlg;
  if (!script.empty()) {
    const auto j = json::parse(read_file(script));
    dlg.id = "script";
    for (const auto& t : j) {
      Turn turn;
      turn.system_utterance = t.value("system", "");
      turn.user_utterance = t.at("user").get<std::string>();
      dlg.turns.push_back(turn);
    }
  } else {
    const auto data = load_corpora(cfg);
    const auto& test = data.test.dialogues;
    auto it = std::find_if(test.begin(), test.end(),
                           [&](const Dialogue& d) { return dialogue_id.empty() || d.id == dialogue_id; });
    if (it == test.end()) throw Error("invalid_argument", "no test dialogue " + dialogue_id);
    dlg = *it;
  }
  const Thresholds t = stored_thresholds(ck.metadata);
  std::cout << "dialogue " << dlg.id << " (tau_fp=" << t.fp << ", tau_fn=" << t.fn << ")\n";
  Decoder<float> dec(ck.params, ck.vocab, ck.ontology, cfg.decoding);
  std::vector<Turn> prefix;
  for (std::size_t i = 0; i < dlg.turns.size(); ++i) {
    prefix.push_back(dlg.turns[i]);
    const auto ctx = encode_context(prefix, ck.ontology, ck.vocab, cfg.training.max_context_len);
    const auto rec = make_turn_record(dec, ctx, dlg.turns[i].gold_state, t.fn);
    const auto res = self_correct(rec.decoded.state, rec.probs, ck.ontology, t, rec.value_source());
    print_turn(i, dlg.turns[i], rec, ck.ontology, t, res);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue state tracking with a slot-presence head and self-correction"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config_path, "JSON config file");
    sub->add_option("--set", common.overrides, "Override a config field: dotted.path=value");
    sub->add_flag("-q,--quiet", common.quiet, "Only warnings and errors on stderr");
  };

  std::string synth_out = "data/synth";
  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  add_common(synth);
  synth->add_option("-o,--out", synth_out, "Output directory");

  std::optional<double> lambda;
  std::vector<double> lambda_grid;
  std::optional<std::uint64_t> seed;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "Train one model (or select lambda on a grid)");
  add_common(train_cmd);
  train_cmd->add_option("--lambda", lambda, "Weight of the slot loss");
  train_cmd->add_option("--lambda-grid", lambda_grid, "Select lambda by validation JGA")->delimiter(',');
  train_cmd->add_option("--seed", seed, "Training seed");
  train_cmd->add_option("-o,--out", train_out, "Checkpoint path");

  std::string ckpt, variant = "account", split = "test", eval_out;
  std::optional<double> tau_fp, tau_fn;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint as one model variant");
  add_common(eval);
  eval->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  eval->add_option("--variant", variant, "base|account|self-correct|oracle-correct|user-correct");
  eval->add_option("--split", split, "train|validation|test");
  eval->add_option("--tau-fp", tau_fp, "Override the stored tau_fp");
  eval->add_option("--tau-fn", tau_fn, "Override the stored tau_fn");
  eval->add_option("-o,--out", eval_out, "Write the MetricsReport JSON here");

  std::string sweep_split = "validation", sweep_out;
  auto* sweep = app.add_subcommand("sweep", "Threshold grid table (CSV)");
  add_common(sweep);
  sweep->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  sweep->add_option("--split", sweep_split, "Split to sweep");
  sweep->add_option("-o,--out", sweep_out, "CSV output path");

  std::string ablate_out;
  auto* ablate = app.add_subcommand("ablate-lambda", "One model per lambda (CSV)");
  add_common(ablate);
  ablate->add_option("--seed", seed, "Training seed");
  ablate->add_option("-o,--out", ablate_out, "CSV output path");

  std::string pipeline_out;
  auto* pipeline = app.add_subcommand("pipeline", "All variants over every configured seed");
  add_common(pipeline);
  pipeline->add_option("-o,--out", pipeline_out, "Directory for checkpoints, grids and summary");

  std::vector<std::string> serve_ckpts;
  auto* serve = app.add_subcommand("serve", "Start the session service");
  add_common(serve);
  serve->add_option("--checkpoint", serve_ckpts, "id=path, repeatable");

  std::string demo_dialogue, demo_script;
  auto* demo = app.add_subcommand("demo", "Replay a conversation with corrections");
  add_common(demo);
  demo->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  demo->add_option("--dialogue", demo_dialogue, "Test dialogue id (default: the first)");
  demo->add_option("--script", demo_script, "JSON list of {system, user} turns instead");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(common, synth_out);
    if (*train_cmd) return cmd_train(common, lambda, lambda_grid, seed, train_out);
    if (*eval) return cmd_eval(common, ckpt, variant, split, tau_fp, tau_fn, eval_out);
    if (*sweep) return cmd_sweep(common, ckpt, sweep_split, sweep_out);
    if (*ablate) return cmd_ablate(common, seed, ablate_out);
    if (*pipeline) return cmd_pipeline(common, pipeline_out);
    if (*serve) return cmd_serve(common, serve_ckpts);
    if (*demo) return cmd_demo(common, ckpt, demo_dialogue, demo_script);
  } catch (const Error& e) {
    std::cerr << json{{"error", {{"code", e.code()}, {"message", e.what()}}}}.dump() << "\n";
    return e.code() == "invalid_config" ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
  return 0;
}
