#pragma once

#include <cstdlib>
#include <string>
#include <vector>

#include "acctdst/correction.hpp"
#include "acctdst/decoding.hpp"
#include "acctdst/synth.hpp"
#include "acctdst/training.hpp"

namespace acctdst {

/// Default values for every key. Unknown keys in a user config are errors,
/// except below "service.checkpoints", which maps ids to files.
inline json default_config() {
  ModelConfig model;
  model.d_model = 32;
  model.n_layers = 2;
  model.n_heads = 2;
  model.max_seq_len = 256;
  json m = model.to_json();
  m.erase("vocab_size");
  m.erase("n_slots");
  TrainingConfig tc;
  json t = tc.to_json();
  return {
      {"corpus",
       {{"source", "synth"},  // "synth" or "files"
        {"format", "native_json"},
        {"train", ""},
        {"validation", ""},
        {"test", ""},
        {"drop_unknown_slots", false},
        {"vocab_min_count", 1},
        {"synth", SynthConfig{}.to_json()}}},
      {"model", m},
      {"training", t},
      {"decoding", {{"max_new_tokens", 64}, {"max_value_tokens", 8}}},
      {"correction", {{"fp_grid", default_fp_grid()}, {"fn_grid", default_fn_grid()}}},
      {"experiment", {{"lambda", 0.25}, {"seeds", {1, 2, 3}}, {"lambda_grid", default_lambda_grid()}}},
      {"friction",
       {{"simulator", "oracle"},  // oracle | noisy | external
        {"binary", true},
        {"noise", 0.0},
        {"noise_seed", 7},
        {"external_url", ""},
        {"external_path", "/answer"},
        {"timeout_seconds", 10}}},
      {"service",
       {{"host", "127.0.0.1"},
        {"port", 8080},
        {"session_ttl_seconds", 1800},
        {"checkpoints", json::object()},
        {"snapshot_dir", ""}}},
      {"runs_dir", "runs"},
  };
}

/// Parses an override value: JSON if it parses, otherwise a bare string.
inline json parse_override_value(const std::string& raw) {
  try {
    return json::parse(raw);
  } catch (const json::exception&) {
    return raw;
  }
}

/// Applies "a.b.c=value" to `cfg`, creating intermediate objects.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error("invalid_config", "override \"" + assignment + "\" is not key=value");
  const std::string path = assignment.substr(0, eq);
  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw Error("invalid_config", "empty key in override " + path);
    if (!node->is_object()) throw Error("invalid_config", "override " + path + " crosses a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = parse_override_value(assignment.substr(eq + 1));
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

namespace detail {
inline void collect_unknown(const json& defaults, const json& user, const std::string& prefix,
                            std::vector<std::string>& bad) {
  if (!user.is_object()) return;
  for (const auto& [k, v] : user.items()) {
    const std::string path = prefix.empty() ? k : prefix + "." + k;
    if (!defaults.contains(k)) {
      bad.push_back(path + ": unknown key");
      continue;
    }
    const auto& d = defaults.at(k);
    if (d.is_object() && !d.empty()) {
      if (!v.is_object()) bad.push_back(path + ": expected an object");
      else collect_unknown(d, v, path, bad);
    }
  }
}

template <class F>
void check_field(std::vector<std::string>& bad, const std::string& path, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    bad.push_back(path + ": " + e.what());
  }
}
}  // namespace detail

/// Typed view of a merged config.
struct AppConfig {
  json raw;
  SynthConfig synth;
  ModelConfig model;
  TrainingConfig training;
  DecodeOptions decoding;
  std::vector<double> fp_grid, fn_grid;
  double lambda = 0.25;
  std::vector<std::uint64_t> seeds;
  std::vector<double> lambda_grid;

  std::string hash() const { return hash_hex(raw.dump()); }
};

/// Merges `user` over the defaults and validates. Throws invalid_config
/// listing every violated field.
inline AppConfig resolve_config(const json& user) {
  const json defaults = default_config();
  std::vector<std::string> bad;
  detail::collect_unknown(defaults, user, "", bad);
  json merged = defaults;
  if (user.is_object()) merged.merge_patch(user);
  AppConfig c;
  c.raw = merged;
  detail::check_field(bad, "corpus.synth", [&] {
    c.synth = SynthConfig::from_json(merged.at("corpus").at("synth"));
    for (auto& p : synth_config_problems(c.synth)) bad.push_back(p);
  });
  detail::check_field(bad, "corpus", [&] {
    const auto& corpus = merged.at("corpus");
    const auto src = corpus.at("source").get<std::string>();
    if (src != "synth" && src != "files") bad.push_back("corpus.source: must be synth or files");
    parse_corpus_format(corpus.at("format").get<std::string>());
    if (src == "files")
      for (const char* k : {"train", "validation", "test"})
        if (corpus.at(k).get<std::string>().empty())
          bad.push_back(std::string("corpus.") + k + ": path required when source is files");
  });
  detail::check_field(bad, "model", [&] {
    c.model = ModelConfig::from_json(merged.at("model"));
    for (auto& p : c.model.problems(false)) bad.push_back(p);
  });
  detail::check_field(bad, "training", [&] {
    c.training = TrainingConfig::from_json(merged.at("training"));
    for (auto& p : c.training.problems()) bad.push_back(p);
    if (c.training.max_context_len + 8 > c.model.max_seq_len)
      bad.push_back("training.max_context_len: must leave room for the state within model.max_seq_len");
  });
  detail::check_field(bad, "decoding", [&] {
    const auto& d = merged.at("decoding");
    c.decoding.max_new_tokens = d.at("max_new_tokens").get<std::size_t>();
    c.decoding.max_value_tokens = d.at("max_value_tokens").get<std::size_t>();
    if (c.decoding.max_new_tokens == 0) bad.push_back("decoding.max_new_tokens: must be >= 1");
  });
  detail::check_field(bad, "correction", [&] {
    c.fp_grid = merged.at("correction").at("fp_grid").get<std::vector<double>>();
    c.fn_grid = merged.at("correction").at("fn_grid").get<std::vector<double>>();
    const auto in01 = [](const std::vector<double>& g) {
      return std::all_of(g.begin(), g.end(), [](double x) { return x >= 0.0 && x <= 1.0; });
    };
    if (!in01(c.fp_grid) || std::find(c.fp_grid.begin(), c.fp_grid.end(), 0.0) == c.fp_grid.end())
      bad.push_back("correction.fp_grid: values in [0, 1] including 0");
    if (!in01(c.fn_grid) || std::find(c.fn_grid.begin(), c.fn_grid.end(), 1.0) == c.fn_grid.end())
      bad.push_back("correction.fn_grid: values in [0, 1] including 1");
  });
  detail::check_field(bad, "experiment", [&] {
    const auto& e = merged.at("experiment");
    c.lambda = e.at("lambda").get<double>();
    c.seeds = e.at("seeds").get<std::vector<std::uint64_t>>();
    c.lambda_grid = e.at("lambda_grid").get<std::vector<double>>();
    if (!(c.lambda > 0.0 && c.lambda <= 1.0)) bad.push_back("experiment.lambda: must lie in (0, 1]");
    if (c.seeds.empty()) bad.push_back("experiment.seeds: need at least one seed");
    if (c.lambda_grid.empty() ||
        std::find(c.lambda_grid.begin(), c.lambda_grid.end(), 0.0) == c.lambda_grid.end())
      bad.push_back("experiment.lambda_grid: must be nonempty and contain 0");
  });
  detail::check_field(bad, "friction", [&] {
    const auto& f = merged.at("friction");
    const auto sim = f.at("simulator").get<std::string>();
    if (sim != "oracle" && sim != "noisy" && sim != "external")
      bad.push_back("friction.simulator: must be oracle, noisy or external");
    const double eps = f.at("noise").get<double>();
    if (!(eps >= 0.0 && eps <= 1.0)) bad.push_back("friction.noise: must lie in [0, 1]");
    if (sim == "external" && f.at("external_url").get<std::string>().empty())
      bad.push_back("friction.external_url: required for the external simulator");
  });
  detail::check_field(bad, "service", [&] {
    const auto& s = merged.at("service");
    const int port = s.at("port").get<int>();
    if (port < 0 || port > 65535) bad.push_back("service.port: must lie in [0, 65535]");
    if (s.at("session_ttl_seconds").get<double>() <= 0)
      bad.push_back("service.session_ttl_seconds: must be > 0");
  });
  if (!bad.empty()) {
    std::string msg;
    for (const auto& b : bad) msg += b + "\n";
    msg.pop_back();
    throw Error("invalid_config", msg);
  }
  return c;
}

/// Reads `path` (empty: defaults only), applies dotted overrides, resolves.
inline AppConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json user = json::object();
  if (!path.empty()) {
    try {
      user = json::parse(read_file(path));
    } catch (const json::exception& e) {
      throw Error("parse_error", "config " + path + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(user, o);
  return resolve_config(user);
}

/// ACCTDST_HOST / ACCTDST_PORT take precedence over the config file.
inline std::pair<std::string, int> service_bind(const AppConfig& c) {
  std::string host = c.raw.at("service").at("host").get<std::string>();
  int port = c.raw.at("service").at("port").get<int>();
  if (const char* h = std::getenv("ACCTDST_HOST"); h && *h) host = h;
  if (const char* p = std::getenv("ACCTDST_PORT"); p && *p) port = std::atoi(p);
  return {host, port};
}

}  // namespace acctdst
