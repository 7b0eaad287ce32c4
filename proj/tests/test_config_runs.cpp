#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace acctdst;

TEST(Config, DefaultsResolve) {
  const auto c = resolve_config(json::object());
  EXPECT_EQ(c.lambda, 0.25);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(c.fp_grid, default_fp_grid());
  EXPECT_EQ(c.fn_grid, default_fn_grid());
  EXPECT_EQ(c.hash(), resolve_config(json::object()).hash());
}

TEST(Config, ShippedSyntheticConfigResolves) {
  const auto c = load_config(std::string(ACCTDST_SOURCE_DIR) + "/configs/synthetic.json", {});
  EXPECT_EQ(c.seeds.size(), 3u);
  EXPECT_EQ(c.model.d_model, 32u);
}

TEST(Config, OverridesParseJsonOrString) {
  json j = json::object();
  apply_override(j, "training.epochs=7");
  apply_override(j, "experiment.seeds=[4,5]");
  apply_override(j, "runs_dir=out/runs");
  EXPECT_EQ(j["training"]["epochs"], 7);
  EXPECT_EQ(j["experiment"]["seeds"], json::array({4, 5}));
  EXPECT_EQ(j["runs_dir"], "out/runs");
  EXPECT_THROW(apply_override(j, "novalue"), Error);
  EXPECT_THROW(apply_override(j, "runs_dir.x=1"), Error);
  const auto c = resolve_config(j);
  EXPECT_EQ(c.training.epochs, 7u);
  EXPECT_NE(c.hash(), resolve_config(json::object()).hash());
}

TEST(Config, ListsEveryViolation) {
  const json bad = {{"model", {{"d_modl", 8}}},
                    {"experiment", {{"lambda", 0.0}, {"seeds", json::array()}}},
                    {"correction", {{"fp_grid", {0.1}}}},
                    {"service", {{"port", 70000}}}};
  try {
    resolve_config(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "invalid_config");
    const std::string msg = e.what();
    for (const char* key : {"model.d_modl", "experiment.lambda", "experiment.seeds", "correction.fp_grid",
                            "service.port"})
      EXPECT_NE(msg.find(key), std::string::npos) << key;
  }
}

TEST(Config, MalformedFileIsParseError) {
  const auto dir = test::temp_dir("cfg");
  const auto path = dir + "/bad.json";
  std::ofstream(path) << "{ not json";
  try {
    load_config(path, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "parse_error");
  }
}

TEST(Runs, AppendListGet) {
  const auto dir = test::temp_dir("runs");
  RunStore store(dir);
  EXPECT_TRUE(store.list().empty());
  RunRecord r;
  r.command = "eval";
  r.config_hash = "abc";
  r.metrics = {{"base", {{"jga", 12.5}}}};
  const auto id1 = store.append(r);
  const auto id2 = store.append(r);
  EXPECT_NE(id1, id2);
  EXPECT_EQ(store.list().size(), 2u);
  const auto got = store.get(id1);
  ASSERT_TRUE(got.has_value());
  EXPECT_EQ(got->metrics, r.metrics);
  EXPECT_FALSE(got->created_at.empty());
  EXPECT_FALSE(store.get("../etc/passwd").has_value());
  EXPECT_FALSE(store.get("run-9999-eval").has_value());
  // A second store over the same directory continues the index.
  RunStore again(dir);
  EXPECT_EQ(again.list().size(), 2u);
  EXPECT_EQ(again.get(id2)->to_json(), store.get(id2)->to_json());
}
