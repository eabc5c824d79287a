// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "zorephrase/experiment.hpp"
#include "zorephrase/synthetic_task.hpp"

namespace zr = zorephrase;

namespace {

const std::string kData = ZOREPHRASE_TEST_DATA;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

zr::ResultTable fixture_table() {
  std::ifstream in(kData + "/report_fixture.json");
  return zr::ResultTable::from_json(nlohmann::json::parse(in));
}

zr::ExperimentGrid tiny_grid() {
  zr::ExperimentGrid g;
  g.zo_learning_rates = {0.1, 0.05};
  g.zo_batch_sizes = {16};
  g.fo_learning_rates = {0.02};
  g.fo_batch_sizes = {16};
  g.lora_ranks = {2};
  g.lora_learning_rates = {0.02};
  g.zo_steps = 60;
  g.fo_steps = 40;
  return g;
}

zr::TaskPair synthetic_pair(std::uint64_t seed) {
  zr::SyntheticTaskSpec spec;
  spec.corpus_size = 200;
  spec.seed = seed;
  const auto task = zr::generate_synthetic_task(spec);
  zr::TaskPair pair{"syn", zr::split(task.original, seed), {}};
  pair.rephrased = pair.original;
  for (auto& inst : pair.rephrased.instances)
    if (pair.rephrased.split_assignment.at(inst.id) == zr::Split::train)
      inst.fields["text"] = task.rules.apply(inst.fields["text"]);
  return pair;
}

}  // namespace

TEST(ResultTable, AvgDeltaArithmetic) {
  const auto t = fixture_table();
  EXPECT_NEAR(*t.avg_delta(zr::Method::zo_mezo), 0.04, 1e-12);
  EXPECT_NEAR(*t.avg_delta(zr::Method::fo_full), 0.0, 1e-12);
}

TEST(ResultTable, AvgDeltaOnlyOverSharedTasks) {
  const auto t = fixture_table();
  EXPECT_NEAR(*t.avg_delta(zr::Method::fo_lora), 0.0, 1e-12);
  zr::ResultTable empty;
  EXPECT_FALSE(empty.avg_delta(zr::Method::zo_mezo).has_value());
}

TEST(ResultTable, JsonRoundTrip) {
  const auto t = fixture_table();
  EXPECT_EQ(zr::ResultTable::from_json(nlohmann::json::parse(t.to_json().dump())), t);
  EXPECT_THROW(zr::ResultTable::from_json(nlohmann::json::parse(R"({"rows":[]})")),
               zr::ParseError);
}

TEST(EmitReport, EmptyTaskListIsHeaderOnly) {
  zr::ResultTable t;
  EXPECT_EQ(zr::emit_report(t, zr::ReportFormat::delimited),
            "Data Type,Methods,Avg. Acc.,Avg. Delta\n");
  EXPECT_EQ(zr::emit_report(t, zr::ReportFormat::plain),
            "Data Type  Methods  Avg. Acc.  Avg. Delta\n");
}

TEST(EmitReport, MatchesGoldenFiles) {
  const auto t = fixture_table();
  EXPECT_EQ(zr::emit_report(t, zr::ReportFormat::plain), slurp(kData + "/report_golden.txt"));
  EXPECT_EQ(zr::emit_report(t, zr::ReportFormat::delimited),
            slurp(kData + "/report_golden.csv"));
}

TEST(EmitReport, OriginalAboveRephrasedWithinEachMethod) {
  const auto csv = zr::emit_report(fixture_table(), zr::ReportFormat::delimited);
  const auto a = csv.find("Original,ZO-MeZO");
  const auto b = csv.find("Rephrased,ZO-MeZO");
  const auto c = csv.find("Original,FO-Full");
  ASSERT_NE(a, std::string::npos);
  EXPECT_LT(a, b);
  EXPECT_LT(b, c);
}

TEST(ExperimentGrid, ConfigOrderAndValidation) {
  const zr::ExperimentGrid g;
  const auto zo = g.configs(zr::Method::zo_mezo);
  ASSERT_EQ(zo.size(), 8u);
  EXPECT_EQ(zo[0].learning_rate, 0.2);
  EXPECT_EQ(zo[1].batch_size, 32u);
  EXPECT_EQ(g.configs(zr::Method::fo_lora).size(), 6u);
  auto bad = g;
  bad.lora_ranks.clear();
  EXPECT_THROW(bad.validate(), zr::InvalidConfigError);
}

TEST(ExperimentGrid, JsonOverridesAndPreset) {
  auto g = nlohmann::json::parse(R"({"zo_steps": 7, "model": "linear"})").get<zr::ExperimentGrid>();
  EXPECT_EQ(g.zo_steps, 7u);
  EXPECT_EQ(g.model, zr::ModelKind::linear);
  g = nlohmann::json::parse(R"({"preset": "llm_scale"})").get<zr::ExperimentGrid>();
  EXPECT_EQ(g.lora_ranks, (std::vector<std::size_t>{8, 16, 32}));
  EXPECT_EQ(g.zo_learning_rates.back(), 1e-7);
  EXPECT_THROW(nlohmann::json::parse(R"({"model": "cnn"})").get<zr::ExperimentGrid>(),
               zr::InvalidConfigError);
}

TEST(RunGrid, SingleConfigurationTableEqualsThatRun) {
  auto g = tiny_grid();
  g.zo_learning_rates = {0.1};
  const auto pair = synthetic_pair(0);
  const auto table = zr::run_grid(g, {pair}, zr::FeatureExtractor{});
  const auto features = zr::featurize(pair.original, zr::FeatureExtractor{});
  for (zr::Method m : zr::kMethods) {
    const auto run = zr::run_one(g, g.configs(m).front(), features, 2);
    EXPECT_EQ(table.find(zr::DataType::original, m)->accuracy.at("syn"), run.test_accuracy);
  }
}

TEST(RunGrid, IdenticalCorporaGiveZeroDelta) {
  auto pair = synthetic_pair(1);
  pair.rephrased = pair.original;
  const auto table = zr::run_grid(tiny_grid(), {pair}, zr::FeatureExtractor{});
  for (zr::Method m : zr::kMethods) EXPECT_EQ(*table.avg_delta(m), 0.0);
}

TEST(RunGrid, DevSelectionPrefersFirstConfigOnTies) {
  auto g = tiny_grid();
  g.zo_learning_rates = {0.1, 0.1};
  g.zo_batch_sizes = {16};
  const auto features = zr::featurize(synthetic_pair(0).original, zr::FeatureExtractor{});
  const auto best = zr::run_condition(g, zr::Method::zo_mezo, features);
  EXPECT_EQ(best.selected.describe(), g.configs(zr::Method::zo_mezo)[0].describe());
}

TEST(RunGrid, RepeatedRunsAreByteIdentical) {
  const auto pair = synthetic_pair(2);
  const auto a = zr::run_grid(tiny_grid(), {pair}, zr::FeatureExtractor{});
  const auto b = zr::run_grid(tiny_grid(), {pair}, zr::FeatureExtractor{});
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_EQ(zr::emit_report(a, zr::ReportFormat::plain),
            zr::emit_report(b, zr::ReportFormat::plain));
}

TEST(RunGrid, MisalignedCorporaAbort) {
  auto pair = synthetic_pair(0);
  pair.rephrased.instances[0].label ^= 1u;
  EXPECT_THROW(zr::run_grid(tiny_grid(), {pair}, zr::FeatureExtractor{}), zr::AlignmentError);
}

TEST(RunGrid, FailingConditionIsNamed) {
  auto g = tiny_grid();
  g.zo_learning_rates = {-1.0};
  try {
    zr::run_grid(g, {synthetic_pair(0)}, zr::FeatureExtractor{});
    FAIL();
  } catch (const zr::Error& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("Original/ZO-MeZO"), std::string::npos) << what;
    EXPECT_NE(what.find("'syn'"), std::string::npos) << what;
  }
}
