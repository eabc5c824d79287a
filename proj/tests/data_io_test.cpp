// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "zorephrase/data_io.hpp"
#include "zorephrase/fo_train.hpp"
#include "zorephrase/synthetic_task.hpp"

namespace zr = zorephrase;

namespace {

const std::string kData = ZOREPHRASE_TEST_DATA;

zr::TaskSchema copa_schema() {
  std::ifstream in(kData + "/copa_schema.json");
  return zr::TaskSchema::from_json(nlohmann::json::parse(in));
}

zr::TaskSchema tiny_schema() {
  return zr::TaskSchema("tiny",
                        {{"text", zr::FieldRole::rewritable_span}, {"label", zr::FieldRole::label}},
                        {"neg", "pos"});
}

zr::Dataset numbered(std::size_t n) {
  zr::Dataset ds;
  ds.schema = tiny_schema();
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "x%04zu", i);
    ds.instances.push_back({id, {{"text", "item " + std::to_string(i)}}, i % 2});
  }
  return ds;
}

zr::Dataset parse(const std::string& text, const zr::TaskSchema& schema) {
  std::istringstream in(text);
  return zr::parse_jsonl(in, schema);
}

std::string error_of(const std::string& text) {
  try {
    parse(text, tiny_schema());
  } catch (const zr::SchemaViolationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(TaskSchema, RejectsMalformedDefinitions) {
  using R = zr::FieldRole;
  EXPECT_THROW(zr::TaskSchema("s", {{"a", R::rewritable_span}}, {"x", "y"}),
               zr::SchemaViolationError);
  EXPECT_THROW(zr::TaskSchema("s", {{"a", R::fixed_span}, {"l", R::label}}, {"x", "y"}),
               zr::SchemaViolationError);
  EXPECT_THROW(
      zr::TaskSchema("s", {{"a", R::rewritable_span}, {"l", R::label}, {"m", R::label}}, {"x", "y"}),
      zr::SchemaViolationError);
  EXPECT_THROW(zr::TaskSchema("s", {{"id", R::rewritable_span}, {"l", R::label}}, {"x", "y"}),
               zr::SchemaViolationError);
  EXPECT_THROW(zr::TaskSchema("s", {{"a", R::rewritable_span}, {"l", R::label}}, {"x"}),
               zr::SchemaViolationError);
}

TEST(TaskSchema, JsonRoundTrip) {
  const auto s = copa_schema();
  EXPECT_EQ(zr::TaskSchema::from_json(nlohmann::json::parse(s.to_json().dump())), s);
  EXPECT_EQ(s.rewritable_fields(), std::vector<std::string>{"premise"});
  EXPECT_EQ(s.text_fields().size(), 4u);
}

TEST(LoadJsonl, CopaFixtureLoadsFourInstancesWithRoles) {
  const auto schema = copa_schema();
  const auto ds = zr::load_jsonl(kData + "/copa_fixture.jsonl", schema);
  ASSERT_EQ(ds.instances.size(), 4u);
  EXPECT_EQ(ds.instances[0].id, "copa-0001");
  EXPECT_EQ(ds.instances[2].label, 1u);
  EXPECT_EQ(ds.instances[1].fields.at("question"), "cause");
  EXPECT_EQ(schema.role_of("premise"), zr::FieldRole::rewritable_span);
  EXPECT_EQ(schema.role_of("choice1"), zr::FieldRole::fixed_span);
  EXPECT_TRUE(ds.split_assignment.empty());
}

TEST(LoadJsonl, EmptyInputGivesEmptyDataset) {
  EXPECT_TRUE(parse("", tiny_schema()).instances.empty());
  EXPECT_TRUE(parse("\n  \n", tiny_schema()).instances.empty());
}

TEST(LoadJsonl, ErrorsNameLineAndField) {
  const std::string ok = R"({"id":"a","text":"t","label":"pos"})" "\n";
  std::string e = error_of(ok + R"({"id":"b","text":"t"})");
  EXPECT_NE(e.find("line 2"), std::string::npos) << e;
  EXPECT_NE(e.find("'label'"), std::string::npos) << e;

  e = error_of(ok + R"({"id":"b","text":"t","label":"maybe"})");
  EXPECT_NE(e.find("line 2"), std::string::npos) << e;
  EXPECT_NE(e.find("maybe"), std::string::npos) << e;

  e = error_of(ok + ok);
  EXPECT_NE(e.find("line 2"), std::string::npos) << e;
  EXPECT_NE(e.find("duplicate id 'a'"), std::string::npos) << e;

  e = error_of("not json");
  EXPECT_NE(e.find("line 1"), std::string::npos) << e;
  EXPECT_NE(error_of(R"({"id":"a","text":"t","label":7})").find("index 7"), std::string::npos);
}

TEST(LoadJsonl, IntegerLabelsAndMissingIds) {
  const auto ds = parse(R"({"text":"hello","label":1})", tiny_schema());
  ASSERT_EQ(ds.instances.size(), 1u);
  EXPECT_EQ(ds.instances[0].label, 1u);
  EXPECT_EQ(ds.instances[0].id, zr::content_id(tiny_schema(), {{"text", "hello"}}));
}

TEST(LoadJsonl, SplitKeysAreAllOrNone) {
  const auto ds = parse(R"({"id":"a","text":"t","label":0,"split":"dev"})", tiny_schema());
  EXPECT_EQ(ds.split_assignment.at("a"), zr::Split::dev);
  EXPECT_THROW(parse(R"({"id":"a","text":"t","label":0,"split":"dev"})"
                     "\n"
                     R"({"id":"b","text":"t","label":0})",
                     tiny_schema()),
               zr::SchemaViolationError);
  EXPECT_THROW(parse(R"({"id":"a","text":"t","label":0})"
                     "\n"
                     R"({"id":"b","text":"t","label":0,"split":"dev"})",
                     tiny_schema()),
               zr::SchemaViolationError);
}

TEST(LoadJsonl, SaveLoadRoundTrip) {
  const auto ds = zr::split(numbered(20));
  const auto back = parse(zr::to_jsonl(ds), ds.schema);
  EXPECT_EQ(back, ds);
  EXPECT_EQ(zr::to_jsonl(back), zr::to_jsonl(ds));
}

TEST(Split, HundredInstancesGiveSeventyFifteenFifteen) {
  const auto ds = zr::split(numbered(100));
  EXPECT_EQ(ds.split_size(zr::Split::train), 70u);
  EXPECT_EQ(ds.split_size(zr::Split::dev), 15u);
  EXPECT_EQ(ds.split_size(zr::Split::test), 15u);
}

TEST(Split, RemaindersGoTrainThenDevThenTest) {
  // 1428 * (0.70, 0.15, 0.15) floors to (999, 214, 214); one left over.
  auto ds = zr::split(numbered(1428));
  EXPECT_EQ(ds.split_size(zr::Split::train), 1000u);
  EXPECT_EQ(ds.split_size(zr::Split::dev), 214u);
  EXPECT_EQ(ds.split_size(zr::Split::test), 214u);
  // 11 floors to (7, 1, 1); the two leftovers go to train and dev.
  ds = zr::split(numbered(11));
  EXPECT_EQ(ds.split_size(zr::Split::train), 8u);
  EXPECT_EQ(ds.split_size(zr::Split::dev), 2u);
  EXPECT_EQ(ds.split_size(zr::Split::test), 1u);
}

TEST(Split, DisjointExhaustiveAndDeterministic) {
  for (std::size_t n : {3u, 7u, 50u, 333u}) {
    const auto a = zr::split(numbered(n));
    EXPECT_EQ(a.split_assignment.size(), n);
    EXPECT_EQ(a.split_size(zr::Split::train) + a.split_size(zr::Split::dev) +
                  a.split_size(zr::Split::test),
              n);
    EXPECT_EQ(a.split_assignment, zr::split(numbered(n)).split_assignment);
  }
}

TEST(Split, InvariantToInputOrder) {
  auto ds = numbered(200);
  const auto reference = zr::split(ds).split_assignment;
  zr::KeyedStream rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    for (std::size_t i = ds.instances.size(); i > 1; --i)
      std::swap(ds.instances[i - 1], ds.instances[rng.below(i)]);
    EXPECT_EQ(zr::split(ds).split_assignment, reference);
  }
}

TEST(Split, SeedChangesAssignment) {
  EXPECT_NE(zr::split(numbered(100), 0).split_assignment,
            zr::split(numbered(100), 1).split_assignment);
}

TEST(Split, ErrorsOnTooFewInstancesAndBadRatios) {
  EXPECT_THROW(zr::split(numbered(0)), zr::InvalidDimensionError);
  EXPECT_THROW(zr::split(numbered(2)), zr::InvalidDimensionError);
  EXPECT_THROW(zr::split(numbered(10), 0, {0.5, 0.5, 0.5}), zr::InvalidConfigError);
}

TEST(AlignCheck, IdenticalCorporaAreAligned) {
  const auto ds = zr::split(numbered(30));
  EXPECT_TRUE(zr::align_check(ds, ds).ok());
  EXPECT_NO_THROW(zr::require_aligned(ds, ds));
}

TEST(AlignCheck, TextEditsAreAllowed) {
  const auto ds = zr::split(numbered(30));
  auto other = ds;
  for (auto& inst : other.instances) inst.fields["text"] += " rewritten";
  EXPECT_TRUE(zr::align_check(ds, other).ok());
}

TEST(AlignCheck, LabelFlipIsReportedById) {
  const auto ds = zr::split(numbered(30));
  auto other = ds;
  other.instances[4].label ^= 1u;
  const auto rep = zr::align_check(ds, other);
  EXPECT_EQ(rep.label_drift, std::vector<std::string>{"x0004"});
  try {
    zr::require_aligned(ds, other);
    FAIL();
  } catch (const zr::AlignmentError& e) {
    EXPECT_NE(std::string(e.what()).find("label drift: x0004"), std::string::npos);
  }
}

TEST(AlignCheck, MissingIdAndSplitMismatchDetectedInBothDirections) {
  const auto ds = zr::split(numbered(30));
  auto other = ds;
  other.instances.erase(other.instances.begin() + 7);
  other.split_assignment.erase("x0007");
  EXPECT_EQ(zr::align_check(ds, other).missing_ids, std::vector<std::string>{"x0007"});
  EXPECT_EQ(zr::align_check(other, ds).extra_ids, std::vector<std::string>{"x0007"});
  EXPECT_FALSE(zr::align_check(other, ds).ok());

  auto moved = ds;
  auto& s = moved.split_assignment["x0003"];
  s = s == zr::Split::train ? zr::Split::test : zr::Split::train;
  EXPECT_EQ(zr::align_check(ds, moved).split_mismatch, std::vector<std::string>{"x0003"});
  EXPECT_EQ(zr::align_check(moved, ds).split_mismatch, std::vector<std::string>{"x0003"});
}

TEST(Featurize, ShapeAndRowOrder) {
  const auto ds = zr::split(numbered(100));
  const auto f = zr::featurize(ds, zr::FeatureExtractor{});
  EXPECT_EQ(f.train.rows, 70u);
  EXPECT_EQ(f.train.cols, 64u);
  EXPECT_EQ(f.dev.rows, 15u);
  const auto members = ds.sorted_split(zr::Split::test);
  for (std::size_t r = 0; r < members.size(); ++r)
    EXPECT_EQ(f.test.labels[r], members[r]->label);
}

TEST(Featurize, ThreeInstanceFixtureIs3x64) {
  auto ds = numbered(3);
  ds = zr::split(ds, 0, {1.0, 0.0, 0.0});
  const auto m = zr::featurize_split(ds, zr::FeatureExtractor{}, zr::Split::train);
  EXPECT_EQ(m.rows, 3u);
  EXPECT_EQ(m.cols, 64u);
  EXPECT_EQ(m.values.size(), 192u);
}

TEST(Featurize, IdenticalTextsGiveIdenticalRowsAndUnitNorm) {
  zr::FeatureExtractor fx;
  const auto schema = tiny_schema();
  std::vector<double> a(64), b(64);
  fx.extract(schema, {"p", {{"text", "The same words, again"}}, 0}, a);
  fx.extract(schema, {"q", {{"text", "the SAME words again"}}, 1}, b);
  EXPECT_EQ(a, b);
  double norm = 0.0;
  for (double v : a) norm += v * v;
  EXPECT_NEAR(norm, 1.0, 1e-12);
}

TEST(Featurize, InvariantToFileOrder) {
  auto ds = zr::split(numbered(60));
  const auto ref = zr::featurize(ds, zr::FeatureExtractor{});
  std::reverse(ds.instances.begin(), ds.instances.end());
  const auto rev = zr::featurize(ds, zr::FeatureExtractor{});
  EXPECT_EQ(ref.train.values, rev.train.values);
  EXPECT_EQ(ref.test.labels, rev.test.labels);
}

TEST(Featurize, EmptySplitIsRejected) {
  auto ds = zr::split(numbered(10), 0, {1.0, 0.0, 0.0});
  EXPECT_THROW(zr::featurize(ds, zr::FeatureExtractor{}), zr::InvalidDimensionError);
}

TEST(Featurize, DisjointVocabulariesAreLinearlySeparable) {
  zr::Dataset ds;
  ds.schema = tiny_schema();
  zr::KeyedStream rng(5);
  for (std::size_t i = 0; i < 120; ++i) {
    const std::size_t label = i % 2;
    std::string text;
    for (int t = 0; t < 4; ++t)
      text += (label ? "beta" : "alpha") + std::to_string(rng.below(6)) + " ";
    ds.instances.push_back({"d" + std::to_string(1000 + i), {{"text", text}}, label});
  }
  ds = zr::split(ds);
  const auto f = zr::featurize(ds, zr::FeatureExtractor{});
  auto model = zr::Classifier::linear(64, 2, 0);
  zr::FOConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.steps = 300;
  zr::train_fo(model, f.train, cfg, zr::FoMode::full, {});
  EXPECT_DOUBLE_EQ(zr::predict_accuracy(model, f.train), 1.0);
}

TEST(SyntheticTask, SameSpecGivesIdenticalCorpus) {
  zr::SyntheticTaskSpec spec;
  spec.corpus_size = 200;
  EXPECT_EQ(zr::to_jsonl(zr::generate_synthetic_task(spec).original),
            zr::to_jsonl(zr::generate_synthetic_task(spec).original));
  auto other = spec;
  other.seed = 1;
  EXPECT_NE(zr::to_jsonl(zr::generate_synthetic_task(spec).original),
            zr::to_jsonl(zr::generate_synthetic_task(other).original));
}

TEST(SyntheticTask, ZeroRateMakesRulesTheIdentity) {
  zr::SyntheticTaskSpec spec;
  spec.corpus_size = 200;
  spec.distractor_rate = 0.0;
  const auto task = zr::generate_synthetic_task(spec);
  for (const auto& inst : task.original.instances)
    EXPECT_EQ(task.rules.apply(inst.fields.at("text")), inst.fields.at("text"));
}

TEST(SyntheticTask, RulesRemoveExactlyTheDistractorsAndKeepLabels) {
  zr::SyntheticTaskSpec spec;
  spec.corpus_size = 300;
  spec.distractor_rate = 0.3;
  const auto task = zr::generate_synthetic_task(spec);
  std::size_t changed = 0;
  for (const auto& inst : task.original.instances) {
    const auto& text = inst.fields.at("text");
    EXPECT_EQ(zr::signal_label(text, spec.classes), inst.label);
    const auto clean = task.rules.apply(text);
    changed += clean != text;
    EXPECT_EQ(zr::signal_label(clean, spec.classes), inst.label);
    EXPECT_EQ(clean.find("umm"), std::string::npos);
    auto kept = zr::tokenize(text);
    kept.erase(std::remove_if(kept.begin(), kept.end(),
                              [](const std::string& t) { return t.rfind("umm", 0) == 0; }),
               kept.end());
    EXPECT_EQ(zr::tokenize(clean), kept);
  }
  EXPECT_GT(changed, 250u);
}

TEST(SyntheticTask, RejectsRateOfOne) {
  zr::SyntheticTaskSpec spec;
  spec.distractor_rate = 1.0;
  EXPECT_THROW(zr::generate_synthetic_task(spec), zr::InvalidConfigError);
}

TEST(SyntheticTask, DefaultSpecSplitsToThousandTrain) {
  const auto ds = zr::split(zr::generate_synthetic_task({}).original);
  EXPECT_EQ(ds.split_size(zr::Split::train), 1000u);
}
