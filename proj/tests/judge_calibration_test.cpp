// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "zorephrase/judge_calibration.hpp"

namespace zr = zorephrase;
namespace fs = std::filesystem;

namespace {

const std::string kAssets = ZOREPHRASE_ASSETS;

zr::TaskSchema tiny_schema() {
  return zr::TaskSchema("tiny",
                        {{"text", zr::FieldRole::rewritable_span}, {"label", zr::FieldRole::label}},
                        {"neg", "pos"});
}

zr::PromptTemplate judge_template() {
  return zr::template_transfer(zr::PromptTemplate::load(kAssets + "/templates/copa_judge.tpl"),
                               tiny_schema());
}

// Humans label even pairs "same" and odd pairs "not the same".
std::vector<zr::LabeledPair> pairs(std::size_t n) {
  std::vector<zr::LabeledPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    zr::LabeledPair p;
    p.pair_id = "p" + std::to_string(i);
    p.original = {p.pair_id, {{"text", "original " + std::to_string(i)}}, i % 2};
    p.target_field = "text";
    p.rewritten_span = "rw " + std::to_string(i) + ".";
    p.human_label = i % 2 == 0 ? zr::VerdictValue::same : zr::VerdictValue::not_same;
    out.push_back(p);
  }
  return out;
}

std::size_t pair_index(const std::string& user_text) {
  const auto pos = user_text.rfind("rw ");
  return std::stoul(user_text.substr(pos + 3));
}

std::string truth(std::size_t i) { return i % 2 == 0 ? "same" : "not the same"; }
std::string flipped(std::size_t i) { return i % 2 == 0 ? "not the same" : "same"; }

// Agrees with the humans except on the first `wrong` pairs.
zr::FixtureBackend judge_with_errors(std::size_t wrong) {
  return zr::FixtureBackend("judge", [wrong](const zr::ChatRequest& r) {
    const auto i = pair_index(r.user_text);
    return i < wrong ? flipped(i) : truth(i);
  });
}

zr::CallOptions no_sleep() {
  zr::CallOptions o;
  o.sleep = [](std::chrono::milliseconds) {};
  return o;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("zr-calib-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(MeetsThreshold, BoundaryCases) {
  EXPECT_TRUE(zr::meets_threshold(40, 40, 0.9));
  EXPECT_TRUE(zr::meets_threshold(37, 40, 0.9));
  EXPECT_TRUE(zr::meets_threshold(36, 40, 0.9));
  EXPECT_FALSE(zr::meets_threshold(35, 40, 0.9));
  EXPECT_TRUE(zr::meets_threshold(9, 10, 0.9));
  EXPECT_FALSE(zr::meets_threshold(8, 10, 0.9));
}

class EvaluateJudge : public ::testing::TestWithParam<std::pair<std::size_t, bool>> {};

TEST_P(EvaluateJudge, AccuracyAndGate) {
  const auto [wrong, pass] = GetParam();
  auto judge = judge_with_errors(wrong);
  const auto rep = zr::evaluate_judge(judge, judge_template(), tiny_schema(), pairs(40), 0.9,
                                      no_sleep());
  EXPECT_EQ(rep.matches, 40 - wrong);
  EXPECT_DOUBLE_EQ(rep.judge_acc, static_cast<double>(40 - wrong) / 40.0);
  EXPECT_EQ(rep.passed, pass);
  EXPECT_EQ(judge.calls(), 40u);
}

INSTANTIATE_TEST_SUITE_P(Thresholds, EvaluateJudge,
                         ::testing::Values(std::make_pair(0u, true), std::make_pair(3u, true),
                                           std::make_pair(4u, true), std::make_pair(5u, false)));

TEST(EvaluateJudge, MatchesHandComputedOracle) {
  // Replies chosen by hand: two disagree with the humans, one is unparseable.
  const std::vector<std::string> replies = {"same", "Not the same.", "same",     "same",
                                            "not the same", "dunno"};
  zr::FixtureBackend judge("judge", [&](const zr::ChatRequest& r) {
    return replies.at(pair_index(r.user_text));
  });
  const auto rep = zr::evaluate_judge(judge, judge_template(), tiny_schema(), pairs(6), 0.5,
                                      no_sleep());
  // human: same, not, same, not, same, not
  // model: same, not, same, same, not, unparseable
  EXPECT_EQ(rep.matches, 3u);
  EXPECT_DOUBLE_EQ(rep.judge_acc, 0.5);
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.outcomes[5].model_verdict, zr::VerdictValue::unparseable);
  EXPECT_FALSE(rep.outcomes[5].match);
  const auto j = rep.to_json();
  EXPECT_EQ(j["matches"], 3);
  EXPECT_EQ(j["outcomes"][3]["model_verdict"], "Same");
}

TEST(EvaluateJudge, EmptyOrAllFailingIsAnError) {
  auto judge = judge_with_errors(0);
  EXPECT_THROW(zr::evaluate_judge(judge, judge_template(), tiny_schema(), {}),
               zr::InvalidConfigError);
  zr::ScriptedBackend down({zr::ScriptedBackend::Step::permanent("no route")});
  EXPECT_THROW(zr::evaluate_judge(down, judge_template(), tiny_schema(), pairs(3), 0.9, no_sleep()),
               zr::Error);
}

TEST(Worksheet, ListsOnlyMismatches) {
  auto judge = judge_with_errors(2);
  const auto ps = pairs(10);
  const auto rep = zr::evaluate_judge(judge, judge_template(), tiny_schema(), ps, 0.9, no_sleep());
  const auto ws = zr::revision_worksheet(rep, ps, tiny_schema());
  EXPECT_NE(ws.find("pair p0\n"), std::string::npos);
  EXPECT_NE(ws.find("pair p1\n"), std::string::npos);
  EXPECT_EQ(ws.find("pair p2\n"), std::string::npos);
  EXPECT_NE(ws.find("8/10"), std::string::npos);
}

class CalibrationLoop : public ::testing::Test {
 protected:
  TempDir dir;
  std::vector<zr::LabeledPair> ps = pairs(40);

  // 8 errors with the initial template, 3 once the requirements mention
  // "strict"; the backend never sees anything but the rendered prompt.
  zr::FixtureBackend judge{"judge", [](const zr::ChatRequest& r) {
                             const auto i = pair_index(r.user_text);
                             const std::size_t wrong =
                                 r.system_text.find("strict") != std::string::npos ? 3 : 8;
                             return i < wrong ? flipped(i) : truth(i);
                           }};

  std::string write_revision() {
    auto t = judge_template();
    t.version += 1;
    t.section(zr::SectionKind::requirements)->text += "\nBe strict.";
    const auto path = (dir.path / "judge-v3.tpl").string();
    t.save(path);
    return path;
  }
};

TEST_F(CalibrationLoop, PassingTemplateNeedsOneRound) {
  auto good = judge_with_errors(0);
  int asked = 0;
  const auto out = zr::calibration_loop(
      good, judge_template(), tiny_schema(), ps,
      [&](const auto&, const auto&) -> std::optional<std::string> {
        ++asked;
        return std::nullopt;
      },
      dir.path, 0.9, 3, no_sleep());
  EXPECT_TRUE(out.calibrated);
  EXPECT_EQ(out.reports.size(), 1u);
  EXPECT_EQ(asked, 0);
  EXPECT_EQ(out.status(), "calibrated");
}

TEST_F(CalibrationLoop, RevisionRaisesAccuracyInTwoRounds) {
  const auto revised = write_revision();
  std::string seen_worksheet;
  const auto out = zr::calibration_loop(
      judge, judge_template(), tiny_schema(), ps,
      [&](const zr::CalibrationReport& rep, const std::string& ws) -> std::optional<std::string> {
        EXPECT_DOUBLE_EQ(rep.judge_acc, 0.80);
        seen_worksheet = ws;
        return revised;
      },
      dir.path, 0.9, 3, no_sleep());
  ASSERT_EQ(out.reports.size(), 2u);
  EXPECT_DOUBLE_EQ(out.reports[0].judge_acc, 0.80);
  EXPECT_DOUBLE_EQ(out.reports[1].judge_acc, 0.925);
  EXPECT_TRUE(out.calibrated);
  EXPECT_EQ(out.final_template.version, judge_template().version + 1);
  EXPECT_EQ(seen_worksheet, (dir.path / "judge-revision-round-1.txt").string());
  EXPECT_TRUE(fs::exists(seen_worksheet));
}

TEST_F(CalibrationLoop, ExhaustedRoundsReportNotCalibrated) {
  auto judge85 = judge_with_errors(6);  // 34/40 = 0.85
  const auto out = zr::calibration_loop(
      judge85, judge_template(), tiny_schema(), ps,
      [](const auto&, const auto&) -> std::optional<std::string> { return std::nullopt; },
      dir.path, 0.9, 1, no_sleep());
  EXPECT_FALSE(out.calibrated);
  EXPECT_EQ(out.status(), "not-calibrated");
  EXPECT_EQ(out.reports.size(), 1u);
  EXPECT_DOUBLE_EQ(out.reports[0].judge_acc, 0.85);
  EXPECT_TRUE(out.worksheets.empty());
}

TEST_F(CalibrationLoop, HumanMayStopEarly) {
  const auto out = zr::calibration_loop(
      judge, judge_template(), tiny_schema(), ps,
      [](const auto&, const auto&) -> std::optional<std::string> { return std::nullopt; },
      dir.path, 0.9, 3, no_sleep());
  EXPECT_FALSE(out.calibrated);
  EXPECT_EQ(out.reports.size(), 1u);
  EXPECT_EQ(out.worksheets.size(), 1u);
}

TEST(LabeledPairs, ParseAndReject) {
  std::istringstream in(
      R"({"pair_id":"a","instance":{"text":"x","label":"neg"},"rewritten_span":"y","human_label":"same"})"
      "\n"
      R"({"pair_id":"b","instance":{"text":"x","label":"pos"},"target_field":"text","rewritten_span":"z","human_label":"not the same"})"
      "\n");
  const auto ps = zr::parse_labeled_pairs(in, tiny_schema());
  ASSERT_EQ(ps.size(), 2u);
  EXPECT_EQ(ps[0].target_field, "text");
  EXPECT_EQ(ps[1].human_label, zr::VerdictValue::not_same);
  EXPECT_EQ(ps[1].original.label, 1u);

  std::istringstream bad_label(
      R"({"pair_id":"a","instance":{"text":"x","label":"neg"},"rewritten_span":"y","human_label":"maybe"})");
  EXPECT_THROW(zr::parse_labeled_pairs(bad_label, tiny_schema()), zr::SchemaViolationError);
  std::istringstream dup(
      R"({"pair_id":"a","instance":{"text":"x","label":"neg"},"rewritten_span":"y","human_label":"same"})"
      "\n"
      R"({"pair_id":"a","instance":{"text":"x","label":"neg"},"rewritten_span":"y","human_label":"same"})");
  EXPECT_THROW(zr::parse_labeled_pairs(dup, tiny_schema()), zr::SchemaViolationError);
}
