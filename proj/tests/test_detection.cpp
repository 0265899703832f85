#include <gtest/gtest.h>

#include "oracles/loop_oracle.hpp"
#include "oracles/random_trajectory.hpp"
#include "support/golden.hpp"
#include "support/log_capture.hpp"
#include "trajguard/backends.hpp"
#include "trajguard/detection.hpp"
#include "trajguard/fixtures.hpp"

using namespace trajguard;

namespace {

ToolCall call(std::string tool, Arguments args, std::string id) {
  return ToolCall{std::move(tool), std::move(args), std::move(id)};
}

/// Appends `n` read_file calls on `path` with ok observations.
void reads(Trajectory& t, std::size_t n, const std::string& path, std::size_t& next_id) {
  for (std::size_t i = 0; i < n; ++i) {
    auto id = "c" + std::to_string(next_id++);
    t.append(action(call("read_file", {{"path", path}}, id)));
    t.append(observation(ok_result(id, "text")));
  }
}

Trajectory with_task(std::string id = "s") {
  Trajectory t(std::move(id), gen::small_meta());
  t.append(user_message("task"));
  return t;
}

}  // namespace

// --- normalization ---------------------------------------------------------

TEST(Normalize, StripsWhitespaceAndSortsPairs) {
  auto a = normalize(call("bash", {{"command", std::string("  ls -la \n")}, {"cwd", std::string("/")}}, "x"));
  auto b = normalize(call("bash", {{"cwd", std::string("/")}, {"command", std::string("ls -la")}}, "y"));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.pairs.front().substr(0, 7), "command");
}

TEST(Normalize, ValuesKeepTheirType) {
  auto s = normalize(call("t", {{"n", std::string("3")}}, "x"));
  auto i = normalize(call("t", {{"n", std::int64_t{3}}}, "y"));
  EXPECT_NE(s, i);
}

TEST(Similarity, JaccardValues) {
  EXPECT_DOUBLE_EQ(jaccard({}, {}), 1.0);
  EXPECT_DOUBLE_EQ(jaccard({"a"}, {}), 0.0);
  EXPECT_DOUBLE_EQ(jaccard({"a", "b"}, {"a", "b"}), 1.0);
  EXPECT_DOUBLE_EQ(jaccard({"a", "b"}, {"a", "c"}), 1.0 / 3.0);
  // one of nine arguments changed: 8 shared of 10 distinct
  std::vector<std::string> x, y;
  for (char c = 'a'; c < 'i'; ++c) {
    x.emplace_back(1, c);
    y.emplace_back(1, c);
  }
  x.emplace_back("i=1");
  y.emplace_back("i=2");
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  EXPECT_DOUBLE_EQ(jaccard(x, y), 0.8);
}

TEST(Similarity, DifferentToolsNeverSimilar) {
  auto a = normalize(call("read_file", {{"path", "a"}}, "x"));
  auto b = normalize(call("grep", {{"path", "a"}}, "y"));
  EXPECT_FALSE(similar_calls(a, b, 0.0));
  EXPECT_TRUE(similar_calls(a, a, 1.0));
}

// --- loop detector ---------------------------------------------------------

TEST(Loops, ScenarioFixture) {
  auto t = fixtures::loop_php_syntax();
  auto f = detect_loops(t);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->category, MisbehaviorCategory::reasoning_infinite_loop);
  EXPECT_EQ(f->pattern, PatternKind::repeated_call);
  EXPECT_EQ(f->evidence, (EvidenceSpan{4, 10}));
  EXPECT_EQ(f->suggested_slots.at("repeat_count"), "3");
  EXPECT_EQ(f->suggested_slots.at("offending_tool"), "read_file");
  EXPECT_EQ(f->offending_call->arguments.at("path"), ArgValue(std::string("php_syntax.md")));
}

TEST(Loops, TwoIdenticalCallsAreNotALoop) {
  auto t = with_task();
  std::size_t id = 0;
  reads(t, 2, "a.md", id);
  EXPECT_FALSE(detect_loops(t));
  reads(t, 1, "a.md", id);
  EXPECT_TRUE(detect_loops(t));
}

TEST(Loops, InterleavedCallsBreakTheRun) {
  auto t = with_task();
  std::size_t id = 0;
  reads(t, 2, "a.md", id);
  reads(t, 1, "b.md", id);
  reads(t, 2, "a.md", id);
  EXPECT_FALSE(detect_loops(t));
}

TEST(Loops, RepeatedEditsToOneFile) {
  auto t = with_task();
  for (int i = 0; i < 3; ++i) {
    auto id = "e" + std::to_string(i);
    t.append(action(call("edit_file", {{"path", "src/a.py"}, {"content", "v" + std::to_string(i)}}, id)));
    t.append(observation(ok_result(id, "Edited")));
    auto rid = "r" + std::to_string(i);
    t.append(action(call("bash", {{"command", "run " + std::to_string(i)}}, rid)));
    t.append(observation(ok_result(rid, "ok")));
  }
  auto f = detect_loops(t);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->pattern, PatternKind::same_file_edits);
  EXPECT_EQ(f->evidence, (EvidenceSpan{1, 11}));
}

TEST(Loops, EditsOutsideTheWindowDoNotCount) {
  auto t = with_task();
  std::size_t n = 0;
  for (int i = 0; i < 3; ++i) {
    auto id = "e" + std::to_string(i);
    t.append(action(call("edit_file", {{"path", "src/a.py"}, {"content", "v" + std::to_string(i)}}, id)));
    t.append(observation(ok_result(id, "Edited")));
    reads(t, 1, "x" + std::to_string(n), n);
    reads(t, 1, "y" + std::to_string(n), n);
    reads(t, 1, "z" + std::to_string(n), n);
  }
  // edits at actions 0, 4, 8: the third is 9 actions after the first
  EXPECT_FALSE(detect_loops(t));
  LoopConfig wide;
  wide.edit_window = 9;
  EXPECT_TRUE(detect_loops(t, wide));
}

TEST(Loops, MostRecentLoopIsReported) {
  auto t = with_task();
  std::size_t id = 0;
  reads(t, 3, "old.md", id);
  reads(t, 1, "gap", id);
  reads(t, 4, "new.md", id);
  auto f = detect_loops(t);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->offending_call->arguments.at("path"), ArgValue(std::string("new.md")));
  EXPECT_EQ(f->suggested_slots.at("repeat_count"), "4");
}

TEST(Loops, MatchesOracleOnRandomTrajectories) {
  std::size_t found = 0;
  for (std::uint64_t seed = 0; seed < 3000; ++seed) {
    auto t = gen::random_trajectory(seed);
    auto got = detect_loops(t);
    auto want = oracle::loops(t);
    ASSERT_EQ(got.has_value(), want.has_value()) << "seed " << seed;
    if (!got) continue;
    ++found;
    EXPECT_EQ(pattern_name(got->pattern), want->pattern) << "seed " << seed;
    EXPECT_EQ(got->evidence.begin, want->begin) << "seed " << seed;
    EXPECT_EQ(got->evidence.end, want->end) << "seed " << seed;
  }
  EXPECT_GT(found, 300u);
  EXPECT_LT(found, 2700u);
}

TEST(LoopsProperty, ShortRunsNeverFire) {
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 3000; ++seed) {
    auto t = gen::random_trajectory(seed);
    if (oracle::loops(t)) continue;
    ++checked;
    EXPECT_FALSE(detect_loops(t)) << "seed " << seed;
  }
  EXPECT_GT(checked, 100u);
}

// --- tool-call failures ----------------------------------------------------

TEST(Tcf, ScenarioFixture) {
  auto t = fixtures::tcf_activate_env();
  auto f = detect_tool_call_failures(t);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->pattern, PatternKind::repeated_failure);
  EXPECT_EQ(f->evidence, (EvidenceSpan{1, 6}));
  EXPECT_NE(f->suggested_slots.at("error_detail").find("activate.sh"), std::string::npos);
}

TEST(Tcf, OneFailureThenCorrectedRetry) {
  fixtures::Builder b("s", "Run the tests.");
  b.call("bash", {{"command", "pytest tests/"}}).call("bash", {{"command", "source activate.sh && pytest tests/"}});
  EXPECT_FALSE(detect_tool_call_failures(b.build()));
}

TEST(Tcf, UnknownToolIsReportedWithAlternatives) {
  fixtures::Builder b("s", std::string(fixtures::kReviewTask));
  b.call("revew_code", {{"mode", "thorough"}});
  auto f = detect_tool_call_failures(b.build());
  ASSERT_TRUE(f);
  EXPECT_EQ(f->pattern, PatternKind::unknown_tool);
  EXPECT_EQ(f->suggested_slots.at("offending_tool"), "revew_code");
  EXPECT_NE(f->suggested_slots.at("error_detail").find("review_code"), std::string::npos);
}

TEST(Tcf, MissingRequiredParameter) {
  fixtures::Builder b("s", std::string(fixtures::kReviewTask));
  b.call("review_code", {{"target", "HEAD"}});
  auto f = detect_tool_call_failures(b.build());
  ASSERT_TRUE(f);
  EXPECT_EQ(f->pattern, PatternKind::missing_param);
  EXPECT_NE(f->reasoning.find("'mode'"), std::string::npos);
}

TEST(Tcf, NoToolSpecsSkipsSchemaChecks) {
  Trajectory t("s");
  t.append(user_message("task"));
  t.append(action(call("revew_code", {}, "c1")));
  t.append(observation(ok_result("c1", "?")));
  EXPECT_FALSE(detect_tool_call_failures(t));
}

TEST(Tcf, ThresholdIsConfigurable) {
  auto t = fixtures::tcf_activate_env();
  TcfConfig strict;
  strict.failure_threshold = 3;
  EXPECT_FALSE(detect_tool_call_failures(t, strict));
}

TEST(Tcf, MatchesOracleOnRandomTrajectories) {
  std::size_t found = 0;
  for (std::uint64_t seed = 0; seed < 3000; ++seed) {
    bool specs = seed % 3 != 0;
    auto t = gen::random_trajectory(seed, 60, specs);
    auto got = detect_tool_call_failures(t);
    auto want = oracle::tool_failures(t);
    ASSERT_EQ(got.has_value(), want.has_value()) << "seed " << seed;
    if (!got) continue;
    ++found;
    EXPECT_EQ(pattern_name(got->pattern), want->pattern) << "seed " << seed;
    EXPECT_EQ(got->evidence.begin, want->begin) << "seed " << seed;
    EXPECT_EQ(got->evidence.end, want->end) << "seed " << seed;
  }
  EXPECT_GT(found, 300u);
}

// --- recurrence ------------------------------------------------------------

TEST(Recurrence, LoopCallAgain) {
  auto t = fixtures::loop_php_syntax();
  auto f = *detect_loops(t);
  EXPECT_TRUE(offending_pattern_recurs(f, slice(t, 4, t.size())));
  EXPECT_FALSE(offending_pattern_recurs(f, slice(t, 0, 3)));
}

TEST(Recurrence, SemanticFindingIsNotRuleCheckable) {
  Finding f;
  f.category = MisbehaviorCategory::spec_drift_dnf;
  auto t = fixtures::clean_session();
  try {
    offending_pattern_recurs(f, TrajectoryView(t));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_oracle_judgeable);
  }
}

// --- classifier ------------------------------------------------------------

namespace {

std::string render_parse(const std::optional<ClassifierVerdict>& v) {
  if (!v) return "unparseable";
  return std::string(v->misbehavior ? "yes" : "no") + " | " + v->reasoning + " | " + v->guidance.value_or("<none>");
}

}  // namespace

TEST(ClassifierParser, GoldenResponses) {
  auto cases = golden::cases("classifier_responses.txt");
  ASSERT_GE(cases.size(), 8u);
  for (const auto& c : cases) {
    EXPECT_EQ(render_parse(parse_classifier_response(c.input)), c.expect) << c.name;
  }
}

TEST(ClassifierPrompt, ContainsCategoryAndTrajectory) {
  auto t = fixtures::drift_ignored_tool();
  auto p = build_classifier_prompt(TrajectoryView(t), MisbehaviorCategory::spec_drift_dnf);
  EXPECT_NE(p.find("CATEGORY: SD_DNF"), std::string::npos);
  EXPECT_NE(p.find("[0] USER: Review my current diff"), std::string::npos);
  EXPECT_NE(p.find("END TRAJECTORY"), std::string::npos);
  EXPECT_NE(p.find("VERDICT: yes|no"), std::string::npos);
}

TEST(ClassifierPrompt, LaterWindowKeepsTheTask) {
  auto t = fixtures::drift_ignored_tool();
  auto s = serialize_window(slice(t, 4, t.size()));
  EXPECT_EQ(s.rfind("[0] USER:", 0), 0u);
  EXPECT_NE(s.find("(events 1..3 omitted)"), std::string::npos);
}

TEST(Classifier, DriftFixtureFlaggedByMock) {
  HeuristicMockBackend mock;
  auto t = fixtures::drift_ignored_tool();
  auto f = classify_with_llm(TrajectoryView(t), MisbehaviorCategory::spec_drift_dnf, mock);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->pattern, PatternKind::semantic);
  EXPECT_EQ(f->evidence, (EvidenceSpan{0, t.size()}));
  EXPECT_NE(f->reasoning.find("review_code"), std::string::npos);
  ASSERT_TRUE(f->correction);
  EXPECT_NE(f->correction->find("review_code(mode=\"thorough\")"), std::string::npos);
  EXPECT_EQ(f->suggested_slots.at("original_instruction"), std::string(fixtures::kReviewTask));
}

TEST(Classifier, CompliantTrajectoryIsClean) {
  HeuristicMockBackend mock;
  fixtures::Builder b("s", std::string(fixtures::kReviewTask));
  b.call("review_code", {{"mode", "thorough"}});
  EXPECT_FALSE(classify_with_llm(TrajectoryView(b.trajectory()), MisbehaviorCategory::spec_drift_dnf, mock));
}

TEST(Classifier, UnrequestedChangeFlaggedByMock) {
  HeuristicMockBackend mock;
  auto t = fixtures::unrequested_change();
  auto f = classify_with_llm(TrajectoryView(t), MisbehaviorCategory::spec_drift_uc, mock);
  ASSERT_TRUE(f);
  EXPECT_NE(f->reasoning.find("src/server.py"), std::string::npos);
}

TEST(Classifier, UnparseableResponseIsLoggedAsNoFinding) {
  LogCapture logs;
  auto backend = constant_backend("I think so, yes.");
  auto t = fixtures::drift_ignored_tool();
  EXPECT_FALSE(classify_with_llm(TrajectoryView(t), MisbehaviorCategory::spec_drift_dnf, *backend));
  ASSERT_EQ(logs.lines.size(), 1u);
  EXPECT_NE(logs.lines[0].find("UnparseableResponse"), std::string::npos);
  EXPECT_NE(logs.lines[0].find("fig-drift"), std::string::npos);
}

TEST(Classifier, RuleCategoriesRejected) {
  HeuristicMockBackend mock;
  auto t = fixtures::clean_session();
  try {
    classify_with_llm(TrajectoryView(t), MisbehaviorCategory::tool_call_failure, mock);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
  }
}

TEST(Classifier, BackendFailurePropagates) {
  auto t = fixtures::clean_session();
  try {
    classify_with_llm(TrajectoryView(t), MisbehaviorCategory::spec_drift_dnf, *unavailable_backend());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::backend_unavailable);
  }
}

// --- combined detection ----------------------------------------------------

TEST(Detection, CleanSessionHasNoFindings) {
  HeuristicMockBackend mock;
  auto fb = run_misbehavior_detection(fixtures::clean_session(), {}, &mock);
  EXPECT_FALSE(fb.misbehavior_detected);
  EXPECT_TRUE(fb.findings.empty());
}

TEST(Detection, FlagMatchesFindings) {
  HeuristicMockBackend mock;
  for (const auto& rec : fixtures::labeled_corpus()) {
    auto fb = run_misbehavior_detection(rec.trajectory, {}, &mock);
    EXPECT_EQ(fb.misbehavior_detected, !fb.findings.empty());
    EXPECT_EQ(fb.analyzed_upto, rec.trajectory.size());
    for (auto c : rec.labels) EXPECT_TRUE(fb.has(c)) << rec.trajectory.session_id();
    EXPECT_EQ(fb.findings.size(), rec.labels.size()) << rec.trajectory.session_id();
  }
}

TEST(Detection, LoopAndUnknownToolBothReported) {
  fixtures::Builder b("s", "Fix it.");
  b.repeat(3, "read_file", {{"path", "a.md"}}).call("revew_code", {{"mode", "thorough"}});
  auto fb = run_misbehavior_detection(b.build());
  EXPECT_TRUE(fb.has(MisbehaviorCategory::reasoning_infinite_loop));
  EXPECT_TRUE(fb.has(MisbehaviorCategory::tool_call_failure));
  EXPECT_EQ(fb.findings.size(), 2u);
}

TEST(Detection, CategoriesCanBeDisabled) {
  DetectionConfig cfg;
  cfg.categories = {MisbehaviorCategory::tool_call_failure};
  EXPECT_FALSE(run_misbehavior_detection(fixtures::loop_php_syntax(), cfg).misbehavior_detected);
}

TEST(Detection, LookbackForgetsOldLoops) {
  fixtures::Builder b("s", "Fix it.");
  b.repeat(3, "read_file", {{"path", "a.md"}})
      .call("bash", {{"command", "a"}})
      .call("bash", {{"command", "b"}})
      .call("read_file", {{"path", "b.md"}});
  DetectionConfig cfg;
  EXPECT_TRUE(run_misbehavior_detection(b.build(), cfg).misbehavior_detected);
  cfg.lookback_steps = 3;
  EXPECT_FALSE(run_misbehavior_detection(b.build(), cfg).misbehavior_detected);
}

TEST(Detection, SilentClassifierEqualsRulesOnly) {
  auto silent = constant_backend("VERDICT: no\nREASONING: nothing to report\n");
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    auto t = gen::random_trajectory(seed);
    auto rules = run_misbehavior_detection(t);
    auto both = run_misbehavior_detection(t, {}, silent.get());
    EXPECT_EQ(rules, both) << "seed " << seed;
    std::vector<Finding> expect;
    if (auto f = detect_loops(t)) expect.push_back(*f);
    if (auto f = detect_tool_call_failures(t)) expect.push_back(*f);
    EXPECT_EQ(rules.findings, expect) << "seed " << seed;
  }
}

TEST(Detection, UnavailableBackendDegradesUnlessRequired) {
  LogCapture logs;
  auto t = fixtures::loop_php_syntax();
  auto down = unavailable_backend();
  auto fb = run_misbehavior_detection(t, {}, down.get());
  EXPECT_TRUE(fb.has(MisbehaviorCategory::reasoning_infinite_loop));
  EXPECT_FALSE(logs.lines.empty());

  DetectionConfig strict;
  strict.require_semantic_classifiers = true;
  EXPECT_THROW(run_misbehavior_detection(t, strict, down.get()), Error);
  EXPECT_THROW(run_misbehavior_detection(t, strict, nullptr), Error);
}

// --- calibration -----------------------------------------------------------

namespace {

std::vector<LabeledTrajectory> loop_corpus(std::size_t labeled, std::size_t unlabeled, std::size_t clean) {
  std::vector<LabeledTrajectory> out;
  for (std::size_t i = 0; i < labeled; ++i) out.push_back({fixtures::loop_php_syntax(), {MisbehaviorCategory::reasoning_infinite_loop}});
  for (std::size_t i = 0; i < unlabeled; ++i) out.push_back({fixtures::loop_php_syntax(), {}});
  for (std::size_t i = 0; i < clean; ++i) out.push_back({fixtures::clean_session(), {}});
  return out;
}

}  // namespace

TEST(Calibration, EightOfTenPasses) {
  auto corpus = loop_corpus(8, 2, 3);
  auto report = calibrate(corpus, MisbehaviorCategory::reasoning_infinite_loop, nullptr);
  ASSERT_EQ(report.categories.size(), 1u);
  const auto& row = report.categories[0];
  EXPECT_EQ(row.true_positives, 8u);
  EXPECT_EQ(row.false_positives, 2u);
  EXPECT_EQ(row.true_negatives, 3u);
  EXPECT_DOUBLE_EQ(*row.precision, 0.8);
  EXPECT_DOUBLE_EQ(*row.recall, 1.0);
  EXPECT_TRUE(row.pass);
  EXPECT_TRUE(report.pass);
}

TEST(Calibration, SevenOfTenFails) {
  auto corpus = loop_corpus(7, 3, 0);
  auto report = calibrate(corpus, MisbehaviorCategory::reasoning_infinite_loop, nullptr);
  EXPECT_DOUBLE_EQ(*report.categories[0].precision, 0.7);
  EXPECT_FALSE(report.pass);
}

TEST(Calibration, GateArithmetic) {
  EXPECT_TRUE(meets_precision_gate(4, 1));
  EXPECT_FALSE(meets_precision_gate(79, 21));
  EXPECT_TRUE(meets_precision_gate(80, 20));
  EXPECT_FALSE(meets_precision_gate(0, 0));
}

TEST(Calibration, NoPredictionsMeansUndefinedPrecision) {
  auto corpus = loop_corpus(0, 0, 2);
  auto row = calibrate(corpus, MisbehaviorCategory::reasoning_infinite_loop, nullptr).categories[0];
  EXPECT_FALSE(row.precision);
  EXPECT_FALSE(row.recall);
  EXPECT_FALSE(row.pass);
}

TEST(Calibration, EmptyCorpus) {
  std::vector<LabeledTrajectory> none;
  try {
    calibrate(none, MisbehaviorCategory::tool_call_failure, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_corpus);
  }
}

TEST(Calibration, SemanticCategoryNeedsBackend) {
  auto corpus = loop_corpus(1, 0, 0);
  EXPECT_THROW(calibrate(corpus, MisbehaviorCategory::spec_drift_dnf, nullptr), Error);
}

TEST(Calibration, FixtureCorpusWithMock) {
  HeuristicMockBackend mock;
  std::vector<LabeledTrajectory> corpus;
  for (auto& rec : fixtures::labeled_corpus()) corpus.push_back({rec.trajectory, rec.labels});
  auto report = calibrate(corpus, {kAllCategories.begin(), kAllCategories.end()}, &mock);
  EXPECT_TRUE(report.pass);
  for (const auto& row : report.categories) {
    EXPECT_EQ(row.true_positives, 1u) << category_code(row.category);
    EXPECT_EQ(row.false_positives, 0u) << category_code(row.category);
  }
}
