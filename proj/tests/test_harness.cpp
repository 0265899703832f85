#include <gtest/gtest.h>

#include "trajguard/corpus.hpp"
#include "trajguard/harness.hpp"
#include "trajguard/report.hpp"

using namespace trajguard;
using MC = MisbehaviorCategory;

namespace {

SessionResult run(BehaviorKind kind, SessionMode mode, double obedience = 1.0,
                  FumbleMode fumble = FumbleMode::missing_param, std::uint64_t seed = 1) {
  SessionConfig cfg;
  cfg.mode = mode;
  cfg.seed = seed;
  auto policy = scripted_policy({kind, obedience, fumble});
  return run_session(*policy, ToolRegistry::standard(), cfg);
}

std::size_t reminders(const Trajectory& t) {
  std::size_t n = 0;
  for (const auto& e : t.events()) n += is_reminder(e);
  return n;
}

bool used_tool(const Trajectory& t, std::string_view tool) {
  for (const auto& e : t.events()) {
    if (const auto* a = event_as<Action>(e); a && a->call.tool_name == tool) return true;
  }
  return false;
}

std::string arm_text(const ArmResult& arm) {
  std::vector<SessionRecord> recs;
  for (const auto& s : arm.sessions) recs.push_back({s.trajectory, s.interventions, {}, false});
  return corpus_to_string(recs);
}

const ExperimentReport& mixed_report() {
  static const ExperimentReport rep = [] {
    SessionConfig cfg;
    auto r = run_experiment(PopulationSpec::mixed(300, 0.5, 0.9), cfg, cfg, 3);
    return experiment_report(r.control.metrics(), r.treatment.metrics());
  }();
  return rep;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tool registry

TEST(ToolRegistry, RejectedCallsBecomeErrorResults) {
  auto tools = ToolRegistry::standard();
  auto unknown = tools.execute({"grep", {{"pattern", "x"}}, "c1"});
  EXPECT_EQ(unknown.status, ResultStatus::error);
  EXPECT_EQ(unknown.error_kind, ToolErrorKind::unknown_tool);
  EXPECT_NE(unknown.payload.find("Available tools: bash, edit_file, read_file, review_code"), std::string::npos);

  auto missing = tools.execute({"review_code", {{"target", "src"}}, "c2"});
  EXPECT_EQ(missing.error_kind, ToolErrorKind::missing_param);
  EXPECT_NE(missing.payload.find("'mode'"), std::string::npos);

  auto bad_value = tools.execute({"review_code", {{"mode", "deep"}}, "c3"});
  EXPECT_EQ(bad_value.error_kind, ToolErrorKind::invalid_param);

  auto extra = tools.execute({"read_file", {{"path", "a"}, {"lines", "1-3"}}, "c4"});
  EXPECT_EQ(extra.error_kind, ToolErrorKind::invalid_param);

  auto tests = tools.execute({"bash", {{"command", "pytest tests/"}}, "c5"});
  EXPECT_EQ(tests.error_kind, ToolErrorKind::invalid_param);
  EXPECT_NE(tests.payload.find("activate.sh"), std::string::npos);
  EXPECT_EQ(tests.call_id, "c5");
}

TEST(ToolRegistry, ValidCallsSucceed) {
  auto tools = ToolRegistry::standard();
  auto tests = tools.execute({"bash", {{"command", "source activate.sh && pytest tests/"}}, "c1"});
  EXPECT_EQ(tests.status, ResultStatus::ok);
  EXPECT_EQ(tests.payload, "12 passed in 0.84s");
  auto review = tools.execute({"review_code", {{"mode", "thorough"}}, "c2"});
  EXPECT_EQ(review.status, ResultStatus::ok);
  EXPECT_NE(review.payload.find("Review (thorough) of current diff"), std::string::npos);
  // simulated files are stable
  EXPECT_EQ(tools.execute({"read_file", {{"path", "x.py"}}, "a"}).payload,
            tools.execute({"read_file", {{"path", "x.py"}}, "b"}).payload);
}

TEST(ToolRegistry, UndeclaredRequiredParameter) {
  ToolRegistry r;
  try {
    r.add(SimTool{ToolSignature{"t", {"a"}, {"b"}}, {}, [](const ToolCall&) { return std::string(); }});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_config);
  }
}

// ---------------------------------------------------------------------------
// Scripted behaviors

TEST(Looper, ControlLoopsUntilTheStepBudget) {
  auto s = run(BehaviorKind::looper, SessionMode::control);
  EXPECT_EQ(reminders(s.trajectory), 0u);
  EXPECT_TRUE(s.interventions.empty());
  EXPECT_EQ(s.trajectory.outcome(), SessionOutcome::max_steps);
  EXPECT_EQ(s.metrics.steps, 30u);
  EXPECT_EQ(s.metrics.engineer_interventions, 1u);
  EXPECT_GT(s.observer.flagged, 0u);  // the observer still runs, nothing is injected
}

TEST(Looper, TreatmentRecoversAfterTheReminder) {
  auto s = run(BehaviorKind::looper, SessionMode::treatment);
  ASSERT_FALSE(s.interventions.empty());
  EXPECT_EQ(s.interventions[0].category(), MC::reasoning_infinite_loop);
  EXPECT_EQ(s.trajectory.outcome(), SessionOutcome::goal_completed);
  EXPECT_TRUE(used_tool(s.trajectory, "edit_file"));
  EXPECT_EQ(s.metrics.engineer_interventions, 0u);
  EXPECT_LT(s.metrics.steps, 15u);
}

TEST(Drifter, ControlGivesUpWithoutTheRequestedTool) {
  auto s = run(BehaviorKind::drifter, SessionMode::control);
  EXPECT_FALSE(used_tool(s.trajectory, "review_code"));
  EXPECT_EQ(s.trajectory.outcome(), SessionOutcome::gave_up);
  EXPECT_EQ(s.metrics.steps, 8u);
}

TEST(Drifter, TreatmentSwitchesToTheRequestedTool) {
  auto s = run(BehaviorKind::drifter, SessionMode::treatment);
  ASSERT_FALSE(s.interventions.empty());
  EXPECT_EQ(s.interventions[0].category(), MC::spec_drift_dnf);
  EXPECT_TRUE(used_tool(s.trajectory, "review_code"));
  EXPECT_EQ(s.trajectory.outcome(), SessionOutcome::goal_completed);
}

TEST(ToolFumbler, BothModesFailThenRecover) {
  for (auto mode : {FumbleMode::missing_param, FumbleMode::runtime}) {
    auto control = run(BehaviorKind::tool_fumbler, SessionMode::control, 1.0, mode);
    EXPECT_EQ(control.trajectory.outcome(), SessionOutcome::gave_up) << fumble_mode_name(mode);
    EXPECT_EQ(control.metrics.tool_call_failures, ToolFumblerPolicy::kAttempts);

    auto treated = run(BehaviorKind::tool_fumbler, SessionMode::treatment, 1.0, mode);
    ASSERT_FALSE(treated.interventions.empty()) << fumble_mode_name(mode);
    // an identical failing retry is also a loop; a TCF finding must be among them
    EXPECT_TRUE(std::any_of(treated.interventions.begin(), treated.interventions.end(),
                            [](const InterventionRecord& r) { return r.category() == MC::tool_call_failure; }));
    EXPECT_EQ(treated.trajectory.outcome(), SessionOutcome::goal_completed);
    EXPECT_LT(treated.metrics.tool_call_failures, control.metrics.tool_call_failures);
  }
}

TEST(ToolFumbler, HonoredRetryIncludesTheMissingParameter) {
  auto s = run(BehaviorKind::tool_fumbler, SessionMode::treatment);
  const auto& t = s.trajectory;
  auto after = s.interventions.back().injected_at_index;
  const Action* retry = nullptr;
  std::size_t i = after;
  for (; i < t.size() && !retry; ++i) retry = event_as<Action>(t[i]);
  ASSERT_NE(retry, nullptr);
  EXPECT_EQ(retry->call.tool_name, "edit_file");
  EXPECT_TRUE(retry->call.arguments.count("content"));
  const auto* result = event_as<Observation>(t[i]);
  ASSERT_NE(result, nullptr);
  EXPECT_EQ(result->result.status, ResultStatus::ok);
}

TEST(LooperProperty, ObedientLooperStopsWithinOneStep) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto s = run(BehaviorKind::looper, SessionMode::treatment, 1.0, FumbleMode::missing_param, seed);
    ASSERT_FALSE(s.interventions.empty());
    const auto& t = s.trajectory;
    for (std::size_t i = s.interventions.front().injected_at_index; i < t.size(); ++i) {
      if (const auto* a = event_as<Action>(t[i])) {
        EXPECT_NE(render_call(a->call), "read_file(path=\"php_syntax.md\")") << "seed " << seed;
      }
    }
  }
}

TEST(Compliant, NeverFlagged) {
  SessionConfig cfg;
  cfg.observer.k = 1;
  PopulationSpec spec{{{{BehaviorKind::compliant, 1.0, FumbleMode::missing_param}, 100}}};
  auto r = run_experiment(spec, cfg, cfg, 5);
  for (const auto* a : {&r.control, &r.treatment}) {
    EXPECT_GT(a->invocations, 0u);
    EXPECT_EQ(misbehavior_rate(a->flagged, a->invocations), 0.0);
  }
  for (const auto& s : r.treatment.sessions) {
    EXPECT_TRUE(s.interventions.empty());
    EXPECT_EQ(s.trajectory.outcome(), SessionOutcome::goal_completed);
    EXPECT_EQ(s.metrics.steps, 6u);
  }
}

TEST(Obedience, ZeroMeansRemindersAreIgnored) {
  auto control = run(BehaviorKind::looper, SessionMode::control, 0.0);
  auto treated = run(BehaviorKind::looper, SessionMode::treatment, 0.0);
  EXPECT_GT(treated.interventions.size(), 1u);
  EXPECT_EQ(treated.trajectory.outcome(), SessionOutcome::max_steps);
  EXPECT_EQ(treated.metrics.steps, control.metrics.steps);
  EXPECT_EQ(treated.metrics.tool_call_failures, control.metrics.tool_call_failures);
}

TEST(Obedience, PartialObedienceIsSeeded) {
  std::set<std::size_t> first_recovery;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto a = run(BehaviorKind::looper, SessionMode::treatment, 0.5, FumbleMode::missing_param, seed);
    auto b = run(BehaviorKind::looper, SessionMode::treatment, 0.5, FumbleMode::missing_param, seed);
    EXPECT_EQ(a.trajectory, b.trajectory);
    first_recovery.insert(a.metrics.steps);
  }
  EXPECT_GT(first_recovery.size(), 1u);  // the draws differ across seeds
}

// ---------------------------------------------------------------------------
// Session loop

TEST(Session, HooksRunAroundEveryStep) {
  std::vector<std::size_t> before, after;
  SessionHooks hooks{[&](std::size_t s) { before.push_back(s); }, [&](std::size_t s) { after.push_back(s); }};
  SessionConfig cfg;
  CompliantPolicy policy(ScriptedBehavior{});
  run_session(policy, ToolRegistry::standard(), cfg, simulation_analysis(cfg.observer), nullptr,
              default_template_store(), hooks);
  EXPECT_EQ(after, (std::vector<std::size_t>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(before, (std::vector<std::size_t>{1, 2, 3, 4, 5, 6, 7}));  // step 7 terminates
}

TEST(Session, InjectionsLandOnStepBoundaries) {
  auto s = run(BehaviorKind::looper, SessionMode::treatment, 0.0);
  ASSERT_EQ(s.injection_steps.size(), s.interventions.size());
  for (std::size_t i = 0; i < s.interventions.size(); ++i) {
    const auto& rec = s.interventions[i];
    EXPECT_EQ(steps_before(s.trajectory, rec.injected_at_index), s.injection_steps[i]);
    EXPECT_TRUE(std::holds_alternative<Observation>(s.trajectory[rec.injected_at_index - 1]) ||
                is_reminder(s.trajectory[rec.injected_at_index - 1]));
    if (i > 0) {
      EXPECT_GE(s.injection_steps[i], s.injection_steps[i - 1]);
    }
  }
}

TEST(Session, InvalidConfig) {
  SessionConfig cfg;
  cfg.max_steps = 0;
  CompliantPolicy policy(ScriptedBehavior{});
  EXPECT_THROW(run_session(policy, ToolRegistry::standard(), cfg), Error);
  cfg.max_steps = 5;
  cfg.observer.k = 0;
  EXPECT_THROW(run_session(policy, ToolRegistry::standard(), cfg), Error);
  try {
    LooperPolicy bad({BehaviorKind::looper, 1.5, FumbleMode::missing_param});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_config);
  }
}

TEST(Session, NamesRoundTrip) {
  for (auto k : {BehaviorKind::looper, BehaviorKind::drifter, BehaviorKind::tool_fumbler, BehaviorKind::compliant}) {
    EXPECT_EQ(parse_behavior(behavior_name(k)), k);
  }
  for (auto m : {SessionMode::control, SessionMode::treatment}) EXPECT_EQ(parse_mode(mode_name(m)), m);
  for (auto f : {FumbleMode::missing_param, FumbleMode::runtime}) EXPECT_EQ(parse_fumble_mode(fumble_mode_name(f)), f);
  EXPECT_THROW(parse_behavior("sleeper"), Error);
  EXPECT_EQ(session_name(7), "s0007");
  EXPECT_EQ(session_name(12345), "s12345");
}

// ---------------------------------------------------------------------------
// Experiments

TEST(Population, MixedSplitsMisbehaviorEvenly) {
  auto spec = PopulationSpec::mixed(10, 0.3, 0.8);
  ASSERT_EQ(spec.entries.size(), 4u);
  EXPECT_EQ(spec.entries[0].count, 1u);
  EXPECT_EQ(spec.entries[1].count, 1u);
  EXPECT_EQ(spec.entries[2].count, 1u);
  EXPECT_EQ(spec.entries[3].count, 7u);
  EXPECT_EQ(spec.total(), 10u);
  EXPECT_EQ(PopulationSpec::mixed(10, 0.5, 1.0).entries[0].count, 3u);  // remainder goes to loopers
  auto a = spec.assignment(4);
  EXPECT_EQ(a.size(), 10u);
  EXPECT_EQ(a, spec.assignment(4));
  EXPECT_THROW(PopulationSpec{}.validate(), Error);
}

TEST(Experiment, DeterministicForASeed) {
  SessionConfig cfg;
  auto spec = PopulationSpec::mixed(20, 0.5, 0.7);
  auto a = run_experiment(spec, cfg, cfg, 11);
  auto b = run_experiment(spec, cfg, cfg, 11);
  EXPECT_EQ(arm_text(a.control), arm_text(b.control));
  EXPECT_EQ(arm_text(a.treatment), arm_text(b.treatment));
  EXPECT_EQ(a.treatment.flagged, b.treatment.flagged);
  auto c = run_experiment(spec, cfg, cfg, 12);
  EXPECT_NE(arm_text(a.treatment), arm_text(c.treatment));
}

TEST(Experiment, ArmsArePairedAndOnlyTreatmentIntervenes) {
  SessionConfig cfg;
  auto r = run_experiment(PopulationSpec::mixed(20, 0.5, 0.9), cfg, cfg, 2);
  ASSERT_EQ(r.control.sessions.size(), r.treatment.sessions.size());
  std::size_t injected = 0;
  for (std::size_t i = 0; i < r.control.sessions.size(); ++i) {
    const auto& c = r.control.sessions[i];
    const auto& t = r.treatment.sessions[i];
    EXPECT_EQ(c.trajectory.session_id(), t.trajectory.session_id());
    EXPECT_EQ(initial_task(c.trajectory)->text, initial_task(t.trajectory)->text);
    EXPECT_EQ(reminders(c.trajectory), 0u);
    EXPECT_TRUE(c.interventions.empty());
    injected += t.interventions.size();
  }
  EXPECT_GT(injected, 0u);
}

TEST(Experiment, TreatmentReducesTokensStepsAndFollowUps) {
  const auto& rep = mixed_report();
  EXPECT_LT(rep.rows[1].treatment, rep.rows[1].control);
  EXPECT_LT(rep.rows[2].treatment, rep.rows[2].control);
  EXPECT_LT(rep.rows[3].treatment, rep.rows[3].control);
  EXPECT_LT(rep.rows[1].test.p_two_sided, 0.05);
}

TEST(Experiment, NullEffectWhenRemindersAreIgnored) {
  SessionConfig cfg;
  auto r = run_experiment(PopulationSpec::mixed(60, 0.5, 0.0), cfg, cfg, 8);
  auto mr = compare_misbehavior_rates(r.control.flagged, r.control.invocations, r.treatment.flagged,
                                      r.treatment.invocations);
  EXPECT_NEAR(mr.treatment_rate, mr.control_rate, 1.0);
  EXPECT_GT(mr.test.p_two_sided, 0.05);

  auto rep = experiment_report(r.control.metrics(), r.treatment.metrics());
  for (std::size_t i : {0u, 2u, 3u}) {
    EXPECT_EQ(*rep.rows[i].delta_percent, 0.0) << rep.rows[i].metric;
    EXPECT_EQ(rep.rows[i].stars(), "") << rep.rows[i].metric;
  }
  // the only token difference is the reminders themselves
  std::uint64_t reminder_tokens = 0, control_tokens = 0, treatment_tokens = 0;
  for (std::size_t i = 0; i < r.control.sessions.size(); ++i) {
    control_tokens += r.control.sessions[i].metrics.tokens_total;
    treatment_tokens += r.treatment.sessions[i].metrics.tokens_total;
    for (const auto& e : r.treatment.sessions[i].trajectory.events()) {
      if (is_reminder(e)) reminder_tokens += token_count(e);
    }
  }
  EXPECT_GT(reminder_tokens, 0u);
  EXPECT_EQ(treatment_tokens, control_tokens + reminder_tokens);
}
