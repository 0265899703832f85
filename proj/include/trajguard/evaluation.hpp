#pragma once

// Recovery judging, recovery rates, prevalence, misbehavior rates, session
// metrics and the A/B experiment report.

#include <array>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajguard/detection.hpp"
#include "trajguard/error.hpp"
#include "trajguard/intervention.hpp"
#include "trajguard/log.hpp"
#include "trajguard/statistics.hpp"
#include "trajguard/taxonomy.hpp"
#include "trajguard/trajectory.hpp"

namespace trajguard {

inline constexpr std::size_t kJudgeWindowSteps = 15;

enum class Verdict { recovered, not_recovered };
enum class JudgeKind { oracle, llm };

inline std::string_view verdict_name(Verdict v) { return v == Verdict::recovered ? "recovered" : "not_recovered"; }
inline std::string_view judge_kind_name(JudgeKind k) { return k == JudgeKind::oracle ? "oracle" : "llm"; }

struct RecoveryVerdict {
  std::string intervention_id;
  MisbehaviorCategory category{};
  Verdict verdict = Verdict::not_recovered;
  std::string rationale;
  JudgeKind judge_kind = JudgeKind::oracle;
};

/// Up to 15 steps following the reminder(s) injected at the record's index.
inline StepWindow post_intervention_window(const Trajectory& traj, const InterventionRecord& rec,
                                           std::size_t steps = kJudgeWindowSteps) {
  auto start = std::min(rec.injected_at_index + 1, traj.size());
  return steps_after(traj, start, steps);
}

/// Rule-based judge for loop and tool-call-failure findings. Recovered only
/// when the offending pattern is absent from the post window and either the
/// full window exists or the session ended with its goal completed.
inline RecoveryVerdict judge_recovery_oracle(const InterventionRecord& rec, const Trajectory& traj,
                                             const LoopConfig& loops = {}) {
  const auto& finding = rec.finding();
  RecoveryVerdict v{rec.intervention_id, finding.category, Verdict::not_recovered, {}, JudgeKind::oracle};
  auto window = post_intervention_window(traj, rec);
  if (offending_pattern_recurs(finding, window.view, loops)) {
    v.rationale = "offending pattern recurred within " + std::to_string(window.steps) + " post-intervention steps";
    return v;
  }
  if (window.steps >= kJudgeWindowSteps) {
    v.verdict = Verdict::recovered;
    v.rationale = "pattern absent for the full " + std::to_string(kJudgeWindowSteps) + "-step window";
  } else if (window.reaches_end && traj.outcome() == SessionOutcome::goal_completed) {
    v.verdict = Verdict::recovered;
    v.rationale = "pattern absent and the session completed its goal after " + std::to_string(window.steps) + " steps";
  } else {
    v.rationale = "insufficient evidence: only " + std::to_string(window.steps) + " post-intervention steps (" +
                  std::string(outcome_name(traj.outcome())) + ")";
  }
  return v;
}

inline std::string build_judge_prompt(const InterventionRecord& rec, const Trajectory& traj) {
  const auto& finding = rec.finding();
  const auto* task = initial_task(traj);
  auto window = post_intervention_window(traj, rec);
  auto guidance = injected_guidance_text(traj, rec).value_or("");

  std::string p;
  p += "TASK TYPE: recovery judgment\n";
  p += "You are judging whether an autonomous coding agent recovered from a misbehavior after it received "
       "course-correction guidance. The agent recovered if the misbehavior does not recur in the steps after the "
       "guidance and the agent makes progress on the task. If the evidence is insufficient, answer not_recovered.\n\n";
  p += "ORIGINAL TASK: " + (task ? text::one_line(task->text) : std::string()) + "\n";
  p += "FINDING CATEGORY: " + std::string(category_code(finding.category)) + "\n";
  p += "FINDING PATTERN: " + std::string(pattern_name(finding.pattern)) + "\n";
  p += "OFFENDING CALL: " + (finding.offending_call ? render_call(*finding.offending_call) : std::string("none")) + "\n";
  p += "FINDING REASONING: " + text::one_line(finding.reasoning) + "\n";
  p += "GUIDANCE:\n" + guidance + "\nEND GUIDANCE\n";
  p += "BEFORE INTERVENTION:\n";
  for (std::size_t i = 0; i < std::min(rec.injected_at_index, traj.size()); ++i) p += serialize_event(i, traj[i]) + "\n";
  p += "END BEFORE INTERVENTION\n";
  p += "INTERVENTION STEP:\n";
  if (rec.injected_at_index < traj.size()) p += serialize_event(rec.injected_at_index, traj[rec.injected_at_index]) + "\n";
  p += "END INTERVENTION STEP\n";
  p += "AFTER INTERVENTION:\n";
  for (std::size_t i = window.view.begin_index(); i < window.view.end_index(); ++i) {
    p += serialize_event(i, traj[i]) + "\n";
  }
  p += "END AFTER INTERVENTION\n";
  p += "POST-WINDOW STEPS: " + std::to_string(window.steps) + "\n";
  p += "SESSION OUTCOME: " +
       (window.reaches_end ? std::string(outcome_name(traj.outcome())) : std::string("continues")) + "\n\n";
  p += "Answer in exactly this format:\n"
       "VERDICT: recovered|not_recovered\n"
       "REASONING: <why>\n";
  return p;
}

/// Parses `VERDICT: recovered|not_recovered` followed by `REASONING: ...`.
inline std::optional<std::pair<Verdict, std::string>> parse_judge_response(std::string_view response) {
  auto parsed = detail::parse_sections(response, [](const std::string& v) -> std::optional<std::string> {
    if (v == "recovered" || v == "not_recovered") return v;
    return std::nullopt;
  });
  if (!parsed) return std::nullopt;
  return std::make_pair(parsed->first == "recovered" ? Verdict::recovered : Verdict::not_recovered,
                        parsed->second.first);
}

/// Model-based judge. An unparseable reply counts as not recovered.
inline RecoveryVerdict judge_recovery_llm(const InterventionRecord& rec, const Trajectory& traj,
                                          const ClassifierBackend& backend) {
  RecoveryVerdict v{rec.intervention_id, rec.category(), Verdict::not_recovered, {}, JudgeKind::llm};
  auto reply = backend.classify(build_judge_prompt(rec, traj));
  auto parsed = parse_judge_response(reply);
  if (!parsed) {
    log(LogLevel::warn, "unparseable judge reply for " + rec.intervention_id);
    v.rationale = "unparseable judge reply";
    return v;
  }
  v.verdict = parsed->first;
  v.rationale = parsed->second;
  return v;
}

/// Oracle judge for rule-detectable findings, model judge for the rest.
inline RecoveryVerdict judge_recovery(const InterventionRecord& rec, const Trajectory& traj,
                                      const ClassifierBackend* backend, const LoopConfig& loops = {}) {
  if (rec.finding().pattern != PatternKind::semantic) return judge_recovery_oracle(rec, traj, loops);
  if (!backend) throw Error(ErrorCode::backend_unavailable, "semantic findings need a judge backend");
  return judge_recovery_llm(rec, traj, *backend);
}

// ---------------------------------------------------------------------------
// Rates

inline double percent(std::uint64_t part, std::uint64_t total) {
  return static_cast<double>(part) * 100.0 / static_cast<double>(total);
}

struct RecoveryRow {
  std::string label;
  std::size_t sample_size = 0;
  std::size_t recovered = 0;
  std::size_t not_recovered = 0;
  std::optional<double> rate_percent;  // undefined for an empty row
};

struct RecoveryStats {
  std::vector<RecoveryRow> rows;  // one per category family
  RecoveryRow overall;
};

inline RecoveryRow recovery_row(std::string label, std::size_t recovered, std::size_t not_recovered) {
  RecoveryRow r{std::move(label), recovered + not_recovered, recovered, not_recovered, std::nullopt};
  if (r.sample_size > 0) r.rate_percent = percent(recovered, r.sample_size);
  return r;
}

inline RecoveryStats recovery_rate(std::span<const RecoveryVerdict> verdicts) {
  if (verdicts.empty()) throw Error(ErrorCode::empty_sample, "no verdicts to aggregate");
  std::map<CategoryFamily, std::pair<std::size_t, std::size_t>> counts;
  std::size_t rec = 0;
  for (const auto& v : verdicts) {
    auto& c = counts[family_of(v.category)];
    if (v.verdict == Verdict::recovered) {
      ++c.first;
      ++rec;
    } else {
      ++c.second;
    }
  }
  RecoveryStats stats;
  for (auto fam : kAllFamilies) {
    auto [r, n] = counts[fam];
    stats.rows.push_back(recovery_row(std::string(family_name(fam)), r, n));
  }
  stats.overall = recovery_row("Overall", rec, verdicts.size() - rec);
  return stats;
}

struct PrevalenceRow {
  std::string label;
  std::size_t count = 0;
  double percent = 0.0;
};

struct PrevalenceTable {
  std::vector<PrevalenceRow> rows;  // Loops, DNF, UC, Tool Call Failure
  std::size_t misbehaving = 0;
  std::size_t total = 0;
  double overall_percent = 0.0;
};

inline constexpr std::array<MisbehaviorCategory, 4> kPrevalenceOrder = {
    MisbehaviorCategory::reasoning_infinite_loop, MisbehaviorCategory::spec_drift_dnf,
    MisbehaviorCategory::spec_drift_uc, MisbehaviorCategory::tool_call_failure};

inline PrevalenceTable prevalence(const std::map<MisbehaviorCategory, std::size_t>& detected, std::size_t misbehaving,
                                  std::size_t total) {
  if (total == 0) throw Error(ErrorCode::zero_total, "prevalence over zero trajectories");
  PrevalenceTable t;
  t.total = total;
  t.misbehaving = misbehaving;
  t.overall_percent = percent(misbehaving, total);
  for (auto c : kPrevalenceOrder) {
    auto it = detected.find(c);
    std::size_t n = it == detected.end() ? 0 : it->second;
    t.rows.push_back(PrevalenceRow{std::string(category_label(c)), n, percent(n, total)});
  }
  return t;
}

/// One Feedback per trajectory; a trajectory counts once per category.
inline PrevalenceTable prevalence(std::span<const Feedback> per_trajectory) {
  std::map<MisbehaviorCategory, std::size_t> detected;
  std::size_t misbehaving = 0;
  for (const auto& fb : per_trajectory) {
    std::set<MisbehaviorCategory> seen;
    for (const auto& f : fb.findings) seen.insert(f.category);
    for (auto c : seen) ++detected[c];
    if (!seen.empty()) ++misbehaving;
  }
  return prevalence(detected, misbehaving, per_trajectory.size());
}

inline double misbehavior_rate(std::uint64_t flagged, std::uint64_t total) {
  if (total == 0) throw Error(ErrorCode::zero_total, "misbehavior rate over zero invocations");
  if (flagged > total) throw Error(ErrorCode::invalid_argument, "flagged invocations exceed total");
  return percent(flagged, total);
}

// ---------------------------------------------------------------------------
// Session metrics

struct SessionMetrics {
  std::uint64_t tokens_total = 0;
  std::size_t steps = 0;
  std::size_t tool_calls = 0;
  std::size_t tool_call_failures = 0;
  /// Proxy: user messages after the initial task.
  std::size_t engineer_interventions = 0;
  std::size_t interventions_injected = 0;

  friend bool operator==(const SessionMetrics&, const SessionMetrics&) = default;
};

inline SessionMetrics session_metrics(const Trajectory& traj, std::span<const InterventionRecord> records = {}) {
  SessionMetrics m;
  bool first_user = true;
  for (const auto& e : traj.events()) {
    m.tokens_total += token_count(e);
    if (std::holds_alternative<Action>(e)) ++m.tool_calls;
    if (const auto* o = event_as<Observation>(e)) {
      ++m.steps;
      if (o->result.status == ResultStatus::error) ++m.tool_call_failures;
    }
    if (std::holds_alternative<UserMessage>(e)) {
      if (!first_user) ++m.engineer_interventions;
      first_user = false;
    }
  }
  m.interventions_injected = records.size();
  return m;
}

// ---------------------------------------------------------------------------
// A/B report

struct ReportRow {
  std::string metric;
  double control = 0.0;
  double treatment = 0.0;
  std::optional<double> delta_percent;  // undefined against a zero baseline
  ZTestResult test;

  std::string stars() const {
    if (test.p_two_sided < 0.01) return "**";
    if (test.p_two_sided < 0.05) return "*";
    return "";
  }
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  std::size_t control_sessions = 0;
  std::size_t treatment_sessions = 0;
};

inline std::optional<double> safe_delta(double control, double treatment) {
  if (control == 0.0) {
    if (treatment == 0.0) return 0.0;
    return std::nullopt;
  }
  return relative_change_percent(control, treatment);
}

/// Failure rate of tool calls, the three per-session means, and their tests.
/// Execution time is measured in agent steps.
inline ExperimentReport experiment_report(std::span<const SessionMetrics> control,
                                          std::span<const SessionMetrics> treatment) {
  if (control.empty() || treatment.empty()) throw Error(ErrorCode::empty_arm, "both arms need sessions");
  ExperimentReport rep;
  rep.control_sessions = control.size();
  rep.treatment_sessions = treatment.size();

  std::uint64_t cf = 0, cc = 0, tf = 0, tc = 0;
  for (const auto& m : control) {
    cf += m.tool_call_failures;
    cc += m.tool_calls;
  }
  for (const auto& m : treatment) {
    tf += m.tool_call_failures;
    tc += m.tool_calls;
  }
  ReportRow failures;
  failures.metric = "Tool Call Failures";
  failures.control = cc ? percent(cf, cc) : 0.0;
  failures.treatment = tc ? percent(tf, tc) : 0.0;
  failures.delta_percent = safe_delta(failures.control, failures.treatment);
  failures.test = (cc && tc) ? two_proportion_z_test(tf, tc, cf, cc) : make_z_result(0.0);
  rep.rows.push_back(failures);

  auto mean_row = [&](std::string name, auto getter) {
    std::vector<double> a, b;
    for (const auto& m : control) a.push_back(static_cast<double>(getter(m)));
    for (const auto& m : treatment) b.push_back(static_cast<double>(getter(m)));
    ReportRow r;
    r.metric = std::move(name);
    r.control = summarize(a).mean;
    r.treatment = summarize(b).mean;
    r.delta_percent = safe_delta(r.control, r.treatment);
    r.test = two_sample_mean_z_test(b, a);
    rep.rows.push_back(r);
  };
  mean_row("Tokens per Session", [](const SessionMetrics& m) { return m.tokens_total; });
  mean_row("Engineer Interventions per Session", [](const SessionMetrics& m) { return m.engineer_interventions; });
  mean_row("Agent Execution Time per Session (steps)", [](const SessionMetrics& m) { return m.steps; });
  return rep;
}

}  // namespace trajguard
