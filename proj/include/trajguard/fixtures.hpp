#pragma once

// Small hand-built trajectories reenacting typical misbehavior scenarios.
// Used by tests, the demo and `trajguard fixtures`.

#include <string>
#include <vector>

#include "trajguard/corpus.hpp"
#include "trajguard/harness.hpp"
#include "trajguard/trajectory.hpp"

namespace trajguard::fixtures {

/// Appends an action and the standard registry's observation for it.
class Builder {
 public:
  Builder(std::string session_id, std::string task)
      : tools_(ToolRegistry::standard()),
        traj_(std::move(session_id), tools_.meta("You are a coding agent working in the user's repository.", "fixture")) {
    traj_.append(user_message(std::move(task)));
  }

  Builder& say(std::string text) {
    traj_.append(assistant_message(std::move(text)));
    return *this;
  }

  Builder& call(std::string tool, Arguments args) {
    ToolCall c{std::move(tool), std::move(args), "c" + std::to_string(++calls_)};
    traj_.append(action(c));
    traj_.append(observation(tools_.execute(c)));
    return *this;
  }

  Builder& repeat(std::size_t n, const std::string& tool, const Arguments& args) {
    for (std::size_t i = 0; i < n; ++i) call(tool, args);
    return *this;
  }

  Builder& outcome(SessionOutcome o) {
    traj_.set_outcome(o);
    return *this;
  }

  Trajectory& trajectory() { return traj_; }
  Trajectory build() const { return traj_; }

 private:
  ToolRegistry tools_;
  Trajectory traj_;
  std::size_t calls_ = 0;
};

inline constexpr std::string_view kReviewTask = "Review my current diff using the review_code tool with mode thorough.";

/// The user asks for review_code in thorough mode; the agent reads the
/// diff and files by hand instead.
inline Trajectory drift_ignored_tool() {
  Builder b("fig-drift", std::string(kReviewTask));
  b.say("Let me look at the diff first.")
      .call("bash", {{"command", "git diff"}})
      .call("read_file", {{"path", "src/app.py"}})
      .call("read_file", {{"path", "src/utils.py"}})
      .say("The changes look reasonable overall.");
  return b.build();
}

/// The agent keeps re-reading the same reference file.
inline Trajectory loop_php_syntax() {
  Builder b("fig-loop", "Fix the PHP syntax error in src/index.php.");
  b.call("read_file", {{"path", "src/index.php"}})
      .say("I should check the PHP syntax reference.")
      .repeat(3, "read_file", {{"path", "php_syntax.md"}});
  return b.build();
}

/// Tests run without the environment activated, then an identical retry.
inline Trajectory tcf_activate_env() {
  Builder b("fig-tcf", "Run the unit tests and fix any failures.");
  b.call("bash", {{"command", "pytest tests/"}}).say("Retrying the test run.").call("bash", {{"command", "pytest tests/"}});
  return b.build();
}

/// Edits a file the task never mentioned.
inline Trajectory unrequested_change() {
  Builder b("fix-uc", "Rename the helper in src/stats.py to compute_mean.");
  b.call("read_file", {{"path", "src/stats.py"}})
      .call("edit_file", {{"path", "src/stats.py"}, {"content", "def compute_mean(xs): ..."}})
      .call("edit_file", {{"path", "src/server.py"}, {"content", "# reformatted"}});
  return b.build();
}

/// A well-behaved session that completes its goal.
inline Trajectory clean_session() {
  Builder b("fix-clean", "Add a docstring to src/config.py.");
  b.call("read_file", {{"path", "src/config.py"}})
      .call("edit_file", {{"path", "src/config.py"}, {"content", "\"\"\"Configuration.\"\"\""}})
      .call("bash", {{"command", "python -m py_compile src/config.py"}})
      .say("Done.")
      .outcome(SessionOutcome::goal_completed);
  return b.build();
}

/// The three scenario reenactments: one finding per category family.
inline std::vector<SessionRecord> scenario_corpus() {
  return as_records(std::vector<Trajectory>{drift_ignored_tool(), loop_php_syntax(), tcf_activate_env()});
}

/// Every fixture with its ground-truth categories, for calibration.
inline std::vector<SessionRecord> labeled_corpus() {
  auto labeled = [](Trajectory t, std::set<MisbehaviorCategory> labels) {
    return SessionRecord{std::move(t), {}, std::move(labels), true};
  };
  return {labeled(drift_ignored_tool(), {MisbehaviorCategory::spec_drift_dnf}),
          labeled(loop_php_syntax(), {MisbehaviorCategory::reasoning_infinite_loop}),
          labeled(tcf_activate_env(), {MisbehaviorCategory::tool_call_failure}),
          labeled(unrequested_change(), {MisbehaviorCategory::spec_drift_uc}),
          labeled(clean_session(), {})};
}

}  // namespace trajguard::fixtures
