#pragma once

// ReAct-style session loop with simulated tools and scripted agents that
// reenact looping, instruction drift and tool misuse.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trajguard/backends.hpp"
#include "trajguard/detection.hpp"
#include "trajguard/error.hpp"
#include "trajguard/evaluation.hpp"
#include "trajguard/intervention.hpp"
#include "trajguard/observer.hpp"
#include "trajguard/random.hpp"
#include "trajguard/taxonomy.hpp"
#include "trajguard/trajectory.hpp"

namespace trajguard {

// ---------------------------------------------------------------------------
// Simulated tools

/// Returns an error message when the argument is rejected.
using ParamValidator = std::function<std::optional<std::string>(const ArgValue&)>;

struct SimTool {
  ToolSignature signature;
  std::map<std::string, ParamValidator> validators;
  /// Deterministic behavior for validated arguments.
  std::function<std::string(const ToolCall&)> run;
};

inline ParamValidator nonempty_string() {
  return [](const ArgValue& v) -> std::optional<std::string> {
    const auto* s = std::get_if<std::string>(&v);
    if (!s) return "expected a string";
    if (text::trim(*s).empty()) return "must not be empty";
    return std::nullopt;
  };
}

inline ParamValidator any_string() {
  return [](const ArgValue& v) -> std::optional<std::string> {
    if (!std::holds_alternative<std::string>(v)) return "expected a string";
    return std::nullopt;
  };
}

inline ParamValidator one_of(std::vector<std::string> allowed) {
  return [allowed = std::move(allowed)](const ArgValue& v) -> std::optional<std::string> {
    const auto* s = std::get_if<std::string>(&v);
    if (s && std::find(allowed.begin(), allowed.end(), *s) != allowed.end()) return std::nullopt;
    return "expected one of: " + text::join(allowed, ", ");
  };
}

class ToolRegistry {
 public:
  void add(SimTool tool) {
    for (const auto& p : tool.signature.required_params) {
      if (!tool.signature.params.count(p)) {
        throw Error(ErrorCode::invalid_config, "required parameter '" + p + "' of '" + tool.signature.name +
                                                   "' is not declared");
      }
    }
    auto name = tool.signature.name;
    tools_[name] = std::move(tool);
  }

  const SimTool* find(std::string_view name) const {
    auto it = tools_.find(std::string(name));
    return it == tools_.end() ? nullptr : &it->second;
  }

  std::vector<ToolSignature> signatures() const {
    std::vector<ToolSignature> out;
    for (const auto& [_, t] : tools_) out.push_back(t.signature);
    return out;
  }

  SessionMeta meta(std::string system_prompt, std::string model_tag) const {
    return SessionMeta{std::move(system_prompt), signatures(), std::move(model_tag)};
  }

  /// Runs a call. Rejected calls become error results, never exceptions.
  ToolResult execute(const ToolCall& call) const {
    const auto* tool = find(call.tool_name);
    if (!tool) {
      std::vector<std::string> names;
      for (const auto& [n, _] : tools_) names.push_back(n);
      return error_result(call.call_id, ToolErrorKind::unknown_tool,
                          "Tool '" + call.tool_name + "' not found. Available tools: " + text::join(names, ", "));
    }
    for (const auto& req : tool->signature.required_params) {
      if (!call.arguments.count(req)) {
        return error_result(call.call_id, ToolErrorKind::missing_param,
                            "Missing required parameter '" + req + "' for " + call.tool_name + ".");
      }
    }
    for (const auto& [key, value] : call.arguments) {
      if (!tool->signature.params.count(key)) {
        return error_result(call.call_id, ToolErrorKind::invalid_param,
                            "Unexpected parameter '" + key + "' for " + call.tool_name + ".");
      }
      auto v = tool->validators.find(key);
      if (v == tool->validators.end()) continue;
      if (auto problem = v->second(value)) {
        return error_result(call.call_id, ToolErrorKind::invalid_param,
                            "Invalid value for '" + key + "': " + *problem);
      }
    }
    return ok_result(call.call_id, tool->run(call));
  }

  /// read_file, bash, review_code and edit_file.
  static ToolRegistry standard() {
    ToolRegistry r;
    r.add(SimTool{ToolSignature{"read_file", {"path"}, {"path"}},
                  {{"path", nonempty_string()}},
                  [](const ToolCall& c) { return simulated_file(std::get<std::string>(c.arguments.at("path"))); }});
    r.add(SimTool{ToolSignature{"bash", {"command"}, {"command"}},
                  {{"command", [](const ArgValue& v) -> std::optional<std::string> {
                      if (auto problem = nonempty_string()(v)) return problem;
                      const auto& cmd = std::get<std::string>(v);
                      if (runs_tests(cmd) && cmd.find("activate.sh") == std::string::npos) {
                        return "the test environment is not active; run `source activate.sh` before executing tests";
                      }
                      return std::nullopt;
                    }}},
                  [](const ToolCall& c) { return simulated_shell(std::get<std::string>(c.arguments.at("command"))); }});
    r.add(SimTool{ToolSignature{"review_code", {"mode", "target"}, {"mode"}},
                  {{"mode", one_of({"quick", "thorough"})}, {"target", nonempty_string()}},
                  [](const ToolCall& c) {
                    auto mode = std::get<std::string>(c.arguments.at("mode"));
                    auto it = c.arguments.find("target");
                    std::string target = it == c.arguments.end() ? "current diff" : std::get<std::string>(it->second);
                    return "Review (" + mode + ") of " + target +
                           ":\n- src/app.py:42 unchecked None return\n- src/utils.py:7 unused import";
                  }});
    r.add(SimTool{ToolSignature{"edit_file", {"path", "content"}, {"path", "content"}},
                  {{"path", nonempty_string()}, {"content", any_string()}},
                  [](const ToolCall& c) {
                    const auto& content = std::get<std::string>(c.arguments.at("content"));
                    return "Edited " + std::get<std::string>(c.arguments.at("path")) + " (" +
                           std::to_string(content.size()) + " bytes)";
                  }});
    return r;
  }

  static bool runs_tests(std::string_view cmd) {
    for (std::string_view t : {"pytest", "npm test", "make test", "phpunit"}) {
      if (cmd.find(t) != std::string_view::npos) return true;
    }
    return false;
  }

  static std::string simulated_file(const std::string& path) {
    if (path == "php_syntax.md") {
      return "# PHP syntax notes\nEvery statement ends with a semicolon.\nStrings use single or double quotes.";
    }
    if (path == "src/index.php") return "<?php\n$name = 'world'\necho \"Hello, $name\";\n";
    if (path == "src/config.py") return "DB_HOST = 'localhost'\nDB_TIMEOUT = 10\n";
    auto h = hash_string(path);
    std::string out = "# " + path + "\n";
    for (int i = 0; i < 3; ++i) out += "line " + std::to_string(i + 1) + ": " + std::to_string(splitmix64(h + i) % 1000) + "\n";
    return out;
  }

  static std::string simulated_shell(const std::string& cmd) {
    if (cmd.find("php -l") != std::string::npos) return "No syntax errors detected";
    if (runs_tests(cmd)) return "12 passed in 0.84s";
    if (cmd.find("git diff") != std::string::npos) {
      return "diff --git a/src/app.py b/src/app.py\n+    return fetch(user_id)";
    }
    return "$ " + cmd + "\n(exit 0)";
  }

 private:
  std::map<std::string, SimTool> tools_;
};

// ---------------------------------------------------------------------------
// Agent policies

struct PolicyDecision {
  std::string message;
  std::optional<ToolCall> call;  // call_id is assigned by the harness
  bool terminate = false;
  bool goal_completed = false;
};

/// Decides the next move from the trajectory so far (reminders included).
/// Implementations must be pure functions of their inputs.
class AgentPolicy {
 public:
  virtual ~AgentPolicy() = default;
  virtual std::string task() const = 0;
  virtual PolicyDecision next(const Trajectory& traj, const SessionMeta& meta, const SeededRandom& rng) const = 0;
  virtual std::string name() const = 0;
};

enum class BehaviorKind { looper, drifter, tool_fumbler, compliant };
enum class FumbleMode { missing_param, runtime };

inline std::string_view behavior_name(BehaviorKind k) {
  switch (k) {
    case BehaviorKind::looper: return "looper";
    case BehaviorKind::drifter: return "drifter";
    case BehaviorKind::tool_fumbler: return "tool_fumbler";
    case BehaviorKind::compliant: return "compliant";
  }
  return "compliant";
}

inline BehaviorKind parse_behavior(std::string_view s) {
  for (auto k : {BehaviorKind::looper, BehaviorKind::drifter, BehaviorKind::tool_fumbler, BehaviorKind::compliant}) {
    if (behavior_name(k) == s) return k;
  }
  throw Error(ErrorCode::invalid_config, "unknown behavior '" + std::string(s) + "'");
}

inline std::string_view fumble_mode_name(FumbleMode m) { return m == FumbleMode::runtime ? "runtime" : "missing_param"; }

inline FumbleMode parse_fumble_mode(std::string_view s) {
  if (s == "runtime") return FumbleMode::runtime;
  if (s == "missing_param") return FumbleMode::missing_param;
  throw Error(ErrorCode::invalid_config, "unknown fumble mode '" + std::string(s) + "'");
}

struct ScriptedBehavior {
  BehaviorKind kind = BehaviorKind::compliant;
  double obedience = 1.0;  // probability that a reminder delivery is honored
  FumbleMode fumble = FumbleMode::missing_param;

  void validate() const {
    if (!(obedience >= 0.0 && obedience <= 1.0)) {
      throw Error(ErrorCode::invalid_config, "obedience must be within [0, 1]");
    }
  }
  friend bool operator==(const ScriptedBehavior&, const ScriptedBehavior&) = default;
};

namespace detail {

inline ToolCall make_call(std::string tool, Arguments args) { return ToolCall{std::move(tool), std::move(args), {}}; }

inline PolicyDecision act(std::string message, ToolCall call) {
  return PolicyDecision{std::move(message), std::move(call), false, false};
}

inline PolicyDecision stop(std::string message, bool goal) { return PolicyDecision{std::move(message), std::nullopt, true, goal}; }

inline std::size_t count_actions(const Trajectory& t, std::size_t from = 0) {
  std::size_t n = 0;
  for (std::size_t i = from; i < t.size(); ++i) n += std::holds_alternative<Action>(t[i]) ? 1 : 0;
  return n;
}

/// Index of the last reminder of the first honored delivery. A delivery is
/// a run of consecutive reminders injected at one step boundary; delivery d
/// is honored when the session's draw for d falls below the obedience.
inline std::optional<std::size_t> honored_delivery_end(const Trajectory& t, double obedience, const SeededRandom& rng) {
  std::size_t delivery = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!is_reminder(t[i])) continue;
    bool last_in_run = i + 1 == t.size() || !is_reminder(t[i + 1]);
    if (!last_in_run) continue;
    if (rng.uniform("honor", delivery) < obedience) return i;
    ++delivery;
  }
  return std::nullopt;
}

}  // namespace detail

/// Shared mechanics: a misbehaving script until a delivery is honored, then
/// a recovery script. Both are indexed by how many actions they took so far.
class ScriptedPolicy : public AgentPolicy {
 public:
  explicit ScriptedPolicy(ScriptedBehavior b) : behavior_(b) { behavior_.validate(); }

  PolicyDecision next(const Trajectory& traj, const SessionMeta&, const SeededRandom& rng) const override {
    auto honored = detail::honored_delivery_end(traj, behavior_.obedience, rng);
    if (honored) return recover(detail::count_actions(traj, *honored + 1));
    return misbehave(detail::count_actions(traj));
  }

  std::string name() const override { return std::string(behavior_name(behavior_.kind)); }
  const ScriptedBehavior& behavior() const { return behavior_; }

 protected:
  virtual PolicyDecision misbehave(std::size_t n) const = 0;
  virtual PolicyDecision recover(std::size_t m) const = 0;

  ScriptedBehavior behavior_;
};

/// Re-reads a reference file forever (until a reminder is honored).
class LooperPolicy : public ScriptedPolicy {
 public:
  using ScriptedPolicy::ScriptedPolicy;
  std::string task() const override { return "Fix the PHP syntax error in src/index.php."; }

 protected:
  PolicyDecision misbehave(std::size_t n) const override {
    if (n == 0) return detail::act("Let me look at the file.", detail::make_call("read_file", {{"path", "src/index.php"}}));
    return detail::act("Let me check the PHP syntax reference.", detail::make_call("read_file", {{"path", "php_syntax.md"}}));
  }
  PolicyDecision recover(std::size_t m) const override {
    if (m == 0) {
      return detail::act("The reference says statements end with a semicolon; fixing line 2.",
                         detail::make_call("edit_file", {{"path", "src/index.php"},
                                                         {"content", "<?php\n$name = 'world';\necho \"Hello, $name\";\n"}}));
    }
    if (m == 1) return detail::act("Checking the syntax.", detail::make_call("bash", {{"command", "php -l src/index.php"}}));
    return detail::stop("Added the missing semicolon; php -l reports no syntax errors.", true);
  }
};

/// Asked to use review_code in thorough mode, reviews the diff by hand.
class DrifterPolicy : public ScriptedPolicy {
 public:
  using ScriptedPolicy::ScriptedPolicy;
  std::string task() const override { return "Review my current diff using the review_code tool with mode thorough."; }

 protected:
  PolicyDecision misbehave(std::size_t n) const override {
    static const std::array<std::pair<const char*, const char*>, 8> manual = {{
        {"bash", "git diff"},
        {"read_file", "src/app.py"},
        {"read_file", "src/utils.py"},
        {"read_file", "tests/test_app.py"},
        {"bash", "git log -3 --oneline"},
        {"read_file", "src/models.py"},
        {"read_file", "README.md"},
        {"bash", "grep -rn TODO src"},
    }};
    if (n >= manual.size()) return detail::stop("Here is my manual review of the diff.", false);
    auto [tool, arg] = manual[n];
    std::string key = std::string(tool) == "bash" ? "command" : "path";
    return detail::act("Gathering context for the review.", detail::make_call(tool, {{key, arg}}));
  }
  PolicyDecision recover(std::size_t m) const override {
    if (m == 0) {
      return detail::act("Running the requested review.", detail::make_call("review_code", {{"mode", "thorough"}}));
    }
    return detail::stop("The thorough review found two issues, listed above.", true);
  }
};

/// Calls a real tool incorrectly and retries without fixing the call.
class ToolFumblerPolicy : public ScriptedPolicy {
 public:
  using ScriptedPolicy::ScriptedPolicy;
  static constexpr std::size_t kAttempts = 8;

  std::string task() const override {
    if (behavior_.fumble == FumbleMode::runtime) return "Run the test suite in tests/ and report the results.";
    return "Set the database timeout in src/config.py to 30 seconds.";
  }

 protected:
  PolicyDecision misbehave(std::size_t n) const override {
    bool runtime = behavior_.fumble == FumbleMode::runtime;
    if (n == 0) {
      return runtime ? detail::act("Let me see how tests are run.", detail::make_call("read_file", {{"path", "README.md"}}))
                     : detail::act("Let me read the config.", detail::make_call("read_file", {{"path", "src/config.py"}}));
    }
    if (n > kAttempts) return detail::stop("I could not complete the change.", false);
    if (runtime) return detail::act("Running the tests.", detail::make_call("bash", {{"command", "pytest tests/"}}));
    return detail::act("Updating the timeout.", detail::make_call("edit_file", {{"path", "src/config.py"}}));
  }
  PolicyDecision recover(std::size_t m) const override {
    bool runtime = behavior_.fumble == FumbleMode::runtime;
    if (m == 0) {
      if (runtime) {
        return detail::act("Activating the environment first.",
                           detail::make_call("bash", {{"command", "source activate.sh && pytest tests/"}}));
      }
      return detail::act("Retrying with the file content.",
                         detail::make_call("edit_file", {{"path", "src/config.py"},
                                                         {"content", "DB_HOST = 'localhost'\nDB_TIMEOUT = 30\n"}}));
    }
    return detail::stop(runtime ? "All 12 tests pass." : "The timeout is now 30 seconds.", true);
  }
};

/// Does the task in six distinct steps.
class CompliantPolicy : public ScriptedPolicy {
 public:
  using ScriptedPolicy::ScriptedPolicy;
  std::string task() const override { return "Add input validation to the create_user handler in src/handlers.py."; }

 protected:
  PolicyDecision misbehave(std::size_t n) const override {
    switch (n) {
      case 0: return detail::act("Reading the handler.", detail::make_call("read_file", {{"path", "src/handlers.py"}}));
      case 1: return detail::act("Reading the model.", detail::make_call("read_file", {{"path", "src/models.py"}}));
      case 2: return detail::act("Reading the tests.", detail::make_call("read_file", {{"path", "tests/test_handlers.py"}}));
      case 3:
        return detail::act("Adding validation.",
                           detail::make_call("edit_file", {{"path", "src/handlers.py"},
                                                           {"content", "def create_user(req):\n    validate(req)\n"}}));
      case 4: return detail::act("Reviewing the change.", detail::make_call("bash", {{"command", "git diff src/handlers.py"}}));
      case 5:
        return detail::act("Running the handler tests.",
                           detail::make_call("bash", {{"command", "source activate.sh && pytest tests/test_handlers.py"}}));
      default: return detail::stop("Validation added and tests pass.", true);
    }
  }
  PolicyDecision recover(std::size_t) const override { return misbehave(6); }
};

inline std::unique_ptr<AgentPolicy> scripted_policy(const ScriptedBehavior& b) {
  switch (b.kind) {
    case BehaviorKind::looper: return std::make_unique<LooperPolicy>(b);
    case BehaviorKind::drifter: return std::make_unique<DrifterPolicy>(b);
    case BehaviorKind::tool_fumbler: return std::make_unique<ToolFumblerPolicy>(b);
    case BehaviorKind::compliant: return std::make_unique<CompliantPolicy>(b);
  }
  return std::make_unique<CompliantPolicy>(b);
}

// ---------------------------------------------------------------------------
// Session loop

enum class SessionMode { control, treatment };

inline std::string_view mode_name(SessionMode m) { return m == SessionMode::control ? "control" : "treatment"; }

inline SessionMode parse_mode(std::string_view s) {
  if (s == "control") return SessionMode::control;
  if (s == "treatment") return SessionMode::treatment;
  throw Error(ErrorCode::invalid_config, "mode must be control or treatment, got '" + std::string(s) + "'");
}

inline constexpr std::string_view kEngineerFollowUp =
    "This is not finished yet. Please go back to my original request and complete it.";

struct SessionConfig {
  std::size_t max_steps = 30;
  ObserverConfig observer;
  SessionMode mode = SessionMode::treatment;
  std::uint64_t seed = 0;
  std::string session_id = "session";
  std::string system_prompt = "You are a coding agent working in the user's repository.";
  std::string model_tag = "scripted";
  /// Steps between submitting an analysis and seeing its result when the
  /// default step-clock executor is used.
  std::size_t detector_latency_steps = 1;

  void validate() const {
    if (max_steps < 1) throw Error(ErrorCode::invalid_config, "max_steps must be at least 1");
    observer.validate();
  }
};

/// Optional callbacks around each step, for instrumentation.
struct SessionHooks {
  std::function<void(std::size_t step)> before_step;
  std::function<void(std::size_t step)> after_step;
};

struct SessionResult {
  Trajectory trajectory;
  std::vector<InterventionRecord> interventions;
  SessionMetrics metrics;
  ObserverStats observer;
  std::vector<std::size_t> injection_steps;  // step boundary of each injection
};

inline const TemplateStore& default_template_store() {
  static const TemplateStore store = TemplateStore::builtin();
  return store;
}

/// Detection used by simulations: rule detectors over the last k steps and
/// the heuristic mock classifier for the semantic categories.
inline DetectionConfig simulation_detection_config(const ObserverConfig& obs) {
  DetectionConfig cfg;
  cfg.lookback_steps = obs.k;
  return cfg;
}

inline AnalysisFn simulation_analysis(const ObserverConfig& obs) {
  return analysis_from(MisbehaviorDetector(simulation_detection_config(obs), std::make_shared<HeuristicMockBackend>()));
}

inline SessionResult run_session(const AgentPolicy& policy, const ToolRegistry& tools, const SessionConfig& cfg,
                                 AnalysisFn analysis, std::unique_ptr<AnalysisExecutor> executor = nullptr,
                                 const TemplateStore& store = default_template_store(), const SessionHooks& hooks = {}) {
  cfg.validate();
  if (!executor) executor = std::make_unique<StepClockExecutor>(cfg.detector_latency_steps);
  Observer observer(cfg.observer, std::move(analysis), std::move(executor), simulation_detection_config(cfg.observer));

  SessionResult res;
  auto meta = tools.meta(cfg.system_prompt, cfg.model_tag);
  res.trajectory = Trajectory(cfg.session_id, meta);
  auto& traj = res.trajectory;
  traj.append(user_message(policy.task()));
  SeededRandom rng(cfg.seed);

  SessionOutcome outcome = SessionOutcome::max_steps;
  std::size_t step = 0;
  while (step < cfg.max_steps) {
    if (hooks.before_step) hooks.before_step(step + 1);
    auto d = policy.next(traj, meta, rng);
    if (!d.message.empty()) traj.append(assistant_message(d.message));
    if (d.terminate) {
      outcome = d.goal_completed ? SessionOutcome::goal_completed : SessionOutcome::gave_up;
      break;
    }
    if (!d.call) throw Error(ErrorCode::invalid_argument, policy.name() + " returned neither a call nor termination");
    auto call = *d.call;
    call.call_id = "c" + std::to_string(step + 1);
    traj.append(action(call));
    traj.append(observation(tools.execute(call)));
    ++step;

    auto ready = observer.on_step_boundary(traj, step);
    if (cfg.mode == SessionMode::treatment) {
      for (const auto& r : ready) {
        for (const auto& g : generate_guidance(r.feedback, traj, store)) {
          res.interventions.push_back(inject(traj, g, r.feedback));
          res.injection_steps.push_back(step);
        }
      }
    }
    if (hooks.after_step) hooks.after_step(step);
  }
  observer.finish(traj, step);
  traj.set_outcome(outcome);
  if (outcome != SessionOutcome::goal_completed) traj.append(user_message(std::string(kEngineerFollowUp)));

  res.observer = observer.stats();
  res.metrics = session_metrics(traj, res.interventions);
  return res;
}

inline SessionResult run_session(const AgentPolicy& policy, const ToolRegistry& tools, const SessionConfig& cfg) {
  return run_session(policy, tools, cfg, simulation_analysis(cfg.observer));
}

// ---------------------------------------------------------------------------
// Experiments

struct PopulationEntry {
  ScriptedBehavior behavior;
  std::size_t count = 0;
};

struct PopulationSpec {
  std::vector<PopulationEntry> entries;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.count;
    return n;
  }

  void validate() const {
    if (entries.empty() || total() == 0) throw Error(ErrorCode::invalid_config, "population is empty");
    for (const auto& e : entries) e.behavior.validate();
  }

  /// `n` sessions; `misbehaving` of them split evenly between looper,
  /// drifter and tool_fumbler, the rest compliant.
  static PopulationSpec mixed(std::size_t n, double misbehaving_fraction, double obedience) {
    auto bad = static_cast<std::size_t>(std::llround(static_cast<double>(n) * misbehaving_fraction));
    bad = std::min(bad, n);
    PopulationSpec spec;
    std::size_t share = bad / 3;
    spec.entries.push_back({{BehaviorKind::looper, obedience, FumbleMode::missing_param}, bad - 2 * share});
    spec.entries.push_back({{BehaviorKind::drifter, obedience, FumbleMode::missing_param}, share});
    spec.entries.push_back({{BehaviorKind::tool_fumbler, obedience, FumbleMode::missing_param}, share});
    spec.entries.push_back({{BehaviorKind::compliant, obedience, FumbleMode::missing_param}, n - bad});
    return spec;
  }

  /// Behaviors in a seeded random order.
  std::vector<ScriptedBehavior> assignment(std::uint64_t seed) const {
    std::vector<ScriptedBehavior> out;
    for (const auto& e : entries) out.insert(out.end(), e.count, e.behavior);
    SplitMixStream stream(seed);
    stream.shuffle(out);
    return out;
  }
};

struct ArmResult {
  std::vector<SessionResult> sessions;
  std::size_t invocations = 0;  // observer submissions
  std::size_t flagged = 0;      // analyses reporting a misbehavior

  std::vector<SessionMetrics> metrics() const {
    std::vector<SessionMetrics> out;
    for (const auto& s : sessions) out.push_back(s.metrics);
    return out;
  }
};

struct ExperimentResult {
  std::vector<ScriptedBehavior> assignment;
  ArmResult control;
  ArmResult treatment;
};

inline std::uint64_t session_seed(std::uint64_t seed, std::size_t i) { return hash_combine(seed, i); }

inline std::string session_name(std::size_t i) {
  auto digits = std::to_string(i);
  return "s" + std::string(digits.size() < 4 ? 4 - digits.size() : 0, '0') + digits;
}

inline ArmResult run_arm(const std::vector<ScriptedBehavior>& assignment, const SessionConfig& base, std::uint64_t seed,
                         const ToolRegistry& tools = ToolRegistry::standard(),
                         const TemplateStore& store = default_template_store()) {
  ArmResult arm;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    auto cfg = base;
    cfg.seed = session_seed(seed, i);
    cfg.session_id = session_name(i);
    auto policy = scripted_policy(assignment[i]);
    auto s = run_session(*policy, tools, cfg, simulation_analysis(cfg.observer), nullptr, store);
    arm.invocations += s.observer.submissions;
    arm.flagged += s.observer.flagged;
    arm.sessions.push_back(std::move(s));
  }
  return arm;
}

/// Paired arms: session i gets the same behavior and seed in both arms.
inline ExperimentResult run_experiment(const PopulationSpec& spec, const SessionConfig& control,
                                       const SessionConfig& treatment, std::uint64_t seed,
                                       const TemplateStore& store = default_template_store()) {
  spec.validate();
  auto c = control;
  auto t = treatment;
  c.mode = SessionMode::control;
  t.mode = SessionMode::treatment;
  ExperimentResult r;
  r.assignment = spec.assignment(seed);
  auto tools = ToolRegistry::standard();
  r.control = run_arm(r.assignment, c, seed, tools, store);
  r.treatment = run_arm(r.assignment, t, seed, tools, store);
  return r;
}

}  // namespace trajguard
