#pragma once

// Agent execution trajectories: the ordered record of user messages,
// assistant messages, tool-call actions, observations and injected
// system reminders for one session.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <unordered_set>
#include <variant>
#include <vector>

#include "trajguard/error.hpp"
#include "trajguard/text.hpp"

namespace trajguard {

using ArgValue = std::variant<std::string, std::int64_t, double, bool>;
using Arguments = std::map<std::string, ArgValue, std::less<>>;

struct ToolCall {
  std::string tool_name;
  Arguments arguments;
  std::string call_id;

  friend bool operator==(const ToolCall&, const ToolCall&) = default;
};

enum class ResultStatus { ok, error };

enum class ToolErrorKind { unknown_tool, missing_param, invalid_param, runtime_error };

struct ToolResult {
  std::string call_id;
  ResultStatus status = ResultStatus::ok;
  std::string payload;
  std::optional<ToolErrorKind> error_kind;
  std::uint64_t token_count = 0;

  friend bool operator==(const ToolResult&, const ToolResult&) = default;
};

struct UserMessage {
  std::string text;
  std::uint64_t token_count = 0;
  friend bool operator==(const UserMessage&, const UserMessage&) = default;
};

struct AssistantMessage {
  std::string text;
  std::uint64_t token_count = 0;
  friend bool operator==(const AssistantMessage&, const AssistantMessage&) = default;
};

struct Action {
  ToolCall call;
  std::uint64_t token_count = 0;
  friend bool operator==(const Action&, const Action&) = default;
};

struct Observation {
  ToolResult result;
  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Guidance injected into the conversation. `text` holds the rendered
/// `<system-reminder>` block exactly as the agent sees it. Hidden reminders
/// are excluded from user-facing rendering.
struct SystemReminder {
  std::string text;
  std::string source_intervention_id;
  bool hidden = true;
  std::uint64_t token_count = 0;
  friend bool operator==(const SystemReminder&, const SystemReminder&) = default;
};

using Event = std::variant<UserMessage, AssistantMessage, Action, Observation, SystemReminder>;

inline std::uint64_t token_count(const Event& e) {
  return std::visit(
      [](const auto& ev) -> std::uint64_t {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, Observation>) {
          return ev.result.token_count;
        } else {
          return ev.token_count;
        }
      },
      e);
}

inline std::string_view event_type_name(const Event& e) {
  switch (e.index()) {
    case 0: return "user_message";
    case 1: return "assistant_message";
    case 2: return "action";
    case 3: return "observation";
    default: return "system_reminder";
  }
}

template <typename T>
const T* event_as(const Event& e) {
  return std::get_if<T>(&e);
}

inline bool is_reminder(const Event& e) { return std::holds_alternative<SystemReminder>(e); }

// Convenience constructors that populate word-count token counts.
inline Event user_message(std::string text) {
  auto n = text::count_tokens(text);
  return UserMessage{std::move(text), n};
}

inline Event assistant_message(std::string text) {
  auto n = text::count_tokens(text);
  return AssistantMessage{std::move(text), n};
}

inline std::string render_arguments(const Arguments& args);

inline Event action(ToolCall call) {
  auto n = text::count_tokens(call.tool_name) + text::count_tokens(render_arguments(call.arguments));
  return Action{std::move(call), n};
}

inline Event observation(ToolResult result) {
  result.token_count = text::count_tokens(result.payload);
  return Observation{std::move(result)};
}

inline ToolResult ok_result(std::string call_id, std::string payload) {
  ToolResult r;
  r.call_id = std::move(call_id);
  r.payload = std::move(payload);
  return r;
}

inline ToolResult error_result(std::string call_id, ToolErrorKind kind, std::string payload) {
  ToolResult r;
  r.call_id = std::move(call_id);
  r.status = ResultStatus::error;
  r.error_kind = kind;
  r.payload = std::move(payload);
  return r;
}

/// Declared interface of a tool as recorded in session metadata.
struct ToolSignature {
  std::string name;
  std::set<std::string> params;
  std::set<std::string> required_params;

  friend bool operator==(const ToolSignature&, const ToolSignature&) = default;
};

struct SessionMeta {
  std::string system_prompt;
  std::vector<ToolSignature> tool_specs;
  std::string model_tag;

  const ToolSignature* find_tool(std::string_view name) const {
    for (const auto& spec : tool_specs) {
      if (spec.name == name) return &spec;
    }
    return nullptr;
  }

  void validate() const {
    std::set<std::string_view> seen;
    for (const auto& spec : tool_specs) {
      if (spec.name.empty()) throw Error(ErrorCode::invalid_event, "tool spec with empty name");
      if (!seen.insert(spec.name).second) {
        throw Error(ErrorCode::invalid_event, "duplicate tool spec '" + spec.name + "'");
      }
      for (const auto& p : spec.required_params) {
        if (!spec.params.count(p)) {
          throw Error(ErrorCode::invalid_event,
                      "required parameter '" + p + "' of '" + spec.name + "' is not declared");
        }
      }
    }
  }

  friend bool operator==(const SessionMeta&, const SessionMeta&) = default;
};

enum class SessionOutcome { in_progress, goal_completed, gave_up, max_steps };

inline std::string_view outcome_name(SessionOutcome o) {
  switch (o) {
    case SessionOutcome::in_progress: return "in_progress";
    case SessionOutcome::goal_completed: return "goal_completed";
    case SessionOutcome::gave_up: return "gave_up";
    case SessionOutcome::max_steps: return "max_steps";
  }
  return "in_progress";
}

inline std::optional<SessionOutcome> parse_outcome(std::string_view s) {
  for (auto o : {SessionOutcome::in_progress, SessionOutcome::goal_completed, SessionOutcome::gave_up,
                 SessionOutcome::max_steps}) {
    if (outcome_name(o) == s) return o;
  }
  return std::nullopt;
}

class TrajectoryView;

/// Append-only event log for one session. Indices are stable once assigned.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::string session_id, SessionMeta meta = {})
      : session_id_(std::move(session_id)), meta_(std::move(meta)) {
    meta_.validate();
  }

  const std::string& session_id() const { return session_id_; }
  const SessionMeta& meta() const { return meta_; }
  const std::vector<Event>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }
  const Event& operator[](std::size_t i) const { return events_[i]; }
  const Event& at(std::size_t i) const {
    if (i >= events_.size()) {
      throw Error(ErrorCode::index_out_of_range,
                  "index " + std::to_string(i) + " >= " + std::to_string(events_.size()));
    }
    return events_[i];
  }

  SessionOutcome outcome() const { return outcome_; }
  void set_outcome(SessionOutcome o) { outcome_ = o; }

  /// Index of the last event that is not a system reminder.
  std::optional<std::size_t> last_non_reminder() const {
    for (std::size_t i = events_.size(); i-- > 0;) {
      if (!is_reminder(events_[i])) return i;
    }
    return std::nullopt;
  }

  /// A step boundary is the point right after an observation (reminders
  /// injected at that boundary do not move it).
  bool at_step_boundary() const {
    auto last = last_non_reminder();
    return last && std::holds_alternative<Observation>(events_[*last]);
  }

  void append(Event e) {
    validate_next(e);
    if (const auto* a = event_as<Action>(e)) call_ids_.insert(a->call.call_id);
    events_.push_back(std::move(e));
  }

  friend bool operator==(const Trajectory& a, const Trajectory& b) {
    return a.session_id_ == b.session_id_ && a.meta_ == b.meta_ && a.events_ == b.events_ &&
           a.outcome_ == b.outcome_;
  }

 private:
  static void validate_arguments(const Arguments& args) {
    for (const auto& [key, value] : args) {
      if (key.empty()) throw Error(ErrorCode::invalid_event, "empty argument key");
      if (const auto* d = std::get_if<double>(&value); d && !std::isfinite(*d)) {
        throw Error(ErrorCode::invalid_event, "non-finite value for argument '" + key + "'");
      }
    }
  }

  void validate_next(const Event& e) const {
    if (events_.empty() && !std::holds_alternative<UserMessage>(e)) {
      throw Error(ErrorCode::invalid_event, "the first event must be the user's task message");
    }
    if (const auto* a = event_as<Action>(e)) {
      if (a->call.tool_name.empty()) throw Error(ErrorCode::invalid_event, "tool call without a tool name");
      if (a->call.call_id.empty()) throw Error(ErrorCode::invalid_event, "tool call without a call id");
      if (call_ids_.count(a->call.call_id)) {
        throw Error(ErrorCode::duplicate_call_id, "call id '" + a->call.call_id + "' already used");
      }
      validate_arguments(a->call.arguments);
    }
    if (const auto* o = event_as<Observation>(e)) {
      const auto& r = o->result;
      if (r.error_kind.has_value() != (r.status == ResultStatus::error)) {
        throw Error(ErrorCode::invalid_event, "error_kind must be present iff status is error");
      }
      auto last = last_non_reminder();
      const Action* prev = last ? event_as<Action>(events_[*last]) : nullptr;
      if (!prev || prev->call.call_id != r.call_id) {
        throw Error(ErrorCode::observation_without_action,
                    "observation for call '" + r.call_id + "' does not follow its action");
      }
    }
  }

  std::string session_id_;
  SessionMeta meta_;
  std::vector<Event> events_;
  std::unordered_set<std::string> call_ids_;
  SessionOutcome outcome_ = SessionOutcome::in_progress;
};

inline Trajectory append_event(Trajectory traj, Event e) {
  traj.append(std::move(e));
  return traj;
}

/// Read-only contiguous window over a trajectory. Indices reported by
/// detectors are absolute (relative to the source trajectory).
class TrajectoryView {
 public:
  TrajectoryView(const Trajectory& source)  // NOLINT(google-explicit-constructor)
      : source_(&source), begin_(0), end_(source.size()) {}

  TrajectoryView(const Trajectory& source, std::size_t begin, std::size_t end)
      : source_(&source), begin_(begin), end_(end) {}

  const Trajectory& source() const { return *source_; }
  std::size_t begin_index() const { return begin_; }
  std::size_t end_index() const { return end_; }
  std::size_t size() const { return end_ - begin_; }
  bool empty() const { return begin_ == end_; }

  std::span<const Event> events() const {
    return std::span<const Event>(source_->events()).subspan(begin_, end_ - begin_);
  }

  /// Absolute indexing.
  const Event& operator[](std::size_t absolute) const { return source_->events()[absolute]; }

 private:
  const Trajectory* source_;
  std::size_t begin_;
  std::size_t end_;
};

inline TrajectoryView slice(const Trajectory& traj, std::size_t from, std::size_t to) {
  if (from > to || to > traj.size()) {
    throw Error(ErrorCode::index_out_of_range, "slice [" + std::to_string(from) + ", " +
                                                   std::to_string(to) + ") of trajectory with " +
                                                   std::to_string(traj.size()) + " events");
  }
  return TrajectoryView(traj, from, to);
}

/// Number of completed steps (observations) in a window.
inline std::size_t step_count(const TrajectoryView& view) {
  std::size_t n = 0;
  for (const auto& e : view.events()) n += std::holds_alternative<Observation>(e) ? 1 : 0;
  return n;
}

/// Number of steps completed before absolute index `index`.
inline std::size_t steps_before(const Trajectory& traj, std::size_t index) {
  return step_count(slice(traj, 0, std::min(index, traj.size())));
}

struct StepWindow {
  TrajectoryView view;
  std::size_t steps = 0;      // complete steps inside the window
  bool reaches_end = false;   // window runs to the end of the trajectory
};

/// Window starting at `from` and spanning up to `steps` steps. A step ends at
/// its observation; the window stops right after the last counted one (or at
/// the end of the trajectory when fewer steps exist).
inline StepWindow steps_after(const Trajectory& traj, std::size_t from, std::size_t steps) {
  if (from > traj.size()) throw Error(ErrorCode::index_out_of_range, "window start past end");
  std::size_t seen = 0;
  std::size_t end = from;
  while (end < traj.size() && seen < steps) {
    if (std::holds_alternative<Observation>(traj[end])) ++seen;
    ++end;
  }
  if (seen < steps) end = traj.size();
  return StepWindow{TrajectoryView(traj, from, end), seen, end == traj.size()};
}

/// Window covering the last `steps` steps of the trajectory (0 = everything).
/// Starts at the first event after the observation that closed the step
/// preceding the window.
inline TrajectoryView last_steps(const Trajectory& traj, std::size_t steps) {
  if (steps == 0) return TrajectoryView(traj);
  std::size_t seen = 0;
  for (std::size_t i = traj.size(); i-- > 0;) {
    if (std::holds_alternative<Observation>(traj[i])) {
      if (seen == steps) return TrajectoryView(traj, i + 1, traj.size());
      ++seen;
    }
  }
  return TrajectoryView(traj);
}

/// Events a human sees: hidden reminders are filtered out.
inline std::vector<Event> user_visible_events(const Trajectory& traj) {
  std::vector<Event> out;
  for (const auto& e : traj.events()) {
    if (const auto* r = event_as<SystemReminder>(e); r && r->hidden) continue;
    out.push_back(e);
  }
  return out;
}

inline const UserMessage* initial_task(const Trajectory& traj) {
  return traj.empty() ? nullptr : event_as<UserMessage>(traj[0]);
}

// ---------------------------------------------------------------------------
// Argument rendering

inline std::string render_value(const ArgValue& v) {
  return std::visit(
      [](const auto& x) -> std::string {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::string>) {
          std::string out = "\"";
          for (char c : x) {
            if (c == '"' || c == '\\') out += '\\';
            if (c == '\n') {
              out += "\\n";
              continue;
            }
            out += c;
          }
          return out + "\"";
        } else if constexpr (std::is_same_v<T, bool>) {
          return x ? "true" : "false";
        } else if constexpr (std::is_same_v<T, double>) {
          return text::shortest(x);
        } else {
          return std::to_string(x);
        }
      },
      v);
}

/// `path="a.txt", mode="thorough"` in key order.
inline std::string render_arguments(const Arguments& args) {
  std::string out;
  for (const auto& [key, value] : args) {
    if (!out.empty()) out += ", ";
    out += key + "=" + render_value(value);
  }
  return out;
}

inline std::string render_call(const ToolCall& call) {
  return call.tool_name + "(" + render_arguments(call.arguments) + ")";
}

}  // namespace trajguard
