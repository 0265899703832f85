#pragma once

// Deterministic classifier backends for tests and simulation.

#include <functional>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trajguard/detection.hpp"
#include "trajguard/text.hpp"

namespace trajguard {

/// Wraps a callable; the function decides what "pure" means.
class FunctionBackend : public ClassifierBackend {
 public:
  using Fn = std::function<std::string(std::string_view)>;
  explicit FunctionBackend(Fn fn, std::string name = "function") : fn_(std::move(fn)), name_(std::move(name)) {}

  std::string classify(std::string_view prompt) const override { return fn_(prompt); }
  std::string name() const override { return name_; }

 private:
  Fn fn_;
  std::string name_;
};

/// Always answers with the same text.
inline std::shared_ptr<ClassifierBackend> constant_backend(std::string reply) {
  return std::make_shared<FunctionBackend>([reply = std::move(reply)](std::string_view) { return reply; }, "constant");
}

/// Backend that always fails, for exercising degradation paths.
inline std::shared_ptr<ClassifierBackend> unavailable_backend() {
  return std::make_shared<FunctionBackend>(
      [](std::string_view) -> std::string { throw Error(ErrorCode::backend_unavailable, "backend offline"); },
      "unavailable");
}

namespace heuristic {

struct PromptLine {
  std::size_t index = 0;
  std::string kind;  // USER, ASSISTANT, ACTION, OBSERVATION, SYSTEM-REMINDER
  std::string body;
};

/// Lines of the form `[i] KIND...` between `begin_marker` and `end_marker`.
inline std::vector<PromptLine> section_events(std::string_view prompt, std::string_view begin_marker,
                                              std::string_view end_marker) {
  static const std::regex line_re(R"(^\[(\d+)\] (USER:|ASSISTANT:|ACTION|OBSERVATION|SYSTEM-REMINDER) ?(.*)$)");
  std::vector<PromptLine> out;
  bool inside = false;
  for (const auto& line : text::split_lines(prompt)) {
    if (!inside) {
      if (text::starts_with_icase(line, begin_marker)) inside = true;
      continue;
    }
    if (line == end_marker) break;
    std::smatch m;
    if (std::regex_match(line, m, line_re)) {
      auto kind = m[2].str();
      if (kind.back() == ':') kind.pop_back();
      out.push_back(PromptLine{std::stoul(m[1].str()), kind, m[3].str()});
    }
  }
  return out;
}

/// Value of the first `KEY: value` line.
inline std::optional<std::string> field(std::string_view prompt, std::string_view key) {
  std::string prefix = std::string(key) + ":";
  for (const auto& line : text::split_lines(prompt)) {
    if (line.rfind(prefix, 0) == 0) return std::string(text::trim(std::string_view(line).substr(prefix.size())));
  }
  return std::nullopt;
}

struct ToolRequest {
  std::string tool;
  std::optional<std::string> mode;
};

/// Explicit "using the X tool (with mode Y)" requests in a task text.
inline std::optional<ToolRequest> requested_tool(std::string_view task) {
  static const std::regex re(R"(using the (\w+) tool(?: with mode (\w+))?)", std::regex::icase);
  std::string s(task);
  std::smatch m;
  if (!std::regex_search(s, m, re)) return std::nullopt;
  ToolRequest r{m[1].str(), std::nullopt};
  if (m[2].matched) r.mode = m[2].str();
  return r;
}

inline bool action_uses(const PromptLine& l, const ToolRequest& r) {
  if (l.kind != "ACTION") return false;
  auto pos = l.body.find(' ');
  auto call = pos == std::string::npos ? l.body : l.body.substr(pos + 1);
  if (call.rfind(r.tool + "(", 0) != 0) return false;
  return !r.mode || call.find("mode=\"" + *r.mode + "\"") != std::string::npos;
}

/// File-like tokens mentioned in a task text.
inline std::set<std::string> mentioned_paths(std::string_view task) {
  static const std::regex re(R"([A-Za-z0-9_.\-]+(?:/[A-Za-z0-9_.\-]+)*\.[A-Za-z0-9]+)");
  std::set<std::string> out;
  std::string s(task);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    auto p = it->str();
    while (!p.empty() && p.back() == '.') p.pop_back();
    out.insert(p);
  }
  return out;
}

inline std::optional<std::string> edited_path(const PromptLine& l, std::string_view edit_tool = "edit_file") {
  if (l.kind != "ACTION") return std::nullopt;
  static const std::regex re(R"re(path="([^"]*)")re");
  auto pos = l.body.find(' ');
  auto call = pos == std::string::npos ? l.body : l.body.substr(pos + 1);
  if (call.rfind(std::string(edit_tool) + "(", 0) != 0) return std::nullopt;
  std::smatch m;
  if (!std::regex_search(call, m, re)) return std::nullopt;
  return m[1].str();
}

inline std::string task_text(const std::vector<PromptLine>& lines) {
  for (const auto& l : lines) {
    if (l.index == 0 && l.kind == "USER") return l.body;
  }
  return {};
}

inline std::string answer_classification(std::string_view prompt) {
  auto code = field(prompt, "CATEGORY").value_or("");
  auto lines = section_events(prompt, "TRAJECTORY:", "END TRAJECTORY");
  auto task = task_text(lines);
  bool acted = std::any_of(lines.begin(), lines.end(), [](const PromptLine& l) { return l.kind == "ACTION"; });

  if (code == category_code(MisbehaviorCategory::spec_drift_dnf)) {
    auto req = requested_tool(task);
    if (!req) return "VERDICT: no\nREASONING: The task does not ask for a specific tool.\n";
    bool used = std::any_of(lines.begin(), lines.end(), [&](const PromptLine& l) { return action_uses(l, *req); });
    if (used || !acted) return "VERDICT: no\nREASONING: The requested tool was used or no action was taken yet.\n";
    std::string what = req->tool + " tool" + (req->mode ? " with mode " + *req->mode : "");
    std::string call = req->tool + "(" + (req->mode ? "mode=\"" + *req->mode + "\"" : "") + ")";
    return "VERDICT: yes\nREASONING: The user asked to use the " + what +
           ", but the agent is gathering context manually and has not invoked it.\nGUIDANCE: Call " + call +
           " now.\n";
  }
  if (code == category_code(MisbehaviorCategory::spec_drift_uc)) {
    auto allowed = mentioned_paths(task);
    for (const auto& l : lines) {
      auto p = edited_path(l);
      if (p && !allowed.count(*p)) {
        return "VERDICT: yes\nREASONING: The agent edited " + *p + ", which the user did not ask to change.\n"
               "GUIDANCE: Revert the change to " + *p + ".\n";
      }
    }
    return "VERDICT: no\nREASONING: All edits target files named in the request.\n";
  }
  return "VERDICT: no\nREASONING: No heuristic for this category.\n";
}

inline std::string answer_judgment(std::string_view prompt) {
  auto code = field(prompt, "FINDING CATEGORY").value_or("");
  auto task = field(prompt, "ORIGINAL TASK").value_or("");
  auto offending = field(prompt, "OFFENDING CALL").value_or("none");
  auto outcome = field(prompt, "SESSION OUTCOME").value_or("continues");
  auto steps = field(prompt, "POST-WINDOW STEPS").value_or("0");
  auto post = section_events(prompt, "AFTER INTERVENTION:", "END AFTER INTERVENTION");
  bool progressed = outcome == "goal_completed" || std::stoul(steps) >= 15;

  const char* kNot = "VERDICT: not_recovered\nREASONING: ";
  const char* kYes = "VERDICT: recovered\nREASONING: ";

  if (code == category_code(MisbehaviorCategory::spec_drift_dnf)) {
    auto req = requested_tool(task);
    bool used = req && std::any_of(post.begin(), post.end(), [&](const PromptLine& l) { return action_uses(l, *req); });
    if (used && progressed) return std::string(kYes) + "The agent switched to the requested tool.\n";
    return std::string(kNot) + "The requested tool was not used after the reminder.\n";
  }
  if (code == category_code(MisbehaviorCategory::spec_drift_uc)) {
    auto allowed = mentioned_paths(task);
    for (const auto& l : post) {
      auto p = edited_path(l);
      if (p && !allowed.count(*p)) return std::string(kNot) + "The agent kept editing " + *p + ".\n";
    }
    if (progressed) return std::string(kYes) + "Edits stayed within the request.\n";
    return std::string(kNot) + "Not enough evidence after the reminder.\n";
  }
  for (const auto& l : post) {
    auto pos = l.body.find(' ');
    if (l.kind == "ACTION" && pos != std::string::npos && l.body.substr(pos + 1) == offending) {
      return std::string(kNot) + "The offending call was issued again.\n";
    }
  }
  if (progressed) return std::string(kYes) + "The offending call did not recur.\n";
  return std::string(kNot) + "Not enough evidence after the reminder.\n";
}

}  // namespace heuristic

/// Pure, prompt-reading stand-in for a language model. It answers
/// classification prompts for DNF (an explicitly requested tool is never
/// invoked) and UC (edits to files the task does not mention), and recovery
/// judgment prompts by checking the post-intervention window.
class HeuristicMockBackend : public ClassifierBackend {
 public:
  std::string classify(std::string_view prompt) const override {
    auto kind = heuristic::field(prompt, "TASK TYPE").value_or("");
    if (kind == "recovery judgment") return heuristic::answer_judgment(prompt);
    if (kind == "misbehavior classification") return heuristic::answer_classification(prompt);
    return "UNSUPPORTED PROMPT";
  }
  std::string name() const override { return "mock"; }
};

}  // namespace trajguard
