#pragma once

// Misbehavior categories and the per-category guidance template store.

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trajguard/error.hpp"
#include "trajguard/text.hpp"

namespace trajguard {

enum class MisbehaviorCategory {
  spec_drift_dnf,          // did not follow instructions
  spec_drift_uc,           // unrequested changes
  reasoning_infinite_loop,
  tool_call_failure,
};

inline constexpr std::array<MisbehaviorCategory, 4> kAllCategories = {
    MisbehaviorCategory::spec_drift_dnf, MisbehaviorCategory::spec_drift_uc,
    MisbehaviorCategory::reasoning_infinite_loop, MisbehaviorCategory::tool_call_failure};

constexpr std::string_view category_code(MisbehaviorCategory c) {
  switch (c) {
    case MisbehaviorCategory::spec_drift_dnf: return "SD_DNF";
    case MisbehaviorCategory::spec_drift_uc: return "SD_UC";
    case MisbehaviorCategory::reasoning_infinite_loop: return "RP_LOOP";
    case MisbehaviorCategory::tool_call_failure: return "TCF";
  }
  return "";
}

/// Row labels used in prevalence tables.
constexpr std::string_view category_label(MisbehaviorCategory c) {
  switch (c) {
    case MisbehaviorCategory::spec_drift_dnf: return "DNF";
    case MisbehaviorCategory::spec_drift_uc: return "UC";
    case MisbehaviorCategory::reasoning_infinite_loop: return "Loops";
    case MisbehaviorCategory::tool_call_failure: return "Tool Call Failure";
  }
  return "";
}

constexpr std::string_view category_description(MisbehaviorCategory c) {
  switch (c) {
    case MisbehaviorCategory::spec_drift_dnf:
      return "Did Not Follow Instructions: the agent ignores explicit user instructions or "
             "constraints, or substitutes its own approach for the one requested.";
    case MisbehaviorCategory::spec_drift_uc:
      return "Unrequested Changes: the agent modifies content or files outside the scope of "
             "the user's request.";
    case MisbehaviorCategory::reasoning_infinite_loop:
      return "Infinite Loops: the agent repeats the same or similar tool calls or edits "
             "without making progress.";
    case MisbehaviorCategory::tool_call_failure:
      return "Tool Call Failures: the agent repeatedly fails to use tools correctly and does "
             "not correct its mistakes.";
  }
  return "";
}

inline MisbehaviorCategory parse_category(std::string_view code) {
  for (auto c : kAllCategories) {
    if (category_code(c) == code) return c;
  }
  throw Error(ErrorCode::unknown_category, "'" + std::string(code) + "'");
}

/// Semantic categories need a text classifier; the others have rule detectors.
constexpr bool is_semantic(MisbehaviorCategory c) {
  return c == MisbehaviorCategory::spec_drift_dnf || c == MisbehaviorCategory::spec_drift_uc;
}

enum class CategoryFamily { reasoning_problems, tool_call_failure, specification_drift };

inline constexpr std::array<CategoryFamily, 3> kAllFamilies = {
    CategoryFamily::reasoning_problems, CategoryFamily::tool_call_failure,
    CategoryFamily::specification_drift};

constexpr CategoryFamily family_of(MisbehaviorCategory c) {
  switch (c) {
    case MisbehaviorCategory::spec_drift_dnf:
    case MisbehaviorCategory::spec_drift_uc: return CategoryFamily::specification_drift;
    case MisbehaviorCategory::reasoning_infinite_loop: return CategoryFamily::reasoning_problems;
    case MisbehaviorCategory::tool_call_failure: return CategoryFamily::tool_call_failure;
  }
  return CategoryFamily::specification_drift;
}

constexpr std::string_view family_name(CategoryFamily f) {
  switch (f) {
    case CategoryFamily::reasoning_problems: return "Reasoning Problems";
    case CategoryFamily::tool_call_failure: return "Tool Call Failure";
    case CategoryFamily::specification_drift: return "Specification Drift";
  }
  return "";
}

// ---------------------------------------------------------------------------
// Qualitative annotation vocabulary for recovered / non-recovered trajectories.

enum class AnnotationLabel {
  // recovered
  loop_broken,
  task_restated_with_plan,
  scope_creep_avoided,
  tool_arguments_corrected,
  // not recovered
  ignored_guidance,
  premature_termination,
  mechanical_failure,
  merge_conflict,
  false_negative_state,
};

inline constexpr std::array<AnnotationLabel, 9> kAllAnnotationLabels = {
    AnnotationLabel::loop_broken,           AnnotationLabel::task_restated_with_plan,
    AnnotationLabel::scope_creep_avoided,   AnnotationLabel::tool_arguments_corrected,
    AnnotationLabel::ignored_guidance,      AnnotationLabel::premature_termination,
    AnnotationLabel::mechanical_failure,    AnnotationLabel::merge_conflict,
    AnnotationLabel::false_negative_state};

constexpr std::string_view annotation_code(AnnotationLabel l) {
  switch (l) {
    case AnnotationLabel::loop_broken: return "loop_broken";
    case AnnotationLabel::task_restated_with_plan: return "task_restated_with_plan";
    case AnnotationLabel::scope_creep_avoided: return "scope_creep_avoided";
    case AnnotationLabel::tool_arguments_corrected: return "tool_arguments_corrected";
    case AnnotationLabel::ignored_guidance: return "ignored_guidance";
    case AnnotationLabel::premature_termination: return "premature_termination";
    case AnnotationLabel::mechanical_failure: return "mechanical_failure";
    case AnnotationLabel::merge_conflict: return "merge_conflict";
    case AnnotationLabel::false_negative_state: return "false_negative_state";
  }
  return "";
}

constexpr bool annotation_means_recovered(AnnotationLabel l) {
  return l == AnnotationLabel::loop_broken || l == AnnotationLabel::task_restated_with_plan ||
         l == AnnotationLabel::scope_creep_avoided || l == AnnotationLabel::tool_arguments_corrected;
}

inline AnnotationLabel parse_annotation(std::string_view code) {
  for (auto l : kAllAnnotationLabels) {
    if (annotation_code(l) == code) return l;
  }
  throw Error(ErrorCode::invalid_argument, "unknown annotation label '" + std::string(code) + "'");
}

// ---------------------------------------------------------------------------
// Guidance templates

using SlotBindings = std::map<std::string, std::string, std::less<>>;

namespace detail {

/// Length of the `{slot}` marker starting at `i`, or 0 if there is none.
/// Slot names are lowercase identifiers: [a-z][a-z0-9_]*.
inline std::size_t slot_marker_length(std::string_view line, std::size_t i) {
  if (line[i] != '{' || i + 1 >= line.size()) return 0;
  std::size_t j = i + 1;
  if (!(line[j] >= 'a' && line[j] <= 'z')) return 0;
  while (j < line.size() &&
         ((line[j] >= 'a' && line[j] <= 'z') || (line[j] >= '0' && line[j] <= '9') || line[j] == '_')) {
    ++j;
  }
  return j < line.size() && line[j] == '}' ? j - i + 1 : 0;
}

}  // namespace detail

/// Slot names referenced as `{name}` in a line of template text.
inline std::set<std::string> referenced_slots(std::string_view line) {
  std::set<std::string> slots;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (auto len = detail::slot_marker_length(line, i)) {
      slots.emplace(line.substr(i + 1, len - 2));
      i += len - 1;
    }
  }
  return slots;
}

/// Replaces each `{slot}` in one pass; substituted text is not rescanned.
inline std::string substitute_slots(std::string_view line, const SlotBindings& bindings) {
  std::string out;
  for (std::size_t i = 0; i < line.size(); ++i) {
    auto len = detail::slot_marker_length(line, i);
    if (!len) {
      out += line[i];
      continue;
    }
    auto name = line.substr(i + 1, len - 2);
    auto it = bindings.find(name);
    if (it == bindings.end()) throw Error(ErrorCode::unbound_placeholder, "{" + std::string(name) + "}");
    out += it->second;
    i += len - 1;
  }
  return out;
}

struct GuidanceTemplate {
  MisbehaviorCategory category{};
  std::string summary;
  std::vector<std::string> dos;
  std::vector<std::string> donts;
  std::set<std::string> placeholders;

  friend bool operator==(const GuidanceTemplate&, const GuidanceTemplate&) = default;

  void validate() const {
    auto check = [&](const std::string& line) {
      for (const auto& slot : referenced_slots(line)) {
        if (!placeholders.count(slot)) {
          throw Error(ErrorCode::invalid_template, std::string(category_code(category)) +
                                                      ": placeholder {" + slot + "} is not declared");
        }
      }
    };
    check(summary);
    for (const auto& l : dos) check(l);
    for (const auto& l : donts) check(l);
    if (dos.empty() && donts.empty()) {
      throw Error(ErrorCode::invalid_template,
                  std::string(category_code(category)) + ": template has no DO or DONT lines");
    }
  }

  /// Plain-text guidance. `extra_dos` are appended verbatim (not slot-scanned).
  std::string render(const SlotBindings& bindings, const std::vector<std::string>& extra_dos = {}) const {
    std::string out;
    if (!summary.empty()) out += substitute_slots(summary, bindings) + "\n";
    if (!dos.empty() || !extra_dos.empty()) {
      out += "DO:\n";
      for (const auto& l : dos) out += "- " + substitute_slots(l, bindings) + "\n";
      for (const auto& l : extra_dos) out += "- " + l + "\n";
    }
    if (!donts.empty()) {
      out += "DON'T:\n";
      for (const auto& l : donts) out += "- " + substitute_slots(l, bindings) + "\n";
    }
    if (!out.empty() && out.back() == '\n') out.pop_back();
    return out;
  }
};

/// Parses the `<code>.guidance.txt` format:
///
///     # comment
///     placeholders: slot_a, slot_b
///     summary: one line shown first
///     DO: ...
///     DONT: ...
inline GuidanceTemplate parse_guidance_template(std::string_view content, MisbehaviorCategory category) {
  GuidanceTemplate tpl;
  tpl.category = category;
  std::size_t line_no = 0;
  for (const auto& raw : text::split_lines(content)) {
    ++line_no;
    auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto colon = line.find(':');
    if (colon == std::string_view::npos) {
      throw Error(ErrorCode::invalid_template, std::string(category_code(category)) + " line " +
                                                  std::to_string(line_no) + ": expected 'KEY: value'");
    }
    auto key = text::to_lower(text::trim(line.substr(0, colon)));
    auto value = std::string(text::trim(line.substr(colon + 1)));
    if (key == "placeholders") {
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        auto slot = text::trim(item);
        if (!slot.empty()) tpl.placeholders.emplace(slot);
      }
    } else if (key == "summary") {
      tpl.summary = value;
    } else if (key == "do") {
      tpl.dos.push_back(value);
    } else if (key == "dont" || key == "don't") {
      tpl.donts.push_back(value);
    } else {
      throw Error(ErrorCode::invalid_template, std::string(category_code(category)) + " line " +
                                                  std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  tpl.validate();
  return tpl;
}

namespace detail {

inline std::string_view builtin_template_text(MisbehaviorCategory c) {
  switch (c) {
    case MisbehaviorCategory::reasoning_infinite_loop:
      return R"(# Repeated identical or near-identical tool calls.
placeholders: offending_tool, offending_args, repeat_count
summary: You have issued {offending_tool}({offending_args}) {repeat_count} times in a row without making progress.
DO: Reuse the content already returned by {offending_tool}({offending_args}) earlier in this conversation instead of requesting it again.
DO: Summarize what you have learned so far and choose a different next action that moves the task forward.
DONT: Do not call {offending_tool}({offending_args}) again; repeating an identical tool call will not return new information.
DONT: Do not re-read files that have not changed since you last read them.
)";
    case MisbehaviorCategory::tool_call_failure:
      return R"(# Failing tool invocations that are retried without correction.
placeholders: offending_tool, offending_args, error_detail
summary: Your call {offending_tool}({offending_args}) is failing: {error_detail}
DO: Read the error above and change the invocation so that it addresses the reported problem before retrying.
DO: Check the tool description for required parameters and accepted values, and supply all of them.
DONT: Do not retry {offending_tool}({offending_args}) with unchanged arguments.
DONT: Do not invoke tools that are not in your tool list.
)";
    case MisbehaviorCategory::spec_drift_dnf:
      return R"(# Drifting away from explicit user instructions.
placeholders: original_instruction, detail
summary: You are not following the user's explicit instructions. {detail}
DO: Return to the user's original request and follow it exactly: "{original_instruction}"
DO: If the user asked for a specific tool, mode or parameter, invoke that tool with exactly those parameters now.
DONT: Do not substitute your own manual approach for the method the user asked for.
)";
    case MisbehaviorCategory::spec_drift_uc:
      return R"(# Changes outside the scope of the request.
placeholders: original_instruction, detail
summary: You are making changes the user did not request. {detail}
DO: Limit your edits to what the user asked for: "{original_instruction}"
DO: Revert any modification to files that are unrelated to the request.
DONT: Do not edit files or content outside the scope of the user's instructions.
)";
  }
  return "";
}

}  // namespace detail

inline std::string guidance_file_name(MisbehaviorCategory c) {
  return std::string(category_code(c)) + ".guidance.txt";
}

/// Read-only after construction; safe to share across threads.
class TemplateStore {
 public:
  TemplateStore() = default;

  static TemplateStore builtin() {
    TemplateStore store;
    for (auto c : kAllCategories) {
      store.templates_.emplace(c, parse_guidance_template(detail::builtin_template_text(c), c));
    }
    return store;
  }

  /// Loads `<code>.guidance.txt` files; categories without a file keep the
  /// built-in template.
  static TemplateStore load_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
      throw Error(ErrorCode::io, "guidance store '" + dir.string() + "' is not a directory");
    }
    TemplateStore store = builtin();
    for (auto c : kAllCategories) {
      auto path = dir / guidance_file_name(c);
      if (!std::filesystem::exists(path)) continue;
      std::ifstream in(path);
      if (!in) throw Error(ErrorCode::io, "cannot read '" + path.string() + "'");
      std::stringstream buf;
      buf << in.rdbuf();
      store.templates_[c] = parse_guidance_template(buf.str(), c);
    }
    return store;
  }

  void set(GuidanceTemplate tpl) {
    tpl.validate();
    auto c = tpl.category;
    templates_[c] = std::move(tpl);
  }

  const GuidanceTemplate& guidance_template_for(MisbehaviorCategory c) const {
    auto it = templates_.find(c);
    if (it == templates_.end()) {
      throw Error(ErrorCode::unknown_category,
                  "no guidance template for '" + std::string(category_code(c)) + "'");
    }
    return it->second;
  }

  const GuidanceTemplate& guidance_template_for(std::string_view code) const {
    return guidance_template_for(parse_category(code));
  }

 private:
  std::map<MisbehaviorCategory, GuidanceTemplate> templates_;
};

}  // namespace trajguard
