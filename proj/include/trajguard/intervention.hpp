#pragma once

// Course-correction guidance: rendering findings through the template store,
// wrapping them in system-reminder tags, and appending them to a trajectory.

#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trajguard/detection.hpp"
#include "trajguard/error.hpp"
#include "trajguard/taxonomy.hpp"
#include "trajguard/trajectory.hpp"

namespace trajguard {

struct Guidance {
  std::string intervention_id;
  MisbehaviorCategory category{};
  std::string text;
  std::size_t created_at_index = 0;  // snapshot length that produced it
  std::size_t finding_index = 0;     // position in Feedback::findings

  friend bool operator==(const Guidance&, const Guidance&) = default;
};

struct InterventionRecord {
  std::string intervention_id;
  std::string session_id;
  std::size_t injected_at_index = 0;
  Feedback feedback;
  std::size_t finding_index = 0;

  const Finding& finding() const { return feedback.findings.at(finding_index); }
  MisbehaviorCategory category() const { return finding().category; }

  friend bool operator==(const InterventionRecord&, const InterventionRecord&) = default;
};

inline std::string make_intervention_id(std::string_view session_id, std::size_t analyzed_upto, std::size_t i) {
  return std::string(session_id) + "/iv-" + std::to_string(analyzed_upto) + "-" + std::to_string(i);
}

/// One guidance per finding, rendered from the category template. A
/// classifier-proposed correction is appended as an extra DO line.
inline std::vector<Guidance> generate_guidance(const Feedback& feedback, const Trajectory& traj,
                                               const TemplateStore& store = TemplateStore::builtin()) {
  std::vector<Guidance> out;
  for (std::size_t i = 0; i < feedback.findings.size(); ++i) {
    const auto& f = feedback.findings[i];
    const auto& tpl = store.guidance_template_for(f.category);
    std::vector<std::string> extra;
    if (f.correction && !text::trim(*f.correction).empty()) extra.emplace_back(text::trim(*f.correction));
    Guidance g;
    g.intervention_id = make_intervention_id(traj.session_id(), feedback.analyzed_upto, i);
    g.category = f.category;
    g.text = tpl.render(f.suggested_slots, extra);
    g.created_at_index = feedback.analyzed_upto;
    g.finding_index = i;
    if (text::trim(g.text).empty()) throw Error(ErrorCode::invalid_template, "guidance rendered to empty text");
    out.push_back(std::move(g));
  }
  return out;
}

inline constexpr std::string_view kReminderOpen = "<system-reminder>";
inline constexpr std::string_view kReminderClose = "</system-reminder>";

namespace detail {

// A tag written literally (`<`...`>`) or entity-encoded any number of times
// (`&lt;`, `&amp;lt;`, ...). Escaping adds one encoding level to each side;
// unescaping removes one, so the two are exact inverses.
inline const std::regex& reminder_tag_pattern() {
  static const std::regex re("(&(?:amp;)*lt;|<)(/?)system-reminder(&(?:amp;)*gt;|>)");
  return re;
}

inline std::string encode_bracket(const std::string& side, std::string_view literal, std::string_view entity) {
  if (side == literal) return std::string(entity);
  return "&amp;" + side.substr(1);
}

inline std::string decode_bracket(const std::string& side, std::string_view literal) {
  if (side.rfind("&amp;", 0) == 0) return "&" + side.substr(5);
  return std::string(literal);
}

template <typename Fn>
std::string rewrite_tags(std::string_view s, Fn fn) {
  std::string out;
  std::string input(s);
  auto begin = std::sregex_iterator(input.begin(), input.end(), reminder_tag_pattern());
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    out.append(input, last, static_cast<std::size_t>(m.position(0)) - last);
    out += fn(m[1].str(), m[2].str(), m[3].str());
    last = static_cast<std::size_t>(m.position(0) + m.length(0));
  }
  out.append(input, last, std::string::npos);
  return out;
}

}  // namespace detail

inline std::string escape_reminder_text(std::string_view s) {
  return detail::rewrite_tags(s, [](const std::string& l, const std::string& slash, const std::string& r) {
    return detail::encode_bracket(l, "<", "&lt;") + slash + "system-reminder" + detail::encode_bracket(r, ">", "&gt;");
  });
}

inline std::string unescape_reminder_text(std::string_view s) {
  return detail::rewrite_tags(s, [](const std::string& l, const std::string& slash, const std::string& r) {
    return detail::decode_bracket(l, "<") + slash + "system-reminder" + detail::decode_bracket(r, ">");
  });
}

inline std::string render_system_reminder(std::string_view text) {
  std::string out(kReminderOpen);
  out += '\n';
  out += escape_reminder_text(text);
  out += '\n';
  out += kReminderClose;
  return out;
}

inline std::string render_system_reminder(const Guidance& g) { return render_system_reminder(g.text); }

/// Inverse of render_system_reminder; nullopt when the tags are missing.
inline std::optional<std::string> parse_system_reminder(std::string_view rendered) {
  auto open = std::string(kReminderOpen) + "\n";
  auto close = "\n" + std::string(kReminderClose);
  if (rendered.size() < open.size() + close.size()) return std::nullopt;
  if (rendered.substr(0, open.size()) != open) return std::nullopt;
  if (rendered.substr(rendered.size() - close.size()) != close) return std::nullopt;
  return unescape_reminder_text(rendered.substr(open.size(), rendered.size() - open.size() - close.size()));
}

inline Event reminder_event(const Guidance& g) {
  SystemReminder r;
  r.text = render_system_reminder(g);
  r.source_intervention_id = g.intervention_id;
  r.hidden = true;
  r.token_count = text::count_tokens(g.text);
  return r;
}

/// The next agent input: the trajectory followed by one reminder per pending
/// guidance, in arrival order.
inline std::vector<Event> agent_input(const Trajectory& traj, const std::vector<Guidance>& pending) {
  std::vector<Event> out(traj.events().begin(), traj.events().end());
  out.reserve(out.size() + pending.size());
  for (const auto& g : pending) out.push_back(reminder_event(g));
  return out;
}

/// Appends the guidance as a hidden system reminder. Only legal right after
/// an observation (possibly following other reminders at the same boundary).
inline InterventionRecord inject(Trajectory& traj, const Guidance& g, const Feedback& feedback) {
  if (!traj.at_step_boundary()) {
    throw Error(ErrorCode::not_at_step_boundary,
                "cannot inject '" + g.intervention_id + "' in the middle of a step");
  }
  if (g.text.empty()) throw Error(ErrorCode::invalid_argument, "guidance text is empty");
  if (g.finding_index >= feedback.findings.size()) {
    throw Error(ErrorCode::invalid_argument, "guidance refers to a finding the feedback does not contain");
  }
  InterventionRecord rec;
  rec.intervention_id = g.intervention_id;
  rec.session_id = traj.session_id();
  rec.injected_at_index = traj.size();
  rec.feedback = feedback;
  rec.finding_index = g.finding_index;
  traj.append(reminder_event(g));
  return rec;
}

/// Value-returning form of inject.
inline std::pair<Trajectory, InterventionRecord> with_injection(Trajectory traj, const Guidance& g,
                                                                const Feedback& feedback) {
  auto rec = inject(traj, g, feedback);
  return {std::move(traj), std::move(rec)};
}

/// Guidance text of the reminder an intervention record points at.
inline std::optional<std::string> injected_guidance_text(const Trajectory& traj, const InterventionRecord& rec) {
  if (rec.injected_at_index >= traj.size()) return std::nullopt;
  const auto* r = event_as<SystemReminder>(traj[rec.injected_at_index]);
  if (!r) return std::nullopt;
  return parse_system_reminder(r->text);
}

}  // namespace trajguard
