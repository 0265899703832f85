#pragma once

// Line-delimited JSON corpus files. Each line is one self-describing record
// carrying `schema_version` and a `record` kind:
//
//   session       session_id, system_prompt, model_tag, tool_specs
//   event         session_id, index, event_type, token_count, payload fields
//   outcome       session_id, outcome
//   intervention  session_id, intervention_id, injected_at_index,
//                 finding_index, feedback
//   labels        session_id, categories
//
// Event payload fields by event_type:
//   user_message / assistant_message   text
//   action                             call_id, tool_name, arguments
//   observation                        call_id, status, payload, error_kind
//   system_reminder                    text, intervention_id, hidden
//
// Records of a session follow its `session` record; events appear in index
// order. Keys are written sorted, so output is byte-stable.

#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajguard/detection.hpp"
#include "trajguard/error.hpp"
#include "trajguard/intervention.hpp"
#include "trajguard/taxonomy.hpp"
#include "trajguard/trajectory.hpp"

namespace trajguard {

inline constexpr int kSchemaVersion = 1;

/// A trajectory with everything recorded alongside it.
struct SessionRecord {
  Trajectory trajectory;
  std::vector<InterventionRecord> interventions;
  std::set<MisbehaviorCategory> labels;
  bool labeled = false;

  friend bool operator==(const SessionRecord&, const SessionRecord&) = default;
};

namespace corpus_json {

using json = nlohmann::json;

inline json arg_to_json(const ArgValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  if (const auto* d = std::get_if<double>(&v)) return *d;
  return std::get<bool>(v);
}

inline ArgValue arg_from_json(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_number_unsigned()) {
    auto u = j.get<std::uint64_t>();
    if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
      throw Error(ErrorCode::malformed_record, "integer argument out of range");
    }
    return static_cast<std::int64_t>(u);
  }
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) return j.get<double>();
  throw Error(ErrorCode::malformed_record, "argument values must be strings, numbers or booleans");
}

inline json call_to_json(const ToolCall& c) {
  json args = json::object();
  for (const auto& [k, v] : c.arguments) args[k] = arg_to_json(v);
  return {{"tool_name", c.tool_name}, {"arguments", args}, {"call_id", c.call_id}};
}

inline ToolCall call_from_json(const json& j) {
  ToolCall c;
  c.tool_name = j.at("tool_name").get<std::string>();
  c.call_id = j.at("call_id").get<std::string>();
  for (const auto& [k, v] : j.at("arguments").items()) c.arguments.emplace(k, arg_from_json(v));
  return c;
}

inline std::string_view error_kind_name(ToolErrorKind k) {
  switch (k) {
    case ToolErrorKind::unknown_tool: return "unknown_tool";
    case ToolErrorKind::missing_param: return "missing_param";
    case ToolErrorKind::invalid_param: return "invalid_param";
    case ToolErrorKind::runtime_error: return "runtime_error";
  }
  return "runtime_error";
}

inline ToolErrorKind parse_error_kind(std::string_view s) {
  for (auto k : {ToolErrorKind::unknown_tool, ToolErrorKind::missing_param, ToolErrorKind::invalid_param,
                 ToolErrorKind::runtime_error}) {
    if (error_kind_name(k) == s) return k;
  }
  throw Error(ErrorCode::malformed_record, "unknown error_kind '" + std::string(s) + "'");
}

inline json event_to_json(const std::string& session_id, std::size_t index, const Event& e) {
  json j = {{"schema_version", kSchemaVersion},
            {"record", "event"},
            {"session_id", session_id},
            {"index", index},
            {"event_type", std::string(event_type_name(e))},
            {"token_count", token_count(e)}};
  if (const auto* u = event_as<UserMessage>(e)) {
    j["text"] = u->text;
  } else if (const auto* a = event_as<AssistantMessage>(e)) {
    j["text"] = a->text;
  } else if (const auto* act = event_as<Action>(e)) {
    j["call_id"] = act->call.call_id;
    j["tool_name"] = act->call.tool_name;
    j["arguments"] = call_to_json(act->call)["arguments"];
  } else if (const auto* o = event_as<Observation>(e)) {
    const auto& r = o->result;
    j["call_id"] = r.call_id;
    j["status"] = r.status == ResultStatus::ok ? "ok" : "error";
    j["payload"] = r.payload;
    j["error_kind"] = r.error_kind ? json(std::string(error_kind_name(*r.error_kind))) : json(nullptr);
  } else {
    const auto& r = std::get<SystemReminder>(e);
    j["text"] = r.text;
    j["intervention_id"] = r.source_intervention_id;
    j["hidden"] = r.hidden;
  }
  return j;
}

inline Event event_from_json(const json& j) {
  auto type = j.at("event_type").get<std::string>();
  auto tokens = j.at("token_count").get<std::uint64_t>();
  if (type == "user_message") return UserMessage{j.at("text").get<std::string>(), tokens};
  if (type == "assistant_message") return AssistantMessage{j.at("text").get<std::string>(), tokens};
  if (type == "action") {
    ToolCall c;
    c.call_id = j.at("call_id").get<std::string>();
    c.tool_name = j.at("tool_name").get<std::string>();
    for (const auto& [k, v] : j.at("arguments").items()) c.arguments.emplace(k, arg_from_json(v));
    return Action{std::move(c), tokens};
  }
  if (type == "observation") {
    ToolResult r;
    r.call_id = j.at("call_id").get<std::string>();
    auto status = j.at("status").get<std::string>();
    if (status != "ok" && status != "error") throw Error(ErrorCode::malformed_record, "bad status '" + status + "'");
    r.status = status == "ok" ? ResultStatus::ok : ResultStatus::error;
    r.payload = j.at("payload").get<std::string>();
    const auto& kind = j.at("error_kind");
    if (!kind.is_null()) r.error_kind = parse_error_kind(kind.get<std::string>());
    r.token_count = tokens;
    return Observation{std::move(r)};
  }
  if (type == "system_reminder") {
    return SystemReminder{j.at("text").get<std::string>(), j.at("intervention_id").get<std::string>(),
                          j.at("hidden").get<bool>(), tokens};
  }
  throw Error(ErrorCode::malformed_record, "unknown event_type '" + type + "'");
}

inline json finding_to_json(const Finding& f) {
  json slots = json::object();
  for (const auto& [k, v] : f.suggested_slots) slots[k] = v;
  return {{"category", std::string(category_code(f.category))},
          {"evidence", {f.evidence.begin, f.evidence.end}},
          {"reasoning", f.reasoning},
          {"suggested_slots", slots},
          {"pattern", std::string(pattern_name(f.pattern))},
          {"offending_call", f.offending_call ? call_to_json(*f.offending_call) : json(nullptr)},
          {"correction", f.correction ? json(*f.correction) : json(nullptr)}};
}

inline Finding finding_from_json(const json& j) {
  Finding f;
  f.category = parse_category(j.at("category").get<std::string>());
  const auto& ev = j.at("evidence");
  if (!ev.is_array() || ev.size() != 2) throw Error(ErrorCode::malformed_record, "evidence must be [begin, end]");
  f.evidence = {ev[0].get<std::size_t>(), ev[1].get<std::size_t>()};
  f.reasoning = j.at("reasoning").get<std::string>();
  for (const auto& [k, v] : j.at("suggested_slots").items()) f.suggested_slots.emplace(k, v.get<std::string>());
  auto pattern = parse_pattern(j.at("pattern").get<std::string>());
  if (!pattern) throw Error(ErrorCode::malformed_record, "unknown pattern");
  f.pattern = *pattern;
  if (!j.at("offending_call").is_null()) f.offending_call = call_from_json(j.at("offending_call"));
  if (!j.at("correction").is_null()) f.correction = j.at("correction").get<std::string>();
  return f;
}

inline json feedback_to_json(const Feedback& fb) {
  json findings = json::array();
  for (const auto& f : fb.findings) findings.push_back(finding_to_json(f));
  return {{"misbehavior_detected", fb.misbehavior_detected}, {"analyzed_upto", fb.analyzed_upto}, {"findings", findings}};
}

inline Feedback feedback_from_json(const json& j) {
  Feedback fb;
  fb.misbehavior_detected = j.at("misbehavior_detected").get<bool>();
  fb.analyzed_upto = j.at("analyzed_upto").get<std::size_t>();
  for (const auto& f : j.at("findings")) fb.findings.push_back(finding_from_json(f));
  if (fb.misbehavior_detected != !fb.findings.empty()) {
    throw Error(ErrorCode::malformed_record, "misbehavior_detected disagrees with findings");
  }
  return fb;
}

inline json header(const char* kind, const std::string& session_id) {
  return {{"schema_version", kSchemaVersion}, {"record", kind}, {"session_id", session_id}};
}

}  // namespace corpus_json

inline void write_session(std::ostream& out, const SessionRecord& rec) {
  using corpus_json::json;
  const auto& t = rec.trajectory;
  const auto& sid = t.session_id();

  auto session = corpus_json::header("session", sid);
  session["system_prompt"] = t.meta().system_prompt;
  session["model_tag"] = t.meta().model_tag;
  json specs = json::array();
  for (const auto& s : t.meta().tool_specs) {
    specs.push_back({{"name", s.name}, {"params", s.params}, {"required_params", s.required_params}});
  }
  session["tool_specs"] = specs;
  out << session.dump() << '\n';

  for (std::size_t i = 0; i < t.size(); ++i) out << corpus_json::event_to_json(sid, i, t[i]).dump() << '\n';

  auto outcome = corpus_json::header("outcome", sid);
  outcome["outcome"] = std::string(outcome_name(t.outcome()));
  out << outcome.dump() << '\n';

  for (const auto& iv : rec.interventions) {
    auto j = corpus_json::header("intervention", sid);
    j["intervention_id"] = iv.intervention_id;
    j["injected_at_index"] = iv.injected_at_index;
    j["finding_index"] = iv.finding_index;
    j["feedback"] = corpus_json::feedback_to_json(iv.feedback);
    out << j.dump() << '\n';
  }

  if (rec.labeled) {
    auto j = corpus_json::header("labels", sid);
    json cats = json::array();
    for (auto c : rec.labels) cats.push_back(std::string(category_code(c)));
    j["categories"] = cats;
    out << j.dump() << '\n';
  }
}

inline void write_corpus(std::ostream& out, std::span<const SessionRecord> sessions) {
  for (const auto& s : sessions) write_session(out, s);
}

inline std::string corpus_to_string(std::span<const SessionRecord> sessions) {
  std::ostringstream out;
  write_corpus(out, sessions);
  return out.str();
}

inline std::vector<SessionRecord> read_corpus(std::istream& in) {
  using corpus_json::json;
  std::vector<SessionRecord> sessions;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      json j = json::parse(line);
      if (!j.is_object()) throw Error(ErrorCode::malformed_record, "record is not a JSON object");
      if (!j.contains("schema_version")) throw Error(ErrorCode::malformed_record, "missing schema_version");
      const auto& version = j.at("schema_version");
      if (!version.is_number_integer() || version.get<std::int64_t>() != kSchemaVersion) {
        throw Error(ErrorCode::schema_version_mismatch,
                    "expected schema_version " + std::to_string(kSchemaVersion) + ", found " + version.dump(),
                    line_no);
      }
      auto kind = j.at("record").get<std::string>();
      auto sid = j.at("session_id").get<std::string>();

      if (kind == "session") {
        SessionMeta meta;
        meta.system_prompt = j.at("system_prompt").get<std::string>();
        meta.model_tag = j.at("model_tag").get<std::string>();
        for (const auto& s : j.at("tool_specs")) {
          ToolSignature sig;
          sig.name = s.at("name").get<std::string>();
          sig.params = s.at("params").get<std::set<std::string>>();
          sig.required_params = s.at("required_params").get<std::set<std::string>>();
          meta.tool_specs.push_back(std::move(sig));
        }
        sessions.push_back(SessionRecord{Trajectory(sid, std::move(meta)), {}, {}, false});
        continue;
      }

      if (sessions.empty() || sessions.back().trajectory.session_id() != sid) {
        throw Error(ErrorCode::malformed_record, "record for session '" + sid + "' before its session record");
      }
      auto& current = sessions.back();
      if (kind == "event") {
        auto index = j.at("index").get<std::size_t>();
        if (index != current.trajectory.size()) {
          throw Error(ErrorCode::malformed_record, "event index " + std::to_string(index) + " out of order");
        }
        current.trajectory.append(corpus_json::event_from_json(j));
      } else if (kind == "outcome") {
        auto o = parse_outcome(j.at("outcome").get<std::string>());
        if (!o) throw Error(ErrorCode::malformed_record, "unknown outcome");
        current.trajectory.set_outcome(*o);
      } else if (kind == "intervention") {
        InterventionRecord iv;
        iv.intervention_id = j.at("intervention_id").get<std::string>();
        iv.session_id = sid;
        iv.injected_at_index = j.at("injected_at_index").get<std::size_t>();
        iv.finding_index = j.at("finding_index").get<std::size_t>();
        iv.feedback = corpus_json::feedback_from_json(j.at("feedback"));
        if (iv.finding_index >= iv.feedback.findings.size()) {
          throw Error(ErrorCode::malformed_record, "finding_index out of range");
        }
        current.interventions.push_back(std::move(iv));
      } else if (kind == "labels") {
        current.labeled = true;
        for (const auto& c : j.at("categories")) current.labels.insert(parse_category(c.get<std::string>()));
      } else {
        throw Error(ErrorCode::malformed_record, "unknown record kind '" + kind + "'");
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::schema_version_mismatch) throw;
      auto msg = e.code() == ErrorCode::malformed_record ? e.message() : std::string(e.what());
      throw Error(ErrorCode::malformed_record, msg, line_no);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::malformed_record, e.what(), line_no);
    }
  }
  return sessions;
}

inline std::vector<SessionRecord> corpus_from_string(const std::string& s) {
  std::istringstream in(s);
  return read_corpus(in);
}

inline void save_corpus(std::span<const SessionRecord> sessions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  write_corpus(out, sessions);
  out.flush();
  if (!out) throw Error(ErrorCode::io, "failed writing '" + path.string() + "'");
}

inline std::vector<SessionRecord> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
  return read_corpus(in);
}

/// Wraps bare trajectories for saving.
inline std::vector<SessionRecord> as_records(std::span<const Trajectory> trajectories) {
  std::vector<SessionRecord> out;
  out.reserve(trajectories.size());
  for (const auto& t : trajectories) out.push_back(SessionRecord{t, {}, {}, false});
  return out;
}

}  // namespace trajguard
