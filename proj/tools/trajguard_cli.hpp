#pragma once

// Command implementations behind the `trajguard` executable. Kept in a
// header so tests can drive them with in-memory streams.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "trajguard/trajguard.hpp"

namespace trajguard::cli {

enum ExitCode : int { exit_ok = 0, exit_validation = 1, exit_io = 2, exit_gate = 3 };

inline int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::io:
    case ErrorCode::backend_unavailable: return exit_io;
    default: return exit_validation;
  }
}

struct BackendSelection {
  std::string kind = "mock";  // mock | http
  std::string endpoint;
  std::string api_key_env;
};

inline PopulationSpec default_population() { return PopulationSpec::mixed(100, 0.3, 0.9); }

struct CliConfig {
  std::string subcommand;
  std::vector<std::string> corpus;
  std::string out;  // empty: standard output
  std::uint64_t seed = 7;
  ObserverConfig observer;
  SessionMode mode = SessionMode::treatment;
  BackendSelection backend;
  OutputFormat format = OutputFormat::text;
  std::size_t max_steps = 30;
  std::size_t detector_latency_steps = 1;
  PopulationSpec population = default_population();
  std::string guidance_dir;
  std::vector<MisbehaviorCategory> categories;  // calibrate; empty means all
  std::string judge = "auto";                   // auto | llm
  std::string counts;                           // report
  std::string annotations;                      // annotate
  std::size_t sample = 20;                      // annotate
  bool labeled = false;                         // fixtures

  void validate() const {
    observer.validate();
    if (max_steps < 1) throw Error(ErrorCode::invalid_config, "max_steps: must be at least 1");
    if (backend.kind != "mock" && backend.kind != "http") {
      throw Error(ErrorCode::invalid_config, "backend: must be mock or http, got '" + backend.kind + "'");
    }
    if (backend.kind == "http") {
      if (backend.endpoint.empty()) throw Error(ErrorCode::invalid_config, "endpoint: required by the http backend");
      parse_endpoint(backend.endpoint);
    }
    if (judge != "auto" && judge != "llm") {
      throw Error(ErrorCode::invalid_config, "judge: must be auto or llm, got '" + judge + "'");
    }
    population.validate();
  }
};

// ---------------------------------------------------------------------------
// Config file

namespace config_json {

using json = nlohmann::json;

[[noreturn]] inline void fail(const std::string& path, const std::string& msg) {
  throw Error(ErrorCode::invalid_config, path + ": " + msg);
}

inline std::string sub(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

inline std::string sub(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

inline std::uint64_t as_uint(const json& v, const std::string& path) {
  if (!v.is_number_unsigned()) fail(path, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  return v.get<double>();
}

inline std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "expected a string");
  return v.get<std::string>();
}

inline bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) fail(path, "expected true or false");
  return v.get<bool>();
}

inline const json& as_object(const json& v, const std::string& path) {
  if (!v.is_object()) fail(path, "expected an object");
  return v;
}

/// Runs `parse` and prefixes any validation error with `path`.
template <class F>
auto at_path(const std::string& path, F&& parse) {
  try {
    return parse();
  } catch (const Error& e) {
    if (e.message().rfind(path + ":", 0) == 0) throw;
    // arithmetic problems keep their code, parse problems become config errors
    if (e.code() == ErrorCode::degenerate_input || e.code() == ErrorCode::zero_total) {
      throw Error(e.code(), path + ": " + e.message());
    }
    if (e.code() != ErrorCode::invalid_config && e.code() != ErrorCode::invalid_argument &&
        e.code() != ErrorCode::unknown_category) {
      throw;
    }
    fail(path, e.message());
  }
}

inline double probability(const json& v, const std::string& path) {
  double p = as_double(v, path);
  if (!(p >= 0.0 && p <= 1.0)) fail(path, "must be in [0, 1]");
  return p;
}

inline PopulationSpec population_from(const json& j, const std::string& path) {
  as_object(j, path);
  if (j.contains("entries")) {
    for (const auto& [key, _] : j.items()) {
      if (key != "entries") fail(sub(path, key), "unknown key (entries cannot be combined with other keys)");
    }
    const auto& entries = j.at("entries");
    auto epath = sub(path, "entries");
    if (!entries.is_array() || entries.empty()) fail(epath, "expected a non-empty array");
    PopulationSpec spec;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto p = sub(epath, i);
      const auto& e = as_object(entries[i], p);
      PopulationEntry entry;
      for (const auto& [key, value] : e.items()) {
        auto kp = sub(p, key);
        if (key == "behavior") {
          entry.behavior.kind = at_path(kp, [&] { return parse_behavior(as_string(value, kp)); });
        } else if (key == "count") {
          entry.count = as_uint(value, kp);
        } else if (key == "obedience") {
          entry.behavior.obedience = probability(value, kp);
        } else if (key == "fumble_mode") {
          entry.behavior.fumble = at_path(kp, [&] { return parse_fumble_mode(as_string(value, kp)); });
        } else {
          fail(kp, "unknown key");
        }
      }
      if (!e.contains("behavior")) fail(sub(p, "behavior"), "required");
      if (!e.contains("count")) fail(sub(p, "count"), "required");
      spec.entries.push_back(entry);
    }
    return spec;
  }
  std::size_t sessions = 100;
  double fraction = 0.3;
  double obedience = 0.9;
  for (const auto& [key, value] : j.items()) {
    auto kp = sub(path, key);
    if (key == "sessions") {
      sessions = as_uint(value, kp);
    } else if (key == "misbehaving_fraction") {
      fraction = probability(value, kp);
    } else if (key == "obedience") {
      obedience = probability(value, kp);
    } else {
      fail(kp, "unknown key");
    }
  }
  if (sessions == 0) fail(sub(path, "sessions"), "must be at least 1");
  return PopulationSpec::mixed(sessions, fraction, obedience);
}

inline void apply_observer(const json& j, ObserverConfig& obs, const std::string& path) {
  as_object(j, path);
  for (const auto& [key, value] : j.items()) {
    auto kp = sub(path, key);
    if (key == "k") {
      obs.k = as_uint(value, kp);
      if (obs.k < 1) fail(kp, "must be at least 1");
    } else if (key == "max_in_flight") {
      obs.max_in_flight = as_uint(value, kp);
      if (obs.max_in_flight < 1) fail(kp, "must be at least 1");
    } else if (key == "staleness_policy") {
      obs.staleness = at_path(kp, [&] { return parse_staleness(as_string(value, kp)); });
    } else {
      fail(kp, "unknown key");
    }
  }
}

inline void apply_backend(const json& j, BackendSelection& b, const std::string& path) {
  if (j.is_string()) {
    b.kind = j.get<std::string>();
    return;
  }
  as_object(j, path);
  for (const auto& [key, value] : j.items()) {
    auto kp = sub(path, key);
    if (key == "kind") {
      b.kind = as_string(value, kp);
    } else if (key == "endpoint") {
      b.endpoint = as_string(value, kp);
    } else if (key == "api_key_env") {
      b.api_key_env = as_string(value, kp);
    } else {
      fail(kp, "unknown key");
    }
  }
}

inline std::vector<std::string> string_list(const json& v, const std::string& path) {
  if (v.is_string()) return {v.get<std::string>()};
  if (!v.is_array()) fail(path, "expected a string or an array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_string(v[i], sub(path, i)));
  return out;
}

/// Applies every key of a config document to `cfg`.
inline void apply(const json& j, CliConfig& cfg) {
  as_object(j, "config");
  for (const auto& [key, value] : j.items()) {
    if (key == "corpus") {
      cfg.corpus = string_list(value, key);
    } else if (key == "out") {
      cfg.out = as_string(value, key);
    } else if (key == "seed") {
      cfg.seed = as_uint(value, key);
    } else if (key == "k") {
      cfg.observer.k = as_uint(value, key);
      if (cfg.observer.k < 1) fail(key, "must be at least 1");
    } else if (key == "observer") {
      apply_observer(value, cfg.observer, key);
    } else if (key == "mode") {
      cfg.mode = at_path(key, [&] { return parse_mode(as_string(value, key)); });
    } else if (key == "backend") {
      apply_backend(value, cfg.backend, key);
    } else if (key == "endpoint") {
      cfg.backend.endpoint = as_string(value, key);
    } else if (key == "api_key_env") {
      cfg.backend.api_key_env = as_string(value, key);
    } else if (key == "format") {
      cfg.format = at_path(key, [&] { return parse_format(as_string(value, key)); });
    } else if (key == "max_steps") {
      cfg.max_steps = as_uint(value, key);
    } else if (key == "detector_latency_steps") {
      cfg.detector_latency_steps = as_uint(value, key);
    } else if (key == "population") {
      cfg.population = population_from(value, key);
    } else if (key == "guidance_dir") {
      cfg.guidance_dir = as_string(value, key);
    } else if (key == "categories") {
      auto codes = string_list(value, key);
      cfg.categories.clear();
      for (std::size_t i = 0; i < codes.size(); ++i) {
        cfg.categories.push_back(at_path(sub(key, i), [&] { return parse_category(codes[i]); }));
      }
    } else if (key == "judge") {
      cfg.judge = as_string(value, key);
    } else if (key == "sample") {
      cfg.sample = as_uint(value, key);
    } else if (key == "labeled") {
      cfg.labeled = as_bool(value, key);
    } else {
      fail(key, "unknown key");
    }
  }
}

inline json load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::invalid_config, "config file '" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace config_json

// ---------------------------------------------------------------------------
// Shared plumbing

inline std::shared_ptr<const ClassifierBackend> make_backend(const CliConfig& cfg) {
  if (cfg.backend.kind == "http") {
    return std::make_shared<HttpBackend>(HttpBackendConfig{cfg.backend.endpoint, cfg.backend.api_key_env});
  }
  return std::make_shared<HeuristicMockBackend>();
}

inline TemplateStore template_store(const CliConfig& cfg) {
  return cfg.guidance_dir.empty() ? TemplateStore::builtin() : TemplateStore::load_directory(cfg.guidance_dir);
}

inline std::vector<SessionRecord> load_corpora(const CliConfig& cfg) {
  if (cfg.corpus.empty()) throw Error(ErrorCode::invalid_config, "corpus: at least one corpus file is required");
  std::vector<SessionRecord> all;
  for (const auto& path : cfg.corpus) {
    auto part = load_corpus(path);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return all;
}

/// Writes to --out when given, otherwise to `fallback`.
template <class F>
void emit(const CliConfig& cfg, std::ostream& fallback, F&& write) {
  if (cfg.out.empty()) {
    write(fallback);
    return;
  }
  std::ofstream file(cfg.out, std::ios::binary);
  if (!file) throw Error(ErrorCode::io, "cannot write '" + cfg.out + "'");
  write(file);
  if (!file) throw Error(ErrorCode::io, "write to '" + cfg.out + "' failed");
}

inline void print_record(std::ostream& out, const nlohmann::json& j) { out << j.dump() << '\n'; }

inline SessionConfig session_config(const CliConfig& cfg) {
  SessionConfig s;
  s.max_steps = cfg.max_steps;
  s.observer = cfg.observer;
  s.mode = cfg.mode;
  s.seed = cfg.seed;
  s.detector_latency_steps = cfg.detector_latency_steps;
  return s;
}

// ---------------------------------------------------------------------------
// Commands

/// Per-trajectory findings plus the prevalence table.
inline int cmd_detect(const CliConfig& cfg, std::ostream& out) {
  auto corpus = load_corpora(cfg);
  auto backend = make_backend(cfg);
  DetectionConfig detection;
  std::vector<Feedback> feedback;
  feedback.reserve(corpus.size());
  for (const auto& rec : corpus) feedback.push_back(run_misbehavior_detection(rec.trajectory, detection, backend.get()));
  auto table = prevalence(feedback);

  emit(cfg, out, [&](std::ostream& o) {
    if (cfg.format == OutputFormat::records) {
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        nlohmann::json findings = nlohmann::json::array();
        for (const auto& f : feedback[i].findings) findings.push_back(finding_summary(f));
        print_record(o, {{"record", "detection"},
                         {"session_id", corpus[i].trajectory.session_id()},
                         {"misbehavior_detected", feedback[i].misbehavior_detected},
                         {"findings", findings}});
      }
      print_record(o, prevalence_record(table));
      return;
    }
    for (std::size_t i = 0; i < corpus.size(); ++i) o << render_feedback_text(corpus[i].trajectory.session_id(), feedback[i]);
    o << '\n' << render_prevalence_text(table);
  });
  return exit_ok;
}

struct SimulationSummary {
  std::size_t sessions = 0;
  std::size_t invocations = 0;
  std::size_t flagged = 0;
  std::size_t interventions = 0;
  std::size_t goal_completed = 0;
};

inline SimulationSummary summarize_arm(const ArmResult& arm) {
  SimulationSummary s;
  s.sessions = arm.sessions.size();
  s.invocations = arm.invocations;
  s.flagged = arm.flagged;
  for (const auto& r : arm.sessions) {
    s.interventions += r.interventions.size();
    if (r.trajectory.outcome() == SessionOutcome::goal_completed) ++s.goal_completed;
  }
  return s;
}

/// Runs the population in one mode and writes the resulting corpus.
inline int cmd_simulate(const CliConfig& cfg, std::ostream& out) {
  auto store = template_store(cfg);
  auto assignment = cfg.population.assignment(cfg.seed);
  auto arm = run_arm(assignment, session_config(cfg), cfg.seed, ToolRegistry::standard(), store);

  std::vector<SessionRecord> records;
  records.reserve(arm.sessions.size());
  for (const auto& s : arm.sessions) records.push_back(SessionRecord{s.trajectory, s.interventions, {}, false});
  if (cfg.out.empty()) {
    write_corpus(out, records);
    return exit_ok;
  }
  save_corpus(records, cfg.out);

  auto s = summarize_arm(arm);
  if (cfg.format == OutputFormat::records) {
    print_record(out, {{"record", "simulation"},
                       {"mode", std::string(mode_name(cfg.mode))},
                       {"seed", cfg.seed},
                       {"sessions", s.sessions},
                       {"invocations", s.invocations},
                       {"flagged", s.flagged},
                       {"interventions", s.interventions},
                       {"goal_completed", s.goal_completed},
                       {"corpus", cfg.out}});
    return exit_ok;
  }
  TextTable t({"Mode", "Sessions", "Invocations", "Flagged", "Interventions", "Goal Completed"});
  t.add({std::string(mode_name(cfg.mode)), std::to_string(s.sessions), std::to_string(s.invocations),
         std::to_string(s.flagged), std::to_string(s.interventions), std::to_string(s.goal_completed)});
  out << t.render() << "corpus written to " << cfg.out << '\n';
  return exit_ok;
}

/// Paired control (detect only) and treatment (detect and correct) arms.
inline int cmd_abtest(const CliConfig& cfg, std::ostream& out) {
  auto store = template_store(cfg);
  auto base = session_config(cfg);
  auto result = run_experiment(cfg.population, base, base, cfg.seed, store);
  auto rates = compare_misbehavior_rates(result.control.flagged, result.control.invocations, result.treatment.flagged,
                                         result.treatment.invocations);
  auto cm = result.control.metrics();
  auto tm = result.treatment.metrics();
  auto report = experiment_report(cm, tm);

  emit(cfg, out, [&](std::ostream& o) {
    if (cfg.format == OutputFormat::records) {
      print_record(o, rate_comparison_record(rates));
      print_record(o, experiment_record(report));
      return;
    }
    o << "Misbehavior rate (flagged observer invocations)\n" << render_rate_comparison_text(rates) << '\n';
    o << "Session metrics\n" << render_experiment_text(report);
  });
  return exit_ok;
}

struct JudgedCorpus {
  std::vector<RecoveryVerdict> single;    // sessions with one intervention
  std::vector<RecoveryVerdict> multiple;  // sessions with two or more
};

inline JudgedCorpus judge_corpus(const std::vector<SessionRecord>& corpus, const CliConfig& cfg) {
  auto backend = make_backend(cfg);
  JudgedCorpus judged;
  std::size_t records = 0;
  for (const auto& s : corpus) {
    if (s.interventions.empty()) continue;
    records += s.interventions.size();
    auto& bucket = s.interventions.size() == 1 ? judged.single : judged.multiple;
    for (const auto& rec : s.interventions) {
      bucket.push_back(cfg.judge == "llm" ? judge_recovery_llm(rec, s.trajectory, *backend)
                                          : judge_recovery(rec, s.trajectory, backend.get()));
    }
  }
  if (records == 0) throw Error(ErrorCode::empty_sample, "corpus has no intervention records to judge");
  return judged;
}

inline void write_recovery(std::ostream& o, const JudgedCorpus& judged, OutputFormat format) {
  auto group = [&](const std::vector<RecoveryVerdict>& verdicts, const std::string& name, const std::string& title) {
    if (format == OutputFormat::records) {
      if (!verdicts.empty()) print_record(o, recovery_record(recovery_rate(verdicts), name));
      return;
    }
    if (verdicts.empty()) {
      o << title << "\n(no sessions)\n";
    } else {
      o << render_recovery_text(recovery_rate(verdicts), title);
    }
  };
  group(judged.single, "single", "Single intervention per session");
  if (format == OutputFormat::text) o << '\n';
  group(judged.multiple, "multiple", "Multiple interventions per session");
}

/// Recovery tables split by the number of interventions per session.
inline int cmd_judge(const CliConfig& cfg, std::ostream& out) {
  auto corpus = load_corpora(cfg);
  auto judged = judge_corpus(corpus, cfg);
  emit(cfg, out, [&](std::ostream& o) {
    if (cfg.format == OutputFormat::records) {
      for (const auto* group : {&judged.single, &judged.multiple}) {
        for (const auto& v : *group) {
          print_record(o, {{"record", "verdict"},
                           {"intervention_id", v.intervention_id},
                           {"category", std::string(category_code(v.category))},
                           {"verdict", std::string(verdict_name(v.verdict))},
                           {"judge", std::string(judge_kind_name(v.judge_kind))},
                           {"rationale", v.rationale}});
        }
      }
    }
    write_recovery(o, judged, cfg.format);
  });
  return exit_ok;
}

/// Precision and recall per category against labeled trajectories.
inline int cmd_calibrate(const CliConfig& cfg, std::ostream& out) {
  auto corpus = load_corpora(cfg);
  std::vector<LabeledTrajectory> labeled;
  for (const auto& s : corpus) {
    if (s.labeled) labeled.push_back(LabeledTrajectory{s.trajectory, s.labels});
  }
  if (labeled.empty()) throw Error(ErrorCode::empty_corpus, "corpus has no labeled trajectories");
  auto categories = cfg.categories;
  if (categories.empty()) categories.assign(kAllCategories.begin(), kAllCategories.end());
  auto backend = make_backend(cfg);
  auto report = calibrate(labeled, categories, backend.get());
  emit(cfg, out, [&](std::ostream& o) {
    if (cfg.format == OutputFormat::records) {
      print_record(o, calibration_record(report));
    } else {
      o << render_calibration_text(report);
    }
  });
  return report.pass ? exit_ok : exit_gate;
}

/// Tables from aggregate integer counts.
///
///   {"prevalence": {"total": N, "misbehaving": M, "counts": {"RP_LOOP": n, ...}},
///    "recovery": {"single": {"RP": [rec, not], "TCF": [...], "SD": [...]}, "multiple": {...}},
///    "misbehavior_rate": {"control": [flagged, total], "treatment": [flagged, total]}}
inline void report_from_counts(const nlohmann::json& j, OutputFormat format, std::ostream& o) {
  using namespace config_json;
  as_object(j, "counts");
  bool first = true;
  auto separate = [&] {
    if (!first && format == OutputFormat::text) o << '\n';
    first = false;
  };
  for (const auto& [key, value] : j.items()) {
    if (key != "prevalence" && key != "recovery" && key != "misbehavior_rate") fail(key, "unknown key");
  }
  if (j.contains("prevalence")) {
    const auto& p = as_object(j.at("prevalence"), "prevalence");
    std::map<MisbehaviorCategory, std::size_t> detected;
    const auto& counts = as_object(p.at("counts"), "prevalence.counts");
    for (const auto& [code, n] : counts.items()) {
      auto path = sub("prevalence.counts", code);
      detected[at_path(path, [&] { return parse_category(code); })] = as_uint(n, path);
    }
    auto table = at_path("prevalence", [&] {
      return prevalence(detected, as_uint(p.at("misbehaving"), "prevalence.misbehaving"),
                        as_uint(p.at("total"), "prevalence.total"));
    });
    separate();
    if (format == OutputFormat::records) {
      print_record(o, prevalence_record(table));
    } else {
      o << render_prevalence_text(table);
    }
  }
  if (j.contains("recovery")) {
    const auto& r = as_object(j.at("recovery"), "recovery");
    const std::map<std::string, CategoryFamily> families = {{"RP", CategoryFamily::reasoning_problems},
                                                            {"TCF", CategoryFamily::tool_call_failure},
                                                            {"SD", CategoryFamily::specification_drift}};
    // single before multiple, then any other group names
    std::vector<std::string> groups;
    for (const char* g : {"single", "multiple"}) {
      if (r.contains(g)) groups.emplace_back(g);
    }
    for (const auto& [group, _] : r.items()) {
      if (group != "single" && group != "multiple") groups.push_back(group);
    }
    for (const auto& group : groups) {
      const auto& rows = r.at(group);
      auto gpath = sub("recovery", group);
      as_object(rows, gpath);
      std::map<CategoryFamily, std::pair<std::size_t, std::size_t>> counts;
      for (const auto& [fam, pair] : rows.items()) {
        auto fpath = sub(gpath, fam);
        auto it = families.find(fam);
        if (it == families.end()) fail(fpath, "expected RP, TCF or SD");
        if (!pair.is_array() || pair.size() != 2) fail(fpath, "expected [recovered, not_recovered]");
        counts[it->second] = {as_uint(pair[0], sub(fpath, 0)), as_uint(pair[1], sub(fpath, 1))};
      }
      RecoveryStats stats;
      std::size_t rec = 0, not_rec = 0;
      for (auto fam : kAllFamilies) {
        auto [a, b] = counts[fam];
        stats.rows.push_back(recovery_row(std::string(family_name(fam)), a, b));
        rec += a;
        not_rec += b;
      }
      stats.overall = recovery_row("Overall", rec, not_rec);
      separate();
      if (format == OutputFormat::records) {
        print_record(o, recovery_record(stats, group));
      } else {
        o << render_recovery_text(stats, "Recovery (" + group + ")");
      }
    }
  }
  if (j.contains("misbehavior_rate")) {
    const auto& m = as_object(j.at("misbehavior_rate"), "misbehavior_rate");
    auto arm = [&](const char* name) {
      auto path = sub("misbehavior_rate", name);
      if (!m.contains(name)) fail(path, "required");
      const auto& pair = m.at(name);
      if (!pair.is_array() || pair.size() != 2) fail(path, "expected [flagged, total]");
      return std::make_pair(as_uint(pair[0], sub(path, 0)), as_uint(pair[1], sub(path, 1)));
    };
    auto c = arm("control");
    auto t = arm("treatment");
    auto cmp = at_path("misbehavior_rate", [&] { return compare_misbehavior_rates(c.first, c.second, t.first, t.second); });
    separate();
    if (format == OutputFormat::records) {
      print_record(o, rate_comparison_record(cmp));
    } else {
      o << render_rate_comparison_text(cmp);
    }
  }
}

/// Either renders aggregate counts (--counts) or summarizes a corpus:
/// recovery tables for recorded interventions and per-session metrics.
inline int cmd_report(const CliConfig& cfg, std::ostream& out) {
  if (!cfg.counts.empty()) {
    auto j = config_json::load_file(cfg.counts);
    emit(cfg, out, [&](std::ostream& o) { report_from_counts(j, cfg.format, o); });
    return exit_ok;
  }
  auto corpus = load_corpora(cfg);
  if (corpus.empty()) throw Error(ErrorCode::zero_total, "corpus has no sessions");
  std::vector<double> tokens, steps, calls, failures, engineer;
  for (const auto& s : corpus) {
    auto m = session_metrics(s.trajectory, s.interventions);
    tokens.push_back(static_cast<double>(m.tokens_total));
    steps.push_back(static_cast<double>(m.steps));
    calls.push_back(static_cast<double>(m.tool_calls));
    failures.push_back(static_cast<double>(m.tool_call_failures));
    engineer.push_back(static_cast<double>(m.engineer_interventions));
  }
  bool has_records = false;
  for (const auto& s : corpus) has_records = has_records || !s.interventions.empty();

  emit(cfg, out, [&](std::ostream& o) {
    auto mean = [](const std::vector<double>& v) { return summarize(v).mean; };
    if (cfg.format == OutputFormat::records) {
      print_record(o, {{"record", "session_metrics"},
                       {"sessions", corpus.size()},
                       {"mean_tokens", mean(tokens)},
                       {"mean_steps", mean(steps)},
                       {"mean_tool_calls", mean(calls)},
                       {"mean_tool_call_failures", mean(failures)},
                       {"mean_engineer_interventions", mean(engineer)}});
    } else {
      TextTable t({"Metric", "Mean per Session"});
      t.add({"Tokens", text::fixed(mean(tokens), 2)});
      t.add({"Steps", text::fixed(mean(steps), 2)});
      t.add({"Tool Calls", text::fixed(mean(calls), 2)});
      t.add({"Tool Call Failures", text::fixed(mean(failures), 2)});
      t.add({"Engineer Interventions", text::fixed(mean(engineer), 2)});
      o << "Sessions: " << corpus.size() << '\n' << t.render();
    }
    if (has_records) {
      if (cfg.format == OutputFormat::text) o << '\n';
      write_recovery(o, judge_corpus(corpus, cfg), cfg.format);
    }
  });
  return exit_ok;
}

/// Exports a sample of judge verdicts for manual labeling, or, with
/// --annotations, tallies the labels and the judge's agreement with them.
inline int cmd_annotate(const CliConfig& cfg, std::ostream& out) {
  if (cfg.annotations.empty()) {
    auto corpus = load_corpora(cfg);
    auto judged = judge_corpus(corpus, cfg);
    std::vector<RecoveryVerdict> all = judged.single;
    all.insert(all.end(), judged.multiple.begin(), judged.multiple.end());
    SplitMixStream stream(cfg.seed);
    stream.shuffle(all);
    if (all.size() > cfg.sample) all.resize(cfg.sample);
    nlohmann::json labels = nlohmann::json::array();
    for (auto l : kAllAnnotationLabels) labels.push_back(std::string(annotation_code(l)));
    emit(cfg, out, [&](std::ostream& o) {
      for (const auto& v : all) {
        print_record(o, {{"record", "annotation"},
                         {"intervention_id", v.intervention_id},
                         {"category", std::string(category_code(v.category))},
                         {"verdict", std::string(verdict_name(v.verdict))},
                         {"rationale", v.rationale},
                         {"label", nullptr},
                         {"allowed_labels", labels}});
      }
    });
    return exit_ok;
  }

  std::ifstream in(cfg.annotations);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + cfg.annotations + "'");
  std::map<AnnotationLabel, std::size_t> tally;
  std::size_t judged_recovered = 0, agreed_recovered = 0, labeled = 0, agreed = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    auto path = "line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      config_json::fail(path, "not valid JSON");
    }
    if (!j.is_object() || !j.contains("label") || !j.contains("verdict")) config_json::fail(path, "expected label and verdict");
    if (j.at("label").is_null()) continue;
    auto label = config_json::at_path(path + ".label",
                                      [&] { return parse_annotation(config_json::as_string(j.at("label"), path + ".label")); });
    bool judge_recovered = config_json::as_string(j.at("verdict"), path + ".verdict") == "recovered";
    bool human_recovered = annotation_means_recovered(label);
    ++tally[label];
    ++labeled;
    if (judge_recovered == human_recovered) ++agreed;
    if (judge_recovered) {
      ++judged_recovered;
      if (human_recovered) ++agreed_recovered;
    }
  }
  if (labeled == 0) throw Error(ErrorCode::empty_sample, "no labeled annotations in '" + cfg.annotations + "'");
  std::optional<double> precision;
  if (judged_recovered) precision = percent(agreed_recovered, judged_recovered);

  emit(cfg, out, [&](std::ostream& o) {
    if (cfg.format == OutputFormat::records) {
      nlohmann::json counts = nlohmann::json::object();
      for (const auto& [l, n] : tally) counts[std::string(annotation_code(l))] = n;
      print_record(o, {{"record", "annotation_summary"},
                       {"labeled", labeled},
                       {"agreement_percent", percent(agreed, labeled)},
                       {"recovered_precision_percent", precision ? nlohmann::json(*precision) : nlohmann::json(nullptr)},
                       {"labels", counts}});
      return;
    }
    TextTable t({"Label", "Outcome", "Count", "Share"});
    for (const auto& [l, n] : tally) {
      t.add({std::string(annotation_code(l)), annotation_means_recovered(l) ? "recovered" : "not recovered",
             std::to_string(n), pct(percent(n, labeled))});
    }
    o << t.render() << "judge agreement: " << pct(percent(agreed, labeled))
      << ", precision of recovered verdicts: " << (precision ? pct(*precision) : std::string("n/a")) << '\n';
  });
  return exit_ok;
}

/// Writes the scenario fixtures (or the labeled calibration set).
inline int cmd_fixtures(const CliConfig& cfg, std::ostream& out) {
  auto records = cfg.labeled ? fixtures::labeled_corpus() : fixtures::scenario_corpus();
  emit(cfg, out, [&](std::ostream& o) { write_corpus(o, records); });
  return exit_ok;
}

inline int dispatch(const CliConfig& cfg, std::ostream& out) {
  const auto& s = cfg.subcommand;
  if (s == "detect") return cmd_detect(cfg, out);
  if (s == "simulate") return cmd_simulate(cfg, out);
  if (s == "abtest") return cmd_abtest(cfg, out);
  if (s == "judge") return cmd_judge(cfg, out);
  if (s == "calibrate") return cmd_calibrate(cfg, out);
  if (s == "report") return cmd_report(cfg, out);
  if (s == "annotate") return cmd_annotate(cfg, out);
  if (s == "fixtures") return cmd_fixtures(cfg, out);
  throw Error(ErrorCode::invalid_config, "unknown subcommand '" + s + "'");
}

// ---------------------------------------------------------------------------
// Argument parsing

/// Parses argv (without the program name) and runs the command.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Detect and correct misbehaviors in coding-agent trajectories", "trajguard"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, format, mode, backend, endpoint, api_key_env, out_path, guidance_dir, judge, counts,
      annotations, staleness, behavior, fumble;
  std::vector<std::string> corpus, categories;
  std::uint64_t seed = 0;
  std::size_t k = 0, max_steps = 0, latency = 0, max_in_flight = 0, sessions = 0, sample = 0;
  double fraction = 0.0, obedience = 0.0;
  bool labeled = false;
  std::vector<CLI::Option*> opts;
  auto add = [&](CLI::Option* o) {
    opts.push_back(o);
    return o;
  };

  add(app.add_option("--config", config_path, "JSON config file; command-line flags take precedence"));
  auto* o_corpus = add(app.add_option("--corpus", corpus, "corpus file(s) in JSONL form"));
  auto* o_seed = add(app.add_option("--seed", seed, "random seed"));
  auto* o_k = add(app.add_option("--k", k, "observer interval in steps"));
  auto* o_inflight = add(app.add_option("--max-in-flight", max_in_flight, "concurrent analyses per session"));
  auto* o_stale = add(app.add_option("--staleness", staleness, "inject_anyway|revalidate|drop_if_resolved"));
  auto* o_mode = add(app.add_option("--mode", mode, "control|treatment"));
  auto* o_backend = add(app.add_option("--backend", backend, "mock|http"));
  auto* o_endpoint = add(app.add_option("--endpoint", endpoint, "http backend URL"));
  auto* o_keyenv = add(app.add_option("--api-key-env", api_key_env, "environment variable holding the backend key"));
  auto* o_format = add(app.add_option("--format", format, "text|records"));
  auto* o_out = add(app.add_option("--out", out_path, "output file (default: standard output)"));
  auto* o_steps = add(app.add_option("--max-steps", max_steps, "step limit per simulated session"));
  auto* o_latency = add(app.add_option("--detector-latency", latency, "steps before a simulated analysis completes"));
  auto* o_sessions = add(app.add_option("--sessions", sessions, "simulated sessions"));
  auto* o_fraction = add(app.add_option("--misbehaving-fraction", fraction, "share of misbehaving agents"));
  auto* o_obedience = add(app.add_option("--obedience", obedience, "probability a reminder is honored"));
  auto* o_behavior = add(app.add_option("--behavior", behavior, "simulate only this behavior"));
  auto* o_fumble = add(app.add_option("--fumble-mode", fumble, "missing_param|runtime"));
  auto* o_guidance = add(app.add_option("--guidance-dir", guidance_dir, "directory of *.guidance.txt templates"));

  app.add_subcommand("detect", "run misbehavior detection over a corpus");
  app.add_subcommand("simulate", "run scripted sessions and write a corpus");
  app.add_subcommand("abtest", "paired control/treatment experiment");
  auto* judge_cmd = app.add_subcommand("judge", "judge recovery after recorded interventions");
  auto* o_judge = add(judge_cmd->add_option("--judge", judge, "auto (oracle where possible)|llm"));
  auto* cal_cmd = app.add_subcommand("calibrate", "precision gate over a labeled corpus");
  auto* o_categories = add(cal_cmd->add_option("--category", categories, "category code(s) to calibrate"));
  auto* report_cmd = app.add_subcommand("report", "tables from counts or from a corpus");
  auto* o_counts = add(report_cmd->add_option("--counts", counts, "JSON file of aggregate counts"));
  auto* ann_cmd = app.add_subcommand("annotate", "export or tally manual verdict annotations");
  auto* o_ann = add(ann_cmd->add_option("--annotations", annotations, "filled-in annotation file"));
  auto* o_sample = add(ann_cmd->add_option("--sample", sample, "verdicts to export"));
  auto* fix_cmd = app.add_subcommand("fixtures", "write the scenario fixture corpus");
  auto* o_labeled = add(fix_cmd->add_flag("--labeled", labeled, "write the labeled calibration set instead"));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return exit_validation;
  }

  try {
    CliConfig cfg;
    cfg.subcommand = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) config_json::apply(config_json::load_file(config_path), cfg);

    auto set = [](CLI::Option* o) { return o->count() > 0; };
    if (set(o_corpus)) cfg.corpus = corpus;
    if (set(o_seed)) cfg.seed = seed;
    if (set(o_k)) cfg.observer.k = k;
    if (set(o_inflight)) cfg.observer.max_in_flight = max_in_flight;
    if (set(o_stale)) cfg.observer.staleness = parse_staleness(staleness);
    if (set(o_mode)) cfg.mode = parse_mode(mode);
    if (set(o_backend)) cfg.backend.kind = backend;
    if (set(o_endpoint)) cfg.backend.endpoint = endpoint;
    if (set(o_keyenv)) cfg.backend.api_key_env = api_key_env;
    if (set(o_format)) cfg.format = parse_format(format);
    if (set(o_out)) cfg.out = out_path;
    if (set(o_steps)) cfg.max_steps = max_steps;
    if (set(o_latency)) cfg.detector_latency_steps = latency;
    if (set(o_guidance)) cfg.guidance_dir = guidance_dir;
    if (set(o_judge)) cfg.judge = judge;
    if (set(o_counts)) cfg.counts = counts;
    if (set(o_ann)) cfg.annotations = annotations;
    if (set(o_sample)) cfg.sample = sample;
    if (set(o_labeled)) cfg.labeled = labeled;
    if (set(o_categories)) {
      cfg.categories.clear();
      for (const auto& c : categories) cfg.categories.push_back(parse_category(c));
    }
    if (set(o_behavior)) {
      ScriptedBehavior b;
      b.kind = parse_behavior(behavior);
      b.obedience = set(o_obedience) ? obedience : 0.9;
      if (set(o_fumble)) b.fumble = parse_fumble_mode(fumble);
      cfg.population = PopulationSpec{{PopulationEntry{b, set(o_sessions) ? sessions : 100}}};
    } else if (set(o_sessions) || set(o_fraction) || set(o_obedience)) {
      cfg.population = PopulationSpec::mixed(set(o_sessions) ? sessions : cfg.population.total(),
                                             set(o_fraction) ? fraction : 0.3, set(o_obedience) ? obedience : 0.9);
    }
    if (set(o_fumble) && !set(o_behavior)) {
      for (auto& e : cfg.population.entries) e.behavior.fumble = parse_fumble_mode(fumble);
    }
    cfg.validate();
    return dispatch(cfg, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace trajguard::cli
