#pragma once

// Plain-text tables and machine-readable records for evaluation results.

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajguard/detection.hpp"
#include "trajguard/evaluation.hpp"
#include "trajguard/statistics.hpp"
#include "trajguard/text.hpp"

namespace trajguard {

enum class OutputFormat { text, records };

inline OutputFormat parse_format(std::string_view s) {
  if (s == "text") return OutputFormat::text;
  if (s == "records") return OutputFormat::records;
  throw Error(ErrorCode::invalid_config, "format must be text or records, got '" + std::string(s) + "'");
}

/// Column-aligned table; the first column is left-aligned, the rest right.
class TextTable {
 public:
  explicit TextTable(std::vector<std::string> headers) : headers_(std::move(headers)) {}

  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }
  void rule() { rows_.emplace_back(); }

  std::string render() const {
    std::vector<std::size_t> width(headers_.size(), 0);
    auto measure = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    };
    measure(headers_);
    for (const auto& r : rows_) measure(r);
    std::size_t total = 0;
    for (auto w : width) total += w;
    total += 2 * (width.size() - 1);

    auto line = [&](const std::vector<std::string>& r) {
      std::string out;
      for (std::size_t i = 0; i < width.size(); ++i) {
        const std::string cell = i < r.size() ? r[i] : "";
        if (i) out += "  ";
        out += i == 0 ? text::pad_right(cell, width[i]) : text::pad_left(cell, width[i]);
      }
      while (!out.empty() && out.back() == ' ') out.pop_back();
      return out + "\n";
    };
    std::string out = line(headers_);
    out += std::string(total, '-') + "\n";
    for (const auto& r : rows_) out += r.empty() ? std::string(total, '-') + "\n" : line(r);
    return out;
  }

 private:
  std::vector<std::string> headers_;
  std::vector<std::vector<std::string>> rows_;
};

inline std::string pct(double v) { return text::fixed(v, 2) + "%"; }

inline std::string opt_fixed(const std::optional<double>& v, int decimals = 2) {
  return v ? text::fixed(*v, decimals) : std::string("n/a");
}

/// p-values in the same style everywhere: fixed for ordinary values,
/// scientific for tiny ones.
inline std::string format_p(double p) {
  if (p >= 0.001) return text::fixed(p, 4);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", p);
  return buf;
}

// ---------------------------------------------------------------------------
// Prevalence

inline std::string render_prevalence_text(const PrevalenceTable& t) {
  TextTable table({"Misbehavior Category", "Trajectories Detected", "Prevalence"});
  for (const auto& r : t.rows) table.add({r.label, std::to_string(r.count), pct(r.percent)});
  table.rule();
  table.add({"Total Misbehavior Categories", std::to_string(t.misbehaving), pct(t.overall_percent)});
  return table.render() + "Trajectories analyzed: " + std::to_string(t.total) + "\n";
}

inline nlohmann::json prevalence_record(const PrevalenceTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) rows.push_back({{"category", r.label}, {"count", r.count}, {"percent", r.percent}});
  return {{"record", "prevalence"},
          {"rows", rows},
          {"misbehaving", t.misbehaving},
          {"total", t.total},
          {"overall_percent", t.overall_percent}};
}

// ---------------------------------------------------------------------------
// Recovery

inline std::string render_recovery_text(const RecoveryStats& s, const std::string& title) {
  TextTable table({"Misbehavior Category", "Sample Size", "Agent Recovered", "Agent Not Recovered", "% Agent Recovery Rate"});
  auto add = [&](const RecoveryRow& r) {
    table.add({r.label, std::to_string(r.sample_size), std::to_string(r.recovered), std::to_string(r.not_recovered),
               opt_fixed(r.rate_percent)});
  };
  for (const auto& r : s.rows) add(r);
  table.rule();
  add(s.overall);
  return title + "\n" + table.render();
}

inline nlohmann::json recovery_row_json(const RecoveryRow& r) {
  return {{"label", r.label},
          {"sample_size", r.sample_size},
          {"recovered", r.recovered},
          {"not_recovered", r.not_recovered},
          {"rate_percent", r.rate_percent ? nlohmann::json(*r.rate_percent) : nlohmann::json(nullptr)}};
}

inline nlohmann::json recovery_record(const RecoveryStats& s, const std::string& group) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : s.rows) rows.push_back(recovery_row_json(r));
  return {{"record", "recovery"}, {"group", group}, {"rows", rows}, {"overall", recovery_row_json(s.overall)}};
}

// ---------------------------------------------------------------------------
// A/B experiment

struct MisbehaviorRateComparison {
  std::size_t control_flagged = 0;
  std::size_t control_invocations = 0;
  std::size_t treatment_flagged = 0;
  std::size_t treatment_invocations = 0;
  double control_rate = 0.0;
  double treatment_rate = 0.0;
  ZTestResult test;
};

inline MisbehaviorRateComparison compare_misbehavior_rates(std::size_t control_flagged, std::size_t control_total,
                                                           std::size_t treatment_flagged, std::size_t treatment_total) {
  MisbehaviorRateComparison c;
  c.control_flagged = control_flagged;
  c.control_invocations = control_total;
  c.treatment_flagged = treatment_flagged;
  c.treatment_invocations = treatment_total;
  c.control_rate = misbehavior_rate(control_flagged, control_total);
  c.treatment_rate = misbehavior_rate(treatment_flagged, treatment_total);
  c.test = two_proportion_z_test(treatment_flagged, treatment_total, control_flagged, control_total);
  return c;
}

inline std::string render_experiment_text(const ExperimentReport& rep) {
  TextTable table({"Metric", "Control", "Treatment", "Delta%", "p-value"});
  for (const auto& r : rep.rows) {
    std::string delta = r.delta_percent ? text::fixed(*r.delta_percent, 1) + "%" + r.stars() : std::string("n/a");
    table.add({r.metric, text::fixed(r.control, 2), text::fixed(r.treatment, 2), delta, format_p(r.test.p_two_sided)});
  }
  return table.render() + "** p < 0.01, * p < 0.05 (two-sided z-test); sessions: control " +
         std::to_string(rep.control_sessions) + ", treatment " + std::to_string(rep.treatment_sessions) +
         "\nEngineer interventions are follow-up user messages after the initial task; execution time is counted in "
         "agent steps.\n";
}

inline std::string render_rate_comparison_text(const MisbehaviorRateComparison& c) {
  TextTable table({"Arm", "Flagged", "Invocations", "Misbehavior Rate"});
  table.add({"control", std::to_string(c.control_flagged), std::to_string(c.control_invocations), pct(c.control_rate)});
  table.add({"treatment", std::to_string(c.treatment_flagged), std::to_string(c.treatment_invocations),
             pct(c.treatment_rate)});
  return table.render() + "two-proportion z = " + text::fixed(c.test.z, 4) + ", p = " + format_p(c.test.p_two_sided) +
         "\n";
}

inline nlohmann::json experiment_record(const ExperimentReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"metric", r.metric},
                    {"control", r.control},
                    {"treatment", r.treatment},
                    {"delta_percent", r.delta_percent ? nlohmann::json(*r.delta_percent) : nlohmann::json(nullptr)},
                    {"z", r.test.z},
                    {"p_two_sided", r.test.p_two_sided},
                    {"stars", r.stars()}});
  }
  return {{"record", "experiment"},
          {"rows", rows},
          {"control_sessions", rep.control_sessions},
          {"treatment_sessions", rep.treatment_sessions}};
}

inline nlohmann::json rate_comparison_record(const MisbehaviorRateComparison& c) {
  return {{"record", "misbehavior_rate"},
          {"control_flagged", c.control_flagged},
          {"control_invocations", c.control_invocations},
          {"control_rate", c.control_rate},
          {"treatment_flagged", c.treatment_flagged},
          {"treatment_invocations", c.treatment_invocations},
          {"treatment_rate", c.treatment_rate},
          {"z", c.test.z},
          {"p_two_sided", c.test.p_two_sided}};
}

// ---------------------------------------------------------------------------
// Calibration

inline std::string render_calibration_text(const CalibrationReport& rep) {
  TextTable table({"Category", "Samples", "TP", "FP", "FN", "TN", "Precision", "Recall", "Gate"});
  for (const auto& r : rep.categories) {
    table.add({std::string(category_code(r.category)), std::to_string(r.samples), std::to_string(r.true_positives),
               std::to_string(r.false_positives), std::to_string(r.false_negatives), std::to_string(r.true_negatives),
               opt_fixed(r.precision, 4), opt_fixed(r.recall, 4), r.pass ? "pass" : "FAIL"});
  }
  return table.render() + "precision gate " + text::fixed(kPrecisionGate, 2) + ": " + (rep.pass ? "pass" : "FAIL") + "\n";
}

inline nlohmann::json calibration_record(const CalibrationReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  for (const auto& r : rep.categories) {
    rows.push_back({{"category", std::string(category_code(r.category))},
                    {"samples", r.samples},
                    {"true_positives", r.true_positives},
                    {"false_positives", r.false_positives},
                    {"false_negatives", r.false_negatives},
                    {"true_negatives", r.true_negatives},
                    {"precision", opt(r.precision)},
                    {"recall", opt(r.recall)},
                    {"pass", r.pass}});
  }
  return {{"record", "calibration"}, {"rows", rows}, {"pass", rep.pass}};
}

// ---------------------------------------------------------------------------
// Findings

inline nlohmann::json finding_summary(const Finding& f) {
  return {{"category", std::string(category_code(f.category))},
          {"pattern", std::string(pattern_name(f.pattern))},
          {"evidence", {f.evidence.begin, f.evidence.end}},
          {"reasoning", f.reasoning}};
}

inline std::string render_feedback_text(const std::string& session_id, const Feedback& fb) {
  if (fb.findings.empty()) return session_id + ": no misbehavior\n";
  std::string out;
  for (const auto& f : fb.findings) {
    out += session_id + ": " + std::string(category_code(f.category)) + " [" + std::to_string(f.evidence.begin) + ", " +
           std::to_string(f.evidence.end) + ") " + f.reasoning + "\n";
  }
  return out;
}

}  // namespace trajguard
