#pragma once

// Asynchronous observer: submits trajectory snapshots for analysis every k
// steps and hands finished feedback back to the session loop at step
// boundaries, without ever waiting for an analysis to finish.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "trajguard/detection.hpp"
#include "trajguard/error.hpp"
#include "trajguard/log.hpp"
#include "trajguard/trajectory.hpp"

namespace trajguard {

enum class StalenessPolicy { inject_anyway, revalidate, drop_if_resolved };

inline std::string_view staleness_name(StalenessPolicy p) {
  switch (p) {
    case StalenessPolicy::inject_anyway: return "inject_anyway";
    case StalenessPolicy::revalidate: return "revalidate";
    case StalenessPolicy::drop_if_resolved: return "drop_if_resolved";
  }
  return "revalidate";
}

inline StalenessPolicy parse_staleness(std::string_view s) {
  for (auto p : {StalenessPolicy::inject_anyway, StalenessPolicy::revalidate, StalenessPolicy::drop_if_resolved}) {
    if (staleness_name(p) == s) return p;
  }
  throw Error(ErrorCode::invalid_config, "unknown staleness policy '" + std::string(s) + "'");
}

struct ObserverConfig {
  std::size_t k = 5;
  std::size_t max_in_flight = 1;
  StalenessPolicy staleness = StalenessPolicy::revalidate;

  void validate() const {
    if (k < 1) throw Error(ErrorCode::invalid_config, "observer.k must be at least 1");
    if (max_in_flight < 1) throw Error(ErrorCode::invalid_config, "observer.max_in_flight must be at least 1");
  }
};

struct AnalysisTicket {
  std::uint64_t ticket_id = 0;
  std::size_t snapshot_upto = 0;
  std::size_t submitted_at_step = 0;
  friend bool operator==(const AnalysisTicket&, const AnalysisTicket&) = default;
};

/// Detection run by the observer. Long-running implementations should return
/// early once the stop token is triggered.
using AnalysisFn = std::function<Feedback(const Trajectory&, std::stop_token)>;

inline AnalysisFn analysis_from(MisbehaviorDetector detector) {
  return [detector = std::move(detector)](const Trajectory& t, std::stop_token) { return detector(t); };
}

/// A finished analysis; `feedback` is empty when the analysis threw.
struct AnalysisResult {
  AnalysisTicket ticket;
  std::optional<Feedback> feedback;
  std::string error;
};

/// Where analyses execute. `poll` must never block on a running analysis.
class AnalysisExecutor {
 public:
  using Job = std::function<Feedback(std::stop_token)>;
  virtual ~AnalysisExecutor() = default;
  virtual void submit(const AnalysisTicket& ticket, Job job) = 0;
  /// Informs the executor that the session reached step `step`.
  virtual void advance(std::size_t /*step*/) {}
  /// Completed analyses in completion order.
  virtual std::vector<AnalysisResult> poll() = 0;
  /// Called when the session ends; returns whatever is complete by now.
  virtual std::vector<AnalysisResult> finish() { return poll(); }
};

namespace detail {

inline AnalysisResult run_job(const AnalysisTicket& ticket, const AnalysisExecutor::Job& job, std::stop_token st) {
  AnalysisResult r{ticket, std::nullopt, {}};
  try {
    r.feedback = job(st);
  } catch (const std::exception& e) {
    r.error = e.what();
  } catch (...) {
    r.error = "unknown error";
  }
  return r;
}

}  // namespace detail

/// Worker threads plus a mailbox of completed results. The session thread
/// only touches the mailbox for a swap. `on_publish`, if set, runs on the
/// worker under the mailbox lock right after a result becomes pollable.
class ThreadedExecutor : public AnalysisExecutor {
 public:
  using PublishListener = std::function<void(const AnalysisResult&)>;

  explicit ThreadedExecutor(std::size_t workers = 1, PublishListener on_publish = {})
      : on_publish_(std::move(on_publish)) {
    for (std::size_t i = 0; i < std::max<std::size_t>(workers, 1); ++i) {
      workers_.emplace_back([this](std::stop_token st) { work(st); });
    }
  }

  ~ThreadedExecutor() override {
    for (auto& w : workers_) w.request_stop();
    jobs_cv_.notify_all();
    workers_.clear();  // joins; analyses see their stop token triggered
  }

  void submit(const AnalysisTicket& ticket, Job job) override {
    {
      std::lock_guard lock(jobs_mu_);
      jobs_.emplace_back(ticket, std::move(job));
    }
    jobs_cv_.notify_one();
  }

  std::vector<AnalysisResult> poll() override {
    std::vector<AnalysisResult> out;
    std::lock_guard lock(mailbox_mu_);
    out.swap(mailbox_);
    return out;
  }

 private:
  void work(std::stop_token st) {
    while (!st.stop_requested()) {
      std::pair<AnalysisTicket, Job> item;
      {
        std::unique_lock lock(jobs_mu_);
        if (!jobs_cv_.wait(lock, st, [this] { return !jobs_.empty(); })) return;
        item = std::move(jobs_.front());
        jobs_.pop_front();
      }
      auto result = detail::run_job(item.first, item.second, st);
      std::lock_guard lock(mailbox_mu_);
      mailbox_.push_back(std::move(result));
      if (on_publish_) on_publish_(mailbox_.back());
    }
  }

  std::mutex jobs_mu_;
  std::condition_variable_any jobs_cv_;
  std::deque<std::pair<AnalysisTicket, Job>> jobs_;
  std::mutex mailbox_mu_;
  std::vector<AnalysisResult> mailbox_;
  PublishListener on_publish_;
  std::vector<std::jthread> workers_;
};

/// Deterministic executor for simulation: each analysis runs when submitted
/// and its result becomes visible `latency_steps` steps later, so replays do
/// not depend on thread scheduling.
class StepClockExecutor : public AnalysisExecutor {
 public:
  explicit StepClockExecutor(std::size_t latency_steps = 1) : latency_(latency_steps) {}

  void submit(const AnalysisTicket& ticket, Job job) override {
    pending_.push_back(detail::run_job(ticket, job, std::stop_token{}));
  }

  void advance(std::size_t step) override { step_ = step; }

  std::vector<AnalysisResult> poll() override {
    std::vector<AnalysisResult> out;
    std::vector<AnalysisResult> rest;
    for (auto& r : pending_) {
      if (step_ >= r.ticket.submitted_at_step + latency_) {
        out.push_back(std::move(r));
      } else {
        rest.push_back(std::move(r));
      }
    }
    pending_.swap(rest);
    return out;
  }

  std::vector<AnalysisResult> finish() override {
    std::vector<AnalysisResult> out;
    out.swap(pending_);
    return out;
  }

 private:
  std::size_t latency_;
  std::size_t step_ = 0;
  std::vector<AnalysisResult> pending_;
};

/// Filters feedback against the current trajectory. Returns nullopt when no
/// finding survives. Semantic findings always survive: there is no cheap
/// rule to re-check them.
inline std::optional<Feedback> apply_staleness_policy(const Feedback& feedback, const Trajectory& current,
                                                      StalenessPolicy policy, std::size_t k,
                                                      const DetectionConfig& rules = {}) {
  if (policy == StalenessPolicy::inject_anyway) {
    if (!feedback.misbehavior_detected) return std::nullopt;
    return feedback;
  }
  auto recent = last_steps(current, k);
  std::vector<Finding> kept;
  for (const auto& f : feedback.findings) {
    bool keep = true;
    if (f.pattern != PatternKind::semantic) {
      if (policy == StalenessPolicy::revalidate) {
        keep = f.category == MisbehaviorCategory::reasoning_infinite_loop
                   ? detect_loops(recent, rules.loops).has_value()
                   : detect_tool_call_failures(recent, rules.tcf).has_value();
      } else {
        keep = offending_pattern_recurs(f, recent, rules.loops);
      }
    }
    if (keep) kept.push_back(f);
  }
  if (kept.empty()) return std::nullopt;
  auto out = feedback;
  out.findings = std::move(kept);
  out.misbehavior_detected = true;
  return out;
}

struct ObserverStats {
  std::size_t submissions = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
  std::size_t flagged = 0;          // completed analyses that found something
  std::size_t dropped_stale = 0;    // flagged feedback removed by the policy
  std::size_t saturated_skips = 0;  // due submissions skipped by backpressure
};

/// Feedback that survived the staleness policy, ready for injection.
struct ReadyFeedback {
  AnalysisTicket ticket;
  Feedback feedback;
  std::size_t drained_at_step = 0;
};

class Observer {
 public:
  Observer(ObserverConfig cfg, AnalysisFn analysis, std::unique_ptr<AnalysisExecutor> executor = nullptr,
           DetectionConfig rules = {})
      : cfg_(cfg), analysis_(std::move(analysis)), executor_(std::move(executor)), rules_(std::move(rules)) {
    cfg_.validate();
    if (!executor_) executor_ = std::make_unique<ThreadedExecutor>(cfg_.max_in_flight);
  }

  const ObserverConfig& config() const { return cfg_; }
  const ObserverStats& stats() const { return stats_; }

  /// Analyses submitted and not yet drained.
  std::size_t in_flight() const { return outstanding_; }

  /// Starts an analysis of a copy of `traj`. Throws Saturated at capacity.
  AnalysisTicket submit(const Trajectory& traj, std::size_t step_index) {
    if (outstanding_ >= cfg_.max_in_flight) {
      throw Error(ErrorCode::saturated, std::to_string(outstanding_) + " analyses already in flight");
    }
    AnalysisTicket ticket{next_ticket_++, traj.size(), step_index};
    auto snapshot = std::make_shared<const Trajectory>(traj);
    executor_->submit(ticket, [fn = analysis_, snapshot](std::stop_token st) { return fn(*snapshot, st); });
    ++outstanding_;
    ++stats_.submissions;
    return ticket;
  }

  /// Called once per step after the action's observation is recorded.
  std::vector<ReadyFeedback> on_step_boundary(const Trajectory& traj, std::size_t step_index) {
    if (step_index % cfg_.k == 0) {
      if (outstanding_ < cfg_.max_in_flight) {
        submit(traj, step_index);
      } else {
        ++stats_.saturated_skips;
      }
    }
    executor_->advance(step_index);
    return accept(executor_->poll(), traj, step_index);
  }

  /// Drains whatever is already complete at session end (never waits).
  std::vector<ReadyFeedback> finish(const Trajectory& traj, std::size_t step_index) {
    return accept(executor_->finish(), traj, step_index);
  }

 private:
  std::vector<ReadyFeedback> accept(std::vector<AnalysisResult> results, const Trajectory& traj,
                                    std::size_t step_index) {
    std::vector<ReadyFeedback> ready;
    for (auto& r : results) {
      --outstanding_;
      if (!r.feedback) {
        ++stats_.failed;
        log(LogLevel::warn, "analysis " + std::to_string(r.ticket.ticket_id) + " failed: " + r.error);
        continue;
      }
      ++stats_.completed;
      if (!r.feedback->misbehavior_detected) continue;
      ++stats_.flagged;
      auto kept = apply_staleness_policy(*r.feedback, traj, cfg_.staleness, cfg_.k, rules_);
      if (!kept) {
        ++stats_.dropped_stale;
        continue;
      }
      ready.push_back(ReadyFeedback{r.ticket, std::move(*kept), step_index});
    }
    return ready;
  }

  ObserverConfig cfg_;
  AnalysisFn analysis_;
  std::unique_ptr<AnalysisExecutor> executor_;
  DetectionConfig rules_;
  ObserverStats stats_;
  std::size_t outstanding_ = 0;
  std::uint64_t next_ticket_ = 1;
};

}  // namespace trajguard
