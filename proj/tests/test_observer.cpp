#include <atomic>
#include <chrono>
#include <random>
#include <set>
#include <thread>

#include <gtest/gtest.h>

#include "trajguard/fixtures.hpp"
#include "trajguard/observer.hpp"

using namespace trajguard;
using namespace std::chrono_literals;

namespace {

/// Feedback carrying one semantic finding, which every policy keeps.
Feedback flagged(std::size_t upto) {
  Finding f;
  f.category = MisbehaviorCategory::spec_drift_dnf;
  f.pattern = PatternKind::semantic;
  f.reasoning = "r";
  return make_feedback({f}, upto);
}

AnalysisFn always_flag() {
  return [](const Trajectory& t, std::stop_token) { return flagged(t.size()); };
}

AnalysisFn never_flag() {
  return [](const Trajectory& t, std::stop_token) { return make_feedback({}, t.size()); };
}

ObserverConfig cfg(std::size_t k, std::size_t max_in_flight = 1,
                   StalenessPolicy policy = StalenessPolicy::inject_anyway) {
  return ObserverConfig{k, max_in_flight, policy};
}

std::unique_ptr<AnalysisExecutor> clock(std::size_t latency) { return std::make_unique<StepClockExecutor>(latency); }

Trajectory base() {
  Trajectory t("obs");
  t.append(user_message("task"));
  return t;
}

}  // namespace

TEST(ObserverConfig, Validation) {
  EXPECT_THROW(Observer(cfg(0), never_flag()), Error);
  EXPECT_THROW(Observer(cfg(5, 0), never_flag()), Error);
  EXPECT_EQ(parse_staleness("drop_if_resolved"), StalenessPolicy::drop_if_resolved);
  EXPECT_THROW(parse_staleness("sometimes"), Error);
  ObserverConfig defaults;
  EXPECT_EQ(defaults.k, 5u);
  EXPECT_EQ(defaults.max_in_flight, 1u);
  EXPECT_EQ(defaults.staleness, StalenessPolicy::revalidate);
}

TEST(Observer, SubmitsOnlyAtMultiplesOfK) {
  Observer obs(cfg(5), never_flag(), clock(0));
  auto t = base();
  for (std::size_t step = 1; step <= 4; ++step) {
    obs.on_step_boundary(t, step);
    EXPECT_EQ(obs.stats().submissions, 0u) << step;
  }
  obs.on_step_boundary(t, 5);
  EXPECT_EQ(obs.stats().submissions, 1u);
}

TEST(ObserverProperty, CadenceIsFloorOfStepsOverK) {
  for (std::size_t k = 1; k <= 7; ++k) {
    for (std::size_t steps = 0; steps <= 60; ++steps) {
      Observer obs(cfg(k, 1000), never_flag(), clock(3));
      auto t = base();
      for (std::size_t s = 1; s <= steps; ++s) obs.on_step_boundary(t, s);
      EXPECT_EQ(obs.stats().submissions, steps / k) << "k=" << k << " S=" << steps;
      EXPECT_EQ(obs.stats().saturated_skips, 0u);
    }
  }
}

TEST(Observer, ResultDrainedAtFirstBoundaryAfterCompletion) {
  // submitted at step 5, available three steps later
  Observer obs(cfg(5), always_flag(), clock(3));
  auto t = base();
  std::vector<std::size_t> drained;
  for (std::size_t s = 1; s <= 9; ++s) {
    for (const auto& r : obs.on_step_boundary(t, s)) drained.push_back(r.drained_at_step);
  }
  EXPECT_EQ(drained, (std::vector<std::size_t>{8}));
}

TEST(Observer, SaturationSkipsDueSubmission) {
  Observer obs(cfg(5, 1), always_flag(), clock(12));
  auto t = base();
  std::vector<std::size_t> drained;
  for (std::size_t s = 1; s <= 17; ++s) {
    for (const auto& r : obs.on_step_boundary(t, s)) drained.push_back(r.ticket.submitted_at_step);
    if (s == 10) {
      EXPECT_EQ(obs.in_flight(), 1u);
    }
  }
  EXPECT_EQ(obs.stats().saturated_skips, 2u);  // steps 10 and 15
  EXPECT_EQ(obs.stats().submissions, 1u);
  EXPECT_EQ(drained, (std::vector<std::size_t>{5}));
  EXPECT_EQ(obs.in_flight(), 0u);
}

TEST(Observer, DirectSubmitAtCapacityThrows) {
  Observer obs(cfg(5, 1), never_flag(), clock(10));
  auto t = base();
  auto first = obs.submit(t, 0);
  EXPECT_EQ(first.ticket_id, 1u);
  EXPECT_EQ(first.snapshot_upto, t.size());
  try {
    obs.submit(t, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::saturated);
  }
}

TEST(Observer, SnapshotIsACopy) {
  std::atomic<std::size_t> seen{0};
  AnalysisFn fn = [&](const Trajectory& t, std::stop_token) {
    seen = t.size();
    return make_feedback({}, t.size());
  };
  Observer obs(cfg(1), fn, clock(0));
  auto t = fixtures::loop_php_syntax();
  auto size = t.size();
  obs.on_step_boundary(t, 1);
  t.append(assistant_message("more"));
  EXPECT_EQ(seen.load(), size);
}

TEST(Observer, FailuresAreLoggedNotThrown) {
  std::vector<std::string> lines;
  set_log_sink([&](LogLevel, std::string_view m) { lines.emplace_back(m); });
  AnalysisFn boom = [](const Trajectory&, std::stop_token) -> Feedback {
    throw Error(ErrorCode::backend_unavailable, "down");
  };
  Observer obs(cfg(1), boom, clock(0));
  auto t = base();
  std::vector<ReadyFeedback> ready;
  EXPECT_NO_THROW(ready = obs.on_step_boundary(t, 1));
  set_log_sink({});
  EXPECT_TRUE(ready.empty());
  EXPECT_EQ(obs.stats().failed, 1u);
  EXPECT_EQ(obs.in_flight(), 0u);
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_NE(lines[0].find("down"), std::string::npos);
}

TEST(Observer, FinishReturnsCompletedOnly) {
  Observer obs(cfg(1, 5), always_flag(), clock(100));
  auto t = base();
  obs.on_step_boundary(t, 1);
  obs.on_step_boundary(t, 2);
  // the step clock completes everything at session end
  EXPECT_EQ(obs.finish(t, 2).size(), 2u);
  EXPECT_EQ(obs.in_flight(), 0u);
}

// --- staleness -------------------------------------------------------------

namespace {

Feedback loop_feedback() {
  auto t = fixtures::loop_php_syntax();
  return run_misbehavior_detection(t);
}

Trajectory loop_then_moved_on() {
  fixtures::Builder b("fig-loop", "Fix the PHP syntax error in src/index.php.");
  b.call("read_file", {{"path", "src/index.php"}})
      .repeat(3, "read_file", {{"path", "php_syntax.md"}})
      .call("edit_file", {{"path", "src/index.php"}, {"content", "<?php echo 1;"}})
      .call("bash", {{"command", "php -l src/index.php"}})
      .call("read_file", {{"path", "src/index.php"}})
      .call("bash", {{"command", "git diff"}})
      .call("read_file", {{"path", "README.md"}});
  return b.build();
}

Trajectory loop_ongoing() {
  fixtures::Builder b("fig-loop", "Fix the PHP syntax error in src/index.php.");
  b.call("read_file", {{"path", "src/index.php"}}).repeat(7, "read_file", {{"path", "php_syntax.md"}});
  return b.build();
}

}  // namespace

TEST(Staleness, RevalidateDropsResolvedLoop) {
  EXPECT_FALSE(apply_staleness_policy(loop_feedback(), loop_then_moved_on(), StalenessPolicy::revalidate, 5));
}

TEST(Staleness, RevalidateKeepsOngoingLoop) {
  auto kept = apply_staleness_policy(loop_feedback(), loop_ongoing(), StalenessPolicy::revalidate, 5);
  ASSERT_TRUE(kept);
  EXPECT_EQ(kept->findings.size(), 1u);
}

TEST(Staleness, InjectAnywayKeepsEverything) {
  auto fb = loop_feedback();
  EXPECT_EQ(apply_staleness_policy(fb, loop_then_moved_on(), StalenessPolicy::inject_anyway, 5), fb);
  EXPECT_FALSE(apply_staleness_policy(make_feedback({}, 3), loop_ongoing(), StalenessPolicy::inject_anyway, 5));
}

TEST(Staleness, DropIfResolvedChecksOffendingCall) {
  EXPECT_FALSE(apply_staleness_policy(loop_feedback(), loop_then_moved_on(), StalenessPolicy::drop_if_resolved, 5));
  EXPECT_TRUE(apply_staleness_policy(loop_feedback(), loop_ongoing(), StalenessPolicy::drop_if_resolved, 5));
}

TEST(Staleness, SemanticFindingsPassThrough) {
  for (auto p : {StalenessPolicy::revalidate, StalenessPolicy::drop_if_resolved}) {
    auto kept = apply_staleness_policy(flagged(3), loop_then_moved_on(), p, 5);
    ASSERT_TRUE(kept) << staleness_name(p);
    EXPECT_EQ(kept->findings[0].category, MisbehaviorCategory::spec_drift_dnf);
  }
}

TEST(Staleness, MixedFeedbackKeepsOnlyLiveFindings) {
  auto fb = loop_feedback();
  fb.findings.push_back(flagged(3).findings[0]);
  auto kept = apply_staleness_policy(fb, loop_then_moved_on(), StalenessPolicy::revalidate, 5);
  ASSERT_TRUE(kept);
  ASSERT_EQ(kept->findings.size(), 1u);
  EXPECT_EQ(kept->findings[0].pattern, PatternKind::semantic);
}

TEST(Observer, StalenessCountedInStats) {
  auto analysis = analysis_from(MisbehaviorDetector{});
  Observer obs(cfg(1, 1, StalenessPolicy::revalidate), analysis, clock(5));
  auto looping = loop_ongoing();
  obs.on_step_boundary(looping, 1);
  auto resolved = loop_then_moved_on();
  std::vector<ReadyFeedback> ready;
  for (std::size_t s = 2; s <= 6; ++s) {
    auto r = obs.on_step_boundary(resolved, s);
    ready.insert(ready.end(), r.begin(), r.end());
  }
  EXPECT_TRUE(ready.empty());
  EXPECT_EQ(obs.stats().flagged, 1u);
  EXPECT_EQ(obs.stats().dropped_stale, 1u);
}

// --- threads ---------------------------------------------------------------

TEST(ThreadedObserver, NeverCompletingAnalysisDoesNotBlock) {
  std::atomic<bool> started{false};
  AnalysisFn hang = [&](const Trajectory& t, std::stop_token st) {
    started = true;
    while (!st.stop_requested()) std::this_thread::sleep_for(1ms);
    return make_feedback({}, t.size());
  };
  auto t0 = std::chrono::steady_clock::now();
  {
    Observer obs(cfg(1, 1), hang, std::make_unique<ThreadedExecutor>(1));
    auto t = base();
    for (std::size_t s = 1; s <= 200; ++s) EXPECT_TRUE(obs.on_step_boundary(t, s).empty());
    EXPECT_EQ(obs.stats().submissions, 1u);
    EXPECT_EQ(obs.stats().saturated_skips, 199u);
    EXPECT_TRUE(obs.finish(t, 200).empty());
  }
  EXPECT_LT(std::chrono::steady_clock::now() - t0, 2s);
}

TEST(ThreadedObserverStress, RandomDelaysLoseNothing) {
  std::mt19937_64 rng(2024);
  std::vector<int> delays(101);
  for (auto& d : delays) d = static_cast<int>(rng() % 4000);
  AnalysisFn slow = [&](const Trajectory& t, std::stop_token) {
    std::this_thread::sleep_for(std::chrono::microseconds(delays[t.size() % delays.size()]));
    return flagged(t.size());
  };
  Observer obs(cfg(1, 100), slow, std::make_unique<ThreadedExecutor>(4));
  auto t = base();
  std::vector<std::uint64_t> tickets;
  std::size_t step = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    t.append(assistant_message("m"));
    for (auto& r : obs.on_step_boundary(t, ++step)) tickets.push_back(r.ticket.ticket_id);
    std::this_thread::sleep_for(200us);
  }
  EXPECT_EQ(obs.stats().submissions, 100u);
  // drain without new submissions until everything is back
  auto deadline = std::chrono::steady_clock::now() + 20s;
  while (tickets.size() < 100 && std::chrono::steady_clock::now() < deadline) {
    for (auto& r : obs.finish(t, ++step)) tickets.push_back(r.ticket.ticket_id);
    std::this_thread::sleep_for(1ms);
  }
  std::set<std::uint64_t> unique(tickets.begin(), tickets.end());
  EXPECT_EQ(tickets.size(), 100u);
  EXPECT_EQ(unique.size(), 100u);
  EXPECT_EQ(obs.stats().completed, 100u);
  EXPECT_EQ(obs.in_flight(), 0u);
}

TEST(ThreadedObserverStress, SingleWorkerDrainsInCompletionOrder) {
  std::mt19937_64 rng(7);
  AnalysisFn slow = [&rng, m = std::make_shared<std::mutex>()](const Trajectory& t, std::stop_token) {
    int us;
    {
      std::lock_guard lock(*m);
      us = static_cast<int>(rng() % 2000);
    }
    std::this_thread::sleep_for(std::chrono::microseconds(us));
    return flagged(t.size());
  };
  Observer obs(cfg(1, 100), slow, std::make_unique<ThreadedExecutor>(1));
  auto t = base();
  std::vector<std::uint64_t> order;
  std::size_t step = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    for (auto& r : obs.on_step_boundary(t, ++step)) order.push_back(r.ticket.ticket_id);
  }
  auto deadline = std::chrono::steady_clock::now() + 20s;
  while (order.size() < 100 && std::chrono::steady_clock::now() < deadline) {
    for (auto& r : obs.finish(t, ++step)) order.push_back(r.ticket.ticket_id);
    std::this_thread::sleep_for(1ms);
  }
  ASSERT_EQ(order.size(), 100u);
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i + 1);
}

TEST(ThreadedObserver, CompletedResultAppearsAtNextBoundary) {
  std::atomic<bool> done{false};
  AnalysisFn fn = [&](const Trajectory& t, std::stop_token) {
    auto fb = flagged(t.size());
    done = true;
    return fb;
  };
  Observer obs(cfg(1, 1), fn, std::make_unique<ThreadedExecutor>(1));
  auto t = base();
  EXPECT_TRUE(obs.on_step_boundary(t, 1).empty() || done);
  // wait until the worker has published the result
  auto deadline = std::chrono::steady_clock::now() + 5s;
  while (!done && std::chrono::steady_clock::now() < deadline) std::this_thread::sleep_for(1ms);
  std::this_thread::sleep_for(5ms);
  std::size_t got = 0;
  for (std::size_t s = 2; s <= 3 && got == 0; ++s) {
    got += obs.on_step_boundary(t, s).size();
    EXPECT_EQ(s, 2u) << "result missed the first boundary after completion";
  }
  EXPECT_EQ(got, 1u);
}

TEST(ThreadedExecutorListener, PublishedResultIsAlreadyPollable) {
  std::mutex mu;
  std::vector<std::uint64_t> published;
  ThreadedExecutor exec(1, [&](const AnalysisResult& r) {
    std::lock_guard lock(mu);
    published.push_back(r.ticket.ticket_id);
  });
  for (std::uint64_t id = 1; id <= 20; ++id) {
    exec.submit(AnalysisTicket{id, id, id}, [id](std::stop_token) { return flagged(id); });
  }
  std::vector<std::uint64_t> polled;
  auto deadline = std::chrono::steady_clock::now() + 5s;
  while (polled.size() < 20 && std::chrono::steady_clock::now() < deadline) {
    std::size_t seen;
    {
      std::lock_guard lock(mu);
      seen = published.size();
    }
    // everything announced before this poll must come back from it or an earlier one
    for (auto& r : exec.poll()) polled.push_back(r.ticket.ticket_id);
    EXPECT_GE(polled.size(), seen);
    std::this_thread::sleep_for(100us);
  }
  EXPECT_EQ(polled.size(), 20u);
  std::lock_guard lock(mu);
  EXPECT_EQ(published, polled);
}
