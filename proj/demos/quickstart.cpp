// Detect a loop in a recorded trajectory, inject guidance, then run a
// scripted looper with the observer attached.

#include <iostream>

#include "trajguard/trajguard.hpp"

using namespace trajguard;

int main() {
  // 1. Offline: detection and a one-off injection on a fixture.
  auto traj = fixtures::loop_php_syntax();
  auto feedback = run_misbehavior_detection(traj);
  std::cout << render_feedback_text(traj.session_id(), feedback);

  for (const auto& g : generate_guidance(feedback, traj)) {
    auto record = inject(traj, g, feedback);
    std::cout << "\ninjected at event " << record.injected_at_index << ":\n" << render_system_reminder(g) << "\n";
  }

  // 2. Online: the same misbehavior inside a live session loop.
  SessionConfig cfg;
  cfg.session_id = "demo";
  cfg.seed = 7;
  auto policy = scripted_policy({BehaviorKind::looper, 1.0, FumbleMode::missing_param});
  auto result = run_session(*policy, ToolRegistry::standard(), cfg);

  std::cout << "\nsession " << cfg.session_id << ": " << result.metrics.steps << " steps, "
            << result.interventions.size() << " intervention(s), outcome "
            << outcome_name(result.trajectory.outcome()) << "\n";
  for (const auto& rec : result.interventions) {
    auto verdict = judge_recovery(rec, result.trajectory, nullptr);
    std::cout << rec.intervention_id << " " << category_code(rec.category()) << " -> " << verdict_name(verdict.verdict)
              << " (" << verdict.rationale << ")\n";
  }
}
