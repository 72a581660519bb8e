#pragma once

// Force-feedback gripper controller and the closed-loop rollout that runs a
// policy (or a replayed demonstration) against the plant.

#include "ftf/plant.hpp"
#include "ftf/policy.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ftf {

struct ControllerConfig {
  double k = 0.001;               // closure per sensor-norm unit
  double epsilon = 5.0;           // sensor-norm units
  double derivative_gain = 0.0;   // closure * s per sensor-norm unit
  double inner_period = 1.0 / 30.0;  // seconds per inner iteration, for the derivative term
  std::size_t max_inner_iters = 50;
  double closure_min = 0.0;
  double closure_max = 1.0;

  void validate() const;
};

enum class Termination { converged, iter_cap, closure_saturated };

std::string_view to_string(Termination t);

struct ControllerStep {
  double target = 0.0;   // F_hat
  double force = 0.0;    // reading the update was computed from
  double delta = 0.0;    // closure increment
  double closure = 0.0;  // closure after the step
};

struct ControllerTrace {
  std::vector<ControllerStep> steps;
  double final_force = 0.0;  // reading after the last step
  Termination termination = Termination::converged;

  bool converged() const { return termination == Termination::converged; }
};

/// Force loop: repeat { dg = k (F_hat - F) + kd d(F_hat - F)/dt; g = clamp(g + dg);
/// execute; read F } until |F_hat - F| <= epsilon, the iteration cap, or the
/// closure is pinned at a bound while the error still pushes past it. The
/// increment is applied to the plant's current closure. Always runs at least
/// once. Throws ContractError for a negative or non-finite target.
ControllerTrace force_feedback_gripper_control(Plant& plant, double target, const ControllerConfig& cfg);

enum class GripperMode { force_feedback, binary };

struct RolloutConfig {
  double close_threshold = 0.6;
  double open_threshold = 0.4;
  double control_rate = 6.0;  // Hz
  std::size_t max_steps = 60;
  double decay = 0.2;  // temporal averaging, per policy step
  GripperMode gripper_mode = GripperMode::force_feedback;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Produces one aggregated action per policy step.
class ActionSource {
 public:
  virtual ~ActionSource() = default;
  virtual Action next(std::size_t step, const SimObservation& obs) = 0;
};

/// Runs the network on an L-step observation history (padded with the first
/// observation) and ensembles overlapping chunks.
class PolicyActionSource : public ActionSource {
 public:
  PolicyActionSource(const PolicyNet& net, double decay);
  Action next(std::size_t step, const SimObservation& obs) override;

 private:
  const PolicyNet& net_;
  TemporalEnsembler ensembler_;
  std::deque<SimObservation> history_;
};

/// Replays a demonstration at the policy rate: step s returns the frame
/// stride * (s + 1), gripper as 0/1 and the recorded force, or a fixed force
/// when `force_override` is set.
class ReplayActionSource : public ActionSource {
 public:
  ReplayActionSource(Demonstration demo, std::size_t stride, std::optional<double> force_override = std::nullopt);
  Action next(std::size_t step, const SimObservation& obs) override;

 private:
  Demonstration demo_;
  std::size_t stride_;
  std::optional<double> force_override_;
};

struct StepRecord {
  std::size_t step = 0;
  Vec3 eef_position = Vec3::Zero();
  Rotation6D eef_orientation;
  double gripper_logit = 0.0;
  double force_target = 0.0;
  bool force_clamped = false;
  double closure = 0.0;
  double force_reading = 0.0;
  std::string status;
  std::optional<ControllerTrace> trace;
};

struct EpisodeRecord {
  std::uint64_t seed = 0;
  bool success = false;
  std::string reason;
  std::vector<StepRecord> steps;
  int crush_events = 0;
  int drop_events = 0;
  double peak_force = 0.0;
  std::size_t nonconverged = 0;  // controller calls that ended without converging
};

/// Closed loop: observe, query the source, parse the action, run the
/// gripper logic (controller above close_threshold, open below
/// open_threshold, unchanged in between), then execute the end-effector
/// pose. Stops at max_steps or once the object is crushed or dropped.
/// Degenerate predicted keypoints end the episode as a failure.
EpisodeRecord rollout(ActionSource& source, Plant& plant, const TaskSpec& spec, const ObjectModel& object,
                      const KeypointLayout& layout, const ControllerConfig& cc, const RolloutConfig& rc);

using ActionSourceFactory =
    std::function<std::unique_ptr<ActionSource>(const ObjectModel& object, std::uint64_t seed)>;

struct EvalReport {
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  double mean_peak_force = 0.0;
  std::size_t crush_episodes = 0;
  std::size_t drop_episodes = 0;
  std::vector<EpisodeRecord> records;
};

/// One rollout per seed, each with its own object sample and plant.
/// Throws ContractError for an empty seed list.
EvalReport evaluate(const ActionSourceFactory& factory, const TaskSpec& spec, const KeypointLayout& layout,
                    const ControllerConfig& cc, const RolloutConfig& rc, std::span<const std::uint64_t> seeds);

/// Factories for the common sources.
ActionSourceFactory policy_factory(const PolicyNet& net, double decay);
ActionSourceFactory expert_factory(const TaskSpec& spec, const KeypointLayout& layout, std::size_t stride,
                                   std::optional<double> force_override = std::nullopt);

}  // namespace ftf
