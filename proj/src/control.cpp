#include "ftf/control.hpp"

#include "ftf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ftf {

void ControllerConfig::validate() const {
  if (!(k > 0.0)) throw ContractError("controller: k must be positive");
  if (!(epsilon > 0.0)) throw ContractError("controller: epsilon must be positive");
  if (!(derivative_gain >= 0.0)) throw ContractError("controller: derivative_gain must be non-negative");
  if (!(inner_period > 0.0)) throw ContractError("controller: inner_period must be positive");
  if (max_inner_iters < 1) throw ContractError("controller: max_inner_iters must be >= 1");
  if (!(closure_min >= 0.0 && closure_min < closure_max && closure_max <= 1.0)) {
    throw ContractError("controller: closure bounds must satisfy 0 <= min < max <= 1");
  }
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::converged: return "converged";
    case Termination::iter_cap: return "iter_cap";
    case Termination::closure_saturated: return "closure_saturated";
  }
  return "unknown";
}

ControllerTrace force_feedback_gripper_control(Plant& plant, double target, const ControllerConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(target) || target < 0.0) {
    throw ContractError("controller: force target must be finite and >= 0");
  }
  ControllerTrace trace;
  trace.termination = Termination::iter_cap;
  double force = plant.read_force();
  double prev_err = target - force;
  for (std::size_t iter = 0; iter < cfg.max_inner_iters; ++iter) {
    const double err = target - force;
    const double derivative = iter == 0 ? 0.0 : (err - prev_err) / cfg.inner_period;
    const double delta = cfg.k * err + cfg.derivative_gain * derivative;
    const double command = std::clamp(plant.state().closure + delta, cfg.closure_min, cfg.closure_max);
    plant.step_gripper(command);
    const double reading = plant.read_force();
    trace.steps.push_back({target, force, delta, plant.state().closure});
    prev_err = err;
    force = reading;
    const double residual = target - force;
    if (std::abs(residual) <= cfg.epsilon) {
      trace.termination = Termination::converged;
      break;
    }
    const double g = plant.state().closure;
    if ((residual > 0.0 && g >= cfg.closure_max) || (residual < 0.0 && g <= cfg.closure_min)) {
      trace.termination = Termination::closure_saturated;
      break;
    }
  }
  trace.final_force = force;
  return trace;
}

void RolloutConfig::validate() const {
  if (!(open_threshold < close_threshold)) throw ContractError("rollout: need open_threshold < close_threshold");
  if (!(control_rate > 0.0)) throw ContractError("rollout: control_rate must be positive");
  if (max_steps < 1) throw ContractError("rollout: max_steps must be >= 1");
  if (!(decay >= 0.0)) throw ContractError("rollout: decay must be non-negative");
}

PolicyActionSource::PolicyActionSource(const PolicyNet& net, double decay) : net_(net), ensembler_(decay) {}

Action PolicyActionSource::next(std::size_t step, const SimObservation& obs) {
  const std::size_t L = net_.config().history;
  if (history_.empty()) history_.assign(L, obs);
  history_.push_back(obs);
  while (history_.size() > L) history_.pop_front();
  ObservationWindow w;
  for (const auto& o : history_) {
    w.robot.push_back(o.robot_keypoints);
    w.object.push_back(o.object_keypoints);
    w.gripper.push_back(o.gripper_closed ? 1.0 : 0.0);
    w.force.push_back(o.force);
  }
  ensembler_.add(step, net_.predict(w));
  return ensembler_.action_at(step);
}

ReplayActionSource::ReplayActionSource(Demonstration demo, std::size_t stride, std::optional<double> force_override)
    : demo_(std::move(demo)), stride_(stride), force_override_(force_override) {
  demo_.validate();
  if (stride_ < 1) throw ContractError("replay: stride must be positive");
}

Action ReplayActionSource::next(std::size_t step, const SimObservation&) {
  const DemoStep& s = demo_.steps[std::min(demo_.steps.size() - 1, stride_ * (step + 1))];
  Action a;
  a.robot_points = s.robot_keypoints;
  a.gripper = s.gripper_closed ? 1.0 : 0.0;
  a.force = force_override_.value_or(s.force);
  return a;
}

namespace {

bool terminal(const PlantState& s) {
  return s.status == ContactStatus::crushed || s.status == ContactStatus::dropped;
}

}  // namespace

EpisodeRecord rollout(ActionSource& source, Plant& plant, const TaskSpec& spec, const ObjectModel& object,
                      const KeypointLayout& layout, const ControllerConfig& cc, const RolloutConfig& rc) {
  cc.validate();
  rc.validate();
  EpisodeRecord rec;
  rec.seed = rc.seed;
  const Mat3 R0 = spec.reset_pose.rotation();
  bool aborted = false;
  for (std::size_t step = 0; step < rc.max_steps; ++step) {
    const SimObservation obs = plant.observe(layout);
    const Action action = source.next(step, obs);
    ParsedAction pa;
    try {
      pa = parse_action(action, layout, R0);
    } catch (const DegeneracyError&) {
      rec.reason = "degenerate_keypoints";
      aborted = true;
      break;
    }
    StepRecord sr;
    sr.step = step;
    sr.gripper_logit = pa.gripper;
    sr.force_target = pa.force;
    sr.force_clamped = pa.force_clamped;
    if (pa.gripper > rc.close_threshold) {
      plant.set_gripper_flag(true);
      if (rc.gripper_mode == GripperMode::force_feedback) {
        sr.trace = force_feedback_gripper_control(plant, pa.force, cc);
        if (!sr.trace->converged()) ++rec.nonconverged;
      } else {
        for (std::size_t i = 0; i < cc.max_inner_iters && plant.state().closure < cc.closure_max; ++i) {
          plant.step_gripper(cc.closure_max);
        }
      }
    } else if (pa.gripper < rc.open_threshold) {
      plant.set_gripper_flag(false);
      for (std::size_t i = 0; i < cc.max_inner_iters && plant.state().closure > cc.closure_min; ++i) {
        plant.step_gripper(cc.closure_min);
      }
    }
    const PlantState& s = plant.step(plant.state().closure, pa.eef_pose);
    sr.eef_position = s.eef_pose.translation();
    sr.eef_orientation = pa.orientation;
    sr.closure = s.closure;
    sr.force_reading = s.contact_force;
    sr.status = std::string(to_string(s.status));
    rec.steps.push_back(std::move(sr));
    if (terminal(s)) break;
  }
  const PlantState& s = plant.state();
  rec.crush_events = s.crush_events;
  rec.drop_events = s.drop_events;
  rec.peak_force = s.peak_force;
  if (aborted) {
    rec.success = false;
  } else {
    const TaskOutcome outcome = task_outcome(spec, object, s);
    rec.success = outcome.success;
    rec.reason = outcome.reason;
  }
  return rec;
}

EvalReport evaluate(const ActionSourceFactory& factory, const TaskSpec& spec, const KeypointLayout& layout,
                    const ControllerConfig& cc, const RolloutConfig& rc, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ContractError("evaluate: need at least one seed");
  EvalReport report;
  for (std::uint64_t seed : seeds) {
    const ObjectModel object = sample_object(spec, seed);
    Plant plant = make_plant(spec, object, seed);
    auto source = factory(object, seed);
    RolloutConfig episode_cfg = rc;
    episode_cfg.seed = seed;
    EpisodeRecord rec = rollout(*source, plant, spec, object, layout, cc, episode_cfg);
    report.successes += rec.success ? 1 : 0;
    report.crush_episodes += rec.crush_events > 0 ? 1 : 0;
    report.drop_episodes += rec.drop_events > 0 ? 1 : 0;
    report.mean_peak_force += rec.peak_force;
    report.records.push_back(std::move(rec));
  }
  report.episodes = seeds.size();
  report.success_rate = static_cast<double>(report.successes) / static_cast<double>(report.episodes);
  report.mean_peak_force /= static_cast<double>(report.episodes);
  return report;
}

ActionSourceFactory policy_factory(const PolicyNet& net, double decay) {
  return [&net, decay](const ObjectModel&, std::uint64_t) -> std::unique_ptr<ActionSource> {
    return std::make_unique<PolicyActionSource>(net, decay);
  };
}

ActionSourceFactory expert_factory(const TaskSpec& spec, const KeypointLayout& layout, std::size_t stride,
                                   std::optional<double> force_override) {
  return [spec, layout, stride, force_override](const ObjectModel& object,
                                                std::uint64_t seed) -> std::unique_ptr<ActionSource> {
    ExpertResult expert = scripted_expert(spec, object, layout, seed);
    return std::make_unique<ReplayActionSource>(std::move(expert.demo), stride, force_override);
  };
}

}  // namespace ftf
