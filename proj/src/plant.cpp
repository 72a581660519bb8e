#include "ftf/plant.hpp"

#include "ftf/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace ftf {

void ObjectModel::validate() const {
  if (!(contact_closure > 0.0 && contact_closure < 1.0)) {
    throw ContractError("object: contact closure must lie in (0, 1)");
  }
  if (!(stiffness > 0.0)) throw ContractError("object: stiffness must be positive");
  if (!(slip_force > 0.0 && slip_force < crush_force)) {
    throw ContractError("object: need 0 < slip_force < crush_force");
  }
  if (keypoints.empty()) throw ContractError("object: no keypoints");
}

std::string_view to_string(ContactStatus status) {
  switch (status) {
    case ContactStatus::free: return "free";
    case ContactStatus::touched: return "touched";
    case ContactStatus::held: return "held";
    case ContactStatus::crushed: return "crushed";
    case ContactStatus::dropped: return "dropped";
  }
  return "unknown";
}

Plant::Plant(ObjectModel object, PlantConfig config, const RigidTransform& eef_pose, std::uint64_t seed)
    : object_(std::move(object)), config_(config), rng_(seed) {
  object_.validate();
  if (!(config_.drop_height >= 0.0)) throw ContractError("plant: drop_height must be non-negative");
  if (!(config_.max_closure_rate > 0.0)) throw ContractError("plant: max_closure_rate must be positive");
  if (!(config_.sensor_noise_sigma >= 0.0) || !(config_.tracker_noise_sigma >= 0.0)) {
    throw ContractError("plant: noise sigmas must be non-negative");
  }
  state_.eef_pose = eef_pose;
  state_.object_pose = object_.initial_pose;
  support_z_ = object_.initial_pose.translation().z();
}

bool Plant::near_object(const RigidTransform& eef) const {
  const Vec3 d = eef.translation() - state_.object_pose.translation();
  return d.head<2>().norm() < config_.capture_radius && std::abs(d.z()) < config_.capture_height;
}

bool Plant::object_supported() const {
  const double z = state_.object_pose.translation().z();
  return std::abs(z - support_z_) <= config_.drop_height || z <= object_.rest_height + config_.drop_height;
}

void Plant::update_contact() {
  state_.contact_force =
      state_.enveloped ? std::max(0.0, object_.stiffness * (state_.closure - object_.contact_closure)) : 0.0;
  state_.peak_force = std::max(state_.peak_force, state_.contact_force);
}

void Plant::settle_object() {
  Vec3 p = state_.object_pose.translation();
  const double z = p.z();
  p.z() = std::abs(z - support_z_) <= config_.drop_height && support_z_ > object_.rest_height ? support_z_
                                                                                              : object_.rest_height;
  state_.object_pose = RigidTransform(state_.object_pose.rotation(), p);
}

const PlantState& Plant::step(double closure_command, const RigidTransform& eef_target) {
  state_.command_clamped = !(closure_command >= 0.0 && closure_command <= 1.0);
  if (!std::isfinite(closure_command)) closure_command = state_.closure;
  closure_command = std::clamp(closure_command, 0.0, 1.0);
  const double delta =
      std::clamp(closure_command - state_.closure, -config_.max_closure_rate, config_.max_closure_rate);
  state_.closure = std::clamp(state_.closure + delta, 0.0, 1.0);

  auto terminal = [this] {
    return state_.status == ContactStatus::crushed || state_.status == ContactStatus::dropped;
  };

  if (!terminal() && !state_.enveloped && near_object(state_.eef_pose) &&
      state_.closure < object_.contact_closure) {
    state_.enveloped = true;
  }
  update_contact();

  const bool moving = (eef_target.translation() - state_.eef_pose.translation()).norm() > 1e-9 ||
                      (eef_target.rotation() - state_.eef_pose.rotation()).norm() > 1e-9;
  if (!terminal()) {
    if (state_.contact_force >= object_.crush_force) {
      state_.status = ContactStatus::crushed;
      ++state_.crush_events;
    } else if (state_.status == ContactStatus::held) {
      if (state_.contact_force < object_.slip_force) {
        if (moving || !object_supported()) {
          state_.status = ContactStatus::dropped;
          ++state_.drop_events;
          spdlog::debug("plant: dropped (moving {}, z {:.4f}, support {:.4f}, force {:.1f})", moving,
                        state_.object_pose.translation().z(), support_z_, state_.contact_force);
          state_.enveloped = false;
          settle_object();
          update_contact();
        } else {
          settle_object();
          state_.status = state_.contact_force > 0.0 ? ContactStatus::touched : ContactStatus::free;
        }
      }
    } else if (state_.contact_force >= object_.slip_force) {
      state_.status = ContactStatus::held;
      grasp_offset_ = state_.eef_pose.inverse() * state_.object_pose;
      support_z_ = state_.object_pose.translation().z();
    } else {
      state_.status = state_.contact_force > 0.0 ? ContactStatus::touched : ContactStatus::free;
    }
  }

  state_.eef_pose = eef_target;
  if (state_.status == ContactStatus::held) {
    state_.object_pose = eef_target * grasp_offset_;
  } else if (state_.enveloped && !near_object(eef_target)) {
    state_.enveloped = false;
  }
  if (!terminal() && !state_.enveloped && near_object(state_.eef_pose) &&
      state_.closure < object_.contact_closure) {
    state_.enveloped = true;
  }
  update_contact();
  if (!terminal() && state_.status != ContactStatus::held) {
    state_.status = state_.contact_force > 0.0 ? ContactStatus::touched : ContactStatus::free;
  }
  return state_;
}

double Plant::read_force() {
  if (state_.status == ContactStatus::free || state_.status == ContactStatus::dropped || !state_.enveloped) {
    return 0.0;
  }
  double f = state_.contact_force;
  if (config_.sensor_noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, config_.sensor_noise_sigma);
    f += noise(rng_);
  }
  return std::max(0.0, f);
}

SimObservation Plant::observe(const KeypointLayout& layout) {
  SimObservation obs;
  obs.robot_keypoints = pose_to_keypoints(state_.eef_pose, layout);
  obs.object_keypoints.reserve(object_.keypoints.size());
  std::normal_distribution<double> noise(0.0, config_.tracker_noise_sigma);
  for (const auto& k : object_.keypoints) {
    Vec3 p = state_.object_pose.apply(k);
    if (config_.tracker_noise_sigma > 0.0) {
      for (int a = 0; a < 3; ++a) p(a) += noise(rng_);
    }
    obs.object_keypoints.push_back(p);
  }
  obs.gripper_closed = state_.gripper_closed;
  obs.force = read_force();
  return obs;
}

void Plant::set_contact_closure(double g0) {
  if (!(g0 > 0.0 && g0 < 1.0)) throw ContractError("plant: contact closure must lie in (0, 1)");
  object_.contact_closure = g0;
  update_contact();
}

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::fragile_pick_place: return "fragile_pick_place";
    case TaskKind::unstack: return "unstack";
    case TaskKind::twist_lift: return "twist_lift";
  }
  return "unknown";
}

TaskKind parse_task_kind(std::string_view name) {
  for (auto kind : {TaskKind::fragile_pick_place, TaskKind::unstack, TaskKind::twist_lift}) {
    if (to_string(kind) == name) return kind;
  }
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

void TaskSpec::validate() const {
  if (!(slip_force > 0.0)) throw ContractError("task: slip_force must be positive");
  if (!(slip_force < crush_force)) {
    throw ContractError("task: infeasible, slip_force " + std::to_string(slip_force) +
                        " >= crush_force " + std::to_string(crush_force));
  }
  if (!(stiffness > 0.0)) throw ContractError("task: stiffness must be positive");
  if (!(contact_closure_min > 0.0 && contact_closure_min <= contact_closure_max &&
        contact_closure_max < 1.0)) {
    throw ContractError("task: contact closure range must satisfy 0 < min <= max < 1");
  }
  if (!(target_force_fraction >= 0.0 && target_force_fraction < 1.0)) {
    throw ContractError("task: target_force_fraction must lie in [0, 1)");
  }
  if (contact_closure_max + target_force() / stiffness > 1.0) {
    throw ContractError("task: target force unreachable within closure range");
  }
  if (object_keypoints.empty()) throw ContractError("task: no object keypoints");
  if (placement_x.x() > placement_x.y() || placement_y.x() > placement_y.y()) {
    throw ContractError("task: placement ranges must be ordered");
  }
  if (!(fps > 0.0)) throw ContractError("task: fps must be positive");
  if (!(goal_tolerance > 0.0)) throw ContractError("task: goal_tolerance must be positive");
}

TaskSpec default_task(TaskKind kind) {
  TaskSpec spec;
  spec.kind = kind;
  spec.object_keypoints = {Vec3(0.025, 0.0, 0.02), Vec3(-0.025, 0.0, 0.02), Vec3(0.0, 0.025, -0.02),
                           Vec3(0.0, -0.025, -0.02)};
  switch (kind) {
    case TaskKind::fragile_pick_place:
      break;
    case TaskKind::unstack:
      spec.crush_force = 120.0;
      spec.slip_force = 40.0;
      spec.start_height = 0.09;
      break;
    case TaskKind::twist_lift:
      spec.crush_force = 300.0;
      spec.slip_force = 80.0;
      spec.deformable = false;
      break;
  }
  return spec;
}

ObjectModel sample_object(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, "object"));
  std::uniform_real_distribution<double> ux(spec.placement_x.x(), spec.placement_x.y());
  std::uniform_real_distribution<double> uy(spec.placement_y.x(), spec.placement_y.y());
  std::uniform_real_distribution<double> ug(spec.contact_closure_min, spec.contact_closure_max);
  ObjectModel obj;
  const double x = ux(rng);
  const double y = uy(rng);
  obj.contact_closure = ug(rng);
  obj.stiffness = spec.stiffness;
  obj.crush_force = spec.crush_force;
  obj.slip_force = spec.slip_force;
  obj.deformable = spec.deformable;
  obj.keypoints = spec.object_keypoints;
  obj.initial_pose = RigidTransform::from_translation(Vec3(x, y, spec.start_height));
  obj.rest_height = spec.rest_height;
  obj.validate();
  return obj;
}

Plant make_plant(const TaskSpec& spec, const ObjectModel& object, std::uint64_t seed) {
  return Plant(object, spec.plant, spec.reset_pose, derive_seed(seed, "plant"));
}

TaskOutcome task_outcome(const TaskSpec& spec, const ObjectModel& object, const PlantState& state) {
  if (state.crush_events > 0 || state.status == ContactStatus::crushed) return {false, "crushed"};
  if (state.drop_events > 0 || state.status == ContactStatus::dropped) return {false, "dropped"};
  const Vec3 p = state.object_pose.translation();
  if (spec.kind == TaskKind::twist_lift) {
    if (state.status != ContactStatus::held) return {false, "not_held"};
    const double lift = p.z() - object.initial_pose.translation().z();
    if (lift < 0.8 * (spec.transport_height - spec.start_height)) return {false, "not_lifted"};
    const Mat3 rel = object.initial_pose.rotation().transpose() * state.object_pose.rotation();
    const double yaw = std::atan2(rel(1, 0), rel(0, 0));
    if (std::abs(yaw) < 0.75 * std::abs(spec.twist_angle)) return {false, "not_twisted"};
    return {true, "ok"};
  }
  if (state.status == ContactStatus::held) return {false, "not_released"};
  if ((p.head<2>() - spec.goal).norm() > spec.goal_tolerance) return {false, "off_goal"};
  if (std::abs(p.z() - spec.rest_height) > 1e-3) return {false, "not_resting"};
  return {true, "ok"};
}

namespace {

double min_jerk(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
}

class ExpertScript {
 public:
  ExpertScript(const RigidTransform& start, double closure) : pose_(start), closure_(closure) {}

  void move_to(const Vec3& target, int frames, double closure_to = -1.0) {
    const Vec3 from = pose_.translation();
    const double g_from = closure_;
    const double g_to = closure_to < 0.0 ? closure_ : closure_to;
    for (int i = 1; i <= frames; ++i) {
      const double s = min_jerk(static_cast<double>(i) / frames);
      const Vec3 p = from + s * (target - from);
      closure_ = g_from + (g_to - g_from) * static_cast<double>(i) / frames;
      pose_ = RigidTransform(pose_.rotation(), p);
      emit();
    }
  }

  void twist(double angle, int frames) {
    const Mat3 from = pose_.rotation();
    for (int i = 1; i <= frames; ++i) {
      const double a = angle * min_jerk(static_cast<double>(i) / frames);
      pose_ = RigidTransform(Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix() * from, pose_.translation());
      emit();
    }
  }

  void hold(int frames) {
    for (int i = 0; i < frames; ++i) emit();
  }

  void set_gripper(bool closed, double closure) {
    closed_ = closed;
    closure_ = closure;
  }

  std::vector<ExpertCommand> commands;

 private:
  void emit() { commands.push_back({closure_, pose_, closed_}); }

  RigidTransform pose_;
  double closure_;
  bool closed_ = false;
};

std::vector<ExpertCommand> expert_commands(const TaskSpec& spec, const ObjectModel& object) {
  const double fps = spec.fps;
  auto frames = [fps](double seconds) { return std::max(1, static_cast<int>(std::lround(seconds * fps))); };
  const Vec3 obj = object.initial_pose.translation();
  const double g0 = object.contact_closure;
  const double preshape = std::max(0.0, g0 - 0.03);
  const double grip = g0 + spec.target_force() / object.stiffness;
  const double high = spec.transport_height;

  ExpertScript script(spec.reset_pose, 0.0);
  script.move_to(Vec3(obj.x(), obj.y(), high), frames(1.5));
  script.move_to(obj, frames(1.0), preshape);
  script.hold(frames(1.0 / 3.0));
  script.set_gripper(true, grip);
  script.hold(frames(0.5));
  if (spec.kind == TaskKind::twist_lift) {
    script.twist(spec.twist_angle, frames(1.0));
    script.move_to(Vec3(obj.x(), obj.y(), high), frames(1.0));
    script.hold(frames(0.5));
    return std::move(script.commands);
  }
  script.move_to(Vec3(obj.x(), obj.y(), high), frames(1.0));
  script.move_to(Vec3(spec.goal.x(), spec.goal.y(), high), frames(1.5));
  script.move_to(Vec3(spec.goal.x(), spec.goal.y(), spec.rest_height), frames(1.0));
  script.hold(frames(0.2));
  script.set_gripper(false, 0.0);
  script.hold(frames(0.5));
  script.move_to(Vec3(spec.goal.x(), spec.goal.y(), high), frames(1.0));
  return std::move(script.commands);
}

DemoStep record_step(Plant& plant, const KeypointLayout& layout, double timestamp) {
  const SimObservation obs = plant.observe(layout);
  return {timestamp, obs.robot_keypoints, obs.object_keypoints, obs.gripper_closed, obs.force};
}

ExpertResult run_commands(const TaskSpec& spec, const ObjectModel& object, const KeypointLayout& layout,
                          std::vector<ExpertCommand> commands, std::uint64_t seed) {
  ExpertResult result;
  result.demo.task = std::string(to_string(spec.kind));
  result.demo.seed = seed;
  result.demo.fps = spec.fps;
  Plant plant = make_plant(spec, object, seed);
  result.demo.steps.push_back(record_step(plant, layout, 0.0));
  for (std::size_t i = 0; i < commands.size(); ++i) {
    plant.set_gripper_flag(commands[i].gripper_closed);
    plant.step(commands[i].closure, commands[i].eef_pose);
    result.demo.steps.push_back(record_step(plant, layout, static_cast<double>(i + 1) / spec.fps));
  }
  result.commands = std::move(commands);
  result.final_state = plant.state();
  result.outcome = task_outcome(spec, object, plant.state());
  return result;
}

}  // namespace

ExpertResult scripted_expert(const TaskSpec& spec, const ObjectModel& object, const KeypointLayout& layout,
                             std::uint64_t seed) {
  spec.validate();
  object.validate();
  return run_commands(spec, object, layout, expert_commands(spec, object), seed);
}

ExpertResult replay_commands(const TaskSpec& spec, const ObjectModel& object, const KeypointLayout& layout,
                             const std::vector<ExpertCommand>& commands, std::uint64_t seed) {
  spec.validate();
  return run_commands(spec, object, layout, commands, seed);
}

}  // namespace ftf
