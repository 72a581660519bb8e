#pragma once

// Simulated gripper-object contact world. Closure g in [0, 1] maps to a
// contact force s * (g - g0) once the object sits between the fingers; the
// object is crushed above crush_force, follows the end effector while the
// grip holds at least slip_force, and drops when moved or released in the
// air below it. Forces are in sensor-norm units.

#include "ftf/demonstration.hpp"
#include "ftf/geometry.hpp"
#include "ftf/retarget.hpp"
#include "ftf/seed.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ftf {

struct ObjectModel {
  double contact_closure = 0.25;  // g0
  double stiffness = 1000.0;      // sensor-norm units per unit closure
  double crush_force = 150.0;
  double slip_force = 50.0;
  bool deformable = true;
  std::vector<Vec3> keypoints;  // body frame
  RigidTransform initial_pose;
  double rest_height = 0.03;    // object center z when resting on the table

  /// Throws ContractError unless 0 < g0 < 1, s > 0, 0 < slip < crush.
  void validate() const;
};

enum class ContactStatus { free, touched, held, crushed, dropped };

std::string_view to_string(ContactStatus status);

struct PlantConfig {
  double max_closure_rate = 0.2;     // closure change per step
  double sensor_noise_sigma = 1.0;   // sensor-norm units
  double tracker_noise_sigma = 0.0;  // meters, object keypoints only
  double capture_radius = 0.03;      // horizontal eef-to-object distance for a grasp
  double capture_height = 0.02;      // vertical eef-to-object distance for a grasp
  double drop_height = 0.01;         // release within this height of a support settles the object
};

struct PlantState {
  double closure = 0.0;
  RigidTransform eef_pose;
  RigidTransform object_pose;
  double contact_force = 0.0;  // noise-free
  ContactStatus status = ContactStatus::free;
  bool enveloped = false;       // object between the fingers
  bool gripper_closed = false;  // last binary gripper command
  bool command_clamped = false; // last closure command was outside [0, 1]
  int crush_events = 0;
  int drop_events = 0;
  double peak_force = 0.0;
};

struct SimObservation {
  std::vector<Vec3> robot_keypoints;
  std::vector<Vec3> object_keypoints;
  bool gripper_closed = false;
  double force = 0.0;
};

class Plant {
 public:
  Plant(ObjectModel object, PlantConfig config, const RigidTransform& eef_pose, std::uint64_t seed);

  const PlantState& state() const { return state_; }
  const ObjectModel& object() const { return object_; }
  const PlantConfig& config() const { return config_; }

  /// Moves the closure toward `closure_command` (rate limited), updates
  /// contact and status, then moves the end effector (and a held object)
  /// to `eef_target`. Out-of-range commands are clamped and flagged.
  const PlantState& step(double closure_command, const RigidTransform& eef_target);
  const PlantState& step_gripper(double closure_command) { return step(closure_command, state_.eef_pose); }

  /// Contact force plus fresh zero-mean Gaussian noise, clamped at 0. Always
  /// 0 while no object is in contact.
  double read_force();

  SimObservation observe(const KeypointLayout& layout);

  void set_gripper_flag(bool closed) { state_.gripper_closed = closed; }

  /// Shifts the first-contact closure g0, e.g. to inject a disturbance while
  /// holding.
  void set_contact_closure(double g0);

 private:
  bool near_object(const RigidTransform& eef) const;
  bool object_supported() const;
  void update_contact();
  void settle_object();

  ObjectModel object_;
  PlantConfig config_;
  PlantState state_;
  RigidTransform grasp_offset_;  // eef^-1 * object while held
  double support_z_ = 0.0;
  Rng rng_;
};

enum class TaskKind { fragile_pick_place, unstack, twist_lift };

std::string_view to_string(TaskKind kind);
/// Throws ConfigError for unknown names.
TaskKind parse_task_kind(std::string_view name);

struct TaskSpec {
  TaskKind kind = TaskKind::fragile_pick_place;
  double stiffness = 1000.0;
  double crush_force = 150.0;
  double slip_force = 50.0;
  double contact_closure_min = 0.15;
  double contact_closure_max = 0.35;
  bool deformable = true;
  std::vector<Vec3> object_keypoints;
  double rest_height = 0.03;   // object center z on the table
  double start_height = 0.03;  // object center z at episode start
  Vec2 placement_x{0.45, 0.60};
  Vec2 placement_y{-0.15, 0.05};
  Vec2 goal{0.40, 0.25};
  double goal_tolerance = 0.04;
  double transport_height = 0.15;  // eef z while carrying
  double twist_angle = 1.5707963267948966;  // radians, twist_lift only
  double target_force_fraction = 0.4;       // of the slip..crush band
  RigidTransform reset_pose = RigidTransform::from_translation(Vec3(0.35, 0.0, 0.30));
  double fps = 30.0;
  PlantConfig plant;

  /// Throws ContractError for infeasible specs (slip >= crush, bad ranges).
  void validate() const;
  double target_force() const { return slip_force + target_force_fraction * (crush_force - slip_force); }
};

TaskSpec default_task(TaskKind kind);

/// Object with randomized placement and g0 for one episode seed.
ObjectModel sample_object(const TaskSpec& spec, std::uint64_t seed);

Plant make_plant(const TaskSpec& spec, const ObjectModel& object, std::uint64_t seed);

struct TaskOutcome {
  bool success = false;
  std::string reason;  // "ok" or the first failure found
};

TaskOutcome task_outcome(const TaskSpec& spec, const ObjectModel& object, const PlantState& state);

struct ExpertCommand {
  double closure = 0.0;
  RigidTransform eef_pose;
  bool gripper_closed = false;
};

struct ExpertResult {
  Demonstration demo;
  std::vector<ExpertCommand> commands;  // commands[i] leads from frame i to frame i + 1
  PlantState final_state;
  TaskOutcome outcome;
};

/// Scripted approach -> close to target force -> move -> release
/// trajectory at spec.fps, executed on the plant while recording the
/// observations. Throws ContractError for infeasible specs.
ExpertResult scripted_expert(const TaskSpec& spec, const ObjectModel& object, const KeypointLayout& layout,
                             std::uint64_t seed);

/// Open-loop replay of recorded commands on a fresh plant.
ExpertResult replay_commands(const TaskSpec& spec, const ObjectModel& object, const KeypointLayout& layout,
                             const std::vector<ExpertCommand>& commands, std::uint64_t seed);

}  // namespace ftf
