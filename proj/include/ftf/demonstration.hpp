#pragma once

#include "ftf/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ftf {

/// One timestep of the embodiment-agnostic representation: robot and object
/// keypoints, binarized gripper state and the force channel (sensor-norm).
struct DemoStep {
  double timestamp = 0.0;
  std::vector<Vec3> robot_keypoints;
  std::vector<Vec3> object_keypoints;
  bool gripper_closed = false;
  double force = 0.0;
};

struct Demonstration {
  std::string task;
  std::uint64_t seed = 0;
  double fps = 30.0;
  std::vector<DemoStep> steps;

  std::size_t num_robot_points() const { return steps.empty() ? 0 : steps.front().robot_keypoints.size(); }
  std::size_t num_object_points() const { return steps.empty() ? 0 : steps.front().object_keypoints.size(); }

  /// Throws ContractError on empty demos, inconsistent shapes, negative or
  /// non-finite values.
  void validate() const;
};

}  // namespace ftf
