#pragma once

// Human hand keypoints -> robot end-effector pose, robot keypoints, binary
// gripper state and force channel.

#include "ftf/geometry.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ftf {

namespace hand {

inline constexpr std::size_t kNumKeypoints = 21;
inline constexpr std::size_t kWrist = 0;
inline constexpr std::size_t kThumbTip = 4;
inline constexpr std::size_t kIndexTip = 8;

/// Closed iff the thumb-index tip distance is strictly below this (meters).
inline constexpr double kClosedDistance = 0.07;

/// Keypoint names in topology order: wrist, then four joints per finger from
/// thumb to pinky (CMC/MCP, MCP/PIP, IP/DIP, tip).
const std::array<std::string, kNumKeypoints>& keypoint_names();

}  // namespace hand

struct HandFrame {
  std::array<Vec3, hand::kNumKeypoints> keypoints;
  double timestamp = 0.0;

  /// Throws DomainError on non-finite coordinates.
  void validate() const;
  double pinch_distance() const;
};

/// Fixed offsets of the N robot keypoints relative to the end-effector pose.
class KeypointLayout {
 public:
  KeypointLayout(std::vector<std::string> names, std::vector<RigidTransform> offsets,
                 std::size_t wrist_index);

  /// Wrist at the pose origin, two fingertips 5 cm either side along y and a
  /// hand-top point 15 cm up along z.
  static KeypointLayout default_layout();

  std::size_t size() const { return offsets_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<RigidTransform>& offsets() const { return offsets_; }
  std::size_t wrist_index() const { return wrist_index_; }

  /// Keypoints of the identity pose.
  std::vector<Vec3> reference_points() const;

 private:
  std::vector<std::string> names_;
  std::vector<RigidTransform> offsets_;
  std::size_t wrist_index_;
};

struct RobotState {
  RigidTransform pose;
  std::vector<Vec3> keypoints;
  bool gripper_closed = false;
  double force = 0.0;  // sensor-norm units
};

/// Position: thumb/index tip midpoint of `frame`. Orientation: rotation of
/// the best rigid fit frame0 -> frame, composed onto initial_pose.
RigidTransform hand_to_pose(const HandFrame& frame, const HandFrame& frame0,
                            const RigidTransform& initial_pose);

/// Keypoint i is the translation of pose * offset_i.
std::vector<Vec3> pose_to_keypoints(const RigidTransform& pose, const KeypointLayout& layout);

/// Inverse of pose_to_keypoints. Orientation is the rigid fit from the
/// layout seen at `initial_orientation` onto `points`, composed with
/// `initial_orientation`; position is the wrist keypoint less its rotated
/// offset (exactly the wrist keypoint when the wrist offset is zero).
RigidTransform keypoints_to_pose(std::span<const Vec3> points, const KeypointLayout& layout,
                                 const Mat3& initial_orientation);

/// True (closed) iff the thumb-index tip distance is < 7 cm.
bool gripper_state(const HandFrame& frame);

std::vector<RobotState> retarget_trajectory(std::span<const HandFrame> frames,
                                            std::span<const double> forces,
                                            const RigidTransform& initial_pose,
                                            const KeypointLayout& layout);

/// Synthetic hand whose thumb/index midpoint sits at the pose origin with
/// the pinch axis along the pose y axis; `aperture` is the tip distance.
/// Used to build hand trajectories with known ground-truth poses.
HandFrame synthesize_hand_frame(const RigidTransform& pose, double aperture, double timestamp);

}  // namespace ftf
