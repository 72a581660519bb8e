#include "ftf/retarget.hpp"

#include "ftf/errors.hpp"

#include <cmath>

namespace ftf {

namespace hand {

const std::array<std::string, kNumKeypoints>& keypoint_names() {
  static const std::array<std::string, kNumKeypoints> names = {
      "wrist",
      "thumb_cmc", "thumb_mcp", "thumb_ip", "thumb_tip",
      "index_mcp", "index_pip", "index_dip", "index_tip",
      "middle_mcp", "middle_pip", "middle_dip", "middle_tip",
      "ring_mcp", "ring_pip", "ring_dip", "ring_tip",
      "pinky_mcp", "pinky_pip", "pinky_dip", "pinky_tip"};
  return names;
}

}  // namespace hand

void HandFrame::validate() const {
  for (const auto& p : keypoints) {
    if (!p.allFinite()) throw DomainError("hand frame: non-finite keypoint");
  }
  if (!std::isfinite(timestamp)) throw DomainError("hand frame: non-finite timestamp");
}

double HandFrame::pinch_distance() const {
  return (keypoints[hand::kIndexTip] - keypoints[hand::kThumbTip]).norm();
}

KeypointLayout::KeypointLayout(std::vector<std::string> names, std::vector<RigidTransform> offsets,
                               std::size_t wrist_index)
    : names_(std::move(names)), offsets_(std::move(offsets)), wrist_index_(wrist_index) {
  if (names_.size() != offsets_.size()) throw ContractError("layout: names and offsets differ in length");
  if (offsets_.size() < 3) throw ContractError("layout: need at least 3 keypoints");
  if (wrist_index_ >= offsets_.size()) throw ContractError("layout: wrist index out of range");
  // the pose must be recoverable from the reference points
  const auto ref = reference_points();
  (void)kabsch(ref, ref);
}

KeypointLayout KeypointLayout::default_layout() {
  return KeypointLayout({"wrist", "finger_left", "finger_right", "hand_top"},
                        {RigidTransform::identity(),
                         RigidTransform::from_translation(Vec3(0.0, 0.05, 0.0)),
                         RigidTransform::from_translation(Vec3(0.0, -0.05, 0.0)),
                         RigidTransform::from_translation(Vec3(0.0, 0.0, 0.15))},
                        0);
}

std::vector<Vec3> KeypointLayout::reference_points() const {
  return pose_to_keypoints(RigidTransform::identity(), *this);
}

RigidTransform hand_to_pose(const HandFrame& frame, const HandFrame& frame0,
                            const RigidTransform& initial_pose) {
  frame.validate();
  frame0.validate();
  const Vec3 position = 0.5 * (frame.keypoints[hand::kIndexTip] + frame.keypoints[hand::kThumbTip]);
  // delta orientation is exactly the identity at t = 0
  if (frame.keypoints == frame0.keypoints) return {initial_pose.rotation(), position};
  const RigidTransform delta = kabsch(frame0.keypoints, frame.keypoints);
  return {delta.rotation() * initial_pose.rotation(), position};
}

std::vector<Vec3> pose_to_keypoints(const RigidTransform& pose, const KeypointLayout& layout) {
  std::vector<Vec3> out;
  out.reserve(layout.size());
  for (const auto& offset : layout.offsets()) out.push_back((pose * offset).translation());
  return out;
}

RigidTransform keypoints_to_pose(std::span<const Vec3> points, const KeypointLayout& layout,
                                 const Mat3& initial_orientation) {
  if (points.size() != layout.size()) {
    throw ContractError("keypoints_to_pose: expected " + std::to_string(layout.size()) +
                        " points, got " + std::to_string(points.size()));
  }
  const auto reference = pose_to_keypoints(RigidTransform::from_rotation(initial_orientation), layout);
  const RigidTransform delta = kabsch(reference, points);
  const Mat3 R = delta.rotation() * initial_orientation;
  const Vec3& wrist_offset = layout.offsets()[layout.wrist_index()].translation();
  return {R, points[layout.wrist_index()] - R * wrist_offset};
}

bool gripper_state(const HandFrame& frame) { return frame.pinch_distance() < hand::kClosedDistance; }

std::vector<RobotState> retarget_trajectory(std::span<const HandFrame> frames,
                                            std::span<const double> forces,
                                            const RigidTransform& initial_pose,
                                            const KeypointLayout& layout) {
  if (frames.empty()) throw ContractError("retarget: no frames");
  if (forces.size() != frames.size()) {
    throw ContractError("retarget: " + std::to_string(forces.size()) + " forces for " +
                        std::to_string(frames.size()) + " frames");
  }
  std::vector<RobotState> out;
  out.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (!(forces[t] >= 0.0)) throw ContractError("retarget: negative or non-finite force");
    RobotState state;
    state.pose = t == 0 ? initial_pose : hand_to_pose(frames[t], frames[0], initial_pose);
    if (t == 0) frames[0].validate();
    state.keypoints = pose_to_keypoints(state.pose, layout);
    state.gripper_closed = gripper_state(frames[t]);
    state.force = forces[t];
    out.push_back(std::move(state));
  }
  return out;
}

HandFrame synthesize_hand_frame(const RigidTransform& pose, double aperture, double timestamp) {
  if (!(aperture > 0.0)) throw DomainError("synthesize_hand_frame: aperture must be positive");
  // hand-frame template; thumb and index tips lie on the y axis, symmetric
  // about the origin, so aperture changes do not move the centroid
  static const std::array<Vec3, hand::kNumKeypoints> base = {
      Vec3(-0.02, 0.0, 0.12),                                                    // wrist
      Vec3(-0.01, -0.03, 0.10), Vec3(0.0, -0.045, 0.07), Vec3(0.005, -0.05, 0.04), Vec3(0, 0, 0),
      Vec3(0.0, 0.02, 0.09), Vec3(0.01, 0.035, 0.06), Vec3(0.012, 0.045, 0.035), Vec3(0, 0, 0),
      Vec3(0.025, 0.01, 0.09), Vec3(0.04, 0.02, 0.055), Vec3(0.05, 0.025, 0.03), Vec3(0.055, 0.03, 0.01),
      Vec3(0.045, 0.0, 0.09), Vec3(0.06, 0.005, 0.06), Vec3(0.068, 0.01, 0.04), Vec3(0.072, 0.012, 0.022),
      Vec3(0.06, -0.012, 0.095), Vec3(0.075, -0.01, 0.075), Vec3(0.082, -0.008, 0.06), Vec3(0.086, -0.006, 0.048)};
  HandFrame frame;
  frame.timestamp = timestamp;
  for (std::size_t i = 0; i < hand::kNumKeypoints; ++i) frame.keypoints[i] = pose.apply(base[i]);
  frame.keypoints[hand::kThumbTip] = pose.apply(Vec3(0.0, -0.5 * aperture, 0.0));
  frame.keypoints[hand::kIndexTip] = pose.apply(Vec3(0.0, 0.5 * aperture, 0.0));
  return frame;
}

}  // namespace ftf
