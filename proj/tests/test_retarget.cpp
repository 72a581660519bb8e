#include "ftf/errors.hpp"
#include "ftf/retarget.hpp"
#include "oracle.hpp"

#include <doctest.h>

#include <numbers>
#include <random>

using namespace ftf;

namespace {

HandFrame frame_with_tips(const Vec3& thumb, const Vec3& index) {
  HandFrame f = synthesize_hand_frame(RigidTransform::identity(), 0.05, 0.0);
  f.keypoints[hand::kThumbTip] = thumb;
  f.keypoints[hand::kIndexTip] = index;
  return f;
}

RigidTransform reset_pose() {
  return RigidTransform(oracle::rot_z(0.4) * Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitX()).toRotationMatrix(),
                        Vec3(0.35, 0.0, 0.30));
}

}  // namespace

TEST_CASE("hand_to_pose: worked examples") {
  const RigidTransform init = reset_pose();
  const HandFrame f0 = synthesize_hand_frame(RigidTransform(oracle::rot_z(0.2), Vec3(0.4, 0.1, 0.2)), 0.06, 0.0);

  const RigidTransform p0 = hand_to_pose(f0, f0, init);
  CHECK(p0.rotation() == init.rotation());

  const HandFrame tips = frame_with_tips(Vec3(0, 0, 0), Vec3(0.1, 0, 0));
  CHECK((hand_to_pose(tips, tips, init).translation() - Vec3(0.05, 0, 0)).norm() < 1e-15);

  HandFrame rotated = f0;
  const Mat3 Rz = oracle::rot_z(std::numbers::pi / 2);
  for (auto& k : rotated.keypoints) k = Rz * k;
  const RigidTransform p = hand_to_pose(rotated, f0, init);
  CHECK(oracle::max_abs(p.rotation() - Rz * init.rotation()) < 1e-9);
}

TEST_CASE("hand_to_pose recovers synthetic hand motion") {
  std::mt19937_64 rng(11);
  const RigidTransform init = reset_pose();
  const RigidTransform hand0(oracle::random_rotation(rng), Vec3(0.4, 0.0, 0.2));
  const HandFrame f0 = synthesize_hand_frame(hand0, 0.09, 0.0);
  for (int i = 0; i < 50; ++i) {
    const RigidTransform delta(oracle::random_rotation(rng), oracle::random_vec(rng, -0.2, 0.2));
    const RigidTransform hand_t = delta * hand0;
    const HandFrame ft = synthesize_hand_frame(hand_t, 0.02 + 0.001 * i, 0.1 * i);
    const RigidTransform p = hand_to_pose(ft, f0, init);
    CHECK(oracle::max_abs(p.rotation() - delta.rotation() * init.rotation()) < 1e-9);
    CHECK((p.translation() - hand_t.translation()).norm() < 1e-12);
  }
}

TEST_CASE("pose_to_keypoints: worked examples") {
  const KeypointLayout one({"w", "a", "b"},
                           {RigidTransform::identity(), RigidTransform::from_translation({1, 0, 0}),
                            RigidTransform::from_translation({0, 1, 0})},
                           0);
  CHECK(pose_to_keypoints(RigidTransform::identity(), one)[0] == Vec3::Zero());

  const KeypointLayout shifted({"w", "a", "b"},
                               {RigidTransform::from_translation({0.02, 0, 0}),
                                RigidTransform::from_translation({0, 0.05, 0}),
                                RigidTransform::from_translation({0, 0, 0.05})},
                               0);
  const auto k = pose_to_keypoints(RigidTransform::from_translation({0, 0, 0.1}), shifted);
  CHECK((k[0] - Vec3(0.02, 0, 0.1)).norm() < 1e-15);
}

TEST_CASE("keypoints_to_pose inverts pose_to_keypoints") {
  const KeypointLayout layout = KeypointLayout::default_layout();
  const Mat3 R0 = reset_pose().rotation();

  const RigidTransform at_init(R0, Vec3::Zero());
  const RigidTransform back = keypoints_to_pose(layout.reference_points(), layout, Mat3::Identity());
  CHECK(oracle::max_abs(back.matrix() - Mat4::Identity()) < 1e-12);

  std::mt19937_64 rng(12);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const RigidTransform P(oracle::random_rotation(rng), oracle::random_vec(rng, -1, 1));
    const auto pts = pose_to_keypoints(P, layout);
    const RigidTransform Q = keypoints_to_pose(pts, layout, R0);
    worst = std::max(worst, oracle::max_abs(Q.matrix() - P.matrix()));
    CHECK(is_rotation(Q.rotation(), 1e-9));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("keypoints_to_pose with a non-zero wrist offset") {
  const KeypointLayout layout({"wrist", "l", "r", "top"},
                              {RigidTransform::from_translation({0.01, 0.0, -0.02}),
                               RigidTransform::from_translation({0.0, 0.05, 0.0}),
                               RigidTransform::from_translation({0.0, -0.05, 0.0}),
                               RigidTransform::from_translation({0.0, 0.0, 0.15})},
                              0);
  std::mt19937_64 rng(13);
  for (int i = 0; i < 50; ++i) {
    const RigidTransform P(oracle::random_rotation(rng), oracle::random_vec(rng, -1, 1));
    const RigidTransform Q = keypoints_to_pose(pose_to_keypoints(P, layout), layout, Mat3::Identity());
    CHECK(oracle::max_abs(Q.matrix() - P.matrix()) < 1e-9);
  }
}

TEST_CASE("keypoints_to_pose under 1 mm tracker noise") {
  const KeypointLayout layout = KeypointLayout::default_layout();
  std::mt19937_64 rng(14);
  std::normal_distribution<double> noise(0.0, 1e-3);
  double pos = 0.0, ang = 0.0;
  const int trials = 2000;
  for (int i = 0; i < trials; ++i) {
    const RigidTransform P(oracle::random_rotation(rng), oracle::random_vec(rng, -0.5, 0.5));
    auto pts = pose_to_keypoints(P, layout);
    for (auto& p : pts) p += Vec3(noise(rng), noise(rng), noise(rng));
    const RigidTransform Q = keypoints_to_pose(pts, layout, Mat3::Identity());
    pos += (Q.translation() - P.translation()).norm();
    ang += rotation_angle(Q.rotation(), P.rotation());
  }
  pos /= trials;
  ang = ang / trials * 180.0 / std::numbers::pi;
  MESSAGE("mean position error " << pos * 1000 << " mm, mean rotation error " << ang << " deg");
  CHECK(pos < 2e-3);
  CHECK(ang < 1.0);
}

TEST_CASE("gripper_state: 7 cm rule") {
  CHECK(gripper_state(frame_with_tips({0, 0, 0}, {0.05, 0, 0})));
  CHECK_FALSE(gripper_state(frame_with_tips({0, 0, 0}, {0.07, 0, 0})));
  CHECK_FALSE(gripper_state(frame_with_tips({0, 0, 0}, {0.12, 0, 0})));
  CHECK(gripper_state(frame_with_tips({0, 0, 0}, {std::nextafter(0.07, 0.0), 0, 0})));

  std::mt19937_64 rng(15);
  for (int i = 0; i < 200; ++i) {
    const double d = std::uniform_real_distribution<double>(0.0, 0.14)(rng);
    const HandFrame f = synthesize_hand_frame(RigidTransform::identity(), std::max(d, 1e-6), 0.0);
    const RigidTransform G(oracle::random_rotation(rng), oracle::random_vec(rng, -2, 2));
    HandFrame g = f;
    for (auto& k : g.keypoints) k = G.apply(k);
    CHECK(gripper_state(f) == gripper_state(g));
  }
}

TEST_CASE("retarget_trajectory") {
  const KeypointLayout layout = KeypointLayout::default_layout();
  const RigidTransform init = reset_pose();
  const RigidTransform hand0(Mat3::Identity(), Vec3(0.4, 0.0, 0.05));

  const HandFrame f0 = synthesize_hand_frame(hand0, 0.1, 0.0);
  const std::vector<HandFrame> single{f0};
  const std::vector<double> zero{0.0};
  const auto one = retarget_trajectory(single, zero, init, layout);
  REQUIRE(one.size() == 1);
  CHECK(one[0].pose.matrix() == init.matrix());
  CHECK(one[0].keypoints == pose_to_keypoints(init, layout));
  CHECK_FALSE(one[0].gripper_closed);

  // approach, pinch, lift
  std::vector<HandFrame> frames;
  std::vector<double> forces;
  for (int t = 0; t < 30; ++t) {
    const double lift = t < 15 ? 0.0 : 0.01 * (t - 15);
    const double aperture = t < 10 ? 0.1 : 0.04;
    frames.push_back(synthesize_hand_frame(RigidTransform(Mat3::Identity(), hand0.translation() + Vec3(0, 0, lift)),
                                           aperture, t / 30.0));
    forces.push_back(t < 10 ? 0.0 : 90.0);
  }
  const auto traj = retarget_trajectory(frames, forces, init, layout);
  REQUIRE(traj.size() == 30);
  for (int t = 16; t < 30; ++t) CHECK(traj[t].pose.translation().z() > traj[t - 1].pose.translation().z());
  for (int t = 0; t < 30; ++t) {
    CHECK(traj[t].gripper_closed == (t >= 10));
    CHECK(traj[t].force == forces[t]);
    const auto expect = pose_to_keypoints(traj[t].pose, layout);
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK((traj[t].keypoints[i] - expect[i]).norm() < 1e-12);
  }

  const std::vector<double> short_forces(29, 0.0);
  CHECK_THROWS_AS(retarget_trajectory(frames, short_forces, init, layout), ContractError);
  CHECK_THROWS_AS(retarget_trajectory(std::span<const HandFrame>(), std::span<const double>(), init, layout),
                  ContractError);
}

TEST_CASE("hand frame validation") {
  HandFrame f = synthesize_hand_frame(RigidTransform::identity(), 0.05, 0.0);
  f.keypoints[3].x() = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(f.validate(), DomainError);
  CHECK(hand::keypoint_names()[hand::kWrist] == "wrist");
}
