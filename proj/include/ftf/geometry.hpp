#pragma once

// Two-view projective geometry, rigid transforms and rotation encodings.
// World frame is the robot base frame; all lengths are meters, image
// coordinates are pixels.

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace ftf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

/// True when R is orthonormal with determinant +1 to within tol.
bool is_rotation(const Mat3& R, double tol = 1e-9);

/// Geodesic angle (radians) between two rotations.
double rotation_angle(const Mat3& a, const Mat3& b);

class RigidTransform {
 public:
  RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

  /// Throws DomainError when `rotation` is not a proper rotation.
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& t);
  static RigidTransform from_rotation(const Mat3& R);
  /// Expects a homogeneous matrix with last row (0, 0, 0, 1).
  static RigidTransform from_matrix(const Mat4& m);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  RigidTransform inverse() const;
  Mat4 matrix() const;

  RigidTransform operator*(const RigidTransform& rhs) const;

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

/// Pinhole camera. Extrinsics map world coordinates into the camera frame.
class CameraModel {
 public:
  CameraModel(const Mat3& intrinsics, const RigidTransform& extrinsics);

  const Mat3& intrinsics() const { return intrinsics_; }
  const RigidTransform& extrinsics() const { return extrinsics_; }

  /// Camera center in world coordinates.
  Vec3 center() const;

 private:
  Mat3 intrinsics_;
  RigidTransform extrinsics_;
};

struct CameraRig {
  CameraModel a;
  CameraModel b;
};

/// Extrinsics for a camera at `eye` whose optical axis passes through
/// `target`. `up` fixes the roll and must not be parallel to the view ray.
RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

/// Two 640x480 cameras (focal 600 px) one meter from the workspace center,
/// 80 degrees apart in azimuth.
CameraRig default_rig();

/// Perspective projection. Throws DomainError for points at or behind the
/// camera plane.
Vec2 project(const CameraModel& camera, const Vec3& point);

/// Linear (DLT) two-view triangulation. Throws DegeneracyError for
/// coincident centers or parallel rays.
Vec3 triangulate(const CameraModel& cam_a, const Vec2& px_a, const CameraModel& cam_b,
                 const Vec2& px_b);

/// Least-squares rigid transform T minimising sum |T*source_i - target_i|^2,
/// with reflection correction. Throws ContractError on size mismatch and
/// DegeneracyError for fewer than three or collinear points.
RigidTransform kabsch(std::span<const Vec3> source, std::span<const Vec3> target);

/// First two columns of a rotation matrix, column-major.
struct Rotation6D {
  Vec6 values;
};

Rotation6D encode_rotation6d(const Mat3& R);

/// Gram-Schmidt on the two halves, third column from the cross product.
/// Throws DegeneracyError when the halves are (nearly) parallel or zero.
Mat3 decode_rotation6d(const Rotation6D& v);

}  // namespace ftf
