#include "ftf/geometry.hpp"

#include "ftf/errors.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace ftf {

bool is_rotation(const Mat3& R, double tol) {
  if (!R.allFinite()) return false;
  const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

double rotation_angle(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!is_rotation(rotation_)) throw DomainError("rigid transform: rotation block is not a proper rotation");
  if (!translation_.allFinite()) throw DomainError("rigid transform: non-finite translation");
}

RigidTransform RigidTransform::from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }

RigidTransform RigidTransform::from_rotation(const Mat3& R) { return {R, Vec3::Zero()}; }

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
  const Eigen::RowVector4d last = m.row(3);
  if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12) {
    throw DomainError("rigid transform: last row must be (0, 0, 0, 1)");
  }
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation_ = rotation_.transpose();
  out.translation_ = -(out.rotation_ * translation_);
  return out;
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  RigidTransform out;
  out.rotation_ = rotation_ * rhs.rotation_;
  out.translation_ = rotation_ * rhs.translation_ + translation_;
  return out;
}

CameraModel::CameraModel(const Mat3& intrinsics, const RigidTransform& extrinsics)
    : intrinsics_(intrinsics), extrinsics_(extrinsics) {
  if (!intrinsics_.allFinite()) throw DomainError("camera: non-finite intrinsics");
  if (intrinsics_(0, 0) <= 0.0 || intrinsics_(1, 1) <= 0.0) {
    throw DomainError("camera: focal entries must be positive");
  }
  if (intrinsics_(1, 0) != 0.0 || intrinsics_(2, 0) != 0.0 || intrinsics_(2, 1) != 0.0) {
    throw DomainError("camera: intrinsics must be upper triangular");
  }
  if (intrinsics_(2, 2) <= 0.0) throw DomainError("camera: intrinsics(2,2) must be positive");
}

Vec3 CameraModel::center() const { return extrinsics_.inverse().translation(); }

RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) throw DomainError("look_at: up vector parallel to view direction");
  // image x to the right, image y down
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 world_from_cam;
  world_from_cam.col(0) = x;
  world_from_cam.col(1) = y;
  world_from_cam.col(2) = z;
  return RigidTransform(world_from_cam, eye).inverse();
}

CameraRig default_rig() {
  Mat3 K;
  K << 600.0, 0.0, 320.0,
       0.0, 600.0, 240.0,
       0.0, 0.0, 1.0;
  const Vec3 center(0.5, 0.0, 0.1);
  const double elevation = 40.0 * std::numbers::pi / 180.0;
  auto eye_at = [&](double azimuth_deg) {
    const double az = azimuth_deg * std::numbers::pi / 180.0;
    return Vec3(center.x() + std::cos(elevation) * std::cos(az),
                center.y() + std::cos(elevation) * std::sin(az),
                center.z() + std::sin(elevation));
  };
  return CameraRig{CameraModel(K, look_at(eye_at(140.0), center)),
                   CameraModel(K, look_at(eye_at(-140.0), center))};
}

Vec2 project(const CameraModel& camera, const Vec3& point) {
  const Vec3 pc = camera.extrinsics().apply(point);
  if (!(pc.z() > 0.0)) throw DomainError("project: point at or behind the camera plane");
  const Vec3 h = camera.intrinsics() * pc;
  return h.head<2>() / h.z();
}

namespace {

// Rows of the homogeneous system for one view in normalized image
// coordinates: x * P.row(2) - P.row(0), y * P.row(2) - P.row(1).
void add_view_rows(const CameraModel& cam, const Vec2& px, Eigen::Matrix4d& A, int row) {
  const Vec3 n = cam.intrinsics().triangularView<Eigen::Upper>().solve(Vec3(px.x(), px.y(), 1.0));
  const Vec2 xy = n.head<2>() / n.z();
  Eigen::Matrix<double, 3, 4> P;
  P.leftCols<3>() = cam.extrinsics().rotation();
  P.col(3) = cam.extrinsics().translation();
  A.row(row) = xy.x() * P.row(2) - P.row(0);
  A.row(row + 1) = xy.y() * P.row(2) - P.row(1);
  for (int r = row; r < row + 2; ++r) {
    const double norm = A.row(r).norm();
    if (norm > 0.0) A.row(r) /= norm;
  }
}

}  // namespace

Vec3 triangulate(const CameraModel& cam_a, const Vec2& px_a, const CameraModel& cam_b,
                 const Vec2& px_b) {
  if (!px_a.allFinite() || !px_b.allFinite()) throw DomainError("triangulate: non-finite pixel");
  if ((cam_a.center() - cam_b.center()).norm() < 1e-12) {
    throw DegeneracyError("triangulate: coincident camera centers",
                          std::numeric_limits<double>::infinity());
  }
  Eigen::Matrix4d A;
  add_view_rows(cam_a, px_a, A, 0);
  add_view_rows(cam_b, px_b, A, 2);
  Eigen::JacobiSVD<Eigen::Matrix4d> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d s = svd.singularValues();
  // the solution spans one null direction; a second near-null direction
  // means the two rays do not pin down a point
  if (s(2) < kDegeneracyRatio * s(0)) {
    const double cond = s(2) > 0.0 ? s(0) / s(2) : std::numeric_limits<double>::infinity();
    throw DegeneracyError("triangulate: rank-deficient view system", cond);
  }
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < kDegeneracyRatio * h.head<3>().norm()) {
    const double cond = h(3) != 0.0 ? h.head<3>().norm() / std::abs(h(3))
                                    : std::numeric_limits<double>::infinity();
    throw DegeneracyError("triangulate: rays are parallel", cond);
  }
  return h.head<3>() / h(3);
}

RigidTransform kabsch(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) throw ContractError("kabsch: point lists differ in length");
  if (source.size() < 3) {
    throw DegeneracyError("kabsch: need at least 3 point pairs",
                          std::numeric_limits<double>::infinity());
  }
  const double n = static_cast<double>(source.size());
  Vec3 cs = Vec3::Zero();
  Vec3 ct = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    cs += source[i];
    ct += target[i];
  }
  cs /= n;
  ct /= n;
  Mat3 H = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    H += (source[i] - cs) * (target[i] - ct).transpose();
  }
  if (!H.allFinite()) throw DomainError("kabsch: non-finite points");
  Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  if (!(s(1) >= kDegeneracyRatio * s(0)) || s(0) == 0.0) {
    const double cond = s(1) > 0.0 ? s(0) / s(1) : std::numeric_limits<double>::infinity();
    throw DegeneracyError("kabsch: collinear or coincident points", cond);
  }
  const Mat3 U = svd.matrixU();
  const Mat3 V = svd.matrixV();
  Mat3 D = Mat3::Identity();
  D(2, 2) = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Mat3 R = V * D * U.transpose();
  // re-orthonormalize against accumulated rounding in the SVD
  Eigen::JacobiSVD<Mat3> polish(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  R = polish.matrixU() * polish.matrixV().transpose();
  return {R, ct - R * cs};
}

Rotation6D encode_rotation6d(const Mat3& R) {
  Rotation6D out;
  out.values.head<3>() = R.col(0);
  out.values.tail<3>() = R.col(1);
  return out;
}

Mat3 decode_rotation6d(const Rotation6D& v) {
  if (!v.values.allFinite()) throw DomainError("rotation6d: non-finite input");
  const Vec3 a1 = v.values.head<3>();
  const Vec3 a2 = v.values.tail<3>();
  const double n1 = a1.norm();
  if (n1 == 0.0) throw DegeneracyError("rotation6d: zero first column", std::numeric_limits<double>::infinity());
  const Vec3 b1 = a1 / n1;
  const Vec3 r2 = a2 - b1.dot(a2) * b1;
  const double n2 = r2.norm();
  if (!(n2 >= kDegeneracyRatio * a2.norm()) || n2 == 0.0) {
    const double cond = n2 > 0.0 ? a2.norm() / n2 : std::numeric_limits<double>::infinity();
    throw DegeneracyError("rotation6d: parallel half-vectors", cond);
  }
  const Vec3 b2 = r2 / n2;
  Mat3 R;
  R.col(0) = b1;
  R.col(1) = b2;
  R.col(2) = b1.cross(b2);
  return R;
}

}  // namespace ftf
