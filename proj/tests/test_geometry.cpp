#include "ftf/errors.hpp"
#include "ftf/geometry.hpp"
#include "oracle.hpp"

#include <doctest.h>

#include <algorithm>
#include <numbers>
#include <random>

using namespace ftf;

namespace {

Mat3 simple_K(double f) {
  Mat3 K;
  K << f, 0, 320, 0, f, 240, 0, 0, 1;
  return K;
}

// Two cameras looking at the workspace center from random directions,
// baseline at least 0.2 m.
CameraRig random_rig(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> az(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> el(0.3, 1.0);
  std::uniform_real_distribution<double> dist(0.8, 1.5);
  std::uniform_real_distribution<double> f(400, 900);
  const Vec3 center(0.5, 0.0, 0.1);
  auto eye = [&] {
    const double a = az(rng), e = el(rng), d = dist(rng);
    return Vec3(center + d * Vec3(std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)));
  };
  Vec3 ea = eye(), eb = eye();
  while ((ea - eb).norm() < 0.2) eb = eye();
  return {CameraModel(simple_K(f(rng)), look_at(ea, center)), CameraModel(simple_K(f(rng)), look_at(eb, center))};
}

}  // namespace

TEST_CASE("project: worked examples") {
  const CameraModel cam(simple_K(500), RigidTransform::identity());
  const Vec2 a = project(cam, Vec3(0, 0, 1));
  CHECK(a.x() == doctest::Approx(320));
  CHECK(a.y() == doctest::Approx(240));
  const Vec2 b = project(cam, Vec3(0.1, 0, 1));
  CHECK(b.x() == doctest::Approx(370));
  CHECK(b.y() == doctest::Approx(240));
  CHECK_THROWS_AS(project(cam, Vec3(0, 0, -1)), DomainError);
  CHECK_THROWS_AS(project(cam, Vec3(1, 0, 0)), DomainError);
}

TEST_CASE("project agrees with the pinhole oracle") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const CameraRig rig = random_rig(rng);
    const Vec3 X = Vec3(0.5, 0, 0.1) + oracle::random_vec(rng, -0.2, 0.2);
    const auto& E = rig.a.extrinsics();
    const Vec2 ref = oracle::pinhole(rig.a.intrinsics(), E.rotation(), E.translation(), X);
    CHECK((project(rig.a, X) - ref).norm() < 1e-9);
  }
}

TEST_CASE("triangulate inverts project over random points and rigs") {
  std::mt19937_64 rng(2);
  double worst = 0.0, worst_px = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const CameraRig rig = random_rig(rng);
    const Vec3 X = Vec3(0.5, 0, 0.1) + oracle::random_vec(rng, -0.25, 0.25);
    const Vec2 pa = project(rig.a, X), pb = project(rig.b, X);
    const Vec3 Y = triangulate(rig.a, pa, rig.b, pb);
    worst = std::max(worst, (Y - X).norm());
    worst_px = std::max({worst_px, (project(rig.a, Y) - pa).norm(), (project(rig.b, Y) - pb).norm()});
  }
  CHECK(worst < 1e-6);
  CHECK(worst_px < 1e-6);
}

TEST_CASE("triangulate: identical cameras are degenerate") {
  const CameraRig rig = default_rig();
  const Vec3 X(0.5, 0.0, 0.1);
  const Vec2 p = project(rig.a, X);
  CHECK_THROWS_AS(triangulate(rig.a, p, rig.a, p), DegeneracyError);
  try {
    triangulate(rig.a, p, rig.a, p);
  } catch (const DegeneracyError& e) {
    CHECK(e.condition() > 1.0 / kDegeneracyRatio);
  }
}

TEST_CASE("triangulate: 0.5 px noise stays below 5 mm at p95 on the default rig") {
  const CameraRig rig = default_rig();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.5);
  std::vector<double> err;
  for (int i = 0; i < 2000; ++i) {
    const Vec3 X = Vec3(0.5, 0, 0.1) + oracle::random_vec(rng, -0.1, 0.1);
    const Vec2 pa = project(rig.a, X) + Vec2(noise(rng), noise(rng));
    const Vec2 pb = project(rig.b, X) + Vec2(noise(rng), noise(rng));
    err.push_back((triangulate(rig.a, pa, rig.b, pb) - X).norm());
  }
  std::sort(err.begin(), err.end());
  const double p95 = err[err.size() * 95 / 100];
  MESSAGE("p95 reconstruction error " << p95 * 1000 << " mm");
  CHECK(p95 < 5e-3);
}

TEST_CASE("kabsch: identity, known transforms, collinear input") {
  std::mt19937_64 rng(4);
  std::vector<Vec3> src;
  for (int i = 0; i < 6; ++i) src.push_back(oracle::random_vec(rng, -1, 1));

  const RigidTransform I = kabsch(src, src);
  CHECK(oracle::max_abs(I.rotation() - Mat3::Identity()) < 1e-12);
  CHECK(I.translation().norm() < 1e-12);

  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Mat3 R = oracle::random_rotation(rng);
    const Vec3 t = oracle::random_vec(rng, -2, 2);
    std::vector<Vec3> pts, dst;
    for (int i = 0; i < 3 + trial % 8; ++i) {
      pts.push_back(oracle::random_vec(rng, -1, 1));
      dst.push_back(R * pts.back() + t);
    }
    const RigidTransform T = kabsch(pts, dst);
    worst = std::max({worst, oracle::max_abs(T.rotation() - R), (T.translation() - t).norm()});
    CHECK(is_rotation(T.rotation(), 1e-9));
  }
  CHECK(worst < 1e-9);

  const std::vector<Vec3> line{{0, 0, 0}, {1, 1, 1}, {2, 2, 2}};
  CHECK_THROWS_AS(kabsch(line, line), DegeneracyError);
  const std::vector<Vec3> two{{0, 0, 0}, {1, 0, 0}};
  CHECK_THROWS_AS(kabsch(two, two), DegeneracyError);
  CHECK_THROWS_AS(kabsch(src, std::span<const Vec3>(src).first(4)), ContractError);
}

TEST_CASE("kabsch: reflection is corrected") {
  std::vector<Vec3> src{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.3, 0.2, 0.1}};
  std::vector<Vec3> mirrored;
  for (const auto& p : src) mirrored.emplace_back(-p.x(), p.y(), p.z());
  const RigidTransform T = kabsch(src, mirrored);
  CHECK(T.rotation().determinant() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(is_rotation(T.rotation()));
}

TEST_CASE("kabsch equivariance under a global rigid motion") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec3> S, Tg;
    for (int i = 0; i < 5; ++i) {
      S.push_back(oracle::random_vec(rng, -1, 1));
      Tg.push_back(oracle::random_vec(rng, -1, 1));  // not an exact rigid image
    }
    const RigidTransform G(oracle::random_rotation(rng), oracle::random_vec(rng, -1, 1));
    std::vector<Vec3> GS, GT;
    for (int i = 0; i < 5; ++i) {
      GS.push_back(G.apply(S[i]));
      GT.push_back(G.apply(Tg[i]));
    }
    const RigidTransform base = kabsch(S, Tg);
    const RigidTransform moved = kabsch(GS, GT);
    const RigidTransform expected = G * base * G.inverse();
    CHECK(oracle::max_abs(moved.matrix() - expected.matrix()) < 1e-8);
  }
}

TEST_CASE("rotation6d codec") {
  const Rotation6D e = encode_rotation6d(Mat3::Identity());
  Vec6 ref;
  ref << 1, 0, 0, 0, 1, 0;
  CHECK(oracle::max_abs(e.values - ref) == 0.0);

  std::mt19937_64 rng(6);
  double worst = 0.0, worst_back = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Mat3 R = oracle::random_rotation(rng);
    const Rotation6D v = encode_rotation6d(R);
    const Mat3 D = decode_rotation6d(v);
    worst = std::max(worst, oracle::max_abs(D - R));
    CHECK(is_rotation(D, 1e-9));
    worst_back = std::max(worst_back, oracle::max_abs(encode_rotation6d(D).values - v.values));
  }
  CHECK(worst < 1e-9);
  CHECK(worst_back < 1e-9);

  // arbitrary non-orthonormal halves still decode to a rotation
  Rotation6D loose;
  loose.values << 2, 0.1, 0, 0.5, 3, 0.2;
  const Mat3 D = decode_rotation6d(loose);
  CHECK(is_rotation(D, 1e-9));
  CHECK((D.col(0) - Vec3(2, 0.1, 0).normalized()).norm() < 1e-12);

  Rotation6D parallel;
  parallel.values << 1, 0, 0, 2, 0, 0;
  CHECK_THROWS_AS(decode_rotation6d(parallel), DegeneracyError);
  Rotation6D zero;
  zero.values.setZero();
  CHECK_THROWS_AS(decode_rotation6d(zero), DegeneracyError);
}

TEST_CASE("rigid transform algebra") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    const RigidTransform T(oracle::random_rotation(rng), oracle::random_vec(rng, -3, 3));
    CHECK(oracle::max_abs((T * T.inverse()).matrix() - Mat4::Identity()) < 1e-9);
    const Vec3 p = oracle::random_vec(rng, -1, 1);
    CHECK((T.inverse().apply(T.apply(p)) - p).norm() < 1e-12);
    CHECK(oracle::max_abs(RigidTransform::from_matrix(T.matrix()).matrix() - T.matrix()) == 0.0);
  }
  Mat3 bad = Mat3::Identity();
  bad(0, 0) = -1;
  CHECK_THROWS_AS(RigidTransform(bad, Vec3::Zero()), DomainError);
  CHECK(rotation_angle(Mat3::Identity(), oracle::rot_z(0.3)) == doctest::Approx(0.3));
}
