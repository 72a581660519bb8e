#pragma once

// Reference computations written independently of the library, used as
// oracles by the unit and acceptance tests.

#include "ftf/geometry.hpp"

#include <cmath>
#include <random>

namespace oracle {

using ftf::Mat3;
using ftf::Vec2;
using ftf::Vec3;

// Unit quaternion (w, x, y, z) to rotation matrix.
inline Mat3 quat_to_matrix(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  Mat3 R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return quat_to_matrix(n(rng), n(rng), n(rng), n(rng));
}

inline Vec3 random_vec(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

inline Mat3 rot_z(double angle) {
  Mat3 R;
  R << std::cos(angle), -std::sin(angle), 0, std::sin(angle), std::cos(angle), 0, 0, 0, 1;
  return R;
}

// x_px = K (R X + t), dehomogenized.
inline Vec2 pinhole(const Mat3& K, const Mat3& R, const Vec3& t, const Vec3& X) {
  const Vec3 h = K * (R * X + t);
  return {h.x() / h.z(), h.y() / h.z()};
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

// Closed-form pool-adjacent-violators on (weight, value) blocks, kept
// separate from the library version.
inline std::vector<double> isotonic(const std::vector<double>& y) {
  std::vector<double> mean;
  std::vector<double> weight;
  for (double v : y) {
    mean.push_back(v);
    weight.push_back(1.0);
    while (mean.size() > 1 && mean[mean.size() - 2] > mean.back()) {
      const double w = weight[weight.size() - 2] + weight.back();
      const double m = (mean[mean.size() - 2] * weight[weight.size() - 2] + mean.back() * weight.back()) / w;
      mean.pop_back();
      weight.pop_back();
      mean.back() = m;
      weight.back() = w;
    }
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    for (int k = 0; k < static_cast<int>(weight[i] + 0.5); ++k) out.push_back(mean[i]);
  }
  return out;
}

}  // namespace oracle
