#include "ftf/demonstration.hpp"

#include "ftf/errors.hpp"

#include <cmath>

namespace ftf {

void Demonstration::validate() const {
  if (steps.empty()) throw ContractError("demonstration: no steps");
  const std::size_t n = num_robot_points();
  const std::size_t m = num_object_points();
  if (n == 0) throw ContractError("demonstration: no robot keypoints");
  if (!(fps > 0.0)) throw ContractError("demonstration: fps must be positive");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const DemoStep& s = steps[i];
    const std::string where = "demonstration step " + std::to_string(i) + ": ";
    if (s.robot_keypoints.size() != n || s.object_keypoints.size() != m) {
      throw ContractError(where + "keypoint count differs from the first step");
    }
    if (!std::isfinite(s.timestamp)) throw ContractError(where + "non-finite timestamp");
    if (!std::isfinite(s.force) || s.force < 0.0) throw ContractError(where + "force must be finite and >= 0");
    for (const auto& p : s.robot_keypoints) {
      if (!p.allFinite()) throw ContractError(where + "non-finite robot keypoint");
    }
    for (const auto& p : s.object_keypoints) {
      if (!p.allFinite()) throw ContractError(where + "non-finite object keypoint");
    }
  }
}

}  // namespace ftf
