#pragma once

// Glove / gripper force channel: magnetometer norm aggregation, resampling
// of the ~200 Hz sensor stream onto camera frames, and the monotone
// sensor-norm <-> Newton calibration.

#include "ftf/geometry.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace ftf {

inline constexpr std::size_t kNumMagnetometers = 5;
inline constexpr std::size_t kCenterMagnetometer = 2;

struct RawForceSample {
  double timestamp = 0.0;
  std::array<Vec3, kNumMagnetometers> magnetometers{};
  std::array<Vec3, kNumMagnetometers> baseline{};
};

/// |center magnetometer - its baseline|, in sensor-norm units.
double aggregate_norm(const RawForceSample& sample);

struct ResampledForces {
  std::vector<double> values;
  /// Frames whose window held no samples; their value repeats the previous
  /// frame (0 for the first frame).
  std::vector<bool> gap;
  /// Samples that landed in each frame window.
  std::vector<std::size_t> counts;
};

/// Mean aggregate_norm over [t_i, t_{i+1}); the last frame uses a trailing
/// window of the mean frame spacing (or `nominal_period` when only one frame
/// is given). Throws ContractError when timestamps are not strictly
/// increasing or the stream does not cover the frame span.
ResampledForces resample_to_frames(std::span<const RawForceSample> stream,
                                   std::span<const double> frame_times,
                                   double nominal_period = 1.0 / 30.0);

struct CalibrationKnot {
  double norm = 0.0;    // sensor units
  double newtons = 0.0;
};

/// Monotone piecewise-linear map between sensor norm and Newtons, anchored
/// at the origin. Outside the knot range the terminal slope extrapolates;
/// negative queries clamp to zero.
class CalibrationCurve {
 public:
  /// Throws ContractError unless norms strictly increase, forces do not
  /// decrease and the first knot is (0, 0).
  explicit CalibrationCurve(std::vector<CalibrationKnot> knots);

  const std::vector<CalibrationKnot>& knots() const { return knots_; }

  double norm_to_newton(double norm) const;
  /// On flat segments returns the smallest matching norm.
  double newton_to_norm(double newtons) const;

 private:
  std::vector<CalibrationKnot> knots_;
};

struct CalibrationFit {
  CalibrationCurve curve;
  /// Largest |fitted - observed| over the input pairs.
  double max_residual = 0.0;
  /// Distinct-norm blocks merged by pool-adjacent-violators.
  std::size_t pooled_count = 0;
};

/// Isotonic (pool-adjacent-violators) regression of Newtons on norm,
/// clamped non-negative and anchored at (0, 0). Repeated norms are averaged
/// first. Throws ContractError for fewer than 2 pairs or non-finite values,
/// DegeneracyError when every norm is identical.
CalibrationFit fit_calibration(std::span<const std::pair<double, double>> pairs);

}  // namespace ftf
