#include "ftf/tactile.hpp"

#include "ftf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ftf {

double aggregate_norm(const RawForceSample& sample) {
  return (sample.magnetometers[kCenterMagnetometer] - sample.baseline[kCenterMagnetometer]).norm();
}

ResampledForces resample_to_frames(std::span<const RawForceSample> stream,
                                   std::span<const double> frame_times, double nominal_period) {
  if (frame_times.empty()) throw ContractError("resample: no frame times");
  if (stream.empty()) throw ContractError("resample: empty force stream");
  for (std::size_t i = 1; i < stream.size(); ++i) {
    if (!(stream[i].timestamp > stream[i - 1].timestamp)) {
      throw ContractError("resample: stream timestamps must strictly increase (sample " +
                          std::to_string(i) + ")");
    }
  }
  for (std::size_t i = 1; i < frame_times.size(); ++i) {
    if (!(frame_times[i] > frame_times[i - 1])) {
      throw ContractError("resample: frame times must strictly increase");
    }
  }
  if (stream.front().timestamp > frame_times.front() || stream.back().timestamp < frame_times.back()) {
    throw ContractError("resample: stream does not cover the frame span");
  }

  const std::size_t n = frame_times.size();
  const double width = n > 1 ? (frame_times.back() - frame_times.front()) / static_cast<double>(n - 1)
                             : nominal_period;
  ResampledForces out;
  out.values.assign(n, 0.0);
  out.gap.assign(n, false);
  out.counts.assign(n, 0);

  std::size_t k = 0;
  while (k < stream.size() && stream[k].timestamp < frame_times.front()) ++k;
  double previous = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double end = i + 1 < n ? frame_times[i + 1] : frame_times[i] + width;
    double sum = 0.0;
    std::size_t count = 0;
    for (; k < stream.size() && stream[k].timestamp < end; ++k) {
      sum += aggregate_norm(stream[k]);
      ++count;
    }
    out.counts[i] = count;
    if (count == 0) {
      out.values[i] = previous;
      out.gap[i] = true;
    } else {
      out.values[i] = sum / static_cast<double>(count);
    }
    previous = out.values[i];
  }
  return out;
}

CalibrationCurve::CalibrationCurve(std::vector<CalibrationKnot> knots) : knots_(std::move(knots)) {
  if (knots_.size() < 2) throw ContractError("calibration curve: need at least 2 knots");
  if (knots_.front().norm != 0.0 || knots_.front().newtons != 0.0) {
    throw ContractError("calibration curve: first knot must be (0, 0)");
  }
  for (std::size_t i = 0; i < knots_.size(); ++i) {
    if (!std::isfinite(knots_[i].norm) || !std::isfinite(knots_[i].newtons)) {
      throw ContractError("calibration curve: non-finite knot");
    }
    if (i > 0 && !(knots_[i].norm > knots_[i - 1].norm)) {
      throw ContractError("calibration curve: norms must strictly increase");
    }
    if (i > 0 && knots_[i].newtons < knots_[i - 1].newtons) {
      throw ContractError("calibration curve: forces must not decrease");
    }
  }
}

double CalibrationCurve::norm_to_newton(double norm) const {
  if (!(norm > 0.0)) return 0.0;
  // first knot with knot.norm > norm, clamped to the terminal segment
  auto it = std::upper_bound(knots_.begin(), knots_.end(), norm,
                             [](double x, const CalibrationKnot& k) { return x < k.norm; });
  std::size_t hi = static_cast<std::size_t>(it - knots_.begin());
  hi = std::clamp<std::size_t>(hi, 1, knots_.size() - 1);
  const auto& a = knots_[hi - 1];
  const auto& b = knots_[hi];
  if (norm == b.norm) return b.newtons;
  const double slope = (b.newtons - a.newtons) / (b.norm - a.norm);
  return a.newtons + slope * (norm - a.norm);
}

double CalibrationCurve::newton_to_norm(double newtons) const {
  if (!(newtons > 0.0)) return 0.0;
  // first knot reaching the requested force
  auto it = std::lower_bound(knots_.begin(), knots_.end(), newtons,
                             [](const CalibrationKnot& k, double f) { return k.newtons < f; });
  if (it == knots_.end()) {
    const auto& a = knots_[knots_.size() - 2];
    const auto& b = knots_.back();
    if (b.newtons == a.newtons) return b.norm;
    const double slope = (b.norm - a.norm) / (b.newtons - a.newtons);
    return b.norm + slope * (newtons - b.newtons);
  }
  if (it->newtons == newtons) return it->norm;
  const auto& b = *it;
  const auto& a = *(it - 1);
  return a.norm + (b.norm - a.norm) * (newtons - a.newtons) / (b.newtons - a.newtons);
}

CalibrationFit fit_calibration(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 2) throw ContractError("fit_calibration: need at least 2 pairs");
  for (const auto& [norm, newtons] : pairs) {
    if (!std::isfinite(norm) || !std::isfinite(newtons)) {
      throw ContractError("fit_calibration: non-finite pair");
    }
    if (norm < 0.0) throw ContractError("fit_calibration: negative sensor norm");
  }
  std::vector<std::pair<double, double>> sorted(pairs.begin(), pairs.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  if (sorted.front().first == sorted.back().first) {
    throw DegeneracyError("fit_calibration: all sensor norms identical",
                          std::numeric_limits<double>::infinity());
  }

  struct Block {
    double first_norm;
    double last_norm;
    double sum;
    double weight;
    std::size_t members;  // distinct norms in the block
    double mean() const { return sum / weight; }
  };
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < sorted.size() && sorted[j].first == sorted[i].first) sum += sorted[j++].second;
    blocks.push_back({sorted[i].first, sorted[i].first, sum, static_cast<double>(j - i), 1});
    i = j;
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean() > blocks.back().mean()) {
      Block top = blocks.back();
      blocks.pop_back();
      auto& prev = blocks.back();
      prev.last_norm = top.last_norm;
      prev.sum += top.sum;
      prev.weight += top.weight;
      prev.members += top.members;
    }
  }

  std::size_t pooled = 0;
  for (const auto& b : blocks) {
    if (b.members > 1) pooled += b.members;
  }
  // one knot per distinct observed norm, valued by its pooled block
  std::vector<CalibrationKnot> full;
  std::size_t bi = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double norm = sorted[i].first;
    while (norm > blocks[bi].last_norm) ++bi;
    full.push_back({norm, std::max(0.0, blocks[bi].mean())});
    while (i < sorted.size() && sorted[i].first == norm) ++i;
  }
  if (full.front().norm == 0.0) {
    full.front().newtons = 0.0;
  } else {
    full.insert(full.begin(), CalibrationKnot{0.0, 0.0});
  }

  double max_residual = 0.0;
  CalibrationCurve curve(full);
  for (const auto& [norm, newtons] : pairs) {
    max_residual = std::max(max_residual, std::abs(curve.norm_to_newton(norm) - newtons));
  }
  return {std::move(curve), max_residual, pooled};
}

}  // namespace ftf
