#include "ftf/policy.hpp"

#include "ftf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ftf {

RowMatrix tokenize(const ObservationWindow& window) {
  const std::size_t L = window.length();
  if (L == 0) throw ContractError("tokenize: empty window");
  if (window.robot.size() != L || window.object.size() != L || window.force.size() != L) {
    throw ContractError("tokenize: histories have different lengths");
  }
  const std::size_t N = window.robot.front().size();
  const std::size_t M = window.object.front().size();
  if (N == 0) throw ContractError("tokenize: no robot keypoints");
  for (std::size_t t = 0; t < L; ++t) {
    if (window.robot[t].size() != N || window.object[t].size() != M) {
      throw ContractError("tokenize: keypoint count changes within the window");
    }
  }
  RowMatrix tokens(static_cast<Eigen::Index>(N + M + 2), static_cast<Eigen::Index>(3 * L));
  for (std::size_t t = 0; t < L; ++t) {
    const Eigen::Index c = static_cast<Eigen::Index>(3 * t);
    for (std::size_t i = 0; i < N; ++i) tokens.block<1, 3>(static_cast<Eigen::Index>(i), c) = window.robot[t][i].transpose();
    for (std::size_t j = 0; j < M; ++j) {
      tokens.block<1, 3>(static_cast<Eigen::Index>(N + j), c) = window.object[t][j].transpose();
    }
    tokens.block<1, 3>(static_cast<Eigen::Index>(N + M), c).setConstant(window.gripper[t]);
    tokens.block<1, 3>(static_cast<Eigen::Index>(N + M + 1), c).setConstant(window.force[t]);
  }
  return tokens;
}

namespace {

ObservationWindow normalized(const ObservationWindow& w, const Normalization& norm, bool mask_force) {
  ObservationWindow out = w;
  for (auto& step : out.robot) {
    for (auto& p : step) p = norm.normalize(p);
  }
  for (auto& step : out.object) {
    for (auto& p : step) p = norm.normalize(p);
  }
  for (auto& f : out.force) f = mask_force ? 0.0 : f * norm.force_scale;
  return out;
}

}  // namespace

ActionChunk PolicyNet::predict(const ObservationWindow& window) const {
  if (window.length() != config_.history) {
    throw ContractError("predict: window length " + std::to_string(window.length()) + " != history " +
                        std::to_string(config_.history));
  }
  if (window.robot.front().size() != config_.num_robot_points ||
      window.object.front().size() != config_.num_object_points) {
    throw ContractError("predict: keypoint counts do not match the model");
  }
  ActionChunk chunk = forward(tokenize(normalized(window, norm_, config_.mask_force)));
  for (auto& a : chunk.steps) {
    for (auto& p : a.robot_points) p = norm_.denormalize(p);
    a.force /= norm_.force_scale;
  }
  return chunk;
}

ObservationWindow window_at(const Demonstration& demo, std::size_t frame, std::size_t history,
                            std::size_t stride) {
  if (demo.steps.empty()) throw ContractError("window_at: empty demonstration");
  if (frame >= demo.steps.size()) throw ContractError("window_at: frame out of range");
  if (history == 0) throw ContractError("window_at: history must be positive");
  ObservationWindow w;
  for (std::size_t k = history; k-- > 0;) {
    const std::size_t back = k * stride;
    const DemoStep& s = demo.steps[frame >= back ? frame - back : 0];
    w.robot.push_back(s.robot_keypoints);
    w.object.push_back(s.object_keypoints);
    w.gripper.push_back(s.gripper_closed ? 1.0 : 0.0);
    w.force.push_back(s.force);
  }
  return w;
}

Normalization fit_normalization(std::span<const Demonstration> demos) {
  Vec3 sum = Vec3::Zero();
  Vec3 sq = Vec3::Zero();
  double count = 0.0;
  for (const auto& d : demos) {
    for (const auto& s : d.steps) {
      for (const auto& p : s.robot_keypoints) {
        sum += p;
        sq += p.cwiseProduct(p);
        count += 1.0;
      }
      for (const auto& p : s.object_keypoints) {
        sum += p;
        sq += p.cwiseProduct(p);
        count += 1.0;
      }
    }
  }
  if (count == 0.0) throw ContractError("fit_normalization: no keypoints");
  Normalization norm;
  norm.position_mean = sum / count;
  const Vec3 var = (sq / count - norm.position_mean.cwiseProduct(norm.position_mean)).cwiseMax(0.0);
  norm.position_scale = var.cwiseSqrt().cwiseMax(1e-3);
  return norm;
}

Batch build_dataset(std::span<const Demonstration> demos, const PolicyConfig& config, const Normalization& norm) {
  std::size_t total = 0;
  for (const auto& d : demos) {
    d.validate();
    if (d.num_robot_points() != config.num_robot_points || d.num_object_points() != config.num_object_points) {
      throw ContractError("build_dataset: demo '" + d.task + "' keypoint counts do not match the config");
    }
    total += d.steps.size();
  }
  if (total == 0) throw ContractError("build_dataset: empty dataset");

  const std::size_t T = config.num_tokens();
  const std::size_t N = config.num_robot_points;
  const std::size_t H = config.horizon;
  Batch batch;
  batch.tokens.resize(static_cast<Eigen::Index>(total * T), static_cast<Eigen::Index>(config.token_dim()));
  batch.targets.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(config.output_size()));
  Eigen::Index row = 0;
  for (const auto& d : demos) {
    const std::size_t last = d.steps.size() - 1;
    for (std::size_t f = 0; f <= last; ++f, ++row) {
      const ObservationWindow w = normalized(window_at(d, f, config.history, config.stride), norm, config.mask_force);
      batch.tokens.middleRows(row * static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(T)) = tokenize(w);
      for (std::size_t h = 0; h < H; ++h) {
        const DemoStep& s = d.steps[std::min(last, f + config.stride * (h + 1))];
        for (std::size_t i = 0; i < N; ++i) {
          batch.targets.block<1, 3>(row, static_cast<Eigen::Index>(i * 3 * H + 3 * h)) =
              norm.normalize(s.robot_keypoints[i]).transpose();
        }
        batch.targets(row, static_cast<Eigen::Index>(N * 3 * H + h)) = s.gripper_closed ? 1.0 : 0.0;
        batch.targets(row, static_cast<Eigen::Index>(N * 3 * H + H + h)) = s.force * norm.force_scale;
      }
    }
  }
  return batch;
}

Action temporal_aggregate(std::span<const AgedAction> predictions, double decay) {
  if (predictions.empty()) throw ContractError("temporal_aggregate: no prediction covers this step");
  if (!(decay >= 0.0)) throw ContractError("temporal_aggregate: decay must be non-negative");
  const std::size_t n = predictions.front().action.robot_points.size();
  for (const auto& p : predictions) {
    if (p.action.robot_points.size() != n) throw ContractError("temporal_aggregate: point counts differ");
  }
  if (std::isinf(decay)) {
    const auto newest = std::min_element(predictions.begin(), predictions.end(),
                                         [](const AgedAction& a, const AgedAction& b) { return a.age < b.age; });
    return newest->action;
  }
  // All-equal inputs must come back exactly, so skip the weighting.
  const auto same = [&](const AgedAction& p) {
    const Action& a = predictions.front().action;
    if (p.action.gripper != a.gripper || p.action.force != a.force) return false;
    for (std::size_t i = 0; i < n; ++i) {
      if (p.action.robot_points[i] != a.robot_points[i]) return false;
    }
    return true;
  };
  if (std::all_of(predictions.begin(), predictions.end(), same)) return predictions.front().action;

  Action out;
  out.robot_points.assign(n, Vec3::Zero());
  double total = 0.0;
  for (const auto& p : predictions) {
    const double w = std::exp(-decay * static_cast<double>(p.age));
    total += w;
    for (std::size_t i = 0; i < n; ++i) out.robot_points[i] += w * p.action.robot_points[i];
    out.gripper += w * p.action.gripper;
    out.force += w * p.action.force;
  }
  for (auto& p : out.robot_points) p /= total;
  out.gripper /= total;
  out.force /= total;
  return out;
}

void TemporalEnsembler::add(std::size_t step, ActionChunk chunk) {
  if (chunk.steps.empty()) throw ContractError("ensembler: empty chunk");
  chunks_.emplace_back(step, std::move(chunk));
}

Action TemporalEnsembler::action_at(std::size_t step) {
  while (!chunks_.empty() && chunks_.front().first + chunks_.front().second.steps.size() <= step) {
    chunks_.pop_front();
  }
  std::vector<AgedAction> covering;
  for (const auto& [start, chunk] : chunks_) {
    if (start <= step && step < start + chunk.steps.size()) covering.push_back({chunk.steps[step - start], step - start});
  }
  return temporal_aggregate(covering, decay_);
}

ParsedAction parse_action(const Action& action, const KeypointLayout& layout, const Mat3& initial_orientation) {
  if (action.robot_points.size() != layout.size()) {
    throw ContractError("parse_action: expected " + std::to_string(layout.size()) + " robot points");
  }
  ParsedAction out;
  if (!std::isfinite(action.force) || !std::isfinite(action.gripper)) {
    throw ContractError("parse_action: non-finite force or gripper value");
  }
  out.force_clamped = action.force < 0.0;
  out.force = std::max(0.0, action.force);
  out.gripper = action.gripper;
  out.eef_pose = keypoints_to_pose(action.robot_points, layout, initial_orientation);
  out.orientation = encode_rotation6d(out.eef_pose.rotation());
  return out;
}

}  // namespace ftf
