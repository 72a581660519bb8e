#pragma once

// Keypoint-token transformer policy. Each robot keypoint, each object
// keypoint, the gripper history and the force history become one token; a
// shared MLP encodes the flattened L-step history of every token, a
// non-causal transformer mixes them, and linear heads predict H future
// steps of robot point tracks, gripper state and force.

#include "ftf/demonstration.hpp"
#include "ftf/geometry.hpp"
#include "ftf/retarget.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

namespace ftf {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PolicyConfig {
  std::size_t num_robot_points = 4;   // N
  std::size_t num_object_points = 4;  // M
  std::size_t history = 2;            // L
  std::size_t horizon = 10;           // H
  std::size_t width = 64;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t ffn_width = 128;
  std::size_t stride = 5;  // demo frames per policy step
  bool mask_force = false;

  void validate() const;
  std::size_t num_tokens() const { return num_robot_points + num_object_points + 2; }
  std::size_t token_dim() const { return 3 * history; }
  std::size_t output_size() const { return (3 * num_robot_points + 2) * horizon; }
};

/// L-step observation history, oldest first.
struct ObservationWindow {
  std::vector<std::vector<Vec3>> robot;   // [L][N]
  std::vector<std::vector<Vec3>> object;  // [L][M]
  std::vector<double> gripper;            // [L]
  std::vector<double> force;              // [L]

  std::size_t length() const { return gripper.size(); }
};

/// One row per token: N robot tokens, M object tokens, gripper, force. Each
/// row is the flattened history (3 values per step; scalars repeated 3x).
/// Throws ContractError on empty or ragged windows.
RowMatrix tokenize(const ObservationWindow& window);

struct Action {
  std::vector<Vec3> robot_points;
  double gripper = 0.0;  // continuous logit, thresholded by the controller
  double force = 0.0;    // sensor-norm units
};

struct ActionChunk {
  std::vector<Action> steps;  // H entries
};

/// Per-axis position standardization plus force scaling, fitted on the
/// training set and stored with the model.
struct Normalization {
  Vec3 position_mean = Vec3::Zero();
  Vec3 position_scale = Vec3::Ones();
  double force_scale = 0.01;

  Vec3 normalize(const Vec3& p) const { return (p - position_mean).cwiseQuotient(position_scale); }
  Vec3 denormalize(const Vec3& p) const { return p.cwiseProduct(position_scale) + position_mean; }
};

/// Stacked training samples: row block b*T..b*T+T-1 of `tokens` holds sample
/// b, row b of `targets` its flattened normalized chunk.
struct Batch {
  RowMatrix tokens;
  RowMatrix targets;
  std::size_t size() const { return static_cast<std::size_t>(targets.rows()); }
};

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

class PolicyNet {
 public:
  /// All parameters zero; call initialize() or load parameters.
  explicit PolicyNet(PolicyConfig config);

  void initialize(std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  const Normalization& normalization() const { return norm_; }
  void set_normalization(const Normalization& norm) { norm_ = norm; }

  /// Raw network output for one token matrix, in normalized units.
  ActionChunk forward(const RowMatrix& tokens) const;

  /// Normalize, tokenize, forward and map back to world units.
  ActionChunk predict(const ObservationWindow& window) const;

  /// Mean squared error over all outputs of the batch.
  double loss(const Batch& batch) const;
  /// Same loss; writes d loss / d parameters into `grad` (overwritten).
  double loss_and_gradient(const Batch& batch, std::span<double> grad) const;

  /// Flattened raw outputs, one row per sample.
  RowMatrix forward_batch(const RowMatrix& tokens) const;

 private:
  PolicyConfig config_;
  std::vector<TensorInfo> tensors_;
  std::vector<double> params_;
  Normalization norm_;
};

/// Window ending at `frame` with history spaced `stride` frames apart;
/// frames before the start replicate frame 0.
ObservationWindow window_at(const Demonstration& demo, std::size_t frame, std::size_t history,
                            std::size_t stride);

Normalization fit_normalization(std::span<const Demonstration> demos);

/// Every frame of every demo as a training sample.
Batch build_dataset(std::span<const Demonstration> demos, const PolicyConfig& config,
                    const Normalization& norm);

enum class Optimizer { sgd_momentum, adam };

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::size_t max_steps = 0;  // 0 = no cap
  double learning_rate = 1e-3;
  double momentum = 0.9;
  Optimizer optimizer = Optimizer::adam;
  bool cosine_decay = true;  // anneal the learning rate to 0 over the planned steps
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
  double final_loss = 0.0;  // full-dataset loss after the last update
};

/// Re-initializes `net` from config.seed, fits normalization on `demos` and
/// minimizes the MSE over track, gripper and force targets. Deterministic
/// for a fixed seed. Throws ContractError for an empty or mis-shaped set.
TrainResult train(PolicyNet& net, std::span<const Demonstration> demos, const TrainConfig& config);

struct AgedAction {
  Action action;
  std::size_t age = 0;  // policy steps since the prediction was made
};

/// Weighted mean with weight exp(-decay * age), channel-wise. An infinite
/// decay keeps only the newest prediction. Throws ContractError when empty.
Action temporal_aggregate(std::span<const AgedAction> predictions, double decay);

/// Keeps the chunks that still cover upcoming steps.
class TemporalEnsembler {
 public:
  explicit TemporalEnsembler(double decay) : decay_(decay) {}

  void add(std::size_t step, ActionChunk chunk);
  /// Throws ContractError when no stored chunk covers `step`.
  Action action_at(std::size_t step);
  void clear() { chunks_.clear(); }

 private:
  double decay_;
  std::deque<std::pair<std::size_t, ActionChunk>> chunks_;
};

struct ParsedAction {
  double force = 0.0;
  bool force_clamped = false;
  double gripper = 0.0;
  RigidTransform eef_pose;
  Rotation6D orientation;
};

/// Splits an aggregated action into force target, gripper logit and
/// end-effector pose (recovered from the predicted keypoints). Throws
/// DegeneracyError for degenerate keypoints.
ParsedAction parse_action(const Action& action, const KeypointLayout& layout, const Mat3& initial_orientation);

}  // namespace ftf
