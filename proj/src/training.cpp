#include "ftf/errors.hpp"
#include "ftf/policy.hpp"
#include "ftf/seed.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numbers>
#include <numeric>

namespace ftf {

namespace {

class Updater {
 public:
  Updater(const TrainConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void apply(std::span<double> params, std::span<const double> grad, double lr) {
    ++t_;
    if (cfg_.optimizer == Optimizer::sgd_momentum) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = cfg_.momentum * m_[i] + grad[i];
        params[i] -= lr * m_[i];
      }
      return;
    }
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

Batch gather(const Batch& data, std::span<const std::size_t> rows, std::size_t tokens_per_sample) {
  const auto T = static_cast<Eigen::Index>(tokens_per_sample);
  Batch b;
  b.tokens.resize(static_cast<Eigen::Index>(rows.size()) * T, data.tokens.cols());
  b.targets.resize(static_cast<Eigen::Index>(rows.size()), data.targets.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    b.tokens.middleRows(static_cast<Eigen::Index>(i) * T, T) = data.tokens.middleRows(r * T, T);
    b.targets.row(static_cast<Eigen::Index>(i)) = data.targets.row(r);
  }
  return b;
}

}  // namespace

TrainResult train(PolicyNet& net, std::span<const Demonstration> demos, const TrainConfig& cfg) {
  if (demos.empty()) throw ContractError("train: empty dataset");
  if (cfg.batch_size == 0) throw ContractError("train: batch_size must be positive");
  if (!(cfg.learning_rate > 0.0)) throw ContractError("train: learning_rate must be positive");
  const PolicyConfig& pc = net.config();
  net.initialize(cfg.seed);
  const Normalization norm = fit_normalization(demos);
  net.set_normalization(norm);
  const Batch data = build_dataset(demos, pc, norm);
  const std::size_t n = data.size();

  Rng rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(net.parameters().size());
  Updater updater(cfg, grad.size());
  TrainResult result;
  const std::size_t batch = std::min(cfg.batch_size, n);
  std::size_t planned = cfg.epochs * ((n + batch - 1) / batch);
  if (cfg.max_steps > 0) planned = std::min(planned, cfg.max_steps);
  bool done = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    // Fisher-Yates with explicit draws so the order does not depend on the
    // standard library's shuffle.
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      const Batch b = gather(data, std::span(order).subspan(start, len), pc.num_tokens());
      net.loss_and_gradient(b, grad);
      const double progress = static_cast<double>(result.steps) / static_cast<double>(std::max<std::size_t>(planned, 1));
      const double lr = cfg.cosine_decay ? 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * progress))
                                         : cfg.learning_rate;
      updater.apply(net.parameters(), grad, lr);
      ++result.steps;
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
        done = true;
        break;
      }
    }
    result.epoch_loss.push_back(net.loss(data));
    spdlog::debug("epoch {} loss {:.6g} steps {}", epoch, result.epoch_loss.back(), result.steps);
  }
  result.final_loss = result.epoch_loss.empty() ? net.loss(data) : result.epoch_loss.back();
  return result;
}

}  // namespace ftf
