// Transformer forward / backward. Activations are (batch * tokens) x width
// row-major matrices; linear layers compute y = x W + b.

#include "ftf/errors.hpp"
#include "ftf/policy.hpp"
#include "ftf/seed.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace ftf {

namespace {

constexpr double kLayerNormEps = 1e-5;

using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

struct LayerIndex {
  std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, ff_w1, ff_b1, ff_w2, ff_b2;
};

struct NetIndex {
  std::size_t enc_w1, enc_b1, enc_w2, enc_b2, pos;
  std::vector<LayerIndex> layers;
  std::size_t lnf_g, lnf_b, track_w, track_b, grip_w, grip_b, force_w, force_b;
};

NetIndex build_index(const PolicyConfig& c, std::vector<TensorInfo>* tensors) {
  std::size_t offset = 0;
  auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    if (tensors) tensors->push_back({name, offset, rows, cols});
    offset += rows * cols;
    return tensors ? tensors->size() - 1 : 0;
  };
  const std::size_t D = c.width;
  const std::size_t H = c.horizon;
  NetIndex idx{};
  idx.enc_w1 = add("encoder.w1", c.token_dim(), D);
  idx.enc_b1 = add("encoder.b1", 1, D);
  idx.enc_w2 = add("encoder.w2", D, D);
  idx.enc_b2 = add("encoder.b2", 1, D);
  idx.pos = add("position_embedding", c.num_tokens(), D);
  for (std::size_t l = 0; l < c.depth; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    LayerIndex li{};
    li.ln1_g = add(p + "ln1.gamma", 1, D);
    li.ln1_b = add(p + "ln1.beta", 1, D);
    li.wq = add(p + "attn.wq", D, D);
    li.bq = add(p + "attn.bq", 1, D);
    li.wk = add(p + "attn.wk", D, D);
    li.bk = add(p + "attn.bk", 1, D);
    li.wv = add(p + "attn.wv", D, D);
    li.bv = add(p + "attn.bv", 1, D);
    li.wo = add(p + "attn.wo", D, D);
    li.bo = add(p + "attn.bo", 1, D);
    li.ln2_g = add(p + "ln2.gamma", 1, D);
    li.ln2_b = add(p + "ln2.beta", 1, D);
    li.ff_w1 = add(p + "ffn.w1", D, c.ffn_width);
    li.ff_b1 = add(p + "ffn.b1", 1, c.ffn_width);
    li.ff_w2 = add(p + "ffn.w2", c.ffn_width, D);
    li.ff_b2 = add(p + "ffn.b2", 1, D);
    idx.layers.push_back(li);
  }
  idx.lnf_g = add("final_ln.gamma", 1, D);
  idx.lnf_b = add("final_ln.beta", 1, D);
  idx.track_w = add("head.track.w", D, 3 * H);
  idx.track_b = add("head.track.b", 1, 3 * H);
  idx.grip_w = add("head.gripper.w", D, H);
  idx.grip_b = add("head.gripper.b", 1, H);
  idx.force_w = add("head.force.w", D, H);
  idx.force_b = add("head.force.b", 1, H);
  return idx;
}

NetIndex index_for(const PolicyConfig& c) {
  std::vector<TensorInfo> scratch;
  return build_index(c, &scratch);
}

template <typename Scalar, typename MapT>
class TensorTable {
 public:
  TensorTable(const std::vector<TensorInfo>& tensors, Scalar* data) : tensors_(tensors), data_(data) {}
  MapT operator()(std::size_t i) const {
    const auto& t = tensors_[i];
    return MapT(data_ + t.offset, static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols));
  }

 private:
  const std::vector<TensorInfo>& tensors_;
  Scalar* data_;
};

using Params = TensorTable<const double, ConstMap>;
using Grads = TensorTable<double, MutMap>;

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

// tanh-approximated GELU; `t` keeps the tanh term for the backward pass
RowMatrix gelu(const RowMatrix& x, RowMatrix* t) {
  RowMatrix th = x.unaryExpr([](double v) { return std::tanh(kGeluC * (v + kGeluA * v * v * v)); });
  RowMatrix y = 0.5 * x.array() * (1.0 + th.array());
  if (t) *t = std::move(th);
  return y;
}

RowMatrix gelu_backward(const RowMatrix& dy, const RowMatrix& x, const RowMatrix& t) {
  const auto x2 = x.array().square();
  return dy.array() *
         (0.5 * (1.0 + t.array()) + 0.5 * x.array() * (1.0 - t.array().square()) * kGeluC * (1.0 + 3.0 * kGeluA * x2));
}

struct LayerNormCache {
  RowMatrix xhat;
  Eigen::VectorXd rstd;
};

RowMatrix layer_norm(const RowMatrix& x, const ConstMap& gamma, const ConstMap& beta, LayerNormCache* cache) {
  const Eigen::Index n = x.rows();
  const double d = static_cast<double>(x.cols());
  RowMatrix xhat(n, x.cols());
  Eigen::VectorXd rstd(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).sum() / d;
    const double var = (x.row(r).array() - mean).square().sum() / d;
    rstd(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mean) * rstd(r);
  }
  RowMatrix y = xhat.array().rowwise() * gamma.row(0).array();
  y.rowwise() += beta.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

RowMatrix layer_norm_backward(const RowMatrix& dy, const LayerNormCache& cache, const ConstMap& gamma,
                              MutMap dgamma, MutMap dbeta) {
  dgamma.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbeta.row(0) += dy.colwise().sum();
  const RowMatrix dxhat = dy.array().rowwise() * gamma.row(0).array();
  const double d = static_cast<double>(dy.cols());
  RowMatrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / d;
    const double mean_dx = dxhat.row(r).dot(cache.xhat.row(r)) / d;
    dx.row(r) = cache.rstd(r) * (dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx);
  }
  return dx;
}

RowMatrix affine(const RowMatrix& x, const ConstMap& w, const ConstMap& b) {
  RowMatrix y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

struct LayerCache {
  LayerNormCache ln1;
  RowMatrix n1, q, k, v;
  std::vector<RowMatrix> probs;  // [batch * heads], T x T
  RowMatrix attn;                // concatenated head outputs
  RowMatrix mid;
  LayerNormCache ln2;
  RowMatrix n2, f1, f1_tanh, g;
};

struct ForwardCache {
  RowMatrix x0, a1, a1_tanh, g1;
  std::vector<LayerCache> layers;
  LayerNormCache lnf;
  RowMatrix z;
};

class Network {
 public:
  Network(const PolicyConfig& config, const std::vector<TensorInfo>& tensors, const double* params)
      : c_(config), idx_(index_for(config)), p_(tensors, params), tensors_(tensors) {}

  RowMatrix forward(const RowMatrix& tokens, ForwardCache* cache) const {
    const std::size_t T = c_.num_tokens();
    if (tokens.cols() != static_cast<Eigen::Index>(c_.token_dim()) || tokens.rows() % T != 0) {
      throw ContractError("policy forward: token matrix has wrong shape");
    }
    const Eigen::Index B = tokens.rows() / static_cast<Eigen::Index>(T);
    const Eigen::Index D = static_cast<Eigen::Index>(c_.width);

    RowMatrix a1 = affine(tokens, p_(idx_.enc_w1), p_(idx_.enc_b1));
    RowMatrix a1_tanh;
    RowMatrix g1 = gelu(a1, cache ? &a1_tanh : nullptr);
    RowMatrix h = affine(g1, p_(idx_.enc_w2), p_(idx_.enc_b2));
    const ConstMap pos = p_(idx_.pos);
    for (Eigen::Index b = 0; b < B; ++b) h.middleRows(b * T, T) += pos;
    if (cache) {
      cache->x0 = tokens;
      cache->a1 = std::move(a1);
      cache->a1_tanh = std::move(a1_tanh);
      cache->g1 = std::move(g1);
      cache->layers.resize(c_.depth);
    }

    const std::size_t heads = c_.heads;
    const Eigen::Index dh = D / static_cast<Eigen::Index>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t l = 0; l < c_.depth; ++l) {
      const LayerIndex& li = idx_.layers[l];
      LayerCache local;
      LayerCache& lc = cache ? cache->layers[l] : local;
      lc.n1 = layer_norm(h, p_(li.ln1_g), p_(li.ln1_b), &lc.ln1);
      lc.q = affine(lc.n1, p_(li.wq), p_(li.bq));
      lc.k = affine(lc.n1, p_(li.wk), p_(li.bk));
      lc.v = affine(lc.n1, p_(li.wv), p_(li.bv));
      lc.attn.resize(h.rows(), D);
      lc.probs.resize(static_cast<std::size_t>(B) * heads);
      for (Eigen::Index b = 0; b < B; ++b) {
        for (std::size_t hd = 0; hd < heads; ++hd) {
          const Eigen::Index r0 = b * T;
          const Eigen::Index c0 = static_cast<Eigen::Index>(hd) * dh;
          RowMatrix s = lc.q.block(r0, c0, T, dh) * lc.k.block(r0, c0, T, dh).transpose() * scale;
          for (Eigen::Index r = 0; r < s.rows(); ++r) {
            const double mx = s.row(r).maxCoeff();
            s.row(r) = (s.row(r).array() - mx).exp();
            s.row(r) /= s.row(r).sum();
          }
          lc.attn.block(r0, c0, T, dh) = s * lc.v.block(r0, c0, T, dh);
          lc.probs[static_cast<std::size_t>(b) * heads + hd] = std::move(s);
        }
      }
      lc.mid = h + affine(lc.attn, p_(li.wo), p_(li.bo));
      lc.n2 = layer_norm(lc.mid, p_(li.ln2_g), p_(li.ln2_b), &lc.ln2);
      lc.f1 = affine(lc.n2, p_(li.ff_w1), p_(li.ff_b1));
      lc.g = gelu(lc.f1, cache ? &lc.f1_tanh : nullptr);
      h = lc.mid + affine(lc.g, p_(li.ff_w2), p_(li.ff_b2));
    }

    LayerNormCache lnf_local;
    RowMatrix z = layer_norm(h, p_(idx_.lnf_g), p_(idx_.lnf_b), cache ? &cache->lnf : &lnf_local);

    const Eigen::Index N = static_cast<Eigen::Index>(c_.num_robot_points);
    const Eigen::Index M = static_cast<Eigen::Index>(c_.num_object_points);
    const Eigen::Index H = static_cast<Eigen::Index>(c_.horizon);
    RowMatrix robot_rows(B * N, D), grip_rows(B, D), force_rows(B, D);
    for (Eigen::Index b = 0; b < B; ++b) {
      robot_rows.middleRows(b * N, N) = z.middleRows(b * T, N);
      grip_rows.row(b) = z.row(b * T + N + M);
      force_rows.row(b) = z.row(b * T + N + M + 1);
    }
    const RowMatrix yt = affine(robot_rows, p_(idx_.track_w), p_(idx_.track_b));
    const RowMatrix yg = affine(grip_rows, p_(idx_.grip_w), p_(idx_.grip_b));
    const RowMatrix yf = affine(force_rows, p_(idx_.force_w), p_(idx_.force_b));
    RowMatrix out(B, static_cast<Eigen::Index>(c_.output_size()));
    for (Eigen::Index b = 0; b < B; ++b) {
      for (Eigen::Index i = 0; i < N; ++i) out.block(b, i * 3 * H, 1, 3 * H) = yt.row(b * N + i);
      out.block(b, N * 3 * H, 1, H) = yg.row(b);
      out.block(b, N * 3 * H + H, 1, H) = yf.row(b);
    }
    if (cache) cache->z = std::move(z);
    return out;
  }

  void backward(const RowMatrix& dout, const ForwardCache& cache, double* grad) const {
    Grads g(tensors_, grad);
    const std::size_t T = c_.num_tokens();
    const Eigen::Index B = dout.rows();
    const Eigen::Index D = static_cast<Eigen::Index>(c_.width);
    const Eigen::Index N = static_cast<Eigen::Index>(c_.num_robot_points);
    const Eigen::Index M = static_cast<Eigen::Index>(c_.num_object_points);
    const Eigen::Index H = static_cast<Eigen::Index>(c_.horizon);

    RowMatrix robot_rows(B * N, D), grip_rows(B, D), force_rows(B, D);
    RowMatrix dyt(B * N, 3 * H), dyg(B, H), dyf(B, H);
    for (Eigen::Index b = 0; b < B; ++b) {
      robot_rows.middleRows(b * N, N) = cache.z.middleRows(b * T, N);
      grip_rows.row(b) = cache.z.row(b * T + N + M);
      force_rows.row(b) = cache.z.row(b * T + N + M + 1);
      for (Eigen::Index i = 0; i < N; ++i) dyt.row(b * N + i) = dout.block(b, i * 3 * H, 1, 3 * H);
      dyg.row(b) = dout.block(b, N * 3 * H, 1, H);
      dyf.row(b) = dout.block(b, N * 3 * H + H, 1, H);
    }
    g(idx_.track_w) += robot_rows.transpose() * dyt;
    g(idx_.track_b).row(0) += dyt.colwise().sum();
    g(idx_.grip_w) += grip_rows.transpose() * dyg;
    g(idx_.grip_b).row(0) += dyg.colwise().sum();
    g(idx_.force_w) += force_rows.transpose() * dyf;
    g(idx_.force_b).row(0) += dyf.colwise().sum();
    const RowMatrix drobot = dyt * p_(idx_.track_w).transpose();
    const RowMatrix dgrip = dyg * p_(idx_.grip_w).transpose();
    const RowMatrix dforce = dyf * p_(idx_.force_w).transpose();
    RowMatrix dz = RowMatrix::Zero(cache.z.rows(), D);
    for (Eigen::Index b = 0; b < B; ++b) {
      dz.middleRows(b * T, N) = drobot.middleRows(b * N, N);
      dz.row(b * T + N + M) = dgrip.row(b);
      dz.row(b * T + N + M + 1) = dforce.row(b);
    }
    RowMatrix dh = layer_norm_backward(dz, cache.lnf, p_(idx_.lnf_g), g(idx_.lnf_g), g(idx_.lnf_b));

    const std::size_t heads = c_.heads;
    const Eigen::Index dh_ = D / static_cast<Eigen::Index>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh_));
    for (std::size_t l = c_.depth; l-- > 0;) {
      const LayerIndex& li = idx_.layers[l];
      const LayerCache& lc = cache.layers[l];
      // feed-forward sublayer
      g(li.ff_w2) += lc.g.transpose() * dh;
      g(li.ff_b2).row(0) += dh.colwise().sum();
      const RowMatrix df1 = gelu_backward(dh * p_(li.ff_w2).transpose(), lc.f1, lc.f1_tanh);
      g(li.ff_w1) += lc.n2.transpose() * df1;
      g(li.ff_b1).row(0) += df1.colwise().sum();
      const RowMatrix dn2 = df1 * p_(li.ff_w1).transpose();
      const RowMatrix dmid = dh + layer_norm_backward(dn2, lc.ln2, p_(li.ln2_g), g(li.ln2_g), g(li.ln2_b));
      // attention sublayer
      g(li.wo) += lc.attn.transpose() * dmid;
      g(li.bo).row(0) += dmid.colwise().sum();
      const RowMatrix dattn = dmid * p_(li.wo).transpose();
      RowMatrix dq(lc.q.rows(), D), dk(lc.k.rows(), D), dv(lc.v.rows(), D);
      for (Eigen::Index b = 0; b < B; ++b) {
        for (std::size_t hd = 0; hd < heads; ++hd) {
          const Eigen::Index r0 = b * T;
          const Eigen::Index c0 = static_cast<Eigen::Index>(hd) * dh_;
          const RowMatrix& P = lc.probs[static_cast<std::size_t>(b) * heads + hd];
          const RowMatrix dO = dattn.block(r0, c0, T, dh_);
          dv.block(r0, c0, T, dh_) = P.transpose() * dO;
          const RowMatrix dP = dO * lc.v.block(r0, c0, T, dh_).transpose();
          RowMatrix dS(P.rows(), P.cols());
          for (Eigen::Index r = 0; r < P.rows(); ++r) {
            const double dot = P.row(r).dot(dP.row(r));
            dS.row(r) = P.row(r).array() * (dP.row(r).array() - dot);
          }
          dS *= scale;
          dq.block(r0, c0, T, dh_) = dS * lc.k.block(r0, c0, T, dh_);
          dk.block(r0, c0, T, dh_) = dS.transpose() * lc.q.block(r0, c0, T, dh_);
        }
      }
      g(li.wq) += lc.n1.transpose() * dq;
      g(li.bq).row(0) += dq.colwise().sum();
      g(li.wk) += lc.n1.transpose() * dk;
      g(li.bk).row(0) += dk.colwise().sum();
      g(li.wv) += lc.n1.transpose() * dv;
      g(li.bv).row(0) += dv.colwise().sum();
      const RowMatrix dn1 =
          dq * p_(li.wq).transpose() + dk * p_(li.wk).transpose() + dv * p_(li.wv).transpose();
      dh = dmid + layer_norm_backward(dn1, lc.ln1, p_(li.ln1_g), g(li.ln1_g), g(li.ln1_b));
    }

    MutMap dpos = g(idx_.pos);
    for (Eigen::Index b = 0; b < B; ++b) dpos += dh.middleRows(b * T, T);
    g(idx_.enc_w2) += cache.g1.transpose() * dh;
    g(idx_.enc_b2).row(0) += dh.colwise().sum();
    const RowMatrix da1 = gelu_backward(dh * p_(idx_.enc_w2).transpose(), cache.a1, cache.a1_tanh);
    g(idx_.enc_w1) += cache.x0.transpose() * da1;
    g(idx_.enc_b1).row(0) += da1.colwise().sum();
  }

 private:
  const PolicyConfig& c_;
  NetIndex idx_;
  Params p_;
  const std::vector<TensorInfo>& tensors_;
};

}  // namespace

void PolicyConfig::validate() const {
  if (num_robot_points < 3) throw ContractError("policy: need at least 3 robot points");
  if (history < 1 || horizon < 1) throw ContractError("policy: history and horizon must be positive");
  if (width < 1 || depth < 1 || heads < 1 || ffn_width < 1) throw ContractError("policy: empty layer");
  if (width % heads != 0) throw ContractError("policy: width must be divisible by heads");
  if (stride < 1) throw ContractError("policy: stride must be positive");
}

PolicyNet::PolicyNet(PolicyConfig config) : config_(config) {
  config_.validate();
  build_index(config_, &tensors_);
  const auto& last = tensors_.back();
  params_.assign(last.offset + last.rows * last.cols, 0.0);
}

void PolicyNet::initialize(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "policy-init"));
  for (const auto& t : tensors_) {
    double* data = params_.data() + t.offset;
    const std::size_t n = t.rows * t.cols;
    const std::string& name = t.name;
    const auto ends_with = [&name](std::string_view s) {
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with("gamma")) {
      std::fill(data, data + n, 1.0);
    } else if (name == "position_embedding") {
      std::normal_distribution<double> normal(0.0, 0.1);
      for (std::size_t i = 0; i < n; ++i) data[i] = normal(rng);
    } else if (t.rows > 1) {
      const double a = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
      std::uniform_real_distribution<double> uniform(-a, a);
      for (std::size_t i = 0; i < n; ++i) data[i] = uniform(rng);
    } else {
      std::fill(data, data + n, 0.0);
    }
  }
}

RowMatrix PolicyNet::forward_batch(const RowMatrix& tokens) const {
  return Network(config_, tensors_, params_.data()).forward(tokens, nullptr);
}

ActionChunk PolicyNet::forward(const RowMatrix& tokens) const {
  if (tokens.rows() != static_cast<Eigen::Index>(config_.num_tokens())) {
    throw ContractError("policy forward: expected " + std::to_string(config_.num_tokens()) + " tokens, got " +
                        std::to_string(tokens.rows()));
  }
  const RowMatrix out = forward_batch(tokens);
  const std::size_t N = config_.num_robot_points;
  const std::size_t H = config_.horizon;
  ActionChunk chunk;
  chunk.steps.resize(H);
  for (std::size_t h = 0; h < H; ++h) {
    auto& a = chunk.steps[h];
    a.robot_points.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
      const Eigen::Index c = static_cast<Eigen::Index>(i * 3 * H + 3 * h);
      a.robot_points[i] = Vec3(out(0, c), out(0, c + 1), out(0, c + 2));
    }
    a.gripper = out(0, static_cast<Eigen::Index>(N * 3 * H + h));
    a.force = out(0, static_cast<Eigen::Index>(N * 3 * H + H + h));
  }
  return chunk;
}

double PolicyNet::loss(const Batch& batch) const {
  const RowMatrix out = forward_batch(batch.tokens);
  if (out.rows() != batch.targets.rows() || out.cols() != batch.targets.cols()) {
    throw ContractError("policy loss: target shape mismatch");
  }
  return (out - batch.targets).squaredNorm() / static_cast<double>(out.size());
}

double PolicyNet::loss_and_gradient(const Batch& batch, std::span<double> grad) const {
  if (grad.size() != params_.size()) throw ContractError("policy gradient: buffer size mismatch");
  Network net(config_, tensors_, params_.data());
  ForwardCache cache;
  const RowMatrix out = net.forward(batch.tokens, &cache);
  if (out.rows() != batch.targets.rows() || out.cols() != batch.targets.cols()) {
    throw ContractError("policy loss: target shape mismatch");
  }
  const RowMatrix diff = out - batch.targets;
  const double n = static_cast<double>(out.size());
  std::fill(grad.begin(), grad.end(), 0.0);
  net.backward(diff * (2.0 / n), cache, grad.data());
  return diff.squaredNorm() / n;
}

}  // namespace ftf
