#include "dmamba/heads.hpp"

#include <cmath>
#include <stdexcept>

namespace dmamba {

namespace {
constexpr double kHeadOutInit = 0.01;  // final projections start near zero
}

Tensor avg_pool_last(const Tensor& x, int p) {
  if (p < 1) throw std::invalid_argument("avg_pool_last: window must be >= 1");
  if (p == 1) return x;
  const int n = x.dim(-1);
  const int m = n - p + 1;
  if (m < 1)
    throw std::invalid_argument("avg_pool_last: window " + std::to_string(p) +
                                " too large for axis of size " +
                                std::to_string(n));
  Tensor acc = slice(x, -1, 0, m);
  for (int k = 1; k < p; ++k) acc = add(acc, slice(x, -1, k, m));
  return mul(acc, 1.0 / p);
}

MambaHead::MambaHead(const HeadConfig& cfg, ScanAxis axis, ParamRegistry& reg,
                     const std::string& prefix, std::mt19937_64& rng)
    : cfg_(cfg), axis_(axis) {
  SsmConfig sc;
  sc.d_model = cfg.d_model;
  sc.d_inner = cfg.expand * cfg.d_model;
  sc.d_state = cfg.d_state;
  sc.d_conv = cfg.d_conv;

  const int embed_in = axis == ScanAxis::Variate ? cfg.seq_len : cfg.n_vars;
  embed_w_ = reg.add_uniform(prefix + ".embed_w", {embed_in, cfg.d_model},
                             1.0 / std::sqrt(static_cast<double>(embed_in)), rng);
  embed_b_ = reg.add_full(prefix + ".embed_b", {cfg.d_model}, 0.0);

  layers_.reserve(cfg.e_layers);
  for (int l = 0; l < cfg.e_layers; ++l) {
    layers_.emplace_back(sc, cfg.d_ff, cfg.dropout, reg,
                         prefix + ".layer" + std::to_string(l), rng);
  }

  if (axis == ScanAxis::Variate) {
    proj_w_ = reg.add_uniform(prefix + ".proj_w", {cfg.d_model, cfg.pred_len},
                              kHeadOutInit, rng);
    proj_b_ = reg.add_full(prefix + ".proj_b", {cfg.pred_len}, 0.0);
  } else {
    proj_w_ = reg.add_uniform(prefix + ".proj_w", {cfg.d_model, cfg.n_vars},
                              1.0 / std::sqrt(static_cast<double>(cfg.d_model)),
                              rng);
    proj_b_ = reg.add_full(prefix + ".proj_b", {cfg.n_vars}, 0.0);
    time_w_ = reg.add_uniform(prefix + ".time_w", {cfg.seq_len, cfg.pred_len},
                              kHeadOutInit, rng);
    time_b_ = reg.add_full(prefix + ".time_b", {cfg.pred_len}, 0.0);
  }
}

Tensor MambaHead::forward(const Tensor& x, bool train,
                          std::mt19937_64& dropout_rng) const {
  if (axis_ == ScanAxis::Variate) {
    // tokens = variates: (B,L,D) -> (B,D,L) -> embed -> stack -> (B,D,T)
    Tensor e = add(matmul(transpose(x, 1, 2), embed_w_), embed_b_);
    for (const auto& layer : layers_) e = layer.forward(e, train, dropout_rng);
    Tensor y = add(matmul(e, proj_w_), proj_b_);
    return transpose(y, 1, 2);
  }
  // tokens = time steps: embed D per step, scan over L, then map L -> T
  Tensor e = add(matmul(x, embed_w_), embed_b_);
  for (const auto& layer : layers_) e = layer.forward(e, train, dropout_rng);
  Tensor y = add(matmul(e, proj_w_), proj_b_);        // (B, L, D)
  Tensor yt = add(matmul(transpose(y, 1, 2), time_w_), time_b_);  // (B, D, T)
  return transpose(yt, 1, 2);
}

MlpHead::MlpHead(const HeadConfig& cfg, ParamRegistry& reg,
                 const std::string& prefix, std::mt19937_64& rng,
                 bool use_layer_norm)
    : cfg_(cfg), use_ln_(use_layer_norm) {
  const int L = cfg.seq_len;
  const int p = cfg.trend_pool;
  if (p < 1) throw std::invalid_argument("trend pool window must be >= 1");
  int width = L;
  for (int l = 0; l < cfg.trend_layers; ++l) {
    Layer layer;
    layer.w = reg.add_uniform(prefix + ".layer" + std::to_string(l) + ".w",
                              {width, L},
                              1.0 / std::sqrt(static_cast<double>(width)), rng);
    layer.b = reg.add_full(prefix + ".layer" + std::to_string(l) + ".b", {L}, 0.0);
    width = L - (p - 1);
    if (width < 1)
      throw std::invalid_argument(
          "trend stream: pooled width would be " + std::to_string(width) +
          " (seq-len " + std::to_string(L) + ", pool " + std::to_string(p) + ")");
    layer.ln_g = reg.add_full(prefix + ".layer" + std::to_string(l) + ".ln_g",
                              {width}, 1.0);
    layer.ln_b = reg.add_full(prefix + ".layer" + std::to_string(l) + ".ln_b",
                              {width}, 0.0);
    layers_.push_back(std::move(layer));
  }
  out_w_ = reg.add_uniform(prefix + ".out_w", {width, cfg.pred_len},
                           kHeadOutInit, rng);
  out_b_ = reg.add_full(prefix + ".out_b", {cfg.pred_len}, 0.0);
}

Tensor MlpHead::forward(const Tensor& x, bool /*train*/,
                        std::mt19937_64& /*dropout_rng*/) const {
  Tensor h = transpose(x, 1, 2);  // (B, D, L), weights shared across channels
  for (const auto& layer : layers_) {
    h = avg_pool_last(add(matmul(h, layer.w), layer.b), cfg_.trend_pool);
    if (use_ln_) h = layer_norm(h, layer.ln_g, layer.ln_b, kLayerNormEps);
  }
  Tensor y = add(matmul(h, out_w_), out_b_);  // (B, D, T)
  return transpose(y, 1, 2);
}

}  // namespace dmamba
