#include "dmamba/ssm.hpp"

#include <cmath>
#include <stdexcept>

namespace dmamba {

ZohDiscrete zoh_discretize(const std::vector<double>& a_diag,
                           const std::vector<double>& b, double delta) {
  if (delta <= 0)
    throw std::invalid_argument("zoh_discretize: delta must be > 0, got " +
                                std::to_string(delta));
  if (a_diag.size() != b.size())
    throw std::invalid_argument("zoh_discretize: A and B size mismatch");
  ZohDiscrete out;
  out.a_bar.resize(a_diag.size());
  out.b_bar.resize(a_diag.size());
  for (std::size_t i = 0; i < a_diag.size(); ++i) {
    const double x = delta * a_diag[i];
    out.a_bar[i] = std::exp(x);
    out.b_bar[i] =
        std::fabs(x) < 1e-6 ? delta * b[i] : std::expm1(x) / a_diag[i] * b[i];
  }
  return out;
}

namespace {

// Bias value that makes softplus(bias) == dt.
double inverse_softplus(double dt) { return std::log(std::expm1(dt)); }

}  // namespace

MambaBranch::MambaBranch(const SsmConfig& cfg, ParamRegistry& reg,
                         const std::string& prefix, std::mt19937_64& rng)
    : cfg_(cfg) {
  const int dm = cfg.d_model, di = cfg.d_inner, ds = cfg.d_state,
            dc = cfg.d_conv;
  in_proj_ = reg.add_uniform(prefix + ".in_proj", {dm, 2 * di},
                             1.0 / std::sqrt(static_cast<double>(dm)), rng);
  conv_w_ = reg.add_uniform(prefix + ".conv_w", {di, dc},
                            1.0 / std::sqrt(static_cast<double>(dc)), rng);
  conv_b_ = reg.add_full(prefix + ".conv_b", {di}, 0.0);
  delta_w_ = reg.add_uniform(prefix + ".delta_w", {di, di},
                             1.0 / std::sqrt(static_cast<double>(di)), rng);
  // softplus(delta_b) lands in [1e-3, 1e-1], log-uniform
  {
    std::uniform_real_distribution<double> U(std::log(1e-3), std::log(1e-1));
    std::vector<double> bias(di);
    for (auto& v : bias) v = inverse_softplus(std::exp(U(rng)));
    delta_b_ = reg.add(prefix + ".delta_b", {di}, std::move(bias));
  }
  b_proj_ = reg.add_uniform(prefix + ".b_proj", {di, ds},
                            1.0 / std::sqrt(static_cast<double>(di)), rng);
  c_proj_ = reg.add_uniform(prefix + ".c_proj", {di, ds},
                            1.0 / std::sqrt(static_cast<double>(di)), rng);
  // A = -exp(A_log) with A_log = log(1..d_state) per channel
  {
    std::vector<double> alog(static_cast<std::size_t>(di) * ds);
    for (int c = 0; c < di; ++c)
      for (int s = 0; s < ds; ++s)
        alog[static_cast<std::size_t>(c) * ds + s] = std::log(s + 1.0);
    a_log_ = reg.add(prefix + ".a_log", {di, ds}, std::move(alog));
  }
  d_skip_ = reg.add_full(prefix + ".d_skip", {di}, 1.0);
  out_proj_ = reg.add_uniform(prefix + ".out_proj", {di, dm},
                              1.0 / std::sqrt(static_cast<double>(di)), rng);
}

Tensor MambaBranch::forward(const Tensor& e) const {
  const int di = cfg_.d_inner;
  Tensor xz = matmul(e, in_proj_);
  Tensor x = slice(xz, 2, 0, di);
  Tensor z = slice(xz, 2, di, di);
  x = silu(causal_conv1d(x, conv_w_, conv_b_));
  Tensor delta = softplus(add(matmul(x, delta_w_), delta_b_));
  Tensor bsel = matmul(x, b_proj_);
  Tensor csel = matmul(x, c_proj_);
  Tensor a = neg(exp(a_log_));
  Tensor y = selective_scan(x, delta, a, bsel, csel, d_skip_);
  return matmul(mul(y, silu(z)), out_proj_);
}

MambaLayer::MambaLayer(const SsmConfig& cfg, int d_ff, double dropout,
                       ParamRegistry& reg, const std::string& prefix,
                       std::mt19937_64& rng)
    : fwd_(cfg, reg, prefix + ".fwd", rng),
      bwd_(cfg, reg, prefix + ".bwd", rng),
      dropout_(dropout) {
  const int dm = cfg.d_model;
  ln1_g_ = reg.add_full(prefix + ".ln1_g", {dm}, 1.0);
  ln1_b_ = reg.add_full(prefix + ".ln1_b", {dm}, 0.0);
  ln2_g_ = reg.add_full(prefix + ".ln2_g", {dm}, 1.0);
  ln2_b_ = reg.add_full(prefix + ".ln2_b", {dm}, 0.0);
  ffn_w1_ = reg.add_uniform(prefix + ".ffn_w1", {dm, d_ff},
                            1.0 / std::sqrt(static_cast<double>(dm)), rng);
  ffn_b1_ = reg.add_full(prefix + ".ffn_b1", {d_ff}, 0.0);
  ffn_w2_ = reg.add_uniform(prefix + ".ffn_w2", {d_ff, dm},
                            1.0 / std::sqrt(static_cast<double>(d_ff)), rng);
  ffn_b2_ = reg.add_full(prefix + ".ffn_b2", {dm}, 0.0);
}

Tensor MambaLayer::forward(const Tensor& e, bool train,
                           std::mt19937_64& dropout_rng) const {
  Tensor h_fwd = fwd_.forward(e);
  Tensor h_bwd = flip(bwd_.forward(flip(e, 1)), 1);
  Tensor fused =
      layer_norm(add(add(e, h_fwd), h_bwd), ln1_g_, ln1_b_, kLayerNormEps);
  Tensor ffn = add(matmul(gelu(add(matmul(fused, ffn_w1_), ffn_b1_)), ffn_w2_),
                   ffn_b2_);
  Tensor out = add(fused, dropout(ffn, dropout_, dropout_rng, train));
  return layer_norm(out, ln2_g_, ln2_b_, kLayerNormEps);
}

}  // namespace dmamba
