#pragma once

// Selective state-space building blocks: exact ZOH discretization, the gated
// scan branch, and the bidirectional token-mixing layer.

#include <random>
#include <string>
#include <vector>

#include "dmamba/module.hpp"
#include "dmamba/tensor.hpp"

namespace dmamba {

inline constexpr double kLayerNormEps = 1e-5;

// Exact zero-order-hold discretization of a diagonal continuous pair (A, B):
//   Abar_i = exp(delta * a_i)
//   Bbar_i = (delta*a_i)^-1 (exp(delta*a_i) - 1) * delta * b_i
// with the series limit Bbar_i -> delta * b_i when |delta*a_i| < 1e-6.
struct ZohDiscrete {
  std::vector<double> a_bar, b_bar;
};
ZohDiscrete zoh_discretize(const std::vector<double>& a_diag,
                           const std::vector<double>& b, double delta);

struct SsmConfig {
  int d_model = 128;
  int d_inner = 256;  // expand * d_model
  int d_state = 16;
  int d_conv = 4;
};

// One scan direction. Gated block:
//   x, z = split(in_proj(e)); x <- silu(causal depthwise conv over tokens);
//   delta = softplus(delta_proj(x)); B, C = B_proj(x), C_proj(x);
//   y = scan(x, delta, A, B, C, D_skip); out = out_proj(y * silu(z)).
// A = -exp(A_log) keeps every discrete pole inside the unit circle.
class MambaBranch {
 public:
  MambaBranch(const SsmConfig& cfg, ParamRegistry& reg,
              const std::string& prefix, std::mt19937_64& rng);

  // e: (B, Tok, d_model) -> (B, Tok, d_model)
  Tensor forward(const Tensor& e) const;

 private:
  SsmConfig cfg_;
  Tensor in_proj_;           // (d_model, 2*d_inner)
  Tensor conv_w_, conv_b_;   // (d_inner, d_conv), (d_inner)
  Tensor delta_w_, delta_b_; // (d_inner, d_inner), (d_inner)
  Tensor b_proj_, c_proj_;   // (d_inner, d_state)
  Tensor a_log_;             // (d_inner, d_state)
  Tensor d_skip_;            // (d_inner)
  Tensor out_proj_;          // (d_inner, d_model)
};

// Bidirectional layer with residual fusion and a position-wise FFN:
//   H_fwd = fwd(E); H_bwd = flip(bwd(flip(E)))
//   H_fused = LN(E + H_fwd + H_bwd)
//   H_out = LN(H_fused + Dropout(FFN(H_fused)))
class MambaLayer {
 public:
  MambaLayer(const SsmConfig& cfg, int d_ff, double dropout, ParamRegistry& reg,
             const std::string& prefix, std::mt19937_64& rng);

  Tensor forward(const Tensor& e, bool train, std::mt19937_64& dropout_rng) const;

 private:
  MambaBranch fwd_, bwd_;
  Tensor ln1_g_, ln1_b_, ln2_g_, ln2_b_;
  Tensor ffn_w1_, ffn_b1_, ffn_w2_, ffn_b2_;
  double dropout_;
};

}  // namespace dmamba
