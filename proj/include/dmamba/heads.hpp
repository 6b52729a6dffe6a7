#pragma once

// Stream heads: every head maps a (B, L, D) component to a (B, T, D)
// horizon forecast.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dmamba/module.hpp"
#include "dmamba/ssm.hpp"
#include "dmamba/tensor.hpp"

namespace dmamba {

struct HeadConfig {
  int seq_len = 96;
  int pred_len = 96;
  int n_vars = 7;
  int d_model = 128;
  int d_state = 16;
  int d_conv = 4;
  int expand = 2;
  int e_layers = 2;
  int d_ff = 256;
  double dropout = 0.1;
  int trend_layers = 2;
  int trend_pool = 3;
};

class Head {
 public:
  virtual ~Head() = default;
  virtual Tensor forward(const Tensor& x, bool train,
                         std::mt19937_64& dropout_rng) const = 0;
};

// Which axis becomes the token sequence for the scan.
enum class ScanAxis { Variate, Time };

// Inverted-embedding SSM stack. Variate mode embeds each variate's length-L
// window as one token (scan over D); Time mode embeds each step's D values as
// one token (scan over L) and maps L -> T afterward.
class MambaHead : public Head {
 public:
  MambaHead(const HeadConfig& cfg, ScanAxis axis, ParamRegistry& reg,
            const std::string& prefix, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, bool train,
                 std::mt19937_64& dropout_rng) const override;

 private:
  HeadConfig cfg_;
  ScanAxis axis_;
  Tensor embed_w_, embed_b_;
  Tensor proj_w_, proj_b_;
  Tensor time_w_, time_b_;  // Time mode only: (L, T) map per channel
  std::vector<MambaLayer> layers_;
};

// Channel-independent hierarchical MLP: per channel,
//   h_l = LN(AvgPool_p(W_l h_{l-1})),  output = W_out h_N.
// Each W_l restores width to L; pooling (stride 1, no padding) shrinks it to
// L - (pool - 1). No activation between layers.
class MlpHead : public Head {
 public:
  MlpHead(const HeadConfig& cfg, ParamRegistry& reg, const std::string& prefix,
          std::mt19937_64& rng, bool use_layer_norm = true);
  Tensor forward(const Tensor& x, bool train,
                 std::mt19937_64& dropout_rng) const override;

 private:
  struct Layer {
    Tensor w, b, ln_g, ln_b;
  };
  HeadConfig cfg_;
  std::vector<Layer> layers_;
  Tensor out_w_, out_b_;
  bool use_ln_;
};

// Sliding mean over the last axis, window p, stride 1, no padding.
Tensor avg_pool_last(const Tensor& x, int p);

}  // namespace dmamba
