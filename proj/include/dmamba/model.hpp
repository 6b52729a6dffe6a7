#pragma once

// Dual-stream forecasting model: RevIN, EMA decomposition, per-stream heads,
// horizon-axis fusion, inverse RevIN. Plus the training losses and
// evaluation metrics.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dmamba/errors.hpp"
#include "dmamba/heads.hpp"
#include "dmamba/norm.hpp"

namespace dmamba {

// Table-3 style stream wirings.
enum class Variant { DMamba, AllMlp, MambaTrend, AllMamba, TMamba };
enum class LossKind { Arctan, Mse, Mae };

std::string to_string(Variant v);
std::string to_string(LossKind k);
Variant variant_from_string(const std::string& s);
LossKind loss_from_string(const std::string& s);
const std::vector<Variant>& all_variants();

struct ModelConfig {
  int seq_len = 96;
  int pred_len = 96;
  int n_vars = 7;
  int d_model = 128;
  int d_state = 16;
  int d_conv = 4;
  int expand = 2;
  int e_layers = 2;
  int d_ff = 0;  // 0 means 2 * d_model
  double dropout = 0.1;
  double ema_alpha = 0.3;
  double revin_eps = 1e-5;
  bool revin_affine = true;
  int trend_layers = 2;
  int trend_pool = 3;
  Variant variant = Variant::DMamba;
  LossKind loss = LossKind::Arctan;

  int effective_d_ff() const { return d_ff > 0 ? d_ff : 2 * d_model; }
  HeadConfig head_config() const;
};

class DMambaModel {
 public:
  DMambaModel(const ModelConfig& cfg, std::uint64_t init_seed);

  // x: (B, L, D) -> (B, T, D)
  Tensor forward(const Tensor& x, bool train, std::mt19937_64& dropout_rng) const;

  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }
  const ModelConfig& config() const { return cfg_; }
  long param_count() const { return reg_.total_params(); }

 private:
  ModelConfig cfg_;
  ParamRegistry reg_;
  std::unique_ptr<Revin> revin_;
  std::unique_ptr<Head> seasonal_;
  std::unique_ptr<Head> trend_;
  Tensor fusion_w_, fusion_b_;  // (2T, T), (T); starts as the stream average
};

// w_t = -arctan(t+1) + pi/4 + 1 for t = 0..T-1; w_0 == 1 exactly,
// strictly decreasing, bounded below by 1 - pi/4.
std::vector<double> arctan_weights(int pred_len);

// (1/(B*T*D)) * sum w_t |pred - target|; with w == 1 this reduces to MAE
// bit-for-bit under the same flat summation order.
Tensor arctan_loss(const Tensor& pred, const Tensor& target,
                   const std::vector<double>& w);

Tensor training_loss(const Tensor& pred, const Tensor& target, LossKind kind,
                     const std::vector<double>& arctan_w);

struct Metrics {
  double mse = 0;
  double mae = 0;
};
// Flat row-major accumulation over all B*T*D entries (standardized space).
Metrics compute_metrics(const std::vector<double>& pred,
                        const std::vector<double>& target);

}  // namespace dmamba
