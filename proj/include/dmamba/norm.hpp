#pragma once

// Reversible instance normalization and EMA seasonal-trend decomposition.

#include "dmamba/module.hpp"
#include "dmamba/tensor.hpp"

namespace dmamba {

// Per-forward statistics captured by normalize() and consumed by
// denormalize().
struct RevinState {
  Tensor mu;     // (B, 1, D)
  Tensor sigma;  // (B, 1, D), eps folded inside the square root
  bool valid = false;
};

class Revin {
 public:
  // Registers gamma (init 1) and beta (init 0) of length n_vars when affine.
  Revin(int n_vars, double eps, bool affine, ParamRegistry& reg,
        const std::string& prefix);

  // x: (B, L, D) with L >= 2. Stores mu/sigma in state.
  Tensor normalize(const Tensor& x, RevinState& state) const;
  // y: (B, T, D); inverts the affine map (gamma clamped away from 0) and the
  // per-instance standardization.
  Tensor denormalize(const Tensor& y, const RevinState& state) const;

  double eps() const { return eps_; }
  bool affine() const { return affine_; }

 private:
  Tensor gamma_, beta_;
  double eps_;
  bool affine_;
};

struct DecompositionPair {
  Tensor trend;     // (B, L, D)
  Tensor seasonal;  // (B, L, D), defined as input - trend
  double alpha;
};

// trend[0] = x[0]; trend[t] = alpha*x[t] + (1-alpha)*trend[t-1];
// seasonal = x - trend. alpha in (0, 1].
DecompositionPair ema_decompose(const Tensor& x, double alpha);

}  // namespace dmamba
