#include "dmamba/norm.hpp"

#include <stdexcept>

namespace dmamba {

Revin::Revin(int n_vars, double eps, bool affine, ParamRegistry& reg,
             const std::string& prefix)
    : eps_(eps), affine_(affine) {
  if (eps <= 0) throw std::invalid_argument("revin: eps must be > 0");
  if (affine_) {
    gamma_ = reg.add_full(prefix + ".gamma", {n_vars}, 1.0);
    beta_ = reg.add_full(prefix + ".beta", {n_vars}, 0.0);
  }
}

Tensor Revin::normalize(const Tensor& x, RevinState& state) const {
  if (x.rank() != 3)
    throw std::invalid_argument("revin: expected (B,L,D), got " +
                                shape_str(x.shape()));
  if (x.dim(1) < 2)
    throw std::invalid_argument("revin: window length must be >= 2, got " +
                                std::to_string(x.dim(1)));
  Tensor mu = mean_axis(x, 1);
  Tensor xc = sub(x, mu);
  Tensor var = mean_axis(mul(xc, xc), 1);
  Tensor sigma = sqrt(add(var, eps_));
  state.mu = mu;
  state.sigma = sigma;
  state.valid = true;
  Tensor xn = div(xc, sigma);
  if (affine_) xn = add(mul(xn, gamma_), beta_);
  return xn;
}

Tensor Revin::denormalize(const Tensor& y, const RevinState& state) const {
  if (!state.valid)
    throw std::logic_error("revin: denormalize called without stored statistics");
  Tensor z = y;
  if (affine_) {
    z = div(sub(z, beta_), clamp_away_from_zero(gamma_, 1e-4));
  }
  return add(mul(z, state.sigma), state.mu);
}

DecompositionPair ema_decompose(const Tensor& x, double alpha) {
  DecompositionPair p;
  p.trend = ema_trend(x, alpha);
  p.seasonal = sub(x, p.trend);
  p.alpha = alpha;
  return p;
}

}  // namespace dmamba
