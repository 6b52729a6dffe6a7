#include "dmamba/optimizer.hpp"

#include <cmath>

namespace dmamba {

Adam::Adam(ParamRegistry& params, double lr, double beta1, double beta2,
           double eps, double grad_clip)
    : reg_(params), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps),
      clip_(grad_clip) {
  for (const auto& [name, t] : reg_.items()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step() {
  double norm_sq = 0.0;
  for (const auto& [name, t] : reg_.items()) {
    for (double g : t.grad()) {
      if (!std::isfinite(g))
        throw DivergenceError("non-finite gradient in parameter '" + name + "'");
      norm_sq += g * g;
    }
  }
  double scale = 1.0;
  if (clip_ > 0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > clip_) scale = clip_ / norm;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  std::size_t pi = 0;
  for (const auto& [name, t] : reg_.items()) {
    auto& value = t.mutable_value();
    const auto& grad = t.grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] * scale;
      m[i] = b1_ * m[i] + (1.0 - b1_) * g;
      v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    ++pi;
  }
}

}  // namespace dmamba
