#pragma once

#include <vector>

#include "dmamba/errors.hpp"
#include "dmamba/module.hpp"

namespace dmamba {

// Adam with bias correction and optional global-norm gradient clipping.
// Aborts the run (DivergenceError) on any non-finite gradient.
class Adam {
 public:
  Adam(ParamRegistry& params, double lr, double beta1, double beta2, double eps,
       double grad_clip);

  void step();
  void zero_grad() { reg_.zero_grads(); }

  long t() const { return t_; }
  void set_t(long t) { t_ = t; }
  std::vector<std::vector<double>>& moment1() { return m_; }
  std::vector<std::vector<double>>& moment2() { return v_; }

 private:
  ParamRegistry& reg_;
  double lr_, b1_, b2_, eps_, clip_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace dmamba
