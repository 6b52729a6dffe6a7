#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dmamba/tensor.hpp"

namespace testsup {

// Relative error with an absolute floor so true-zero pairs compare as equal.
inline double rel_err(double a, double b, double floor_) {
  double denom = std::max({std::fabs(a), std::fabs(b), floor_});
  return std::fabs(a - b) / denom;
}

struct GradCheckReport {
  double max_rel = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

// Central finite differences against tape gradients. loss_fn rebuilds the
// graph from the same leaf tensors on every call and returns a scalar.
inline GradCheckReport grad_check(
    const std::function<dmamba::Tensor()>& loss_fn,
    const std::vector<std::pair<std::string, dmamba::Tensor>>& params,
    double h = 1e-5, double floor_ = 1e-3) {
  using dmamba::Tape;
  using dmamba::Tensor;
  std::vector<std::vector<double>> tape_grads;
  {
    Tape tape;
    Tensor loss = loss_fn();
    for (const auto& [name, p] : params) p.zero_grad();
    tape.backward(loss);
    for (auto& [name, p] : params) tape_grads.push_back(p.grad());
  }
  GradCheckReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& p = params[pi].second;
    auto& v = p.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double fp = loss_fn().item();
      v[i] = orig - h;
      const double fm = loss_fn().item();
      v[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double r = rel_err(fd, tape_grads[pi][i], floor_);
      if (r > rep.max_rel) {
        rep.max_rel = r;
        rep.worst_param = params[pi].first;
        rep.worst_index = i;
      }
    }
  }
  return rep;
}

inline std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng,
                                      double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> U(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = U(rng);
  return v;
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Synthetic hourly multivariate series: sine + linear drift + mild noise.
// Covers at most one (leap) year of hourly stamps.
inline void write_sine_trend_csv(const std::string& path, int rows, int n_vars,
                                 unsigned seed) {
  static const int kMonthLen[12] = {31, 29, 31, 30, 31, 30,
                                    31, 31, 30, 31, 30, 31};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-0.05, 0.05);
  FILE* f = std::fopen(path.c_str(), "w");
  std::fprintf(f, "date");
  for (int c = 0; c < n_vars; ++c) std::fprintf(f, ",v%d", c);
  std::fprintf(f, "\n");
  for (int t = 0; t < rows; ++t) {
    int day = t / 24, hour = t % 24, month = 0;
    while (day >= kMonthLen[month]) {
      day -= kMonthLen[month];
      ++month;
    }
    std::fprintf(f, "2020-%02d-%02d %02d:00:00", month + 1, day + 1, hour);
    for (int c = 0; c < n_vars; ++c) {
      double v = std::sin(2.0 * M_PI * (t / 24.0 + 0.3 * c)) +
                 0.002 * t * (1.0 + 0.1 * c) + 2.0 * c + U(rng);
      std::fprintf(f, ",%.10f", v);
    }
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

inline std::string source_file(const std::string& rel) {
#ifdef DMAMBA_SOURCE_DIR
  return std::string(DMAMBA_SOURCE_DIR) + "/" + rel;
#else
  return rel;
#endif
}

}  // namespace testsup
