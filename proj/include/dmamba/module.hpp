#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dmamba/tensor.hpp"

namespace dmamba {

// Flat, ordered collection of named trainable tensors. Registration order is
// the canonical parameter order (optimizer state, checkpoints, manifests).
class ParamRegistry {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> data) {
    Tensor t = Tensor::param(std::move(shape), std::move(data));
    items_.emplace_back(name, t);
    return t;
  }

  Tensor add_full(const std::string& name, Shape shape, double v) {
    std::size_t n = shape_numel(shape);
    return add(name, std::move(shape), std::vector<double>(n, v));
  }

  Tensor add_uniform(const std::string& name, Shape shape, double bound,
                     std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(-bound, bound);
    std::size_t n = shape_numel(shape);
    std::vector<double> v(n);
    for (auto& x : v) x = U(rng);
    return add(name, std::move(shape), std::move(v));
  }

  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }

  Tensor find(const std::string& name) const {
    for (const auto& [n, t] : items_)
      if (n == name) return t;
    throw std::invalid_argument("parameter '" + name + "' not registered");
  }

  long total_params() const {
    long n = 0;
    for (const auto& [name, t] : items_) n += static_cast<long>(t.numel());
    return n;
  }

  std::vector<std::string> manifest() const {
    std::vector<std::string> names;
    names.reserve(items_.size());
    for (const auto& [n, t] : items_) names.push_back(n);
    return names;
  }

  void zero_grads() {
    for (auto& [n, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace dmamba
