#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "dmamba/model.hpp"
#include "support.hpp"

using namespace dmamba;
using testsup::random_vec;

namespace {
ModelConfig toy_config() {
  ModelConfig c;
  c.seq_len = 8;
  c.pred_len = 4;
  c.n_vars = 3;
  c.d_model = 8;
  c.d_state = 4;
  c.d_conv = 2;
  c.expand = 2;
  c.e_layers = 1;
  c.d_ff = 16;
  c.dropout = 0.0;
  c.trend_pool = 3;
  return c;
}
}  // namespace

TEST_CASE("zeroed heads forecast the per-instance mean") {
  ModelConfig c = toy_config();
  DMambaModel model(c, 42);
  // zero every head output projection so both streams emit 0
  for (const auto& [name, t] : model.params().items()) {
    if (name.find("proj_") != std::string::npos ||
        name.find("out_w") != std::string::npos ||
        name.find("out_b") != std::string::npos ||
        name.find("time_") != std::string::npos) {
      auto& v = t.mutable_value();
      std::fill(v.begin(), v.end(), 0.0);
    }
  }
  std::mt19937_64 rng(1), dr(0);
  Tensor x({2, c.seq_len, c.n_vars}, random_vec(2 * c.seq_len * c.n_vars, rng));
  Tensor y = model.forward(x, false, dr);
  for (int b = 0; b < 2; ++b) {
    for (int d = 0; d < c.n_vars; ++d) {
      double acc = 0;
      for (int t = 0; t < c.seq_len; ++t)
        acc += x.value()[(b * c.seq_len + t) * c.n_vars + d];
      const double mu = acc * (1.0 / c.seq_len);
      for (int t = 0; t < c.pred_len; ++t)
        CHECK(y.value()[(b * c.pred_len + t) * c.n_vars + d] ==
              doctest::Approx(mu).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward shape for the ETT protocol config") {
  ModelConfig c;  // defaults: L=96, T=96, D=7, d_model=128
  c.e_layers = 1;
  DMambaModel model(c, 7);
  std::mt19937_64 rng(2), dr(0);
  Tensor x({32, 96, 7}, random_vec(32 * 96 * 7, rng));
  Tensor y = model.forward(x, false, dr);
  CHECK(y.shape() == Shape{32, 96, 7});
}

TEST_CASE("full toy model gradient suite") {
  ModelConfig c = toy_config();
  DMambaModel model(c, 2024);
  std::mt19937_64 rng(3);
  Tensor x({2, c.seq_len, c.n_vars}, random_vec(2 * c.seq_len * c.n_vars, rng));
  Tensor target({2, c.pred_len, c.n_vars},
                random_vec(2 * c.pred_len * c.n_vars, rng));
  auto w = arctan_weights(c.pred_len);
  std::mt19937_64 dr(0);
  auto loss = [&]() {
    return arctan_loss(model.forward(x, false, dr), target, w);
  };
  auto rep = testsup::grad_check(loss, model.params().items(), 1e-5, 1e-6);
  INFO("worst: ", rep.worst_param, "[", rep.worst_index, "]");
  CHECK(rep.max_rel < 1e-3);
}

TEST_CASE("arctan weights") {
  auto w = arctan_weights(720);
  CHECK(w[0] == 1.0);  // exact: arctan(1) == pi/4
  for (std::size_t i = 1; i < w.size(); ++i) CHECK(w[i] < w[i - 1]);
  const double floor_ = 1.0 - 0.78539816339744830962;
  for (double v : w) CHECK(v > floor_);
  CHECK(w[1] == doctest::Approx(1.0 + 0.78539816339744830962 - std::atan(2.0))
                    .epsilon(1e-12));
  CHECK(std::fabs(w[719] - (1.0 + 0.78539816339744830962 - std::atan(720.0))) <
        1e-15);
  CHECK(w[719] == doctest::Approx(floor_).epsilon(7e-3));
  CHECK_THROWS_AS(arctan_weights(0), std::invalid_argument);
}

TEST_CASE("arctan loss") {
  auto w = arctan_weights(4);
  std::mt19937_64 rng(4);
  Tensor p({2, 4, 3}, random_vec(24, rng));
  SUBCASE("zero residual") {
    CHECK(arctan_loss(p, p, w).item() == 0.0);
  }
  SUBCASE("single term") {
    Tensor a({1, 1, 1}, {3.0});
    Tensor b({1, 1, 1}, {1.0});
    CHECK(arctan_loss(a, b, arctan_weights(1)).item() == doctest::Approx(2.0));
  }
  SUBCASE("uniform weights reduce to MAE bit-for-bit") {
    Tensor t({2, 4, 3}, random_vec(24, rng));
    std::vector<double> ones(4, 1.0);
    double loss = arctan_loss(p, t, ones).item();
    Metrics m = compute_metrics(p.value(), t.value());
    CHECK(loss == m.mae);
  }
  SUBCASE("shape mismatch") {
    Tensor t({2, 3, 3}, random_vec(18, rng));
    CHECK_THROWS_AS(arctan_loss(p, t, w), std::invalid_argument);
  }
}

TEST_CASE("metrics") {
  std::mt19937_64 rng(5);
  auto p = random_vec(100, rng);
  SUBCASE("exact zero") {
    Metrics m = compute_metrics(p, p);
    CHECK(m.mse == 0.0);
    CHECK(m.mae == 0.0);
  }
  SUBCASE("unit residual") {
    auto t = p;
    for (auto& v : t) v -= 1.0;
    Metrics m = compute_metrics(p, t);
    CHECK(m.mse == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.mae == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("two-pass summation oracle") {
    auto t = random_vec(100, rng);
    std::vector<double> se(100), ae(100);
    for (int i = 0; i < 100; ++i) {
      double e = p[i] - t[i];
      se[i] = e * e;
      ae[i] = std::fabs(e);
    }
    double mse = std::accumulate(se.begin(), se.end(), 0.0) / 100.0;
    double mae = std::accumulate(ae.begin(), ae.end(), 0.0) / 100.0;
    Metrics m = compute_metrics(p, t);
    CHECK(std::fabs(m.mse - mse) < 1e-12);
    CHECK(std::fabs(m.mae - mae) < 1e-12);
  }
}

TEST_CASE("variant wiring produces distinct manifests") {
  ModelConfig c = toy_config();
  std::set<std::vector<std::string>> manifests;
  for (Variant v : all_variants()) {
    c.variant = v;
    DMambaModel model(c, 11);
    manifests.insert(model.params().manifest());
    if (v == Variant::AllMlp) {
      for (const auto& name : model.params().manifest())
        CHECK(name.find("a_log") == std::string::npos);
    }
    if (v == Variant::TMamba) {
      bool has_time_map = false;
      for (const auto& name : model.params().manifest())
        has_time_map = has_time_map || name.find("seasonal.time_w") == 0;
      CHECK(has_time_map);
    }
  }
  CHECK(manifests.size() == all_variants().size());
}

TEST_CASE("variant and loss names round trip") {
  for (Variant v : all_variants())
    CHECK(variant_from_string(to_string(v)) == v);
  CHECK(variant_from_string("all-mlp") == Variant::AllMlp);
  CHECK(variant_from_string("t_mamba") == Variant::TMamba);
  CHECK_THROWS_AS(variant_from_string("bogus"), ConfigError);
  for (LossKind k : {LossKind::Arctan, LossKind::Mse, LossKind::Mae})
    CHECK(loss_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(loss_from_string("l2"), ConfigError);
}

TEST_CASE("training loss kinds") {
  std::mt19937_64 rng(6);
  Tensor p({2, 4, 2}, random_vec(16, rng));
  Tensor t({2, 4, 2}, random_vec(16, rng));
  auto w = arctan_weights(4);
  double mse = training_loss(p, t, LossKind::Mse, w).item();
  double mae = training_loss(p, t, LossKind::Mae, w).item();
  Metrics m = compute_metrics(p.value(), t.value());
  CHECK(mse == doctest::Approx(m.mse).epsilon(1e-14));
  CHECK(mae == doctest::Approx(m.mae).epsilon(1e-14));
  double at = training_loss(p, t, LossKind::Arctan, w).item();
  CHECK(at < mae);  // weights decay below 1 after t=0
}
