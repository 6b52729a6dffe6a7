#include "dmamba/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace dmamba {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::DMamba: return "DMamba";
    case Variant::AllMlp: return "All-MLP";
    case Variant::MambaTrend: return "Mamba-Trend";
    case Variant::AllMamba: return "All-Mamba";
    case Variant::TMamba: return "T-Mamba";
  }
  return "?";
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::Arctan: return "arctan";
    case LossKind::Mse: return "mse";
    case LossKind::Mae: return "mae";
  }
  return "?";
}

namespace {
std::string fold(const std::string& s) {
  std::string out;
  for (char c : s)
    if (c != '-' && c != '_') out.push_back(static_cast<char>(std::tolower(c)));
  return out;
}
}  // namespace

Variant variant_from_string(const std::string& s) {
  const std::string f = fold(s);
  if (f == "dmamba") return Variant::DMamba;
  if (f == "allmlp") return Variant::AllMlp;
  if (f == "mambatrend") return Variant::MambaTrend;
  if (f == "allmamba") return Variant::AllMamba;
  if (f == "tmamba") return Variant::TMamba;
  throw ConfigError("unknown variant '" + s +
                    "' (expected DMamba, All-MLP, Mamba-Trend, All-Mamba, "
                    "T-Mamba)");
}

LossKind loss_from_string(const std::string& s) {
  const std::string f = fold(s);
  if (f == "arctan") return LossKind::Arctan;
  if (f == "mse") return LossKind::Mse;
  if (f == "mae") return LossKind::Mae;
  throw ConfigError("unknown loss '" + s + "' (expected arctan, mse, mae)");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::DMamba, Variant::AllMlp,
                                      Variant::MambaTrend, Variant::AllMamba,
                                      Variant::TMamba};
  return v;
}

HeadConfig ModelConfig::head_config() const {
  HeadConfig h;
  h.seq_len = seq_len;
  h.pred_len = pred_len;
  h.n_vars = n_vars;
  h.d_model = d_model;
  h.d_state = d_state;
  h.d_conv = d_conv;
  h.expand = expand;
  h.e_layers = e_layers;
  h.d_ff = effective_d_ff();
  h.dropout = dropout;
  h.trend_layers = trend_layers;
  h.trend_pool = trend_pool;
  return h;
}

DMambaModel::DMambaModel(const ModelConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg) {
  std::mt19937_64 rng(init_seed);
  revin_ = std::make_unique<Revin>(cfg.n_vars, cfg.revin_eps, cfg.revin_affine,
                                   reg_, "revin");
  const HeadConfig hc = cfg.head_config();
  auto mamba_variate = [&](const std::string& p) {
    return std::make_unique<MambaHead>(hc, ScanAxis::Variate, reg_, p, rng);
  };
  auto mamba_time = [&](const std::string& p) {
    return std::make_unique<MambaHead>(hc, ScanAxis::Time, reg_, p, rng);
  };
  auto mlp = [&](const std::string& p) {
    return std::make_unique<MlpHead>(hc, reg_, p, rng);
  };
  switch (cfg.variant) {
    case Variant::DMamba:
      seasonal_ = mamba_variate("seasonal");
      trend_ = mlp("trend");
      break;
    case Variant::AllMlp:
      seasonal_ = mlp("seasonal");
      trend_ = mlp("trend");
      break;
    case Variant::MambaTrend:
      seasonal_ = mlp("seasonal");
      trend_ = mamba_variate("trend");
      break;
    case Variant::AllMamba:
      seasonal_ = mamba_variate("seasonal");
      trend_ = mamba_variate("trend");
      break;
    case Variant::TMamba:
      seasonal_ = mamba_time("seasonal");
      trend_ = mlp("trend");
      break;
  }
  // fusion starts as the exact average of the two stream forecasts
  const int T = cfg.pred_len;
  std::vector<double> fw(static_cast<std::size_t>(2 * T) * T, 0.0);
  for (int t = 0; t < T; ++t) {
    fw[static_cast<std::size_t>(t) * T + t] = 0.5;
    fw[static_cast<std::size_t>(T + t) * T + t] = 0.5;
  }
  fusion_w_ = reg_.add("fusion.w", {2 * T, T}, std::move(fw));
  fusion_b_ = reg_.add_full("fusion.b", {T}, 0.0);
}

Tensor DMambaModel::forward(const Tensor& x, bool train,
                            std::mt19937_64& dropout_rng) const {
  if (x.rank() != 3 || x.dim(1) != cfg_.seq_len || x.dim(2) != cfg_.n_vars) {
    throw std::invalid_argument("model: expected (B," +
                                std::to_string(cfg_.seq_len) + "," +
                                std::to_string(cfg_.n_vars) + "), got " +
                                shape_str(x.shape()));
  }
  RevinState st;
  Tensor xn = revin_->normalize(x, st);
  DecompositionPair parts = ema_decompose(xn, cfg_.ema_alpha);
  Tensor ys = seasonal_->forward(parts.seasonal, train, dropout_rng);
  Tensor yt = trend_->forward(parts.trend, train, dropout_rng);
  Tensor cat = concat({ys, yt}, 1);  // (B, 2T, D) along the horizon axis
  Tensor fused = add(matmul(transpose(cat, 1, 2), fusion_w_), fusion_b_);
  fused = transpose(fused, 1, 2);  // (B, T, D)
  return revin_->denormalize(fused, st);
}

std::vector<double> arctan_weights(int pred_len) {
  if (pred_len < 1)
    throw std::invalid_argument("arctan_weights: horizon must be >= 1");
  std::vector<double> w(pred_len);
  constexpr double kQuarterPi = 0.78539816339744830962;
  for (int t = 0; t < pred_len; ++t)
    w[t] = -std::atan(t + 1.0) + kQuarterPi + 1.0;
  return w;
}

Tensor arctan_loss(const Tensor& pred, const Tensor& target,
                   const std::vector<double>& w) {
  if (pred.shape() != target.shape())
    throw std::invalid_argument("loss: prediction shape " +
                                shape_str(pred.shape()) + " != target shape " +
                                shape_str(target.shape()));
  if (static_cast<int>(w.size()) != pred.dim(1))
    throw std::invalid_argument("loss: weight length " +
                                std::to_string(w.size()) +
                                " != horizon " + std::to_string(pred.dim(1)));
  Tensor weights({static_cast<int>(w.size()), 1}, w);
  return mean(mul(abs(sub(pred, target)), weights));
}

Tensor training_loss(const Tensor& pred, const Tensor& target, LossKind kind,
                     const std::vector<double>& arctan_w) {
  switch (kind) {
    case LossKind::Arctan:
      return arctan_loss(pred, target, arctan_w);
    case LossKind::Mse: {
      Tensor e = sub(pred, target);
      return mean(mul(e, e));
    }
    case LossKind::Mae:
      return mean(abs(sub(pred, target)));
  }
  throw std::logic_error("unreachable loss kind");
}

Metrics compute_metrics(const std::vector<double>& pred,
                        const std::vector<double>& target) {
  if (pred.size() != target.size())
    throw std::invalid_argument("metrics: size mismatch");
  double se = 0, ae = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    se += e * e;
    ae += std::fabs(e);
  }
  Metrics m;
  const double n = static_cast<double>(pred.size());
  m.mse = se / n;
  m.mae = ae / n;
  return m;
}

}  // namespace dmamba
