// Command-line front end: train / eval / ablation / alpha-sweep / gradcheck.
//
// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 numeric divergence.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "dmamba/config.hpp"
#include "dmamba/data.hpp"
#include "dmamba/model.hpp"
#include "dmamba/trainer.hpp"

namespace {

using namespace dmamba;

struct CommonOpts {
  std::string data, config_file, out, variant, loss, split_ratios;
  int seq_len = 0, pred_len = 0, d_model = 0, d_state = 0, d_conv = 0,
      d_ff = 0, e_layers = 0, expand = 0, trend_layers = 0, trend_pool = 0,
      batch_size = 0, max_epochs = 0, patience = 0, stride = 0, max_rows = 0;
  double ema_alpha = 0, revin_eps = 0, dropout = 0, lr = 0, grad_clip = 0;
  std::uint64_t seed = 0;
  bool no_revin_affine = false, no_date = false, quiet = false;

  CLI::Option *o_data{}, *o_out{}, *o_variant{}, *o_loss{}, *o_split{},
      *o_seq{}, *o_pred{}, *o_dmodel{}, *o_dstate{}, *o_dconv{}, *o_dff{},
      *o_elayers{}, *o_expand{}, *o_tlayers{}, *o_tpool{}, *o_batch{},
      *o_epochs{}, *o_patience{}, *o_stride{}, *o_maxrows{}, *o_alpha{},
      *o_reps{}, *o_dropout{}, *o_lr{}, *o_clip{}, *o_seed{}, *o_noaffine{},
      *o_nodate{};

  void attach(CLI::App* app) {
    o_data = app->add_option("--data", data, "input CSV path");
    app->add_option("--config", config_file, "key = value config file");
    o_out = app->add_option("--out", out, "output directory");
    o_variant = app->add_option(
        "--variant", variant,
        "DMamba | All-MLP | Mamba-Trend | All-Mamba | T-Mamba");
    o_loss = app->add_option("--loss", loss, "arctan | mse | mae");
    o_split = app->add_option("--split-ratios", split_ratios,
                              "train,val,test fractions (e.g. 0.6,0.2,0.2)");
    o_seq = app->add_option("--seq-len", seq_len, "look-back window length");
    o_pred = app->add_option("--pred-len", pred_len, "forecast horizon");
    o_dmodel = app->add_option("--d-model", d_model, "token embedding width");
    o_dstate = app->add_option("--d-state", d_state, "SSM state size");
    o_dconv = app->add_option("--d-conv", d_conv, "token conv width");
    o_dff = app->add_option("--d-ff", d_ff, "FFN hidden width (0: 2*d_model)");
    o_elayers = app->add_option("--e-layers", e_layers, "stacked scan layers");
    o_expand = app->add_option("--expand", expand, "inner expansion factor");
    o_tlayers = app->add_option("--trend-layers", trend_layers,
                                "trend MLP depth");
    o_tpool = app->add_option("--trend-pool", trend_pool,
                              "trend pooling window");
    o_batch = app->add_option("--batch-size", batch_size, "minibatch size");
    o_epochs = app->add_option("--max-epochs", max_epochs, "epoch budget");
    o_patience = app->add_option("--patience", patience,
                                 "early-stop patience (epochs)");
    o_stride = app->add_option("--stride", stride, "window stride");
    o_maxrows = app->add_option("--max-rows", max_rows,
                                "truncate the series to this many rows");
    o_alpha = app->add_option("--ema-alpha", ema_alpha,
                              "EMA smoothing factor in (0,1]");
    o_reps = app->add_option("--revin-eps", revin_eps,
                             "epsilon inside the RevIN root");
    o_dropout = app->add_option("--dropout", dropout, "FFN dropout rate");
    o_lr = app->add_option("--lr", lr, "Adam learning rate");
    o_clip = app->add_option("--grad-clip", grad_clip,
                             "global gradient-norm clip (0: off)");
    o_seed = app->add_option("--seed", seed, "run seed");
    o_noaffine = app->add_flag("--no-revin-affine", no_revin_affine,
                               "disable the learnable RevIN affine pair");
    o_nodate = app->add_flag("--no-date-column", no_date,
                             "the CSV has no leading date column");
    app->add_flag("--quiet", quiet, "suppress progress output");
  }

  TrainConfig build() const {
    TrainConfig cfg;
    if (!config_file.empty()) cfg = load_config_file(config_file);
    if (o_data->count()) cfg.data_path = data;
    if (o_out->count()) cfg.out_dir = out;
    if (o_variant->count()) cfg.model.variant = variant_from_string(variant);
    if (o_loss->count()) cfg.model.loss = loss_from_string(loss);
    if (o_split->count()) {
      double a, b, c;
      if (std::sscanf(split_ratios.c_str(), "%lf,%lf,%lf", &a, &b, &c) != 3)
        throw ConfigError("--split-ratios expects three comma-separated "
                          "fractions, got '" + split_ratios + "'");
      cfg.split_train = a;
      cfg.split_val = b;
      cfg.split_test = c;
    }
    if (o_seq->count()) cfg.model.seq_len = seq_len;
    if (o_pred->count()) cfg.model.pred_len = pred_len;
    if (o_dmodel->count()) cfg.model.d_model = d_model;
    if (o_dstate->count()) cfg.model.d_state = d_state;
    if (o_dconv->count()) cfg.model.d_conv = d_conv;
    if (o_dff->count()) cfg.model.d_ff = d_ff;
    if (o_elayers->count()) cfg.model.e_layers = e_layers;
    if (o_expand->count()) cfg.model.expand = expand;
    if (o_tlayers->count()) cfg.model.trend_layers = trend_layers;
    if (o_tpool->count()) cfg.model.trend_pool = trend_pool;
    if (o_batch->count()) cfg.batch_size = batch_size;
    if (o_epochs->count()) cfg.max_epochs = max_epochs;
    if (o_patience->count()) cfg.patience = patience;
    if (o_stride->count()) cfg.stride = stride;
    if (o_maxrows->count()) cfg.max_rows = max_rows;
    if (o_alpha->count()) cfg.model.ema_alpha = ema_alpha;
    if (o_reps->count()) cfg.model.revin_eps = revin_eps;
    if (o_dropout->count()) cfg.model.dropout = dropout;
    if (o_lr->count()) cfg.lr = lr;
    if (o_clip->count()) cfg.grad_clip = grad_clip;
    if (o_seed->count()) cfg.seed = seed;
    if (o_noaffine->count()) cfg.model.revin_affine = false;
    if (o_nodate->count()) cfg.has_date = false;
    return cfg;
  }
};

DatasetBundle load_from_config(const TrainConfig& cfg) {
  if (cfg.data_path.empty())
    throw ConfigError("--data (or a config file with a data key) is required");
  double r1 = cfg.split_train, r2 = cfg.split_val, r3 = cfg.split_test;
  if (r1 == 0 && r2 == 0 && r3 == 0)
    default_split_ratios(dataset_name_from_path(cfg.data_path), r1, r2, r3);
  return load_dataset(cfg.data_path, cfg.model.seq_len, cfg.model.pred_len, r1,
                      r2, r3, cfg.stride, cfg.has_date, cfg.max_rows);
}

int run_gradcheck(const std::string& variant, std::uint64_t seed) {
  ModelConfig mc;
  mc.seq_len = 8;
  mc.pred_len = 4;
  mc.n_vars = 3;
  mc.d_model = 8;
  mc.d_state = 4;
  mc.d_conv = 2;
  mc.expand = 2;
  mc.e_layers = 1;
  mc.d_ff = 16;
  mc.dropout = 0.0;
  mc.trend_pool = 3;
  if (!variant.empty()) mc.variant = variant_from_string(variant);

  DMambaModel model(mc, seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  auto rand_vec = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = U(rng);
    return v;
  };
  Tensor x({2, mc.seq_len, mc.n_vars},
           rand_vec(2 * mc.seq_len * mc.n_vars));
  Tensor target({2, mc.pred_len, mc.n_vars},
                rand_vec(2 * mc.pred_len * mc.n_vars));
  const auto w = arctan_weights(mc.pred_len);
  std::mt19937_64 dr(0);
  auto loss_fn = [&]() {
    return arctan_loss(model.forward(x, false, dr), target, w);
  };

  std::vector<std::vector<double>> tape_grads;
  {
    Tape tape;
    Tensor loss = loss_fn();
    model.params().zero_grads();
    tape.backward(loss);
    for (const auto& [name, p] : model.params().items())
      tape_grads.push_back(p.grad());
  }
  const double h = 1e-5;
  double worst = 0;
  std::string worst_name;
  std::size_t pi = 0;
  for (const auto& [name, p] : model.params().items()) {
    auto& v = p.mutable_value();
    double param_worst = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double fp = loss_fn().item();
      v[i] = orig - h;
      const double fm = loss_fn().item();
      v[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double g = tape_grads[pi][i];
      const double rel =
          std::fabs(fd - g) / std::max({std::fabs(fd), std::fabs(g), 1e-6});
      param_worst = std::max(param_worst, rel);
    }
    std::printf("gradcheck %-28s max_rel=%.3e\n", name.c_str(), param_worst);
    if (param_worst > worst) {
      worst = param_worst;
      worst_name = name;
    }
    ++pi;
  }
  std::printf("gradcheck overall max_rel=%.3e (worst: %s) -> %s\n", worst,
              worst_name.c_str(), worst < 1e-3 ? "PASS" : "FAIL");
  return worst < 1e-3 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-stream state-space forecaster"};
  app.require_subcommand(1);

  auto* cmd_train = app.add_subcommand("train", "train one model");
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* cmd_ablation =
      app.add_subcommand("ablation", "train all five stream wirings");
  auto* cmd_sweep =
      app.add_subcommand("alpha-sweep", "sweep the EMA smoothing factor");
  auto* cmd_gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of the full toy model");

  CommonOpts train_opts, eval_opts, abl_opts, sweep_opts;
  train_opts.attach(cmd_train);
  eval_opts.attach(cmd_eval);
  abl_opts.attach(cmd_ablation);
  sweep_opts.attach(cmd_sweep);

  std::string resume_path, checkpoint_path, alphas_csv = "0.1,0.3,0.5,0.7,0.9";
  cmd_train->add_option("--resume", resume_path,
                        "continue from a checkpoint file");
  cmd_eval->add_option("--checkpoint", checkpoint_path, "checkpoint to load")
      ->required();
  cmd_sweep->add_option("--alphas", alphas_csv,
                        "comma-separated smoothing factors");

  std::string gc_variant;
  std::uint64_t gc_seed = 7;
  cmd_gradcheck->add_option("--variant", gc_variant, "wiring to check");
  cmd_gradcheck->add_option("--seed", gc_seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad usage is a configuration error
  }

  try {
    if (cmd_train->parsed()) {
      TrainConfig cfg = train_opts.build();
      DatasetBundle data = load_from_config(cfg);
      train_run(cfg, data, resume_path, train_opts.quiet);
      return 0;
    }
    if (cmd_eval->parsed()) {
      TrainConfig cfg = eval_opts.build();
      // window geometry must match the checkpoint's config
      Checkpoint ck = load_checkpoint(checkpoint_path);
      TrainConfig stored = parse_config_text(ck.config_text);
      stored.data_path = cfg.data_path.empty() ? stored.data_path : cfg.data_path;
      stored.max_rows = eval_opts.o_maxrows->count() ? cfg.max_rows : stored.max_rows;
      if (eval_opts.o_split->count()) {
        stored.split_train = cfg.split_train;
        stored.split_val = cfg.split_val;
        stored.split_test = cfg.split_test;
      }
      DatasetBundle data = load_from_config(stored);
      evaluate_checkpoint(checkpoint_path, data,
                          eval_opts.o_out->count() ? cfg.out_dir : "",
                          eval_opts.quiet);
      return 0;
    }
    if (cmd_ablation->parsed()) {
      TrainConfig cfg = abl_opts.build();
      DatasetBundle data = load_from_config(cfg);
      run_ablation(cfg, data, abl_opts.quiet);
      return 0;
    }
    if (cmd_sweep->parsed()) {
      TrainConfig cfg = sweep_opts.build();
      DatasetBundle data = load_from_config(cfg);
      std::vector<double> alphas;
      {
        std::string tok;
        std::istringstream is(alphas_csv);
        while (std::getline(is, tok, ',')) {
          if (tok.empty()) continue;
          alphas.push_back(std::stod(tok));
        }
      }
      if (alphas.empty()) throw ConfigError("--alphas parsed to an empty grid");
      run_alpha_sweep(cfg, data, alphas, sweep_opts.quiet);
      return 0;
    }
    if (cmd_gradcheck->parsed()) {
      return run_gradcheck(gc_variant, gc_seed);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
