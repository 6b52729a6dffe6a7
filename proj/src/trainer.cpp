#include "dmamba/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dmamba/model.hpp"
#include "dmamba/optimizer.hpp"

namespace dmamba {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

NamedArrays snapshot_params(const ParamRegistry& reg) {
  NamedArrays out;
  out.reserve(reg.items().size());
  for (const auto& [name, t] : reg.items()) out.emplace_back(name, t.value());
  return out;
}

void restore_params(ParamRegistry& reg, const NamedArrays& arrays) {
  if (arrays.size() != reg.items().size())
    throw DataError("checkpoint parameters do not match this model");
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const auto& [name, vec] = arrays[i];
    const auto& [rname, t] = reg.items()[i];
    if (name != rname || vec.size() != t.numel())
      throw DataError("checkpoint parameter '" + name +
                      "' does not match model parameter '" + rname + "'");
    t.mutable_value() = vec;
  }
}

NamedArrays snapshot_moments(const ParamRegistry& reg,
                             const std::vector<std::vector<double>>& m) {
  NamedArrays out;
  out.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i)
    out.emplace_back(reg.items()[i].first, m[i]);
  return out;
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(std::mt19937_64& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
}

std::vector<int> batch_indices(int start, int count, const std::vector<int>& order) {
  std::vector<int> idx;
  idx.reserve(count);
  for (int i = start; i < start + count; ++i) idx.push_back(order[i]);
  return idx;
}

double eval_split_loss(const DMambaModel& model, const WindowedDataset& ds,
                       int batch_size, LossKind kind,
                       const std::vector<double>& weights) {
  std::mt19937_64 unused(0);
  double acc = 0;
  for (int start = 0; start < ds.n_windows; start += batch_size) {
    const int count = std::min(batch_size, ds.n_windows - start);
    std::vector<int> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    Tensor x = ds.input_batch(idx);
    Tensor y = ds.target_batch(idx);
    Tensor pred = model.forward(x, false, unused);
    acc += training_loss(pred, y, kind, weights).item() * count;
  }
  return acc / ds.n_windows;
}

struct TestEval {
  Metrics metrics;
  double batch_ms = 0;
  std::vector<double> first_pred, first_target;  // first batch, for the sample
  int first_count = 0;
};

TestEval eval_test(const DMambaModel& model, const WindowedDataset& ds,
                   int batch_size) {
  std::mt19937_64 unused(0);
  TestEval out;
  std::vector<double> preds, targets;
  preds.reserve(static_cast<std::size_t>(ds.n_windows) * ds.pred_len * ds.n_vars);
  targets.reserve(preds.capacity());
  double total_ms = 0;
  int batches = 0;
  for (int start = 0; start < ds.n_windows; start += batch_size) {
    const int count = std::min(batch_size, ds.n_windows - start);
    std::vector<int> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    Tensor x = ds.input_batch(idx);
    Tensor y = ds.target_batch(idx);
    auto t0 = Clock::now();
    Tensor pred = model.forward(x, false, unused);
    total_ms += seconds_since(t0) * 1e3;
    ++batches;
    preds.insert(preds.end(), pred.value().begin(), pred.value().end());
    targets.insert(targets.end(), y.value().begin(), y.value().end());
    if (start == 0) {
      out.first_pred = pred.value();
      out.first_target = y.value();
      out.first_count = count;
    }
  }
  out.metrics = compute_metrics(preds, targets);
  out.batch_ms = batches > 0 ? total_ms / batches : 0;
  return out;
}

void write_forecast_sample(const std::string& path, const TestEval& ev,
                           int pred_len, int n_vars) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write '" + path + "'");
  os << "window,step,variable,pred,target\n";
  char buf[64];
  for (int w = 0; w < ev.first_count; ++w) {
    for (int t = 0; t < pred_len; ++t) {
      for (int d = 0; d < n_vars; ++d) {
        const std::size_t i =
            (static_cast<std::size_t>(w) * pred_len + t) * n_vars + d;
        os << w << ',' << t << ',' << d << ',';
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g", ev.first_pred[i],
                      ev.first_target[i]);
        os << buf << '\n';
      }
    }
  }
}

// Budget knobs and the output directory may change between an interrupted
// run and its resume; everything else must match.
std::string resume_key(TrainConfig cfg) {
  cfg.max_epochs = 0;
  cfg.patience = 0;
  cfg.out_dir.clear();
  return serialize_config(cfg);
}

RunReport skeleton_report(const TrainConfig& cfg, const DatasetBundle& data) {
  RunReport r;
  r.dataset = data.name;
  r.variant = to_string(cfg.model.variant);
  r.loss = to_string(cfg.model.loss);
  r.seq_len = cfg.model.seq_len;
  r.pred_len = cfg.model.pred_len;
  r.alpha = cfg.model.ema_alpha;
  r.seed = cfg.seed;
  r.config_hash = config_hash(cfg);
  r.test_mse = std::numeric_limits<double>::quiet_NaN();
  r.test_mae = std::numeric_limits<double>::quiet_NaN();
  return r;
}

}  // namespace

RunReport train_run(const TrainConfig& cfg_in, const DatasetBundle& data,
                    const std::string& resume_path, bool quiet) {
  TrainConfig cfg = cfg_in;
  cfg.model.n_vars = data.n_vars;
  validate_config(cfg);
  if (data.train.n_windows < 1 || data.val.n_windows < 1 ||
      data.test.n_windows < 1)
    throw DataError("empty split: train/val/test must all contain windows");

  std::filesystem::create_directories(cfg.out_dir);
  const auto run_start = Clock::now();
  const std::string hash = config_hash(cfg);
  const std::string config_text = serialize_config(cfg);

  DMambaModel model(cfg.model, cfg.seed);
  Adam adam(model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
            cfg.grad_clip);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0xC2B2AE3D27D4EB4Full);
  const auto weights = arctan_weights(cfg.model.pred_len);

  int start_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int since_improve = 0;
  NamedArrays best_params = snapshot_params(model.params());
  std::vector<double> train_hist, val_hist;

  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    if (resume_key(parse_config_text(ck.config_text)) != resume_key(cfg))
      throw ConfigError("checkpoint '" + resume_path +
                        "' was produced by a different configuration");
    restore_params(model.params(), ck.params);
    for (std::size_t i = 0; i < ck.adam_m.size(); ++i) {
      adam.moment1()[i] = ck.adam_m[i].second;
      adam.moment2()[i] = ck.adam_v[i].second;
    }
    adam.set_t(ck.adam_t);
    set_rng_state(shuffle_rng, ck.shuffle_rng_state);
    set_rng_state(dropout_rng, ck.dropout_rng_state);
    start_epoch = ck.epochs_done;
    best_val = ck.best_val;
    best_epoch = ck.best_epoch;
    since_improve = ck.epochs_since_improve;
    best_params = ck.best_params;
    train_hist = ck.train_loss_history;
    val_hist = ck.val_loss_history;
    if (!quiet)
      std::printf("[train] resumed from %s at epoch %d\n", resume_path.c_str(),
                  start_epoch);
  }

  const std::string ck_path = cfg.out_dir + "/checkpoint.bin";
  std::vector<double> epoch_secs;
  const int N = data.train.n_windows;
  std::vector<int> order(N);

  for (int epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
    const auto epoch_t0 = Clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_acc = 0;
    int batch_no = 0;
    for (int start = 0; start < N; start += cfg.batch_size, ++batch_no) {
      const int count = std::min(cfg.batch_size, N - start);
      auto idx = batch_indices(start, count, order);
      Tensor x = data.train.input_batch(idx);
      Tensor y = data.train.target_batch(idx);
      Tape tape;
      Tensor pred = model.forward(x, true, dropout_rng);
      Tensor loss = training_loss(pred, y, cfg.model.loss, weights);
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw DivergenceError("non-finite training loss at epoch " +
                              std::to_string(epoch + 1) + ", batch " +
                              std::to_string(batch_no + 1));
      adam.zero_grad();
      tape.backward(loss);
      adam.step();
      loss_acc += lv * count;
    }
    train_hist.push_back(loss_acc / N);

    const double val =
        eval_split_loss(model, data.val, cfg.batch_size, cfg.model.loss, weights);
    val_hist.push_back(val);
    if (val < best_val) {
      best_val = val;
      best_epoch = epoch;
      since_improve = 0;
      best_params = snapshot_params(model.params());
    } else {
      ++since_improve;
    }
    epoch_secs.push_back(seconds_since(epoch_t0));
    if (!quiet)
      std::printf(
          "[train] epoch %d/%d  train=%.6f  val=%.6f  best=%.6f  (%.1f s)\n",
          epoch + 1, cfg.max_epochs, train_hist.back(), val, best_val,
          epoch_secs.back());

    Checkpoint ck;
    ck.config_text = config_text;
    ck.config_hash_hex = hash;
    ck.epochs_done = epoch + 1;
    ck.adam_t = adam.t();
    ck.best_val = best_val;
    ck.best_epoch = best_epoch;
    ck.epochs_since_improve = since_improve;
    ck.params = snapshot_params(model.params());
    ck.adam_m = snapshot_moments(model.params(), adam.moment1());
    ck.adam_v = snapshot_moments(model.params(), adam.moment2());
    ck.best_params = best_params;
    ck.shuffle_rng_state = rng_state(shuffle_rng);
    ck.dropout_rng_state = rng_state(dropout_rng);
    ck.train_loss_history = train_hist;
    ck.val_loss_history = val_hist;
    save_checkpoint(ck_path, ck);

    if (since_improve >= cfg.patience) {
      if (!quiet)
        std::printf("[train] early stop after %d epochs without improvement\n",
                    since_improve);
      break;
    }
  }

  restore_params(model.params(), best_params);
  TestEval ev = eval_test(model, data.test, cfg.batch_size);
  write_forecast_sample(cfg.out_dir + "/forecast_sample.csv", ev,
                        cfg.model.pred_len, cfg.model.n_vars);

  RunReport rep = skeleton_report(cfg, data);
  rep.epochs_run = static_cast<int>(train_hist.size());
  rep.best_epoch = best_epoch;
  rep.train_loss = train_hist;
  rep.val_loss = val_hist;
  rep.test_mse = ev.metrics.mse;
  rep.test_mae = ev.metrics.mae;
  rep.param_count = model.param_count();
  rep.wall_clock_sec = seconds_since(run_start);
  rep.epoch_sec_mean =
      epoch_secs.empty()
          ? 0
          : std::accumulate(epoch_secs.begin(), epoch_secs.end(), 0.0) /
                epoch_secs.size();
  rep.inference_batch_ms = ev.batch_ms;
  append_report_csv(cfg.out_dir + "/report.csv", rep);
  append_report_jsonl(cfg.out_dir + "/report.jsonl", rep);
  if (!quiet)
    std::printf("[train] done: test_mse=%.6f test_mae=%.6f (%.1f s)\n",
                rep.test_mse, rep.test_mae, rep.wall_clock_sec);
  return rep;
}

RunReport evaluate_checkpoint(const std::string& checkpoint_path,
                              const DatasetBundle& data,
                              const std::string& out_dir, bool quiet) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  TrainConfig cfg = parse_config_text(ck.config_text);
  cfg.model.n_vars = data.n_vars;
  DMambaModel model(cfg.model, cfg.seed);
  // best-validation weights are what the training run reported on
  restore_params(model.params(), ck.best_params);
  TestEval ev = eval_test(model, data.test, cfg.batch_size);

  RunReport rep = skeleton_report(cfg, data);
  rep.status = "eval";
  rep.epochs_run = ck.epochs_done;
  rep.best_epoch = ck.best_epoch;
  rep.train_loss = ck.train_loss_history;
  rep.val_loss = ck.val_loss_history;
  rep.test_mse = ev.metrics.mse;
  rep.test_mae = ev.metrics.mae;
  rep.param_count = model.param_count();
  rep.inference_batch_ms = ev.batch_ms;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_forecast_sample(out_dir + "/forecast_sample.csv", ev,
                          cfg.model.pred_len, cfg.model.n_vars);
    append_report_csv(out_dir + "/report.csv", rep);
    append_report_jsonl(out_dir + "/report.jsonl", rep);
  }
  if (!quiet)
    std::printf("[eval] test_mse=%.6f test_mae=%.6f\n", rep.test_mse,
                rep.test_mae);
  return rep;
}

std::vector<RunReport> run_ablation(const TrainConfig& cfg,
                                    const DatasetBundle& data, bool quiet) {
  std::vector<RunReport> rows;
  for (Variant v : all_variants()) {
    TrainConfig c = cfg;
    c.model.variant = v;
    c.out_dir = cfg.out_dir + "/ablation/" + to_string(v);
    if (!quiet) std::printf("[ablation] variant %s\n", to_string(v).c_str());
    try {
      rows.push_back(train_run(c, data, std::string(), quiet));
    } catch (const std::exception& e) {
      RunReport r = skeleton_report(c, data);
      r.status = std::string("error: ") + e.what();
      rows.push_back(r);
      if (!quiet)
        std::printf("[ablation] variant %s failed: %s\n", to_string(v).c_str(),
                    e.what());
    }
  }
  for (const auto& r : rows) {
    append_report_csv(cfg.out_dir + "/report.csv", r);
    append_report_jsonl(cfg.out_dir + "/report.jsonl", r);
  }
  if (!quiet) std::printf("%s", format_ablation_table(rows).c_str());
  return rows;
}

std::vector<RunReport> run_alpha_sweep(const TrainConfig& cfg,
                                       const DatasetBundle& data,
                                       const std::vector<double>& alphas,
                                       bool quiet) {
  std::vector<RunReport> rows;
  for (double a : alphas) {
    if (!(a > 0.0 && a <= 1.0))
      throw ConfigError("alpha sweep values must lie in (0, 1]");
    TrainConfig c = cfg;
    c.model.ema_alpha = a;
    char sub[32];
    std::snprintf(sub, sizeof(sub), "alpha_%g", a);
    c.out_dir = cfg.out_dir + "/sweep/" + sub;
    if (!quiet) std::printf("[alpha-sweep] alpha=%g\n", a);
    try {
      rows.push_back(train_run(c, data, std::string(), quiet));
    } catch (const std::exception& e) {
      RunReport r = skeleton_report(c, data);
      r.status = std::string("error: ") + e.what();
      rows.push_back(r);
    }
  }
  for (const auto& r : rows) {
    append_report_csv(cfg.out_dir + "/report.csv", r);
    append_report_jsonl(cfg.out_dir + "/report.jsonl", r);
  }
  if (!quiet) std::printf("%s", format_sweep_table(rows).c_str());
  return rows;
}

std::string format_ablation_table(const std::vector<RunReport>& rows) {
  std::ostringstream os;
  char buf[64];
  os << "\n          ";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%12s", r.variant.c_str());
    os << buf;
  }
  os << "\nparams    ";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%12ld", r.param_count);
    os << buf;
  }
  os << "\ntest_mse  ";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%12.4f", r.test_mse);
    os << buf;
  }
  os << "\ntest_mae  ";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%12.4f", r.test_mae);
    os << buf;
  }
  os << "\nstatus    ";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%12s",
                  r.status.substr(0, 11).c_str());
    os << buf;
  }
  os << "\n";
  return os.str();
}

std::string format_sweep_table(const std::vector<RunReport>& rows) {
  std::ostringstream os;
  char buf[64];
  os << "\ndataset  metric";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "  alpha=%-6g", r.alpha);
    os << buf;
  }
  os << "  best_alpha";
  double best_alpha = rows.empty() ? 0 : rows[0].alpha;
  double best_mse = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    if (r.status == "ok" && r.test_mse < best_mse) {
      best_mse = r.test_mse;
      best_alpha = r.alpha;
    }
  }
  const std::string ds = rows.empty() ? "?" : rows[0].dataset;
  os << "\n" << ds << "  MSE   ";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "  %-12.4f", r.test_mse);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "  %g", best_alpha);
  os << buf;
  os << "\n" << ds << "  MAE   ";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "  %-12.4f", r.test_mae);
    os << buf;
  }
  os << "\n";
  return os.str();
}

}  // namespace dmamba
